"""
Hybrid retrieval: BM25 and vectors fused by reciprocal rank
===========================================================

The two rankings see different things: BM25 rewards exact rare terms,
the hashed embedding rewards shared vocabulary. Reciprocal-rank fusion
(score = sum of 1/(60 + rank)) combines them without score calibration.
"""

from esap import HashingEmbedder, HybridParams, build_hybrid, search_hybrid
from esap.corpus import chunk_document
from esap.lexical import search_lexical
from esap.synthetic import make_toy_kb_documents

embed = HashingEmbedder()
documents = make_toy_kb_documents()

# slice each document into overlapping token windows
chunks = []
for doc in documents:
    chunks.extend(chunk_document(doc, size=40, overlap=8))
print(f"{len(documents)} documents -> {len(chunks)} chunks")

acl = {doc.doc_id: sorted(doc.acl) for doc in documents}
index = build_hybrid(chunks, embed, acl, HybridParams(chunk_size=40, chunk_overlap=8))

query = "how long does cold chain shipping take"

# the lexical ranking alone
print("\nBM25 view:")
for chunk_id, score in search_lexical(index.lexical, query, k=3):
    print(f"  {score:7.4f}  {chunk_id}")

# the fused ranking: both signals, one list
print("\nfused view:")
for hit in search_hybrid(index, query, embed, k=3):
    print(f"  {hit.score:8.6f}  {hit.chunk_id}  {hit.text[:60]}...")

# access control filters before the cut, so restricted docs never
# shadow results the caller is allowed to see
restricted = search_hybrid(index, query, embed, k=3, principal="guest")
print(f"\nsame query as 'guest': {len(restricted)} hits (toy corpus is public)")

# guard rules redact sensitive spans in returned text, not in the index
from esap import apply_guards

print("\nguards:", apply_guards("reach me at ada@example.com or 555-867-5309"))
