"""
Grounded answers: retrieve, assemble, generate, validate
========================================================

The pipeline refines the question, retrieves fused snippets, lays them
into a structured prompt, and validates the draft (citations present,
supported-token fraction, model critique) before returning it. The
extractive stub stands in for a model: it answers with the best
overlapping context sentence, so every run is offline and deterministic.
"""

from esap import (
    DerekPipeline,
    ExtractiveStub,
    HashingEmbedder,
    HybridParams,
    build_hybrid,
)
from esap.corpus import chunk_document
from esap.synthetic import make_toy_kb_documents

embed = HashingEmbedder()
documents = make_toy_kb_documents()
chunks = []
for doc in documents:
    chunks.extend(chunk_document(doc, size=60, overlap=10))
acl = {doc.doc_id: sorted(doc.acl) for doc in documents}
index = build_hybrid(chunks, embed, acl, HybridParams(chunk_size=60, chunk_overlap=10))

pipeline = DerekPipeline(index, embed, ExtractiveStub(), k=5)

for question in ("Where does the red apple sit?",
                 "When can customers get a refund?"):
    answer, session = pipeline.answer_with_session(question)
    print(f"Q: {question}")
    print(f"A: {answer.answer}")
    print(f"   verdict={answer.verdict} regenerations={answer.regeneration_count}")
    for citation in answer.citations:
        print(f"   [{citation.snippet_no}] {citation.chunk_id}")
    # the session logs per-stage wall time for the whole pass
    stages = ", ".join(f"{s['stage']} {s['elapsed_ms']:.1f}ms"
                       for s in session.stages)
    print(f"   stages: {stages}")
    print()
