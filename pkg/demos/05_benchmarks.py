"""
Evaluation harness: retrieval metrics and grounding metrics
===========================================================

Two offline benchmarks. Retrieval scores Recall@k / Precision@k against
evidence quotes located in the corpus at token level; generation scores
answers by n-gram attribution (hallucinated fraction, utilization,
relevance, completeness). A planted corpus with known evidence makes the
expected numbers analytic.
"""

from esap import (
    HashingEmbedder,
    HybridParams,
    build_hybrid,
    run_generation_benchmark,
    run_retrieval_benchmark,
    validate_report,
)
from esap.corpus import chunk_document
from esap.evaluation import render_generation_table, render_retrieval_table
from esap.fixtures import load_fixture
from esap.synthetic import make_planted_corpus, planted_precision_at_1
from esap.tokenizer import token_texts

embed = HashingEmbedder()

# plant evidence: each question's markers exist in exactly one document,
# so Recall@1 must be 100 and Precision@1 is the marker/filler ratio
documents, records = make_planted_corpus(n_questions=30, seed=42)
chunks = []
for doc in documents:
    chunks.extend(chunk_document(doc, size=400, overlap=0))
acl = {doc.doc_id: sorted(doc.acl) for doc in documents}
index = build_hybrid(chunks, embed, acl, HybridParams(chunk_size=400, chunk_overlap=0))
doc_tokens = {d.doc_id: token_texts(d.text) for d in documents}

report = run_retrieval_benchmark({"planted": records}, index, embed,
                                 doc_tokens, ks=(1, 2, 4, 8))
print(render_retrieval_table(report))
print(f"\nanalytic Precision@1: {100.0 * planted_precision_at_1():.2f}")
print(f"row invariants: {validate_report(report) or 'all pass'}")

# generation metrics over recorded runs: no model, pure token attribution
runs = [
    {"qid": "q1", "system": "faithful", "question": "where is the apple?",
     "answer": "the red apple sits in the basket",
     "contexts": ["the red apple sits in the basket by the window"]},
    {"qid": "q2", "system": "inventive", "question": "where is the apple?",
     "answer": "the apple orbits a distant moon",
     "contexts": ["the red apple sits in the basket by the window"]},
]
gen_report = run_generation_benchmark(runs)
print()
print(render_generation_table(gen_report["rows"]))

# the packaged reference rows replay through the same renderer
ref = load_fixture("retrieval_reference_rows")
print()
print(render_retrieval_table({"ks": ref["ks"], "rows": ref["tables"]["chunk_500"]}))
