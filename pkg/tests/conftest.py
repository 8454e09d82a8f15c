from __future__ import annotations

import pytest

from esap.corpus import chunk_document
from esap.hybrid import HybridParams, build_hybrid
from esap.ports import HashingEmbedder
from esap.synthetic import make_toy_kb_documents


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture()
def toy_docs():
    return make_toy_kb_documents()


@pytest.fixture()
def toy_index(toy_docs, embedder):
    chunks = []
    for doc in toy_docs:
        chunks.extend(chunk_document(doc, size=50, overlap=10))
    doc_acl = {doc.doc_id: sorted(doc.acl) for doc in toy_docs}
    params = HybridParams(chunk_size=50, chunk_overlap=10)
    return build_hybrid(chunks, embedder, doc_acl, params)
