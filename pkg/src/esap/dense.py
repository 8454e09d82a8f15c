"""Dense vector index: exhaustive cosine search plus a navigable-graph ANN mode.

Small corpora (below ``exact_threshold``) are searched exhaustively, which is
both faster and exact. Larger corpora are served by a hierarchical
small-world graph built at index time; construction is seeded so identical
inputs produce identical graphs.

All vectors are expected unit-norm (or all-zero), so cosine similarity is a
dot product and cosine distance is 1 - dot.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmbedderFailure

DEFAULT_M = 16               # graph neighbor degree (base layer uses 2M)
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 128
DEFAULT_EXACT_THRESHOLD = 5_000


@dataclass
class AnnParams:
    m: int = DEFAULT_M
    ef_construction: int = DEFAULT_EF_CONSTRUCTION
    ef_search: int = DEFAULT_EF_SEARCH
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD
    mode: str = "auto"       # auto | exact | ann
    seed: int = 42


class _Graph:
    """Layered neighbor graph; adjacency per (node, level)."""

    def __init__(self):
        self.levels: list[int] = []                 # max level per node
        self.adj: list[list[list[int]]] = []        # adj[node][level] -> neighbor ids
        self.entry: int = -1
        self.max_level: int = -1

    def neighbors(self, node: int, level: int) -> list[int]:
        return self.adj[node][level]

    def to_json(self) -> dict:
        return {
            "levels": self.levels,
            "adj": self.adj,
            "entry": self.entry,
            "max_level": self.max_level,
        }

    @classmethod
    def from_json(cls, data: dict) -> "_Graph":
        graph = cls()
        graph.levels = [int(x) for x in data["levels"]]
        graph.adj = [[list(map(int, lvl)) for lvl in node] for node in data["adj"]]
        graph.entry = int(data["entry"])
        graph.max_level = int(data["max_level"])
        return graph


@dataclass
class DenseIndex:
    vectors: np.ndarray                      # (n, d) float32, rows unit-norm or zero
    dim: int
    params: AnnParams
    mode: str                                # resolved: exact | ann
    graph: _Graph | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vectors.flags.writeable = False


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0                # all-zero rows stay zero
    return (matrix / norms).astype(np.float32)


def build_dense_from_texts(texts: list[str], chunk_ids: list[str], embed,
                           params: AnnParams | None = None) -> DenseIndex:
    """Embed chunks (in order) and build the dense index.

    ``embed`` is a callable list[str] -> (n, d) array; failures are surfaced
    with the offending chunk_id. Mode resolution: explicit ``exact``/``ann``
    in params wins, otherwise ann kicks in at ``exact_threshold`` chunks.
    """
    params = params or AnnParams()
    try:
        matrix = np.asarray(embed(texts), dtype=np.float32)
    except Exception as exc:
        raise EmbedderFailure(f"embedding failed: {exc}") from exc
    if matrix.ndim != 2 or matrix.shape[0] != len(texts):
        raise EmbedderFailure(
            f"embedder returned shape {matrix.shape}, expected ({len(texts)}, d)")
    bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
    if bad.size:
        raise EmbedderFailure("non-finite embedding", chunk_id=chunk_ids[int(bad[0])])
    matrix = _normalize_rows(matrix)
    dim = matrix.shape[1]

    if params.mode == "exact":
        mode = "exact"
    elif params.mode == "ann":
        mode = "ann"
    elif params.mode == "auto":
        mode = "exact" if matrix.shape[0] < params.exact_threshold else "ann"
    else:
        raise ValueError(f"unknown dense mode {params.mode!r}")

    graph = _build_graph(matrix, params) if mode == "ann" else None
    return DenseIndex(vectors=matrix, dim=dim, params=params, mode=mode, graph=graph)


def search_dense(index: DenseIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (position, cosine similarity); ties broken by position ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float32).reshape(-1)
    if query.shape[0] != index.dim:
        raise DimensionMismatch(
            f"query dimension {query.shape[0]} != index dimension {index.dim}")
    if index.mode == "exact":
        return _search_exact(index.vectors, query, k)
    return _search_graph(index, query, k)


def _search_exact(vectors: np.ndarray, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    sims = vectors @ query
    k = min(k, sims.shape[0])
    # lexsort: primary key similarity desc, secondary position asc
    order = np.lexsort((np.arange(sims.shape[0]), -sims))[:k]
    return [(int(i), float(sims[i])) for i in order]


# ---------------------------------------------------------------------------
# Graph construction / search
# ---------------------------------------------------------------------------

def _build_graph(vectors: np.ndarray, params: AnnParams) -> _Graph:
    n = vectors.shape[0]
    graph = _Graph()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    ml = 1.0 / math.log(params.m)
    m0 = 2 * params.m

    for node in range(n):
        level = int(-math.log(max(rng.random(), 1e-300)) * ml)
        graph.levels.append(level)
        graph.adj.append([[] for _ in range(level + 1)])
        if graph.entry < 0:
            graph.entry = node
            graph.max_level = level
            continue

        q = vectors[node]
        eps = [graph.entry]
        for lvl in range(graph.max_level, level, -1):
            eps = [_descend(vectors, graph, q, eps[0], lvl)]

        for lvl in range(min(level, graph.max_level), -1, -1):
            candidates = _search_layer(vectors, graph, q, eps, lvl,
                                       params.ef_construction, node)
            cap = m0 if lvl == 0 else params.m
            chosen = _select_neighbors(vectors, candidates, cap)
            graph.adj[node][lvl] = list(chosen)
            for nb in chosen:
                nb_list = graph.adj[nb][lvl]
                nb_list.append(node)
                if len(nb_list) > cap:
                    dists = 1.0 - vectors[nb_list] @ vectors[nb]
                    ranked = sorted(zip(dists.tolist(), nb_list))
                    graph.adj[nb][lvl] = _select_neighbors(vectors, ranked, cap)
            eps = [c for _, c in candidates]

        if level > graph.max_level:
            graph.entry = node
            graph.max_level = level
    return graph


def _descend(vectors: np.ndarray, graph: _Graph, q: np.ndarray, ep: int, level: int) -> int:
    """Greedy walk to the locally nearest node at one level."""
    best = ep
    best_dist = 1.0 - float(vectors[ep] @ q)
    improved = True
    while improved:
        improved = False
        nbrs = graph.neighbors(best, level)
        if not nbrs:
            break
        dists = 1.0 - vectors[nbrs] @ q
        i = int(np.argmin(dists))
        if dists[i] < best_dist:
            best, best_dist = nbrs[i], float(dists[i])
            improved = True
    return best


def _search_layer(vectors: np.ndarray, graph: _Graph, q: np.ndarray, eps: list[int],
                  level: int, ef: int, exclude: int = -1) -> list[tuple[float, int]]:
    """Beam search at one level; returns (distance, node) sorted ascending."""
    push, pop = heapq.heappush, heapq.heappop
    adj = graph.adj
    visited = set(eps)
    visited.add(exclude)
    dists = 1.0 - vectors[eps] @ q
    candidates = [(float(d), e) for d, e in zip(dists, eps)]
    heapq.heapify(candidates)
    best = [(-d, e) for d, e in candidates]   # max-heap of current results
    heapq.heapify(best)
    while len(best) > ef:
        pop(best)
    bound = -best[0][0] if len(best) >= ef else float("inf")

    while candidates:
        dist, node = pop(candidates)
        if dist > bound:
            break
        nbrs = [nb for nb in adj[node][level] if nb not in visited]
        if not nbrs:
            continue
        visited.update(nbrs)
        nbr_dists = (1.0 - vectors[nbrs] @ q).tolist()
        for nb, d in zip(nbrs, nbr_dists):
            if d < bound:
                push(candidates, (d, nb))
                push(best, (-d, nb))
                if len(best) > ef:
                    pop(best)
                    bound = -best[0][0]
                elif len(best) == ef:
                    bound = -best[0][0]
    return sorted((-d, node) for d, node in best)


def _select_neighbors(vectors: np.ndarray, candidates: list[tuple[float, int]],
                      cap: int) -> list[int]:
    """Diversity-aware neighbor pick: keep a candidate only if it is closer to
    the query point than to every already-kept neighbor; backfill from the
    discards to reach cap."""
    if len(candidates) <= cap:
        return [node for _, node in candidates]
    nodes = [node for _, node in candidates]
    dists = [dist for dist, _ in candidates]
    cand_vecs = vectors[nodes]
    kept: list[int] = []
    discarded: list[int] = []
    if len(nodes) <= 64:
        # one pairwise matrix beats per-kept updates on short lists
        pairwise = (1.0 - cand_vecs @ cand_vecs.T).tolist()
        kept_idx: list[int] = []
        for i, node in enumerate(nodes):
            if len(kept_idx) >= cap:
                break
            di = dists[i]
            row = pairwise[i]
            if all(di < row[j] for j in kept_idx):
                kept_idx.append(i)
                kept.append(node)
            else:
                discarded.append(node)
    else:
        # min distance from each candidate to the kept set, updated as we keep
        min_to_kept = np.full(len(nodes), np.inf)
        for i, node in enumerate(nodes):
            if len(kept) >= cap:
                break
            if dists[i] < min_to_kept[i]:
                kept.append(node)
                np.minimum(min_to_kept, 1.0 - cand_vecs @ cand_vecs[i],
                           out=min_to_kept)
            else:
                discarded.append(node)
    for node in discarded:
        if len(kept) >= cap:
            break
        kept.append(node)
    return kept


def _search_graph(index: DenseIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    graph = index.graph
    assert graph is not None
    ef = max(index.params.ef_search, k)
    ep = graph.entry
    for lvl in range(graph.max_level, 0, -1):
        ep = _descend(index.vectors, graph, query, ep, lvl)
    ranked = _search_layer(index.vectors, graph, query, [ep], 0, ef)
    # re-rank by similarity desc with position tie-break to match exact mode
    hits = sorted(((1.0 - d, node) for d, node in ranked),
                  key=lambda item: (-item[0], item[1]))[:k]
    return [(node, float(sim)) for sim, node in hits]
