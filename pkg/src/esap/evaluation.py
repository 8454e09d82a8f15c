"""Evaluation harness: retrieval benchmark and generation-quality metrics.

Two protocols:

- Retrieval: token-level Recall@k / Precision@k of retrieved chunks against
  verbatim evidence quotes located in the corpus.
- Generation: n-gram attribution metrics over (answer, contexts, gold)
  triples: completeness, utilization, context relevance, and the fraction
  of answer tokens that cannot be attributed to the retrieved context.

Attribution is purely lexical (shared n-grams after normalization), so every
number here is reproducible offline, with no model in the loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DatasetFormatError,
    EvidenceNotFound,
    RunsFormatError,
)
from .tokenizer import token_texts

DEFAULT_KS = (1, 2, 4, 8, 16, 50)
DEFAULT_NGRAM = 3


# ---------------------------------------------------------------------------
# n-gram attribution
# ---------------------------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    if n < 1 or len(tokens) < n:
        return set()
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def _covered_positions(tokens: list[str], shared: set[tuple[str, ...]],
                       n: int) -> set[int]:
    """Positions participating in at least one window whose n-gram is shared."""
    covered: set[int] = set()
    for i in range(len(tokens) - n + 1):
        if tuple(tokens[i:i + n]) in shared:
            covered.update(range(i, i + n))
    return covered


def supported_mask(answer_tokens: list[str],
                   context_token_lists: list[list[str]],
                   n: int = DEFAULT_NGRAM) -> list[bool]:
    """Mark each answer token that shares an n-gram with some context.

    n-grams never cross context boundaries. Answers shorter than n are
    checked with n equal to the answer length.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not answer_tokens:
        return []
    n_eff = min(n, len(answer_tokens))
    context_grams: set[tuple[str, ...]] = set()
    for ctx in context_token_lists:
        context_grams |= _ngrams(ctx, n_eff)
    shared = _ngrams(answer_tokens, n_eff) & context_grams
    covered = _covered_positions(answer_tokens, shared, n_eff)
    return [i in covered for i in range(len(answer_tokens))]


def _context_positions_shared_with(reference_tokens: list[str],
                                   context_token_lists: list[list[str]],
                                   n: int) -> set[tuple[int, int]]:
    """(context index, token index) pairs lying in an n-gram shared with
    the reference token sequence."""
    if not reference_tokens:
        return set()
    n_eff = min(n, len(reference_tokens))
    ref_grams = _ngrams(reference_tokens, n_eff)
    out: set[tuple[int, int]] = set()
    for ci, ctx in enumerate(context_token_lists):
        shared = _ngrams(ctx, n_eff) & ref_grams
        for pos in _covered_positions(ctx, shared, n_eff):
            out.add((ci, pos))
    return out


@dataclass(frozen=True)
class TraceScores:
    pc_hallucinated: float
    utilization: float
    context_relevance: float | None = None
    completeness: float | None = None
    accuracy: float | None = None

    def to_json(self) -> dict:
        out = {
            "completeness": self.completeness,
            "utilization": self.utilization,
            "context_relevance": self.context_relevance,
            "pc_hallucinated": self.pc_hallucinated,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out


def trace_scores(answer: str, contexts: list[str], gold_answer: str | None = None,
                 human_accuracy: float | None = None,
                 n: int = DEFAULT_NGRAM) -> TraceScores:
    """Score one (answer, contexts[, gold]) triple.

    Without a gold answer the gold-dependent metrics (context relevance,
    completeness) are omitted; the other two are still computed.
    """
    if not answer.strip():
        raise ValueError("answer must be non-empty")
    if not contexts or not any(c.strip() for c in contexts):
        raise ValueError("contexts must be non-empty")

    a_tokens = token_texts(answer)
    ctx_tokens = [token_texts(c) for c in contexts]
    total_ctx = sum(len(c) for c in ctx_tokens)

    mask = supported_mask(a_tokens, ctx_tokens, n=n)
    supported = sum(mask)
    pc_hallucinated = 1.0 - (supported / len(a_tokens)) if a_tokens else 0.0

    used = _context_positions_shared_with(a_tokens, ctx_tokens, n)
    utilization = (len(used) / total_ctx) if total_ctx else 0.0

    context_relevance: float | None = None
    completeness: float | None = None
    if gold_answer is not None:
        g_tokens = token_texts(gold_answer)
        relevant = _context_positions_shared_with(g_tokens, ctx_tokens, n)
        context_relevance = (len(relevant) / total_ctx) if total_ctx else 0.0
        completeness = (len(used & relevant) / len(relevant)) if relevant else 1.0

    return TraceScores(pc_hallucinated=pc_hallucinated,
                       utilization=utilization,
                       context_relevance=context_relevance,
                       completeness=completeness,
                       accuracy=human_accuracy)


# ---------------------------------------------------------------------------
# Runs files and the generation benchmark
# ---------------------------------------------------------------------------

def read_runs_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RunsFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            for key in ("qid", "system", "question", "answer", "contexts"):
                if key not in obj:
                    raise RunsFormatError(f"line {lineno}: missing key {key!r}")
            if not isinstance(obj["contexts"], list) or not all(
                    isinstance(c, str) for c in obj["contexts"]):
                raise RunsFormatError(f"line {lineno}: contexts must be a list of strings")
            if "human_accuracy" in obj and obj["human_accuracy"] is not None \
                    and not isinstance(obj["human_accuracy"], (int, float)):
                raise RunsFormatError(f"line {lineno}: human_accuracy must be numeric")
            records.append(obj)
    if not records:
        raise RunsFormatError("runs file contains no records")
    return records


def run_generation_benchmark(runs: list[dict], n: int = DEFAULT_NGRAM) -> dict:
    """Aggregate per-system means of each metric; rows sorted by system."""
    if not runs:
        raise RunsFormatError("no runs to evaluate")
    by_system: dict[str, list[TraceScores]] = {}
    for run in runs:
        scores = trace_scores(run["answer"], run["contexts"],
                              gold_answer=run.get("gold_answer"),
                              human_accuracy=run.get("human_accuracy"),
                              n=n)
        by_system.setdefault(run["system"], []).append(scores)

    rows = []
    for system in sorted(by_system):
        scores = by_system[system]
        def mean(values: list[float]) -> float | None:
            return sum(values) / len(values) if values else None
        completeness = mean([s.completeness for s in scores
                             if s.completeness is not None])
        relevance = mean([s.context_relevance for s in scores
                          if s.context_relevance is not None])
        graded = [s.accuracy for s in scores if s.accuracy is not None]
        rows.append({
            "system": system,
            "n": len(scores),
            "completeness": completeness,
            "utilization": mean([s.utilization for s in scores]),
            "context_relevance": relevance,
            "pc_hallucinated": mean([s.pc_hallucinated for s in scores]),
            "accuracy": mean(graded),
            "accuracy_n": len(graded),
        })
    return {"rows": rows, "n_runs": len(runs), "ngram_n": n}


def render_generation_table(rows: list[dict]) -> str:
    """Aligned plain-text table: one row per system, four metrics + accuracy."""
    headers = ["System", "Completeness", "Utilization", "Context Relevance",
               "pc hallucinated", "Accuracy"]

    def fmt(value, places: int) -> str:
        return "-" if value is None else f"{value:.{places}f}"

    body = [[row["system"],
             fmt(row.get("completeness"), 4),
             fmt(row.get("utilization"), 4),
             fmt(row.get("context_relevance"), 4),
             fmt(row.get("pc_hallucinated"), 4),
             fmt(row.get("accuracy"), 2)]
            for row in rows]
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body
              else len(headers[i]) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(r))))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Evidence location and retrieval metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceSpan:
    doc_id: str
    start: int          # token index, inclusive
    end: int            # token index, exclusive


def read_qa_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            for key in ("qid", "question", "evidence"):
                if key not in obj:
                    raise DatasetFormatError(f"line {lineno}: missing key {key!r}")
            ev = obj["evidence"]
            if not isinstance(ev, list) or not ev:
                raise DatasetFormatError(
                    f"line {lineno}: evidence must be a non-empty list")
            for item in ev:
                if not isinstance(item, dict) or "doc_id" not in item \
                        or "quote" not in item:
                    raise DatasetFormatError(
                        f"line {lineno}: evidence items need doc_id and quote")
            records.append(obj)
    if not records:
        raise DatasetFormatError("dataset contains no records")
    return records


def _find_subsequence(haystack: list[str], needle: list[str]) -> int:
    """First index where needle occurs contiguously in haystack, else -1."""
    if not needle or len(needle) > len(haystack):
        return -1
    first = needle[0]
    limit = len(haystack) - len(needle)
    for i in range(limit + 1):
        if haystack[i] == first and haystack[i:i + len(needle)] == needle:
            return i
    return -1


def locate_evidence(record: dict, doc_tokens: dict[str, list[str]]) -> list[EvidenceSpan]:
    """Map each evidence quote to its first token-level occurrence.

    Matching is done on normalized token sequences (lowercase, punctuation
    and whitespace insensitive), which is a token-level reading of "exact
    substring after lowercasing and whitespace collapsing".
    """
    spans = []
    for item in record["evidence"]:
        doc_id = item["doc_id"]
        if doc_id not in doc_tokens:
            raise EvidenceNotFound(
                f"qid {record['qid']}: document {doc_id!r} not in corpus")
        quote = token_texts(item["quote"])
        if not quote:
            raise EvidenceNotFound(
                f"qid {record['qid']}: evidence quote has no tokens")
        start = _find_subsequence(doc_tokens[doc_id], quote)
        if start < 0:
            raise EvidenceNotFound(
                f"qid {record['qid']}: quote not found in {doc_id!r}")
        spans.append(EvidenceSpan(doc_id=doc_id, start=start,
                                  end=start + len(quote)))
    return spans


def _gold_tokens(spans: list[EvidenceSpan]) -> set[tuple[str, int]]:
    gold: set[tuple[str, int]] = set()
    for span in spans:
        for i in range(span.start, span.end):
            gold.add((span.doc_id, i))
    return gold


def recall_at_k(chunk_spans: list[tuple[str, int, int]],
                spans: list[EvidenceSpan]) -> float:
    """Fraction of gold evidence tokens covered by the union of chunk spans."""
    gold = _gold_tokens(spans)
    if not gold:
        return 0.0
    covered: set[tuple[str, int]] = set()
    for doc_id, start, end in chunk_spans:
        for i in range(start, end):
            key = (doc_id, i)
            if key in gold:
                covered.add(key)
    return len(covered) / len(gold)


def precision_at_k(chunk_spans: list[tuple[str, int, int]],
                   spans: list[EvidenceSpan]) -> float:
    """Fraction of retrieved chunk tokens lying inside gold spans.

    Tokens are counted per chunk, so a token retrieved twice (overlapping
    chunks) weighs twice in both numerator and denominator.
    """
    gold = _gold_tokens(spans)
    total = 0
    inside = 0
    for doc_id, start, end in chunk_spans:
        total += end - start
        for i in range(start, end):
            if (doc_id, i) in gold:
                inside += 1
    return (inside / total) if total else 0.0


# ---------------------------------------------------------------------------
# Retrieval benchmark runner and report
# ---------------------------------------------------------------------------

def run_retrieval_benchmark(datasets: dict[str, list[dict]],
                            index, embed,
                            doc_tokens: dict[str, list[str]],
                            ks: tuple[int, ...] = DEFAULT_KS,
                            principal: str = "*") -> dict:
    """Evaluate every dataset and return the full report structure.

    Per-question metrics are macro-averaged within each dataset; the ALL row
    macro-averages over every included question pooled across datasets.
    Records whose evidence cannot be located are excluded from the averages
    and surfaced via the excluded count.
    """
    from .hybrid import search_hybrid

    if not datasets or all(not records for records in datasets.values()):
        raise DatasetFormatError("no questions to evaluate")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise ValueError(f"ks must be positive, got {ks}")
    max_k = ks[-1]

    per_dataset: dict[str, list[dict[int, tuple[float, float]]]] = {}
    excluded: dict[str, int] = {}
    for name, records in datasets.items():
        per_dataset[name] = []
        excluded[name] = 0
        for record in records:
            try:
                spans = locate_evidence(record, doc_tokens)
            except EvidenceNotFound:
                excluded[name] += 1
                continue
            hits = search_hybrid(index, record["question"], embed, k=max_k,
                                 principal=principal)
            chunk_spans = [(h.doc_id, index.chunks[h.chunk_id].token_span[0],
                            index.chunks[h.chunk_id].token_span[1])
                           for h in hits]
            metrics = {k: (recall_at_k(chunk_spans[:k], spans),
                           precision_at_k(chunk_spans[:k], spans))
                       for k in ks}
            per_dataset[name].append(metrics)

    def average(rows: list[dict[int, tuple[float, float]]]) -> tuple[dict, dict]:
        recall = {}
        precision = {}
        for k in ks:
            if rows:
                recall[k] = 100.0 * sum(r[k][0] for r in rows) / len(rows)
                precision[k] = 100.0 * sum(r[k][1] for r in rows) / len(rows)
            else:
                recall[k] = 0.0
                precision[k] = 0.0
        return recall, precision

    rows = []
    pooled: list[dict[int, tuple[float, float]]] = []
    for name in datasets:
        recall, precision = average(per_dataset[name])
        pooled.extend(per_dataset[name])
        rows.append({
            "dataset": name,
            "n_questions": len(per_dataset[name]),
            "n_excluded": excluded[name],
            "recall": {str(k): round(recall[k], 2) for k in ks},
            "precision": {str(k): round(precision[k], 2) for k in ks},
        })
    if len(datasets) > 1:
        recall, precision = average(pooled)
        rows.append({
            "dataset": "ALL",
            "n_questions": len(pooled),
            "n_excluded": sum(excluded.values()),
            "recall": {str(k): round(recall[k], 2) for k in ks},
            "precision": {str(k): round(precision[k], 2) for k in ks},
        })
    return {
        "ks": list(ks),
        "rows": rows,
        "config_echo": {
            "chunk_size": index.params.chunk_size,
            "chunk_overlap": index.params.chunk_overlap,
            "rrf_c": index.params.rrf_c,
        },
    }


def validate_report_row(row: dict, ks: list[int] | tuple[int, ...]) -> list[str]:
    """Invariant check for one report row: every value in [0, 100] and the
    recall sequence non-decreasing in k. Returns violation messages."""
    problems = []
    name = row.get("dataset", "?")
    for metric in ("recall", "precision"):
        for k in ks:
            value = row[metric][str(k)]
            if not 0.0 <= value <= 100.0:
                problems.append(f"{name}: {metric}@{k} = {value} outside [0, 100]")
    recalls = [row["recall"][str(k)] for k in sorted(ks)]
    for lo, hi, k in zip(recalls, recalls[1:], sorted(ks)[1:]):
        if hi < lo:
            problems.append(f"{name}: recall@{k} = {hi} drops below {lo}")
    return problems


def validate_report(report: dict) -> list[str]:
    """Run the row invariants over a whole report; [] means all rows pass."""
    problems = []
    for row in report["rows"]:
        problems.extend(validate_report_row(row, report["ks"]))
    return problems


def render_retrieval_table(report: dict) -> str:
    """Aligned plain-text table: datasets x k, recall block then precision."""
    ks = report["ks"]
    headers = (["Dataset"]
               + [f"R@{k}" for k in ks]
               + [f"P@{k}" for k in ks])
    body = []
    for row in report["rows"]:
        body.append([row["dataset"]]
                    + [f"{row['recall'][str(k)]:.2f}" for k in ks]
                    + [f"{row['precision'][str(k)]:.2f}" for k in ks])
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body
              else len(headers[i]) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(r))))
    return "\n".join(lines)
