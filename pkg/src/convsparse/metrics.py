"""Ranking metrics following trec_eval conventions.

Runs are evaluated in the order given (equal scores are never re-sorted).
Relevance >= 1 counts as relevant; nDCG uses linear gain and a log2 discount.
Queries whose qrels hold no relevant document are skipped, as are run
queries missing from the qrels. Dispersion is the standard error of the mean
(population standard deviation over sqrt(#queries)).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

Qrels = dict[str, dict[str, int]]
Run = dict[str, list[tuple[str, float]]]


@dataclass
class MetricResult:
    name: str
    per_query: dict[str, float]
    mean: float
    stderr: float
    skipped: int = 0
    missing: list[str] = field(default_factory=list)


def summarize(values) -> tuple[float, float]:
    """(mean, population std / sqrt(n)); NaNs for an empty sample."""
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        return math.nan, math.nan
    return float(vals.mean()), float(vals.std() / math.sqrt(vals.size))


def _relevant(judged: dict[str, int]) -> dict[str, int]:
    return {d: r for d, r in judged.items() if r >= 1}


def ndcg_query(ranking: list[str], judged: dict[str, int], k: int) -> float:
    dcg = sum(judged.get(d, 0) / math.log2(i + 2) for i, d in enumerate(ranking[:k]) if judged.get(d, 0) > 0)
    ideal = sorted((r for r in judged.values() if r > 0), reverse=True)[:k]
    idcg = sum(r / math.log2(i + 2) for i, r in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def rr_query(ranking: list[str], judged: dict[str, int]) -> float:
    for i, d in enumerate(ranking):
        if judged.get(d, 0) >= 1:
            return 1.0 / (i + 1)
    return 0.0


def recall_query(ranking: list[str], judged: dict[str, int], k: int) -> float:
    rel = _relevant(judged)
    return sum(1 for d in ranking[:k] if d in rel) / len(rel)


def ap_query(ranking: list[str], judged: dict[str, int], k: int) -> float:
    rel = _relevant(judged)
    hits, total = 0, 0.0
    for i, d in enumerate(ranking[:k]):
        if d in rel:
            hits += 1
            total += hits / (i + 1)
    return total / len(rel)


def _evaluate(name: str, run: Run, qrels: Qrels, fn: Callable[[list[str], dict[str, int]], float],
              include_missing: bool) -> MetricResult:
    per_query: dict[str, float] = {}
    skipped = [q for q in run if q not in qrels]
    for qid in sorted(run):
        judged = qrels.get(qid)
        if judged is None or not _relevant(judged):
            continue
        per_query[qid] = fn([d for d, _ in run[qid]], judged)
    if include_missing:
        for qid, judged in qrels.items():
            if qid not in run and _relevant(judged):
                per_query[qid] = 0.0
    mean, stderr = summarize(per_query.values())
    return MetricResult(name, per_query, mean, stderr, len(skipped), skipped)


def ndcg_at(run: Run, qrels: Qrels, k: int, include_missing: bool = False) -> MetricResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _evaluate(f"ndcg@{k}", run, qrels, lambda r, j: ndcg_query(r, j, k), include_missing)


def mrr(run: Run, qrels: Qrels, include_missing: bool = False) -> MetricResult:
    return _evaluate("mrr", run, qrels, rr_query, include_missing)


def recall_at(run: Run, qrels: Qrels, k: int, include_missing: bool = False) -> MetricResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _evaluate(f"recall@{k}", run, qrels, lambda r, j: recall_query(r, j, k), include_missing)


def map_at(run: Run, qrels: Qrels, k: int, include_missing: bool = False) -> MetricResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _evaluate(f"map@{k}", run, qrels, lambda r, j: ap_query(r, j, k), include_missing)


def standard_report(run: Run, qrels: Qrels, depth: int, include_missing: bool = False) -> list[MetricResult]:
    """nDCG@3, MRR, Recall@X, MAP@X and nDCG@X with ``X = depth``."""
    return [
        ndcg_at(run, qrels, 3, include_missing),
        mrr(run, qrels, include_missing),
        recall_at(run, qrels, depth, include_missing),
        map_at(run, qrels, depth, include_missing),
        ndcg_at(run, qrels, depth, include_missing),
    ]


# -- TREC files -------------------------------------------------------------------

def read_qrels(path) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 'qid 0 docid rel'")
            qid, _, doc, rel = parts
            if doc in qrels.setdefault(qid, {}):
                raise ValueError(f"{path}: line {lineno}: duplicate judgment ({qid}, {doc})")
            qrels[qid][doc] = int(rel)
    return qrels


def read_run(path) -> Run:
    """Read ``qid Q0 docid rank score tag`` lines, ordered by the rank column."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}: line {lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, doc, rank, score, _ = parts
            rows.setdefault(qid, []).append((int(rank), doc, float(score)))
    run: Run = {}
    for qid, items in rows.items():
        items.sort(key=lambda x: x[0])
        docs = [d for _, d, _ in items]
        if len(set(docs)) != len(docs):
            raise ValueError(f"{path}: duplicate document in run for query {qid}")
        run[qid] = [(d, s) for _, d, s in items]
    return run


def write_run(path, run: Run, tag: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid in sorted(run):
            for rank, (doc, score) in enumerate(run[qid], 1):
                f.write(f"{qid} Q0 {doc} {rank} {score:.6f} {tag}\n")


def write_report(path_or_file, results: Iterable[MetricResult]) -> None:
    def emit(f):
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["metric", "mean", "stderr", "queries"])
        for r in results:
            w.writerow([r.name, f"{r.mean:.6f}", f"{r.stderr:.6f}", len(r.per_query)])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as f:
            emit(f)


def write_per_query(path, results: Iterable[MetricResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["metric", "qid", "value"])
        for r in results:
            for qid in sorted(r.per_query):
                w.writerow([r.name, qid, f"{r.per_query[qid]:.6f}"])
