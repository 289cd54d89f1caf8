"""Filtered link-prediction ranking and metric aggregation.

Every triple of the evaluated split is ranked twice, once per query
direction.  The candidate list is all entities minus the other answers
known to be true anywhere in the dataset (the evaluated answer itself
always stays in the list).  Score ties use the mean-rank convention:
rank = 1 + |better| + |tied others| / 2, rounded half up, which avoids
the optimistic bias of insertion-order ranking.

Ranking only reads the parameters, so queries are independent; reports
are assembled in split order for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (Dataset, Direction, QueryKey, answer_of, query_of,
                   true_answers_index)
from .models import ModelParams, score_batch

METRIC_NAMES = ("mrr", "h1", "h3", "h10")


@dataclass
class EvalReport:
    mrr: float
    h1: float
    h3: float
    h10: float
    per_query_ranks: list[int]
    queries: list[QueryKey]
    split: str

    def metric(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class AggregateReport:
    """Per-metric mean and population standard deviation over runs."""

    metrics: dict[str, tuple[float, float]] = field(default_factory=dict)


def filtered_rank(params: ModelParams, query: QueryKey, answer: int,
                  known_true: set[int] | frozenset[int]) -> int:
    """Rank of `answer` among all entities after filtering known answers."""
    scores = score_batch(params, query,
                         np.arange(params.num_entities, dtype=np.int64))
    keep = np.ones(params.num_entities, dtype=bool)
    for other in known_true:
        keep[other] = False
    keep[answer] = True
    answer_score = scores[answer]
    kept = scores[keep]
    better = int((kept > answer_score).sum())
    tied_others = int((kept == answer_score).sum()) - 1
    return int(math.floor(1.0 + better + tied_others / 2.0 + 0.5))


def build_filter_index(dataset: Dataset) -> dict[QueryKey, set[int]]:
    """Known-true answers per query over train, valid, and test."""
    index = true_answers_index(dataset.train)
    for split in (dataset.valid, dataset.test):
        for query, answers in true_answers_index(split).items():
            index.setdefault(query, set()).update(answers)
    return index


def evaluate(params: ModelParams, dataset: Dataset, split: str,
             filter_index: dict[QueryKey, set[int]] | None = None
             ) -> EvalReport:
    """Filtered MRR and Hits@{1,3,10} over both directions of a split."""
    triples = {"valid": dataset.valid, "test": dataset.test,
               "train": dataset.train}[split]
    if not triples:
        raise ValueError(f"split {split!r} is empty")
    if filter_index is None:
        filter_index = build_filter_index(dataset)
    ranks: list[int] = []
    queries: list[QueryKey] = []
    for triple in triples:
        for direction in (Direction.TAIL_QUERY, Direction.HEAD_QUERY):
            query = query_of(triple, direction)
            answer = answer_of(triple, direction)
            rank = filtered_rank(params, query, answer,
                                 filter_index.get(query, set()))
            ranks.append(rank)
            queries.append(query)
    rank_arr = np.array(ranks, dtype=np.float64)
    return EvalReport(
        mrr=float((1.0 / rank_arr).mean()),
        h1=float((rank_arr <= 1).mean()),
        h3=float((rank_arr <= 3).mean()),
        h10=float((rank_arr <= 10).mean()),
        per_query_ranks=ranks,
        queries=queries,
        split=split,
    )


def aggregate_runs(reports: list[EvalReport]) -> AggregateReport:
    """Mean and population standard deviation of each metric."""
    if not reports:
        raise ValueError("need at least one report")
    aggregate = AggregateReport()
    for name in METRIC_NAMES:
        values = np.array([report.metric(name) for report in reports])
        # clamp away the ulp of rounding so identical runs aggregate to
        # exactly (value, 0)
        mean = min(max(float(values.mean()), float(values.min())),
                   float(values.max()))
        sd = float(np.sqrt(((values - mean) ** 2).mean()))
        aggregate.metrics[name] = (mean, sd)
    return aggregate


# ---------------------------------------------------------------------------
# report output


def format_report(report: EvalReport) -> str:
    """Human-readable table, metrics scaled x100 with one decimal."""
    lines = [f"split: {report.split}  ({len(report.per_query_ranks)} ranked queries)"]
    for name in METRIC_NAMES:
        lines.append(f"  {name.upper():<4} {100.0 * report.metric(name):5.1f}")
    return "\n".join(lines) + "\n"


def write_aggregate(aggregate: AggregateReport, path: str | Path) -> None:
    """`metric<TAB>mean<TAB>sd` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, (mean, sd) in aggregate.metrics.items():
            fh.write(f"{name}\t{mean!r}\t{sd!r}\n")


def write_metrics(report: EvalReport, path: str | Path) -> None:
    """Single-run `metric<TAB>mean<TAB>sd` rows (sd = 0)."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in METRIC_NAMES:
            fh.write(f"{name}\t{report.metric(name)!r}\t0.0\n")


def write_rank_dump(report: EvalReport, path: str | Path) -> None:
    """`query<TAB>direction<TAB>rank` rows; query is `entity|relation`."""
    names = {Direction.TAIL_QUERY: "tail-query",
             Direction.HEAD_QUERY: "head-query"}
    with open(path, "w", encoding="utf-8") as fh:
        for query, rank in zip(report.queries, report.per_query_ranks):
            fh.write(f"{query.entity}|{query.relation}\t"
                     f"{names[query.direction]}\t{rank}\n")
