"""Pre-training, scoring, and selection of the frozen sub-model that
drives model-based subsampling.

The sub-model is an ordinary embedding model trained up front (with no
subsampling or with count-based Base weights), then frozen.  Its raw
scores over the training examples are persisted so the expensive
pre-training runs once per candidate, and weight construction only ever
reads the score file.

Selection is a two-stage grid search on validation MRR: first the best
(sub-model, temperature) pair under model-based weights, then, with
that pair fixed, the best mixing ratio under mixed weights.  Ties break
toward smaller temperature, then smaller ratio, then candidate order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, Direction, count_queries, query_of
from .errors import VocabMismatchError
from .models import ModelKind, ModelParams, init_params, score_triples
from .subsampling import (SubModelScores, SubsamplingMethod,
                          build_cbs_weights, uniform_weights)
from .training import TrainConfig, train

SUBMODEL_SUBSAMPLING = ("none", "cbs-base")


def submodel_id(kind: ModelKind, subsampling: str, seed: int) -> str:
    return f"{kind.value}-{subsampling}-seed{seed}"


def pretrain_submodel(dataset: Dataset, kind: ModelKind, subsampling: str,
                      dim: int, gamma: float, config: TrainConfig,
                      aux: dict[str, float] | None = None,
                      smoothing: float = 4.0,
                      init_epsilon: float = 2.0) -> tuple[ModelParams, str]:
    """Train a sub-model candidate and tag it with its provenance id.

    `subsampling` is restricted to the candidate grid: "none" or
    "cbs-base".
    """
    if subsampling not in SUBMODEL_SUBSAMPLING:
        raise ValueError(f"sub-model subsampling must be one of "
                         f"{SUBMODEL_SUBSAMPLING}, got {subsampling!r}")
    if subsampling == "cbs-base":
        freq = count_queries(dataset.train, smoothing=smoothing)
        weights = build_cbs_weights(dataset, freq, SubsamplingMethod.BASE)
    else:
        weights = uniform_weights(dataset.num_examples)
    params = init_params(kind, dataset.num_entities, dataset.num_relations,
                         dim, gamma, config.seed, aux=aux,
                         init_epsilon=init_epsilon)
    result = train(dataset, weights, params, config)
    return result.params, submodel_id(kind, subsampling, config.seed)


def score_training_triples(submodel: ModelParams, dataset: Dataset,
                           provenance: str) -> SubModelScores:
    """Raw sub-model score of every direction-expanded training example.

    Both directions of a triple share the triple's score.  Pure function
    of (sub-model, dataset): recomputing from a persisted copy of either
    gives identical output.
    """
    _check_vocab(submodel, dataset)
    ids = np.array(dataset.train, dtype=np.int64)
    per_triple = score_triples(submodel, ids[:, 0], ids[:, 1], ids[:, 2])
    raw = np.repeat(per_triple, 2)
    return SubModelScores(raw_score=raw, submodel_id=provenance)


def _check_vocab(submodel: ModelParams, dataset: Dataset) -> None:
    if (submodel.num_entities != dataset.num_entities
            or submodel.num_relations != dataset.num_relations):
        raise VocabMismatchError(
            f"sub-model covers {submodel.num_entities} entities / "
            f"{submodel.num_relations} relations, dataset has "
            f"{dataset.num_entities} / {dataset.num_relations}")


def mbs_frequencies_all_candidates(
        submodel: ModelParams,
        dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Query frequencies summed over every candidate entity.

    Alternative reading of the model-based query mass: instead of the
    answers observed for the query in the training set, the sub-model's
    probability is accumulated over all E candidate answers.  The
    probability of any (query, candidate) pair shares the training-set
    softmax normalizer, and the link frequencies are unchanged.
    Needs the live sub-model, so this variant cannot be driven from a
    persisted score file.
    """
    from .models import score_batch
    _check_vocab(submodel, dataset)
    scores = score_training_triples(submodel, dataset, "_")
    raw = scores.raw_score
    shift = raw.max()
    z = np.exp(raw - shift).sum()
    n = dataset.num_examples
    f_xy = n * np.exp(raw - shift) / z
    candidates = np.arange(dataset.num_entities, dtype=np.int64)
    mass_cache: dict = {}
    f_x = np.empty(n)
    for i, triple in enumerate(dataset.train):
        for direction in (Direction.TAIL_QUERY, Direction.HEAD_QUERY):
            query = query_of(triple, direction)
            mass = mass_cache.get(query)
            if mass is None:
                candidate_scores = score_batch(submodel, query, candidates)
                mass = np.exp(candidate_scores - shift).sum() / z
                mass_cache[query] = mass
            f_x[2 * i + int(direction)] = n * mass
    return f_xy, f_x


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class GridRecord:
    submodel_id: str
    alpha: float
    lam: float | None  # None for the model-based stage
    valid_mrr: float


@dataclass
class Selection:
    submodel_id: str
    alpha: float
    lam: float
    mix_mrr: float
    mbs_mrr: float | None = None  # None when stage 1 was forced
    records: list[GridRecord] = field(default_factory=list)


def read_ledger(path: str | Path) -> list[GridRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            sid, alpha, lam, mrr = line.split("\t")
            records.append(GridRecord(
                submodel_id=sid, alpha=float(alpha),
                lam=None if lam == "-" else float(lam),
                valid_mrr=float(mrr)))
    return records


def append_ledger(path: str | Path, record: GridRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        lam = "-" if record.lam is None else repr(record.lam)
        fh.write(f"{record.submodel_id}\t{record.alpha!r}\t{lam}\t"
                 f"{record.valid_mrr!r}\n")


def select_submodel(candidates: Sequence[SubModelScores],
                    alpha_grid: Sequence[float],
                    lambda_grid: Sequence[float],
                    evaluate_point: Callable[[SubModelScores, float,
                                              float | None], float],
                    ledger_path: str | Path | None = None) -> Selection:
    """Two-stage validation-MRR grid search.

    `evaluate_point(scores, alpha, lam)` must return the validation MRR
    of a main model trained with model-based weights (lam is None) or
    mixed weights (lam set).  Grid points already present in the ledger
    file are reused, so an interrupted sweep resumes without retraining.
    A stage-1 grid with a single point is a forced choice and skips its
    evaluation; the ratio stage always evaluates, since its MRR is the
    search's deliverable.
    """
    if not candidates or not alpha_grid or not lambda_grid:
        raise ValueError("candidates and grids must be non-empty")
    cached = {}
    if ledger_path is not None:
        for record in read_ledger(ledger_path):
            cached[(record.submodel_id, record.alpha, record.lam)] = \
                record.valid_mrr
    records: list[GridRecord] = []

    def run(scores: SubModelScores, alpha: float,
            lam: float | None) -> float:
        key = (scores.submodel_id, alpha, lam)
        if key in cached:
            mrr = cached[key]
        else:
            mrr = evaluate_point(scores, alpha, lam)
            cached[key] = mrr
            if ledger_path is not None:
                append_ledger(ledger_path, GridRecord(*key, mrr))
        records.append(GridRecord(*key, mrr))
        return mrr

    if len(candidates) == 1 and len(alpha_grid) == 1:
        best_scores, best_alpha, mbs_mrr = candidates[0], alpha_grid[0], None
    else:
        best = None  # ((mrr, -alpha, -candidate_index), scores, alpha, mrr)
        for index, scores in enumerate(candidates):
            for alpha in alpha_grid:
                mrr = run(scores, alpha, None)
                key = (mrr, -alpha, -index)
                if best is None or key > best[0]:
                    best = (key, scores, alpha, mrr)
        _, best_scores, best_alpha, mbs_mrr = best

    best_mix = None
    for lam in lambda_grid:
        mrr = run(best_scores, best_alpha, lam)
        key = (mrr, -lam)
        if best_mix is None or key > best_mix[0]:
            best_mix = (key, lam, mrr)
    _, best_lam, mix_mrr = best_mix

    return Selection(submodel_id=best_scores.submodel_id, alpha=best_alpha,
                     lam=best_lam, mbs_mrr=mbs_mrr, mix_mrr=mix_mrr,
                     records=records)
