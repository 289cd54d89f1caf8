"""Per-example loss weights for count-based, model-based, and mixed
subsampling.

Every training triple contributes two direction-expanded examples, and
each example carries a positive weight `a` (applied to the true-link
term of the loss) and a negative weight `b` (applied to the sampled
false-link terms).  Weights are built once from frozen inputs and are
normalized to mean 1 over the whole example set, so subsampling never
changes the overall scale of the loss.

Count-based weights (CBS) discount by 1/sqrt of counted frequencies:
the link frequency is approximated by the mean of the two query counts,
and the query frequency is the count itself.  Model-based weights (MBS)
replace counts with frequencies derived from a frozen sub-model: its
raw scores over all training examples are softmax-normalized into a
distribution p, giving a link frequency of |D| * p(example) and a query
frequency that aggregates p over the answers observed for the query.
A temperature exponent alpha replaces CBS's fixed 1/2.  Mixed weights
(MIX) are the elementwise convex combination of the two tables.

Weight construction is a pure function of its frozen inputs, and the
resulting tables are immutable and safe for concurrent readers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (Dataset, Direction, FrequencyTable, QueryKey,
                   query_of, triple_frequency)
from .errors import DataError, DegenerateInputError

# Hyper-parameter search grids.
ALPHA_GRID = (2.0, 1.0, 0.5, 0.1, 0.05, 0.01)
LAMBDA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)

_DIRECTION_NAMES = {Direction.TAIL_QUERY: "tail-query",
                    Direction.HEAD_QUERY: "head-query"}
_DIRECTION_FROM_NAME = {v: k for k, v in _DIRECTION_NAMES.items()}


class SubsamplingMethod(enum.Enum):
    NONE = "none"
    BASE = "base"
    FREQ = "freq"
    UNIQ = "uniq"

    @classmethod
    def from_string(cls, name: str) -> "SubsamplingMethod":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown subsampling method: {name!r}") from None


@dataclass(frozen=True)
class Provenance:
    source: str  # "none" | "cbs" | "mbs" | "mix"
    method: str
    alpha: float | None = None
    lam: float | None = None
    submodel_id: str | None = None

    def describe(self) -> str:
        parts = [f"source={self.source}", f"method={self.method}"]
        parts.append(f"alpha={self.alpha if self.alpha is not None else '-'}")
        parts.append(f"lambda={self.lam if self.lam is not None else '-'}")
        parts.append(f"submodel={self.submodel_id or '-'}")
        return " ".join(parts)


@dataclass
class WeightTable:
    """Positive (a) and negative (b) weights per direction-expanded example."""

    a: np.ndarray
    b: np.ndarray
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must cover the same examples")

    @property
    def num_examples(self) -> int:
        return self.a.shape[0]


@dataclass
class SubModelScores:
    """Raw scores of every training example under a frozen sub-model."""

    raw_score: np.ndarray  # (2 * |train|,)
    submodel_id: str

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.raw_score)):
            raise DegenerateInputError(
                f"sub-model {self.submodel_id!r} produced non-finite scores")


def uniform_weights(num_examples: int) -> WeightTable:
    """The no-subsampling table: a = b = 1 everywhere."""
    ones = np.ones(num_examples)
    return WeightTable(a=ones, b=ones.copy(),
                       provenance=Provenance(source="none", method="none"))


def _example_count_arrays(
        dataset: Dataset,
        freq: FrequencyTable) -> tuple[np.ndarray, np.ndarray]:
    """Counted (link frequency, query frequency) per expanded example."""
    n = dataset.num_examples
    f_xy = np.empty(n)
    f_x = np.empty(n)
    for i, triple in enumerate(dataset.train):
        link = triple_frequency(freq, triple)
        f_xy[2 * i] = link
        f_xy[2 * i + 1] = link
        f_x[2 * i] = freq.count(query_of(triple, Direction.TAIL_QUERY))
        f_x[2 * i + 1] = freq.count(query_of(triple, Direction.HEAD_QUERY))
    return f_xy, f_x


def _normalize_to_mean_one(unnormalized: np.ndarray) -> np.ndarray:
    return unnormalized * (unnormalized.shape[0] / unnormalized.sum())


def build_cbs_weights(dataset: Dataset, freq: FrequencyTable,
                      method: SubsamplingMethod) -> WeightTable:
    """Count-based weights: 1/sqrt discounting of counted frequencies.

    Base uses the link frequency for both columns, Freq uses the link
    frequency for `a` and the query frequency for `b`, Uniq uses the
    query frequency for both.
    """
    if method == SubsamplingMethod.NONE:
        return uniform_weights(dataset.num_examples)
    f_xy, f_x = _example_count_arrays(dataset, freq)
    if np.any(f_xy <= 0) or np.any(f_x <= 0):
        raise DegenerateInputError(
            "zero counted frequency for an observed training example; "
            "counts do not match the training split")
    inv_sqrt_xy = 1.0 / np.sqrt(f_xy)
    inv_sqrt_x = 1.0 / np.sqrt(f_x)
    if method == SubsamplingMethod.BASE:
        a_u, b_u = inv_sqrt_xy, inv_sqrt_xy
    elif method == SubsamplingMethod.FREQ:
        a_u, b_u = inv_sqrt_xy, inv_sqrt_x
    else:  # UNIQ
        a_u, b_u = inv_sqrt_x, inv_sqrt_x
    return WeightTable(a=_normalize_to_mean_one(a_u),
                       b=_normalize_to_mean_one(b_u),
                       provenance=Provenance(source="cbs",
                                             method=method.value))


def softmax_over_train(scores: SubModelScores) -> np.ndarray:
    """Softmax of the raw scores over the whole training example set.

    Computed with max-subtraction, so uniformly shifted scores give
    identical probabilities.
    """
    raw = scores.raw_score
    if raw.shape[0] == 0:
        raise ValueError("need at least one example")
    shifted = raw - raw.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def mbs_frequencies(dataset: Dataset,
                    p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model-based frequencies per expanded example.

    The link frequency of example i is |D| * p[i].  The query frequency
    of example i is |D| times the total probability of the examples that
    share its query, i.e. the probability mass of the answers observed
    for that query within the training set.
    """
    n = dataset.num_examples
    if p.shape[0] != n:
        raise ValueError(f"p covers {p.shape[0]} examples, dataset has {n}")
    f_xy = n * p
    query_mass: dict[QueryKey, float] = {}
    queries: list[QueryKey] = []
    for i, triple in enumerate(dataset.train):
        for direction in (Direction.TAIL_QUERY, Direction.HEAD_QUERY):
            q = query_of(triple, direction)
            queries.append(q)
            query_mass[q] = query_mass.get(q, 0.0) + p[2 * i + int(direction)]
    f_x = np.fromiter((n * query_mass[q] for q in queries), dtype=np.float64,
                      count=n)
    return f_xy, f_x


def build_mbs_weights(f_xy: np.ndarray, f_x: np.ndarray,
                      method: SubsamplingMethod, alpha: float,
                      submodel_id: str | None = None) -> WeightTable:
    """Model-based weights: temperature-alpha discounting f ** -alpha.

    With alpha = 0.5 and counted frequencies this reproduces the
    count-based table.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if f_xy.shape != f_x.shape:
        raise ValueError("f_xy and f_x must cover the same examples")
    provenance = Provenance(source="mbs", method=method.value, alpha=alpha,
                            submodel_id=submodel_id)
    if method == SubsamplingMethod.NONE:
        table = uniform_weights(f_xy.shape[0])
        table.provenance = provenance
        return table
    if np.any(f_xy <= 0) or np.any(f_x <= 0):
        raise DegenerateInputError("non-positive model-based frequency")
    pow_xy = np.power(f_xy, -alpha)
    pow_x = np.power(f_x, -alpha)
    if method == SubsamplingMethod.BASE:
        a_u, b_u = pow_xy, pow_xy
    elif method == SubsamplingMethod.FREQ:
        a_u, b_u = pow_xy, pow_x
    else:  # UNIQ
        a_u, b_u = pow_x, pow_x
    return WeightTable(a=_normalize_to_mean_one(a_u),
                       b=_normalize_to_mean_one(b_u),
                       provenance=provenance)


def mix_weights(cbs: WeightTable, mbs: WeightTable, lam: float) -> WeightTable:
    """Convex combination: lam * model-based + (1 - lam) * count-based."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if cbs.num_examples != mbs.num_examples:
        raise ValueError("weight tables cover different example sets")
    provenance = Provenance(source="mix", method=cbs.provenance.method,
                            alpha=mbs.provenance.alpha, lam=lam,
                            submodel_id=mbs.provenance.submodel_id)
    return WeightTable(a=lam * mbs.a + (1.0 - lam) * cbs.a,
                       b=lam * mbs.b + (1.0 - lam) * cbs.b,
                       provenance=provenance)


# ---------------------------------------------------------------------------
# file formats


def save_weight_table(table: WeightTable, path: str | Path) -> None:
    """`example_id<TAB>direction<TAB>a<TAB>b` rows with a comment header.

    Weights are written as shortest round-trip decimals, so the file
    reloads to bitwise-equal arrays.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {table.provenance.describe()}\n")
        for i in range(table.num_examples):
            direction = Direction(i % 2)
            fh.write(f"{i}\t{_DIRECTION_NAMES[direction]}\t"
                     f"{float(table.a[i])!r}\t{float(table.b[i])!r}\n")


def load_weight_table(path: str | Path) -> WeightTable:
    path = Path(path)
    provenance = Provenance(source="unknown", method="unknown")
    a: list[float] = []
    b: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                provenance = _parse_provenance(line)
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields")
            if int(parts[0]) != len(a):
                raise DataError(f"{path}:{lineno}: example ids must be dense")
            if parts[1] not in _DIRECTION_FROM_NAME:
                raise DataError(f"{path}:{lineno}: bad direction {parts[1]!r}")
            a.append(float(parts[2]))
            b.append(float(parts[3]))
    if not a:
        raise DataError(f"{path}: empty weight table")
    return WeightTable(a=np.array(a), b=np.array(b), provenance=provenance)


def _parse_provenance(comment: str) -> Provenance:
    fields = dict(item.split("=", 1) for item in comment[1:].split()
                  if "=" in item)
    def opt_float(key: str) -> float | None:
        value = fields.get(key, "-")
        return None if value == "-" else float(value)
    submodel = fields.get("submodel", "-")
    return Provenance(source=fields.get("source", "unknown"),
                      method=fields.get("method", "unknown"),
                      alpha=opt_float("alpha"), lam=opt_float("lambda"),
                      submodel_id=None if submodel == "-" else submodel)


def save_scores(scores: SubModelScores, path: str | Path) -> None:
    """`example_id<TAB>raw_score` rows with a provenance header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# submodel={scores.submodel_id}\n")
        for i, value in enumerate(scores.raw_score):
            fh.write(f"{i}\t{float(value)!r}\n")


def load_scores(path: str | Path) -> SubModelScores:
    path = Path(path)
    submodel_id = "unknown"
    values: list[float] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                fields = dict(item.split("=", 1)
                              for item in line[1:].split() if "=" in item)
                submodel_id = fields.get("submodel", submodel_id)
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            if int(parts[0]) != len(values):
                raise DataError(f"{path}:{lineno}: example ids must be dense")
            values.append(float(parts[1]))
    if not values:
        raise DataError(f"{path}: empty score file")
    return SubModelScores(raw_score=np.array(values), submodel_id=submodel_id)
