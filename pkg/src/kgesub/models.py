"""Embedding models: parameter storage, scoring, and analytic gradients.

Five score functions are provided.  Higher scores mean "more plausible".
All arithmetic is float64.

Embedding layouts (dim = per-entity real degrees of freedom):

============  =======================  =====================================
kind          entity row (dim)         relation row
============  =======================  =====================================
transe        plain vector             plain vector (dim)
distmult      plain vector             plain vector (dim)
complex       interleaved re,im pairs  interleaved re,im pairs (dim)
rotate        interleaved re,im pairs  dim/2 phase angles
hake          [modulus | phase]        [modulus | phase | bias] (3*dim/2)
============  =======================  =====================================

RotatE relations are stored as phase angles so the rotation has unit
modulus by construction.  HAKE modulus parts are stored unconstrained
and passed through abs() at score time; the bias third of the relation
row is carried for layout compatibility with the model's published
parameterization but does not enter this score function.  Gradients use
the subgradient convention sign(0) = 0 at the kinks of L1 terms.

Scoring and gradients are pure functions of the parameters: concurrent
readers are safe as long as a single writer applies updates between
read phases.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Direction, QueryKey, Triple
from .errors import CheckpointError

INIT_EPSILON = 2.0  # widens the uniform init range beyond gamma/dim

_MAGIC = b"KGESUBCK"
_FORMAT_VERSION = 1


class ModelKind(enum.Enum):
    TRANSE = "transe"
    ROTATE = "rotate"
    COMPLEX = "complex"
    DISTMULT = "distmult"
    HAKE = "hake"

    @classmethod
    def from_string(cls, name: str) -> "ModelKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown model kind: {name!r}") from None


_COMPLEX_KINDS = {ModelKind.ROTATE, ModelKind.COMPLEX, ModelKind.HAKE}


def relation_dim(kind: ModelKind, dim: int) -> int:
    if kind in _COMPLEX_KINDS and dim % 2 != 0:
        raise ValueError(f"{kind.value} requires an even dim, got {dim}")
    if kind == ModelKind.ROTATE:
        return dim // 2
    if kind == ModelKind.HAKE:
        return 3 * (dim // 2)
    return dim


def default_aux(kind: ModelKind) -> dict[str, float]:
    if kind == ModelKind.TRANSE:
        return {"norm_p": 1.0}
    if kind == ModelKind.HAKE:
        return {"phase_weight": 0.5}
    return {}


@dataclass
class ModelParams:
    kind: ModelKind
    dim: int
    entity_emb: np.ndarray  # (E, dim)
    relation_emb: np.ndarray  # (R, relation_dim(kind, dim))
    gamma: float
    aux: dict[str, float] = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_emb.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.dim, self.entity_emb.copy(),
                           self.relation_emb.copy(), self.gamma,
                           dict(self.aux))


def init_params(kind: ModelKind, num_entities: int, num_relations: int,
                dim: int, gamma: float, seed: int,
                aux: dict[str, float] | None = None,
                init_epsilon: float = INIT_EPSILON) -> ModelParams:
    """Deterministic uniform initialization.

    Non-phase entries are drawn from [-b, b] with
    b = (gamma + init_epsilon) / dim; phase columns (RotatE relations,
    HAKE phase parts) are drawn from [-pi, pi].
    """
    if dim <= 0 or num_entities <= 0 or num_relations <= 0:
        raise ValueError("dims and vocabulary sizes must be positive")
    dim_r = relation_dim(kind, dim)
    merged_aux = default_aux(kind)
    merged_aux.update(aux or {})
    bound = (gamma + init_epsilon) / dim
    rng = np.random.default_rng(seed)
    entity = rng.uniform(-bound, bound, size=(num_entities, dim))
    half = dim // 2
    if kind == ModelKind.ROTATE:
        relation = rng.uniform(-math.pi, math.pi, size=(num_relations, dim_r))
    elif kind == ModelKind.HAKE:
        entity[:, half:] = rng.uniform(-math.pi, math.pi,
                                       size=(num_entities, half))
        relation = rng.uniform(-bound, bound, size=(num_relations, dim_r))
        relation[:, half:2 * half] = rng.uniform(-math.pi, math.pi,
                                                 size=(num_relations, half))
    else:
        relation = rng.uniform(-bound, bound, size=(num_relations, dim_r))
    return ModelParams(kind=kind, dim=dim, entity_emb=entity,
                       relation_emb=relation, gamma=gamma, aux=merged_aux)


# ---------------------------------------------------------------------------
# scoring


def _as_rows(x: np.ndarray) -> np.ndarray:
    return x if x.ndim == 2 else x[None, :]


def _complex_view(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split interleaved (re, im) pairs into two (n, dim/2) arrays."""
    return rows[:, 0::2], rows[:, 1::2]


def _score_rows(params: ModelParams, h: np.ndarray, r: np.ndarray,
                t: np.ndarray) -> np.ndarray:
    """Scores for stacked embedding rows.

    h and t have shape (n, dim); r has shape (n, dim_r) or (dim_r,),
    broadcast against them.
    """
    kind = params.kind
    r = _as_rows(r)
    if kind == ModelKind.TRANSE:
        d = h + r - t
        p = params.aux.get("norm_p", 1.0)
        if p == 1.0:
            return -np.abs(d).sum(axis=1)
        return -np.sqrt((d * d).sum(axis=1))
    if kind == ModelKind.DISTMULT:
        return (h * r * t).sum(axis=1)
    if kind == ModelKind.COMPLEX:
        h_re, h_im = _complex_view(h)
        t_re, t_im = _complex_view(t)
        r_re, r_im = _complex_view(r)
        return (r_re * (h_re * t_re + h_im * t_im)
                + r_im * (h_re * t_im - h_im * t_re)).sum(axis=1)
    if kind == ModelKind.ROTATE:
        h_re, h_im = _complex_view(h)
        t_re, t_im = _complex_view(t)
        cos_r, sin_r = np.cos(r), np.sin(r)
        u_re = h_re * cos_r - h_im * sin_r - t_re
        u_im = h_re * sin_r + h_im * cos_r - t_im
        return -np.sqrt(u_re * u_re + u_im * u_im).sum(axis=1)
    if kind == ModelKind.HAKE:
        half = params.dim // 2
        h_mod, h_phase = h[:, :half], h[:, half:]
        t_mod, t_phase = t[:, :half], t[:, half:]
        r_mod, r_phase = r[:, :half], r[:, half:2 * half]
        v = np.abs(h_mod) * np.abs(r_mod) - np.abs(t_mod)
        modulus_term = np.sqrt((v * v).sum(axis=1))
        theta = (h_phase + r_phase - t_phase) / 2.0
        phase_term = np.abs(np.sin(theta)).sum(axis=1)
        return -(modulus_term + params.aux["phase_weight"] * phase_term)
    raise AssertionError(f"unhandled kind {kind}")


def score(params: ModelParams, triple: Triple) -> float:
    """Plausibility score of a single triple."""
    h = _as_rows(params.entity_emb[triple.head])
    t = _as_rows(params.entity_emb[triple.tail])
    r = params.relation_emb[triple.relation]
    return float(_score_rows(params, h, r, t)[0])


def score_batch(params: ModelParams, query: QueryKey,
                candidates: np.ndarray) -> np.ndarray:
    """Scores of all candidate answers to one query, vectorized."""
    candidates = np.asarray(candidates, dtype=np.int64)
    r = params.relation_emb[query.relation]
    fixed = _as_rows(params.entity_emb[query.entity])
    cand_rows = params.entity_emb[candidates]
    if query.direction == Direction.TAIL_QUERY:
        h = np.broadcast_to(fixed, cand_rows.shape)
        return _score_rows(params, h, r, cand_rows)
    t = np.broadcast_to(fixed, cand_rows.shape)
    return _score_rows(params, cand_rows, r, t)


def score_triples(params: ModelParams, heads: np.ndarray, relations: np.ndarray,
                  tails: np.ndarray) -> np.ndarray:
    """Scores of many (h, r, t) id triples at once."""
    return _score_rows(params,
                       params.entity_emb[np.asarray(heads, dtype=np.int64)],
                       params.relation_emb[np.asarray(relations,
                                                      dtype=np.int64)],
                       params.entity_emb[np.asarray(tails, dtype=np.int64)])


# ---------------------------------------------------------------------------
# analytic gradients


def _safe_div(num: np.ndarray, den: np.ndarray | float) -> np.ndarray:
    """num / den with the convention 0/0 = 0 (norm kinks)."""
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def score_gradient(params: ModelParams,
                   triple: Triple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d score / d head_row, d/d relation_row, d/d tail_row).

    Slot gradients are independent; callers accumulate them when the
    head and tail slots reference the same entity row.
    """
    kind = params.kind
    h = params.entity_emb[triple.head]
    t = params.entity_emb[triple.tail]
    r = params.relation_emb[triple.relation]
    if kind == ModelKind.TRANSE:
        d = h + r - t
        p = params.aux.get("norm_p", 1.0)
        if p == 1.0:
            g = -np.sign(d)
        else:
            norm = math.sqrt(float((d * d).sum()))
            g = -_safe_div(d, norm)
        return g.copy(), g.copy(), -g
    if kind == ModelKind.DISTMULT:
        return r * t, h * t, h * r
    if kind == ModelKind.COMPLEX:
        h_re, h_im = h[0::2], h[1::2]
        t_re, t_im = t[0::2], t[1::2]
        r_re, r_im = r[0::2], r[1::2]
        g_h = np.empty_like(h)
        g_h[0::2] = r_re * t_re + r_im * t_im
        g_h[1::2] = r_re * t_im - r_im * t_re
        g_r = np.empty_like(r)
        g_r[0::2] = h_re * t_re + h_im * t_im
        g_r[1::2] = h_re * t_im - h_im * t_re
        g_t = np.empty_like(t)
        g_t[0::2] = r_re * h_re - r_im * h_im
        g_t[1::2] = r_re * h_im + r_im * h_re
        return g_h, g_r, g_t
    if kind == ModelKind.ROTATE:
        h_re, h_im = h[0::2], h[1::2]
        t_re, t_im = t[0::2], t[1::2]
        cos_r, sin_r = np.cos(r), np.sin(r)
        u_re = h_re * cos_r - h_im * sin_r - t_re
        u_im = h_re * sin_r + h_im * cos_r - t_im
        m = np.sqrt(u_re * u_re + u_im * u_im)
        w_re, w_im = _safe_div(u_re, m), _safe_div(u_im, m)
        g_h = np.empty_like(h)
        g_h[0::2] = -(w_re * cos_r + w_im * sin_r)
        g_h[1::2] = -(-w_re * sin_r + w_im * cos_r)
        g_t = np.empty_like(t)
        g_t[0::2] = w_re
        g_t[1::2] = w_im
        g_r = -(w_re * (-(h_re * sin_r + h_im * cos_r))
                + w_im * (h_re * cos_r - h_im * sin_r))
        return g_h, g_r, g_t
    if kind == ModelKind.HAKE:
        half = params.dim // 2
        w_p = params.aux["phase_weight"]
        h_mod, h_phase = h[:half], h[half:]
        t_mod, t_phase = t[:half], t[half:]
        r_mod, r_phase = r[:half], r[half:2 * half]
        v = np.abs(h_mod) * np.abs(r_mod) - np.abs(t_mod)
        norm = math.sqrt(float((v * v).sum()))
        vn = _safe_div(v, norm)
        theta = (h_phase + r_phase - t_phase) / 2.0
        phase_g = w_p * np.sign(np.sin(theta)) * np.cos(theta) * 0.5
        g_h = np.empty_like(h)
        g_h[:half] = -vn * np.abs(r_mod) * np.sign(h_mod)
        g_h[half:] = -phase_g
        g_t = np.empty_like(t)
        g_t[:half] = vn * np.sign(t_mod)
        g_t[half:] = phase_g
        g_r = np.zeros_like(r)
        g_r[:half] = -vn * np.abs(h_mod) * np.sign(r_mod)
        g_r[half:2 * half] = -phase_g
        return g_h, g_r, g_t
    raise AssertionError(f"unhandled kind {kind}")


# ---------------------------------------------------------------------------
# checkpoint container

def write_container(path: str | Path, header: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    """Binary container: magic, length-prefixed JSON header, then the
    arrays named in header["arrays"] as row-major little-endian f64."""
    header = dict(header)
    header["format_version"] = _FORMAT_VERSION
    header["arrays"] = [{"name": name, "shape": list(arr.shape)}
                        for name, arr in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated header")
        (blob_len,) = struct.unpack("<Q", raw_len)
        blob = fh.read(blob_len)
        if len(blob) != blob_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        if header.get("format_version") != _FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version "
                f"{header.get('format_version')}")
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            nbytes = 8 * int(np.prod(shape)) if shape else 8
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(
                    f"{path}: truncated array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(
                shape).astype(np.float64)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after arrays")
    return header, arrays


def save_params(params: ModelParams, path: str | Path,
                tag: str | None = None) -> None:
    header = {
        "payload": "model-params",
        "kind": params.kind.value,
        "dim": params.dim,
        "gamma": params.gamma,
        "aux": params.aux,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
    }
    if tag is not None:
        header["tag"] = tag
    write_container(path, header, {"entity_emb": params.entity_emb,
                                   "relation_emb": params.relation_emb})


def load_params_tag(path: str | Path) -> str | None:
    """The provenance tag a checkpoint was saved with, if any."""
    header, _ = read_container(path)
    return header.get("tag")


def params_from_container(header: dict,
                          arrays: dict[str, np.ndarray]) -> ModelParams:
    return ModelParams(
        kind=ModelKind.from_string(header["kind"]),
        dim=int(header["dim"]),
        entity_emb=arrays["entity_emb"],
        relation_emb=arrays["relation_emb"],
        gamma=float(header["gamma"]),
        aux={k: float(v) for k, v in header["aux"].items()},
    )


def load_params(path: str | Path) -> ModelParams:
    header, arrays = read_container(path)
    if header.get("payload") not in ("model-params", "train-checkpoint"):
        raise CheckpointError(f"{path}: unexpected payload "
                              f"{header.get('payload')!r}")
    return params_from_container(header, arrays)
