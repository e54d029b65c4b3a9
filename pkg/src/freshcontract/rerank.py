"""Top-K vector retrieval and weighted multi-modal similarity re-ranking.

Works on precomputed features only. A record file holds one JSON object
per line::

    {"id": "scan-17", "modality": "image", "vector": [...], "matrix": [[...], ...]}

``matrix`` is optional and feeds the image-domain similarities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODALITIES = ("text", "image", "tabular")


class SimilarityConfigError(ValueError):
    """A similarity spec is malformed or cannot score the given payloads."""


@dataclass(frozen=True)
class FeatureRecord:
    id: str
    modality: str
    vector: np.ndarray
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        v = np.asarray(self.vector, dtype=float).reshape(-1)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError(f"record {self.id!r}: vector must be non-empty and finite")
        object.__setattr__(self, "vector", v)
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.size == 0 or not np.all(np.isfinite(m)):
                raise ValueError(f"record {self.id!r}: matrix must be a finite 2-D grid")
            object.__setattr__(self, "matrix", m)

    @classmethod
    def from_dict(cls, d) -> "FeatureRecord":
        return cls(str(d["id"]), d["modality"], d["vector"], d.get("matrix"))

    def to_dict(self):
        d = {"id": self.id, "modality": self.modality, "vector": self.vector.tolist()}
        if self.matrix is not None:
            d["matrix"] = self.matrix.tolist()
        return d


def load_records(path) -> list[FeatureRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(FeatureRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_records(records, path):
    Path(path).write_text("".join(json.dumps(r.to_dict()) + "\n" for r in records))


_UNIT_SNAP = 8 * np.finfo(float).eps


def _normalized_dot(a, b):
    """``a.b / (|a| |b|)`` for non-zero inputs, with parallel inputs landing on +-1."""
    # power-of-two rescaling is exact and keeps the squared sums in range
    a = np.ldexp(a, -np.frexp(np.max(np.abs(a)))[1])
    b = np.ldexp(b, -np.frexp(np.max(np.abs(b)))[1])
    r = np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b))
    # rounding in the centring or scaling leaves a few ulps below 1
    if abs(r) > 1.0 - _UNIT_SNAP:
        r = np.sign(r)
    return float(r)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if not (np.any(a) and np.any(b)):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return _normalized_dot(a, b)


def ncc(a, b) -> float:
    """Normalized cross-correlation of two equally shaped arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = a.reshape(-1) - a.mean()
    b = b.reshape(-1) - b.mean()
    if not (np.any(a) and np.any(b)):
        raise ValueError("ncc is undefined for a constant input")
    return _normalized_dot(a, b)


def ssim(a, b, dynamic_range: float = 1.0) -> float:
    """Single-window (global) structural similarity."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not dynamic_range > 0:
        raise ValueError("dynamic range must be positive")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def _payload(record: FeatureRecord, fn: str):
    if fn == "cosine":
        return record.vector
    if fn == "ssim":
        if record.matrix is None:
            raise SimilarityConfigError(f"ssim needs a matrix payload on record {record.id!r}")
        return record.matrix
    # ncc works on the matrix when there is one, else on the vector
    return record.matrix if record.matrix is not None else record.vector


SIMILARITIES = {"cosine": cosine_similarity, "ncc": ncc, "ssim": ssim}


@dataclass(frozen=True)
class SimilaritySpec:
    """Convex mixture of unimodal similarity functions."""

    components: tuple
    dynamic_range: float = 1.0

    def __post_init__(self):
        comps = tuple((str(name), float(w)) for name, w in self.components)
        if not comps:
            raise SimilarityConfigError("a similarity spec needs at least one component")
        for name, w in comps:
            if name not in SIMILARITIES:
                raise SimilarityConfigError(f"unknown similarity function {name!r}")
            if w < 0:
                raise SimilarityConfigError(f"weight for {name} must be non-negative")
        total = sum(w for _, w in comps)
        if abs(total - 1.0) > 1e-9:
            raise SimilarityConfigError(f"weights must sum to 1, got {total}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_dict(cls, d) -> "SimilaritySpec":
        comps = d["components"]
        if isinstance(comps, dict):
            comps = list(comps.items())
        else:
            comps = [(c["function"], c["weight"]) for c in comps]
        return cls(tuple(comps), float(d.get("dynamic_range", 1.0)))

    @classmethod
    def load(cls, path) -> "SimilaritySpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


COSINE_ONLY = SimilaritySpec((("cosine", 1.0),))


def component_scores(query: FeatureRecord, candidate: FeatureRecord, spec: SimilaritySpec):
    scores = []
    for name, _ in spec.components:
        try:
            x1, x2 = _payload(query, name), _payload(candidate, name)
            if name == "ssim":
                scores.append(ssim(x1, x2, spec.dynamic_range))
            else:
                scores.append(SIMILARITIES[name](x1, x2))
        except ValueError as exc:
            raise SimilarityConfigError(
                f"{name} cannot score {query.id!r} against {candidate.id!r}: {exc}"
            ) from exc
    return scores


def mis_score(query: FeatureRecord, candidate: FeatureRecord, spec: SimilaritySpec) -> float:
    """Weighted sum of the spec's similarity functions on one query/candidate pair."""
    scores = component_scores(query, candidate, spec)
    return float(sum(w * s for (_, w), s in zip(spec.components, scores)))


def _ranked(scored):
    # descending score, ties by ascending id
    return sorted(scored, key=lambda pair: (-pair[1], pair[0].id))


def retrieve_top_k(query: FeatureRecord, db, k: int):
    """The ``k`` records closest to ``query`` by cosine similarity, as ``(record, score)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for r in db:
        if r.vector.shape != query.vector.shape:
            raise ValueError(
                f"record {r.id!r} has dimension {r.vector.size}, query has {query.vector.size}"
            )
    scored = [(r, cosine_similarity(query.vector, r.vector)) for r in db]
    return _ranked(scored)[:k]


def rerank(query: FeatureRecord, candidates, spec: SimilaritySpec, p: int):
    """Re-order candidates by MIS score and keep the best ``p``.

    ``candidates`` may be plain records or ``(record, score)`` pairs as
    returned by :func:`retrieve_top_k`.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    records = [c[0] if isinstance(c, tuple) else c for c in candidates]
    scored = [(r, mis_score(query, r, spec)) for r in records]
    return _ranked(scored)[:p]


def search(query: FeatureRecord, db, k: int, p: int, spec: SimilaritySpec):
    return rerank(query, retrieve_top_k(query, db, k), spec, p)
