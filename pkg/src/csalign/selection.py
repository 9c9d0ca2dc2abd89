"""Source-subject selection from embedding-level divergences: pairwise
divergence matrix, percentile thresholding, greedy minimum-distance
subsets, and classical MDS coordinates for distance visualization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .divergence import cs_divergence
from .errors import ParameterError, SampleSizeError, ShapeError
from .kernels import KernelConfig

__all__ = [
    "SubjectEmbedding",
    "SelectionResult",
    "aggregate_embedding",
    "divergence_matrix",
    "select_by_percentile",
    "select_sources",
    "greedy_min_distance_subset",
    "mds_coordinates",
]


def aggregate_embedding(per_trial: np.ndarray) -> np.ndarray:
    """Mean-pool per-trial embedding vectors into one subject vector."""
    m = np.atleast_2d(np.asarray(per_trial, dtype=np.float64))
    if m.shape[0] < 1 or m.size == 0:
        raise SampleSizeError("need at least one trial vector to aggregate")
    return m.mean(axis=0)


@dataclass(frozen=True)
class SubjectEmbedding:
    """Per-trial embedding vectors for one subject plus their mean."""

    subject_id: str
    vectors: np.ndarray  # (n_trials x d_e)
    aggregate: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        vec = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        object.__setattr__(self, "vectors", vec)
        if self.aggregate is None:
            object.__setattr__(self, "aggregate", aggregate_embedding(vec))


@dataclass
class SelectionResult:
    """Outcome of source selection against one target subject."""

    subject_ids: list[str]  # row/column order of distance_matrix
    target_id: str
    distance_matrix: np.ndarray
    percentile: float
    threshold: float
    selected: list[str]
    fallback_used: bool


def divergence_matrix(
    embeddings: list[SubjectEmbedding], cfg: KernelConfig = KernelConfig()
) -> np.ndarray:
    """Symmetric matrix of pairwise CS divergences between the subjects'
    trial-level embedding distributions. Zero diagonal by construction."""
    if len(embeddings) < 2:
        raise SampleSizeError("need at least 2 subjects for a divergence matrix")
    for emb in embeddings:
        if emb.vectors.shape[0] < 2:
            raise SampleSizeError(
                f"subject {emb.subject_id} has fewer than 2 trial vectors"
            )
    n = len(embeddings)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = cs_divergence(embeddings[i].vectors, embeddings[j].vectors, cfg).value
            out[i, j] = d
            out[j, i] = d
    return out


def select_by_percentile(dists: np.ndarray, q: float):
    """Nearest-rank percentile threshold over source-target distances.

    Returns ``(threshold, selected_indices, fallback_used)`` where the
    selected set is every source strictly below the threshold; if none
    qualifies, the single nearest source (lowest index on ties) is
    returned with the fallback flag set.
    """
    dists = np.asarray(dists, dtype=np.float64).ravel()
    s = dists.size
    if s < 1:
        raise SampleSizeError("need at least one source distance")
    if not (0.0 < q <= 100.0):
        raise ParameterError(f"percentile must be in (0, 100], got {q}")
    rank = max(1, math.ceil(q / 100.0 * s))
    threshold = float(np.sort(dists, kind="stable")[rank - 1])
    selected = [i for i in range(s) if dists[i] < threshold]
    fallback = False
    if not selected:
        selected = [int(np.argmin(dists))]
        fallback = True
        warnings.warn(
            "no source fell below the percentile threshold; "
            "falling back to the single nearest source",
            RuntimeWarning,
            stacklevel=2,
        )
    return threshold, selected, fallback


def select_sources(
    embeddings: list[SubjectEmbedding],
    target_id: str,
    q: float = 50.0,
    cfg: KernelConfig = KernelConfig(),
) -> SelectionResult:
    """Full stage-1 selection: divergence matrix over sources + target,
    then percentile thresholding of the target column."""
    ids = [e.subject_id for e in embeddings]
    if target_id not in ids:
        raise ParameterError(f"target subject {target_id!r} not among embeddings")
    matrix = divergence_matrix(embeddings, cfg)
    t_idx = ids.index(target_id)
    source_ids = [sid for sid in ids if sid != target_id]
    dists = np.array([matrix[ids.index(sid), t_idx] for sid in source_ids])
    threshold, sel_idx, fallback = select_by_percentile(dists, q)
    return SelectionResult(
        subject_ids=ids,
        target_id=target_id,
        distance_matrix=matrix,
        percentile=q,
        threshold=threshold,
        selected=[source_ids[i] for i in sel_idx],
        fallback_used=fallback,
    )


def greedy_min_distance_subset(dist: np.ndarray, k: int) -> list[int]:
    """Greedy subset of ``k`` subjects minimizing total intra-subset
    pairwise distance: seed at the smallest row mean, then repeatedly add
    the subject with the smallest increase (lowest index on ties)."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {dist.shape}")
    n = dist.shape[0]
    if not (2 <= k <= n):
        raise ParameterError(f"subset size must be in [2, {n}], got {k}")
    chosen = [int(np.argmin(dist.sum(axis=1)))]
    remaining = [i for i in range(n) if i != chosen[0]]
    while len(chosen) < k:
        incr = [dist[c, chosen].sum() for c in remaining]
        best = remaining[int(np.argmin(incr))]
        chosen.append(best)
        remaining.remove(best)
    return chosen


def mds_coordinates(dist: np.ndarray, dims: int = 2) -> np.ndarray:
    """Classical MDS: double-center the squared distances, keep the top
    eigenpairs. Axes with non-positive eigenvalues are zero-padded."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {dist.shape}")
    n = dist.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (dist * dist) @ j
    w, v = np.linalg.eigh(0.5 * (b + b.T))
    order = np.argsort(w)[::-1][:dims]
    coords = np.zeros((n, dims), dtype=np.float64)
    n_positive = 0
    for axis, idx in enumerate(order):
        if w[idx] > 0:
            vec = v[:, idx]
            anchor = int(np.argmax(np.abs(vec)))
            if vec[anchor] < 0:  # deterministic sign
                vec = -vec
            coords[:, axis] = vec * np.sqrt(w[idx])
            n_positive += 1
    if n_positive < dims:
        warnings.warn(
            f"only {n_positive} positive eigenvalues; remaining axes zero-padded",
            RuntimeWarning,
            stacklevel=2,
        )
    return coords
