"""Spectral preprocessing: trimming, scaled rank-r projection, rank estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FactoredMatrix, SparseObservations, truncated_svd

__all__ = ["TrimReport", "trim", "rank_r_projection", "estimate_rank", "rank_cost", "MAX_RANK_SEARCH"]

MAX_RANK_SEARCH = 50
ZERO_SV_RTOL = 1e-12


@dataclass(frozen=True)
class TrimReport:
    trimmed: SparseObservations
    zeroed_rows: np.ndarray
    zeroed_cols: np.ndarray
    passes: int = 1


def trim(obs):
    """Zero out over-represented columns, then rows.

    A column is over-represented when it holds more than ``2|E|/n`` samples,
    a row when it holds more than ``2|E|/m``.  The pass is repeated until no
    row or column exceeds twice the current average, so the output is a fixed
    point (``trim(trim(x).trimmed).trimmed == trim(x).trimmed``).  For
    uniformly sampled data the first pass removes nothing and the loop ends
    immediately.
    """
    m, n = obs.shape
    keep = np.ones(obs.size, dtype=bool)
    dead_rows = np.zeros(m, dtype=bool)
    dead_cols = np.zeros(n, dtype=bool)
    passes = 0
    while True:
        passes += 1
        size = int(keep.sum())
        cc = np.bincount(obs.cols[keep], minlength=n)
        bad_cols = cc > 2.0 * size / n
        keep &= ~bad_cols[obs.cols]
        rc = np.bincount(obs.rows[keep], minlength=m)
        bad_rows = rc > 2.0 * size / m
        keep &= ~bad_rows[obs.rows]
        dead_cols |= bad_cols
        dead_rows |= bad_rows
        if not (bad_cols.any() or bad_rows.any()):
            break
    trimmed = obs if keep.all() else obs.subset(keep)
    return TrimReport(trimmed, np.flatnonzero(dead_rows), np.flatnonzero(dead_cols), passes)


def rank_r_projection(obs, r, method="auto"):
    """``(mn/|E|) * sum_{i<=r} s_i x_i y_i^T`` of the zero-filled observations."""
    m, n = obs.shape
    if obs.size == 0:
        raise ValueError("rank-r projection needs at least one observation")
    if not 1 <= r <= min(m, n):
        raise ValueError(f"r={r} out of range [1, {min(m, n)}]")
    s, U, V = truncated_svd(obs, r, method=method)
    scale = m * n / obs.size
    return FactoredMatrix.from_svd(U, scale * s, V)


def rank_cost(s, m, n, n_obs, count=None):
    """Cost ``R(i)`` for ``i = 1..count`` from descending singular values ``s``.

    Singular values past the end of ``s`` are taken as zero.
    """
    s = np.asarray(s, dtype=float)
    count = s.size if count is None else count
    nxt = np.zeros(count)
    tail = s[1 : count + 1]
    nxt[: tail.size] = tail
    i = np.arange(1, count + 1)
    return (nxt + s[0] * np.sqrt(i * np.sqrt(m * n) / n_obs)) / s[:count]


def estimate_rank(obs, max_rank=MAX_RANK_SEARCH):
    """Rank guess from the singular-value gap of the trimmed observations.

    Minimizes ``R(i) = (s_{i+1} + s_1 sqrt(i sqrt(mn) / |E|)) / s_i`` over
    ``i = 1..min(max_rank, K)`` where ``K`` counts singular values above
    ``1e-12 s_1``.  Ties go to the smaller ``i``.
    """
    if obs.size == 0:
        raise ValueError("cannot estimate rank from zero observations")
    trimmed = trim(obs).trimmed
    m, n = obs.shape
    if trimmed.size == 0 or not np.any(trimmed.values):
        raise ValueError("empty spectrum")
    k = min(max_rank + 1, m, n)
    s, _, _ = truncated_svd(trimmed, k)
    if s[0] <= 0:
        raise ValueError("empty spectrum")
    K = int(np.sum(s > ZERO_SV_RTOL * s[0]))
    cost = rank_cost(s, m, n, trimmed.size, count=min(max_rank, K))
    return int(np.argmin(cost)) + 1
