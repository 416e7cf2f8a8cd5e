"""ADMiRA: greedy rank-r least squares on observed entries (CoSaMP for matrices)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import FactoredMatrix, SolveResult, Stopwatch, orthonormalize, truncated_svd

__all__ = ["AtomSet", "atom_least_squares", "admira_solve"]

CANDIDATE_FACTOR = 2
MERGE_CAP_FACTOR = 3


@dataclass
class AtomSet:
    """Rank-one atoms ``u_k v_k^T`` (unit vectors, stored as columns) with weights."""

    left: np.ndarray
    right: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.left = np.atleast_2d(np.asarray(self.left, dtype=float))
        self.right = np.atleast_2d(np.asarray(self.right, dtype=float))
        k = self.left.shape[1]
        self.weights = np.zeros(k) if self.weights is None else np.asarray(self.weights, dtype=float)
        if self.right.shape[1] != k or self.weights.shape != (k,):
            raise ValueError("atom factors and weights disagree in count")
        for B in (self.left, self.right):
            if k and np.max(np.abs(np.linalg.norm(B, axis=0) - 1.0)) > 1e-10:
                raise ValueError("atoms must have unit-norm vectors")

    def __len__(self):
        return self.left.shape[1]

    def values_at(self, rows, cols):
        return (self.left[rows] * self.right[cols]) @ self.weights


def _atom_design(left, right, obs):
    return left[obs.rows] * right[obs.cols]


def atom_least_squares(atoms, obs):
    """Weights minimizing ``||sum_k w_k P_E(u_k v_k^T) - P_E(N)||_F``.

    Rank-deficient designs get the minimum-norm solution.
    """
    if len(atoms) == 0:
        raise ValueError("need at least one atom")
    A = _atom_design(atoms.left, atoms.right, obs)
    w, *_ = np.linalg.lstsq(A, obs.values, rcond=None)
    return w


def _independent_atoms(A, tol=1e-10):
    """Column indices of a maximal well-conditioned subset of ``A`` (pivoted QR)."""
    if A.shape[0] == 0:
        return np.arange(0)
    _, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.arange(0)
    keep = d > tol * d[0]
    return np.sort(piv[: int(keep.sum())])


def _truncate(left, right, w, r):
    """Best rank-``r`` approximation of ``left diag(w) right^T`` via its small core."""
    Qu, Ru = orthonormalize(left)
    Qv, Rv = orthonormalize(right)
    a, s, bt = np.linalg.svd((Ru * w) @ Rv.T)
    k = min(r, int(np.sum(s > 1e-14 * max(s[0], 1e-300))) if s.size else 0)
    return Qu @ a[:, :k], s[:k], Qv @ bt[:k].T


def admira_solve(obs, r, max_iters=100, tol=1e-4):
    """Rank-``r`` completion by atomic decomposition.

    Each iteration takes the top ``2r`` singular pairs of the observed
    residual as candidate atoms, merges them with the current ``r`` atoms,
    refits all weights by least squares on ``E`` and keeps the best rank-``r``
    approximation of the weighted sum.  If an update fails to decrease the
    observed residual the previous iterate is returned.

    Returns
    -------
    SolveResult
        ``estimate`` has rank at most ``r``; ``objective_trace`` holds the
        observed residual norm of every accepted iterate, starting from the
        zero matrix.
    """
    if r < 1:
        raise ValueError("rank must be positive")
    if obs.size == 0:
        raise ValueError("ADMiRA needs at least one observation")
    clock = Stopwatch()
    m, n = obs.shape
    norm_obs = float(np.linalg.norm(obs.values))
    left, right, w = np.zeros((m, 0)), np.zeros((n, 0)), np.zeros(0)
    resid = obs.values.copy()
    res_norm = norm_obs
    trace = [res_norm]
    status = "max_iters"
    dropped = 0
    it = 0
    k_cand = min(CANDIDATE_FACTOR * r, m, n)
    for it in range(1, max_iters + 1):
        if norm_obs == 0 or res_norm <= tol * norm_obs:
            status = "residual_tol"
            it -= 1
            break
        _, cu, cv = truncated_svd(obs.pattern_matrix(resid), k_cand, method="iterative")
        cand_left = np.hstack([left, cu])
        cand_right = np.hstack([right, cv])
        A = _atom_design(cand_left, cand_right, obs)
        keep = _independent_atoms(A)
        dropped += A.shape[1] - keep.size
        if keep.size == 0:
            status = "degenerate"
            break
        wk, *_ = np.linalg.lstsq(A[:, keep], obs.values, rcond=None)
        new_left, new_s, new_right = _truncate(cand_left[:, keep], cand_right[:, keep], wk, r)
        new_fit = (new_left[obs.rows] * new_right[obs.cols]) @ new_s
        new_resid = obs.values - new_fit
        new_norm = float(np.linalg.norm(new_resid))
        if new_norm > res_norm * (1 + 1e-12):
            status = "residual_increase"
            it -= 1
            break
        left, right, w = new_left, new_right, new_s
        resid, res_norm = new_resid, new_norm
        trace.append(res_norm)
        if res_norm <= tol * norm_obs:
            status = "residual_tol"
            break
        if trace[-2] - res_norm <= 1e-12 * max(trace[-2], 1e-300):
            status = "stagnated"
            break
    if w.size == 0:
        estimate = FactoredMatrix.zeros(obs.shape)
    else:
        estimate = FactoredMatrix.from_svd(left, w, right)
    return SolveResult(
        estimate=estimate,
        iterations=it,
        objective_trace=trace,
        seconds=clock.elapsed(),
        rank_used=estimate.rank,
        info={
            "status": status,
            "solver": "admira",
            "candidates_per_step": k_cand,
            "merge_cap": MERGE_CAP_FACTOR * r,
            "dropped_atoms": dropped,
        },
    )
