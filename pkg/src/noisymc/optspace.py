"""OptSpace: trimmed spectral initialization plus manifold gradient descent.

The iterate is ``X S Y^T`` with ``X`` (m x r) and ``Y`` (n x r) orthonormal.
For fixed factors the core ``S`` is an ``r^2``-unknown least-squares fit to
the observed entries; the factors move along the projected gradient of
``||P_E(X S Y^T - N)||_F^2`` and are retracted back onto the set of
orthonormal frames by QR.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import FactoredMatrix, SolveResult, Stopwatch, orthonormalize, truncated_svd
from .spectral import estimate_rank, rank_r_projection, trim

__all__ = [
    "OptSpaceConfig",
    "LineSearchStall",
    "solve_core_least_squares",
    "objective_and_gradient",
    "tangent_project",
    "optspace_solve",
    "incremental_optspace_solve",
]

MONOTONE_RTOL = 1e-10
DENSE_PRODUCT_MAX = 4_000_000
PRECONDITIONER_RIDGE = 1e-10


class LineSearchStall(RuntimeError):
    pass


@dataclass(frozen=True)
class OptSpaceConfig:
    """Knobs for :func:`optspace_solve`.

    ``rank=None`` means "estimate from the data".  The line search starts at
    ``initial_step`` on the first iteration and at ``step_growth`` times the
    last accepted step afterwards.  With ``precondition`` the search
    direction is the gradient rescaled by the inverse Gram matrix of the core
    (see :func:`_scaled_directions`); otherwise it is the tangent gradient.
    """

    rank: int | None = None
    max_iters: int = 500
    grad_tol: float = 1e-4
    initial_step: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 50
    step_growth: float = 2.0
    precondition: bool = True

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be positive or None")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @classmethod
    def noiseless(cls, **kw):
        kw.setdefault("grad_tol", 1e-6)
        return cls(**kw)


def _check_shapes(X, S, Y, obs):
    m, n = obs.shape
    r = X.shape[1]
    if X.shape[0] != m or Y.shape[0] != n or Y.shape[1] != r or S.shape != (r, r):
        raise ValueError(
            f"shape mismatch: X {X.shape}, S {S.shape}, Y {Y.shape} for observations {obs.shape}"
        )


def _predict(X, S, Y, obs):
    m, n = obs.shape
    if m * n <= DENSE_PRODUCT_MAX and X.shape[1] * obs.size > m * n:
        return ((X @ S) @ Y.T).ravel()[obs.rows * n + obs.cols]
    return np.einsum("ij,ij->i", (X @ S)[obs.rows], Y[obs.cols])


def _objective(X, S, Y, obs):
    res = _predict(X, S, Y, obs) - obs.values
    return float(res @ res)


def solve_core_least_squares(X, Y, obs):
    """Core ``S`` minimizing ``||P_E(X S Y^T) - P_E(N)||_F`` (minimum-norm)."""
    r = X.shape[1]
    if r * r > obs.size:
        raise ValueError(f"underdetermined core: {r * r} unknowns from {obs.size} observations")
    design = (X[obs.rows][:, :, None] * Y[obs.cols][:, None, :]).reshape(obs.size, r * r)
    # r^2 x r^2 normal equations: same null space as the design, so lstsq on
    # them still returns the minimum-norm solution
    gram = design.T @ design
    coef, *_ = np.linalg.lstsq(gram, design.T @ obs.values, rcond=None)
    return coef.reshape(r, r)


def tangent_project(X, G):
    """Project ``G`` onto the tangent space of orthonormal frames at ``X``."""
    XtG = X.T @ G
    return G - X @ (0.5 * (XtG + XtG.T))


def objective_and_gradient(X, S, Y, obs):
    """Observed squared residual and its tangent-space gradients.

    Returns
    -------
    value : float
        ``||P_E(X S Y^T - N)||_F^2``.
    grad_X, grad_Y : ndarray
        ``2 R Y S^T`` and ``2 R^T X S`` (``R`` the observed residual),
        projected onto the tangent spaces at ``X`` and ``Y``.
    """
    X, S, Y = (np.asarray(a, dtype=float) for a in (X, S, Y))
    _check_shapes(X, S, Y, obs)
    value, gX, gY = _euclidean_gradient(X, S, Y, obs)
    return value, tangent_project(X, gX), tangent_project(Y, gY)


def _euclidean_gradient(X, S, Y, obs):
    res = _predict(X, S, Y, obs) - obs.values
    R = obs.pattern_matrix(res)
    return float(res @ res), 2.0 * (R @ Y) @ S.T, 2.0 * (R.T @ X) @ S


def _scaled_directions(X, S, Y, gX, gY):
    """Components of the gradients orthogonal to the frames, right-scaled by ``(S S^T)^-1``.

    Only the spans of ``X`` and ``Y`` matter once ``S`` is re-fit, and plain
    gradient steps along a direction move at a speed proportional to the
    matching singular value of ``S``.  The scaling removes that dependence.
    """
    r = S.shape[0]
    ridge = PRECONDITIONER_RIDGE * max(float(np.sum(S * S)), 1e-300) * np.eye(r)
    dX = gX - X @ (X.T @ gX)
    dY = gY - Y @ (Y.T @ gY)
    dX = np.linalg.solve(S @ S.T + ridge, dX.T).T
    dY = np.linalg.solve(S.T @ S + ridge, dY.T).T
    return dX, dY


def _descend(obs, X, Y, cfg, trace, check_monotone=True):
    """Gradient iterations from orthonormal ``(X, Y)``; returns factors, core, stats."""
    norm_obs = float(np.linalg.norm(obs.values))
    S = solve_core_least_squares(X, Y, obs)
    value = _objective(X, S, Y, obs)
    trace.append(value)
    step = cfg.initial_step
    status = "max_iters"
    it = 0
    for it in range(cfg.max_iters + 1):
        if norm_obs == 0 or np.sqrt(value) <= cfg.grad_tol * norm_obs:
            status = "residual_tol"
            break
        value, eX, eY = _euclidean_gradient(X, S, Y, obs)
        gX, gY = tangent_project(X, eX), tangent_project(Y, eY)
        gnorm2 = float(np.sum(gX * gX) + np.sum(gY * gY))
        if np.sqrt(gnorm2) <= cfg.grad_tol * (1.0 + value):
            status = "grad_tol"
            break
        if it == cfg.max_iters:
            break
        if cfg.precondition:
            dX, dY = _scaled_directions(X, S, Y, eX, eY)
        else:
            dX, dY = gX, gY
        # first-order decrease along -(dX, dY); positive for both choices
        slope = float(np.sum(eX * dX) + np.sum(eY * dY))
        t = step
        for _ in range(cfg.max_backtracks):
            Xt, _ = orthonormalize(X - t * dX)
            Yt, _ = orthonormalize(Y - t * dY)
            ft = _objective(Xt, S, Yt, obs)
            if ft <= value - cfg.armijo * t * slope:
                break
            t *= cfg.backtrack
        else:
            status = "stall"
            break
        X, Y = Xt, Yt
        S = solve_core_least_squares(X, Y, obs)
        new_value = _objective(X, S, Y, obs)
        if check_monotone and new_value > value * (1 + MONOTONE_RTOL) + 1e-300:
            raise AssertionError(f"objective increased: {value!r} -> {new_value!r}")
        value = new_value
        trace.append(value)
        step = t * cfg.step_growth
    return X, S, Y, it, status


def _resolve_rank(obs, cfg):
    if obs.size == 0:
        raise ValueError("OptSpace needs at least one observation")
    r = cfg.rank if cfg.rank is not None else estimate_rank(obs)
    r = min(r, *obs.shape)
    while r > 1 and r * r > obs.size:
        r -= 1
    return r


def _spectral_init(obs, r):
    trimmed = trim(obs).trimmed
    source = trimmed if trimmed.size and np.any(trimmed.values) else obs
    P = rank_r_projection(source, r)
    return P.left, P.right


def optspace_solve(obs, cfg=None, init=None):
    """Complete ``obs`` with OptSpace.

    Parameters
    ----------
    obs : SparseObservations
    cfg : OptSpaceConfig, optional
    init : (X, Y), optional
        Orthonormal starting factors; the trimmed rank-r projection is used
        when omitted.

    Returns
    -------
    SolveResult
        ``objective_trace[0]`` is the residual at initialization; the trace
        is nonincreasing.
    """
    cfg = cfg or OptSpaceConfig()
    clock = Stopwatch()
    if init is None:
        r = _resolve_rank(obs, cfg)
        X, Y = _spectral_init(obs, r)
    else:
        if obs.size == 0:
            raise ValueError("OptSpace needs at least one observation")
        X, Y = (orthonormalize(np.asarray(a, dtype=float))[0] for a in init)
        r = X.shape[1]
    trace = []
    X, S, Y, iters, status = _descend(obs, X, Y, cfg, trace)
    return SolveResult(
        estimate=FactoredMatrix(X, S, Y),
        iterations=iters,
        objective_trace=trace,
        seconds=clock.elapsed(),
        rank_used=r,
        info={"status": status, "solver": "optspace"},
    )


def incremental_optspace_solve(obs, cfg=None, stage_max_iters=None):
    """OptSpace grown one rank at a time.

    Starts from the rank-1 projection of the trimmed observations.  After
    descending at rank ``k`` the leading singular pair of the trimmed
    residual is appended to the factors, which are re-orthonormalized and
    descended again at rank ``k + 1``, up to the target rank.

    ``stage_max_iters`` caps the iterations spent below the target rank
    (``cfg.max_iters`` when omitted); those stages only supply a warm start.
    """
    cfg = cfg or OptSpaceConfig()
    clock = Stopwatch()
    r = _resolve_rank(obs, cfg)
    trimmed = trim(obs).trimmed
    if trimmed.size == 0 or not np.any(trimmed.values):
        trimmed = obs
    X, Y = _spectral_init(obs, 1)
    trace = []
    total = 0
    stages = []
    S = None
    for k in range(1, r + 1):
        if k > 1:
            fit = FactoredMatrix(X, S, Y).values_at(trimmed.rows, trimmed.cols)
            resid = trimmed.with_values(trimmed.values - fit)
            if np.any(resid.values):
                _, u, v = truncated_svd(resid, 1)
            else:
                u = np.eye(X.shape[0], 1, -k)
                v = np.eye(Y.shape[0], 1, -k)
            X, _ = orthonormalize(np.hstack([X, u]))
            Y, _ = orthonormalize(np.hstack([Y, v]))
        stage_cfg = cfg if k == r or stage_max_iters is None else replace(cfg, max_iters=stage_max_iters)
        X, S, Y, iters, status = _descend(obs, X, Y, stage_cfg, trace)
        total += iters
        stages.append({"rank": k, "iterations": iters, "status": status})
    return SolveResult(
        estimate=FactoredMatrix(X, S, Y),
        iterations=total,
        objective_trace=trace,
        seconds=clock.elapsed(),
        rank_used=r,
        info={"status": stages[-1]["status"], "solver": "incremental_optspace", "stages": stages},
    )


def with_rank(cfg, r):
    return replace(cfg, rank=r)
