"""Error metrics, the oracle estimator and closed-form reference curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from .core import FactoredMatrix, as_dense

__all__ = [
    "EvalReport",
    "rmse",
    "mae_nmae",
    "oracle_rmse",
    "oracle_estimate",
    "bound_convex_relaxation",
    "bound_optspace",
    "constant_prediction",
    "observation_noise",
]

ORACLE_TOL = 1e-14


@dataclass(frozen=True)
class EvalReport:
    rmse: float | None
    mae: float | None = None
    nmae: float | None = None
    rank_used: int = 0
    seconds: float = 0.0
    status: str = "ok"

    def __post_init__(self):
        if (self.mae is None) != (self.nmae is None):
            raise ValueError("mae and nmae must be given together")
        if self.rmse is not None and self.rmse < 0:
            raise ValueError("rmse must be nonnegative")


def rmse(truth, estimate):
    """``||M - M_hat||_F / sqrt(mn)``."""
    M = as_dense(truth, "truth")
    if isinstance(estimate, FactoredMatrix):
        estimate = estimate.to_dense()
    E = as_dense(estimate, "estimate")
    if M.shape != E.shape:
        raise ValueError(f"shape mismatch {M.shape} vs {E.shape}")
    return float(np.linalg.norm(M - E) / math.sqrt(M.size))


def _values_at(estimate, rows, cols):
    if hasattr(estimate, "values_at"):
        return estimate.values_at(rows, cols)
    return np.asarray(estimate, dtype=float)[rows, cols]


def mae_nmae(test, estimate, M_max, M_min, clip=True):
    """Mean absolute error on the test entries and its range-normalized form.

    Predictions are clipped to ``[M_min, M_max]`` first unless ``clip`` is
    false.  ``estimate`` may be dense or any object with ``shape`` and
    ``values_at(rows, cols)``, such as a :class:`FactoredMatrix`.
    """
    if not M_max > M_min:
        raise ValueError("need M_max > M_min")
    if test.size == 0:
        raise ValueError("empty test set")
    if tuple(np.shape(estimate)) != test.shape:
        raise ValueError(f"shape mismatch {np.shape(estimate)} vs {test.shape}")
    pred = _values_at(estimate, test.rows, test.cols)
    if clip:
        pred = np.clip(pred, M_min, M_max)
    mae = float(np.mean(np.abs(test.values - pred)))
    return mae, mae / (M_max - M_min)


def oracle_rmse(sigma, n, r, epsilon):
    """``sigma sqrt((2nr - r^2) / (n epsilon))``."""
    if n * epsilon <= 0:
        raise ValueError("need n * epsilon > 0")
    dof = 2 * n * r - r * r
    if dof <= 0:
        raise ValueError("need 2nr > r^2")
    return sigma * math.sqrt(dof / (n * epsilon))


def _oracle_design(obs, U, V):
    """Sparse map from ``(vec X, vec Y)`` to the entries of ``U X^T + Y V^T`` on ``E``."""
    m, n = obs.shape
    r = U.shape[1]
    e = np.arange(obs.size)
    lanes = np.arange(r)
    rows = np.repeat(e, 2 * r)
    cols = np.concatenate(
        [obs.cols[:, None] * r + lanes, n * r + obs.rows[:, None] * r + lanes], axis=1
    ).ravel()
    data = np.concatenate([U[obs.rows], V[obs.cols]], axis=1).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(obs.size, r * (m + n)))


def oracle_estimate(obs, U, V, return_info=False):
    """Least-squares fit of ``U X^T + Y V^T`` to the observed entries.

    ``U`` (m x r) and ``V`` (n x r) span the true column and row spaces.  The
    ``r(m + n)`` unknowns are found with LSQR started from zero, which
    converges to the minimum-norm solution when the system is singular (it
    always is: ``r^2`` directions leave the product unchanged).

    Returns the dense reconstruction, plus a metadata dict when
    ``return_info`` is true.
    """
    if obs.size == 0:
        raise ValueError("oracle estimate needs at least one observation")
    m, n = obs.shape
    U = np.linalg.qr(as_dense(U, "U"))[0]
    V = np.linalg.qr(as_dense(V, "V"))[0]
    if U.shape[0] != m or V.shape[0] != n or U.shape[1] != V.shape[1]:
        raise ValueError(f"factor shapes {U.shape}, {V.shape} do not fit {obs.shape}")
    r = U.shape[1]
    A = _oracle_design(obs, U, V)
    sol = lsqr(A, obs.values, atol=ORACLE_TOL, btol=ORACLE_TOL, iter_lim=20 * A.shape[1])
    x, istop, itn = sol[0], sol[1], sol[2]
    X = x[: n * r].reshape(n, r)
    Y = x[n * r :].reshape(m, r)
    dense = U @ X.T + Y @ V.T
    if return_info:
        return dense, {"lsqr_istop": int(istop), "lsqr_iterations": int(itn), "minimum_norm": True}
    return dense


def bound_convex_relaxation(obs_noise_frobenius, n, alpha, E_size):
    """``7 sqrt(n/|E|) ||P_E(Z)||_F + 2/(n sqrt(alpha)) ||P_E(Z)||_F``."""
    z = float(obs_noise_frobenius)
    return 7.0 * math.sqrt(n / E_size) * z + 2.0 / (n * math.sqrt(alpha)) * z


def bound_optspace(spectral_noise, n, alpha, r, kappa, E_size, C=1.0):
    """``C kappa^2 sqrt(alpha r) (n/|E|) ||P_E(Z)||_2``.

    The constant is not known; the default ``C = 1`` gives the shape only.
    """
    return C * kappa**2 * math.sqrt(alpha * r) * (n / E_size) * float(spectral_noise)


def constant_prediction(shape, value):
    """Dense matrix filled with ``value`` (a trivial baseline estimate)."""
    return np.full(shape, float(value))


def observation_noise(truth, obs):
    """Noise on the observed entries as :class:`SparseObservations`."""
    M = as_dense(truth, "truth")
    return obs.with_values(obs.values - M[obs.rows, obs.cols])


