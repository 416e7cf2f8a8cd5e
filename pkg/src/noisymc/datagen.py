"""Synthetic problem instances: low-rank truths, uniform sampling, noise models.

Random streams
--------------
Every random draw goes through :func:`substream`, which builds a
``numpy.random.Generator`` over the counter-based Philox bit generator
seeded by ``SeedSequence(master_seed, spawn_key=(crc32(tag), *indices))``.
Two calls with the same ``(master_seed, tag, indices)`` produce the same
stream on any platform; distinct tags or indices give independent streams.

Functions that take ``seed`` accept either an integer (handed to
``numpy.random.default_rng``) or an existing ``Generator``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import FactoredMatrix, SparseObservations, as_dense, orthonormalize

__all__ = [
    "NOISE_KINDS",
    "CalibrationError",
    "NoiseSpec",
    "ProblemInstance",
    "substream",
    "gen_gaussian_lowrank",
    "gen_ill_conditioned",
    "sample_uniform",
    "apply_noise",
    "resolve_noise",
    "quantize",
    "calibrate_quantization_step",
    "measure_snr",
    "make_instance",
]

NOISE_KINDS = ("none", "standard_gaussian", "multiplicative", "outlier", "quantization")
ILL_CONDITIONED_SPECTRUM = (1.0, 4.0, 7.0, 10.0)
OUTLIER_RATE = 1.0 / 200.0
QUANT_BISECTION_STEPS = 60


class CalibrationError(RuntimeError):
    pass


def substream(master_seed, tag, *indices):
    """Independent, reproducible generator for ``(master_seed, tag, indices)``."""
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class NoiseSpec:
    """Declarative noise model.

    ``target_snr`` is ``E||M||_F^2 / E||Z||_F^2``; it must be infinite for
    ``kind='none'`` and finite for every other kind.
    """

    kind: str = "none"
    target_snr: float = math.inf

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        snr = float(self.target_snr)
        object.__setattr__(self, "target_snr", snr)
        if not snr > 0:
            raise ValueError("target_snr must be positive")
        if self.kind == "none" and not math.isinf(snr):
            raise ValueError("kind='none' requires target_snr = inf")
        if self.kind != "none" and math.isinf(snr):
            raise ValueError(f"kind={self.kind!r} requires a finite target_snr")


@dataclass
class ProblemInstance:
    truth: np.ndarray
    factors: FactoredMatrix
    rank: int
    observations: SparseObservations
    noise: NoiseSpec
    noise_params: dict
    seed: int
    epsilon: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.truth.shape

    @property
    def sigma(self):
        """Per-entry noise standard deviation implied by the realized parameters."""
        return self.noise_params.get("sigma", 0.0)


def _orthonormal_factorization(U, core, V):
    Qu, Ru = orthonormalize(U)
    Qv, Rv = orthonormalize(V)
    a, s, bt = np.linalg.svd(Ru @ core @ Rv.T)
    return FactoredMatrix(Qu @ a, np.diag(s), Qv @ bt.T)


def gen_gaussian_lowrank(m, n, r, seed=None):
    """``M = U V^T`` with i.i.d. standard normal ``U`` (m x r) then ``V`` (n x r).

    Returns the dense ``M`` and an SVD-form :class:`FactoredMatrix` of it.
    """
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank r={r} must lie in [1, min(m, n)={min(m, n)}]")
    rng = _rng(seed)
    U = rng.standard_normal((m, r))
    V = rng.standard_normal((n, r))
    return U @ V.T, _orthonormal_factorization(U, np.eye(r), V)


def gen_ill_conditioned(n, seed=None):
    """Square rank-4 matrix ``sqrt(4/166) U diag(1, 4, 7, 10) V^T``.

    The scale keeps ``E||M||_F^2 = 4 n^2``, matching the standard ``r = 4``
    Gaussian model, while the core has condition number 10.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    rng = _rng(seed)
    U = rng.standard_normal((n, 4))
    V = rng.standard_normal((n, 4))
    d = np.array(ILL_CONDITIONED_SPECTRUM)
    core = math.sqrt(4.0 / float(np.sum(d**2))) * np.diag(d)
    return U @ core @ V.T, _orthonormal_factorization(U, core, V)


def sample_uniform(m, n, epsilon, seed=None):
    """Reveal each entry independently with probability ``epsilon / n``.

    Returns ``(rows, cols)`` index arrays in row-major order.
    """
    if not 0 <= epsilon <= n:
        raise ValueError(f"epsilon={epsilon} outside [0, n={n}]")
    rng = _rng(seed)
    mask = rng.random((m, n)) < epsilon / n
    rows, cols = np.nonzero(mask)
    return rows, cols


def _index_arrays(E):
    if isinstance(E, SparseObservations):
        return E.rows, E.cols
    rows, cols = E
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def quantize(x, a):
    """Nearest point of ``{(k + 1/2) a}``; exact midpoints round toward +inf."""
    return (np.floor(np.asarray(x) / a) + 0.5) * a


def resolve_noise(spec, signal_power):
    """Per-kind noise parameters for a target SNR.

    ``signal_power`` is the expected per-entry energy ``E[M_ij^2]`` (``r`` for
    the Gaussian factor model).  Quantization is calibrated per instance and
    is not resolved here.
    """
    if spec.kind == "none":
        return {"sigma": 0.0}
    noise_power = signal_power / spec.target_snr
    if spec.kind == "standard_gaussian":
        return {"sigma": math.sqrt(noise_power)}
    if spec.kind == "multiplicative":
        xi_var = 1.0 / spec.target_snr
        return {"xi_var": xi_var, "sigma": math.sqrt(noise_power)}
    if spec.kind == "outlier":
        a = math.sqrt(noise_power / (2 * OUTLIER_RATE))
        return {"a": a, "sigma": math.sqrt(noise_power)}
    if spec.kind == "quantization":
        return {"sigma": math.sqrt(noise_power)}
    raise ValueError(f"unknown noise kind {spec.kind!r}")


def apply_noise(M, E, spec, seed=None, signal_power=None, quantization_step=None):
    """Noisy observations ``M_ij + Z_ij`` on the index set ``E``.

    Parameters
    ----------
    M : ndarray
        Ground truth.
    E : (rows, cols) or SparseObservations
        Index set; only these entries of ``Z`` are ever drawn.
    spec : NoiseSpec
    seed : int or Generator
    signal_power : float, optional
        Expected ``E[M_ij^2]`` used to set the noise scale.  Defaults to the
        empirical mean of ``M**2`` over all entries.
    quantization_step : float, optional
        Grid spacing for ``kind='quantization'``; calibrated on ``E`` when
        omitted.
    """
    M = as_dense(M)
    rows, cols = _index_arrays(E)
    m_vals = M[rows, cols]
    if signal_power is None:
        signal_power = float(np.mean(M**2))
    params = resolve_noise(spec, signal_power)
    rng = _rng(seed)
    k = spec.kind
    if k == "none":
        z = np.zeros_like(m_vals)
    elif k == "standard_gaussian":
        z = rng.normal(0.0, params["sigma"], size=m_vals.shape)
    elif k == "multiplicative":
        z = rng.normal(0.0, math.sqrt(params["xi_var"]), size=m_vals.shape) * m_vals
    elif k == "outlier":
        u = rng.random(m_vals.shape)
        a = params["a"]
        z = np.where(u < OUTLIER_RATE, a, np.where(u < 2 * OUTLIER_RATE, -a, 0.0))
    elif k == "quantization":
        if quantization_step is None:
            quantization_step = calibrate_quantization_step(M, (rows, cols), spec.target_snr)
        z = quantize(m_vals, quantization_step) - m_vals
    else:  # pragma: no cover - NoiseSpec validates kind
        raise ValueError(f"unknown noise kind {k!r}")
    return SparseObservations(M.shape, rows, cols, m_vals + z)


def _quant_noise_ratio(m_vals, a, signal):
    z = quantize(m_vals, a) - m_vals
    return float(np.dot(z, z)) / signal


def calibrate_quantization_step(M, E, target_snr):
    """Grid spacing ``a`` whose realized SNR on ``E`` matches ``target_snr``.

    The realized noise-to-signal ratio ``||Z_E||^2 / ||M_E||^2`` is continuous
    in ``a`` (at a cell boundary the error flips between ``+a/2`` and
    ``-a/2``) but not strictly monotone, so the bracket
    ``[1e-6 s, 10 s]`` with ``s = max |M_ij|`` is bisected on the sign of
    ``ratio(a) - 1/target_snr``.
    """
    target_snr = float(target_snr)
    if not (math.isfinite(target_snr) and target_snr > 0):
        raise ValueError("quantization needs a finite positive target SNR")
    M = as_dense(M)
    rows, cols = _index_arrays(E)
    m_vals = M[rows, cols]
    if m_vals.size == 0:
        raise ValueError("cannot calibrate on an empty index set")
    signal = float(np.dot(m_vals, m_vals))
    if signal == 0:
        raise CalibrationError("signal is identically zero on E")
    s = float(np.max(np.abs(M)))
    target = 1.0 / target_snr
    lo, hi = 1e-6 * s, 10.0 * s
    ratio_lo = _quant_noise_ratio(m_vals, lo, signal)
    ratio_hi = _quant_noise_ratio(m_vals, hi, signal)
    if ratio_lo > target or ratio_hi < target:
        best = math.inf if ratio_lo == 0 else 1 / ratio_lo
        raise CalibrationError(
            f"target SNR not bracketed: achievable SNR range is [{1 / ratio_hi:.6g}, {best:.6g}]"
        )
    for _ in range(QUANT_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _quant_noise_ratio(m_vals, mid, signal) - target > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def measure_snr(M, observations):
    """Empirical SNR on the observed entries, ``sum M^2 / sum (N - M)^2``."""
    M = as_dense(M)
    if M.shape != observations.shape:
        raise ValueError(f"shape mismatch {M.shape} vs {observations.shape}")
    if observations.size == 0:
        raise ValueError("cannot measure SNR on an empty observation set")
    m_vals = M[observations.rows, observations.cols]
    z = observations.values - m_vals
    noise = float(np.dot(z, z))
    if noise == 0:
        return math.inf
    return float(np.dot(m_vals, m_vals)) / noise


def make_instance(model, n, r, epsilon, noise, master_seed, trial=0, grid_index=0, m=None):
    """Realize a full synthetic instance.

    The truth depends only on ``(master_seed, trial)`` so every grid point of
    a sweep sees the same matrices; the mask and noise additionally depend on
    ``grid_index``.
    """
    m = n if m is None else m
    if model == "standard":
        M, F = gen_gaussian_lowrank(m, n, r, substream(master_seed, "matrix", trial))
    elif model == "ill_conditioned":
        if m != n or r != 4:
            raise ValueError("ill_conditioned model is square with r = 4")
        M, F = gen_ill_conditioned(n, substream(master_seed, "matrix", trial))
    else:
        raise ValueError(f"unknown matrix model {model!r}")
    rows, cols = sample_uniform(m, n, epsilon, substream(master_seed, "mask", trial, grid_index))
    params = resolve_noise(noise, float(r))
    q_step = None
    if noise.kind == "quantization" and rows.size:
        q_step = calibrate_quantization_step(M, (rows, cols), noise.target_snr)
        params["a"] = q_step
    obs = apply_noise(
        M,
        (rows, cols),
        noise,
        substream(master_seed, "noise", trial, grid_index),
        signal_power=float(r),
        quantization_step=q_step,
    )
    return ProblemInstance(
        truth=M,
        factors=F,
        rank=r,
        observations=obs,
        noise=noise,
        noise_params=params,
        seed=int(master_seed),
        epsilon=float(epsilon),
        meta={"model": model, "trial": trial, "grid_index": grid_index},
    )
