"""Monte-Carlo sweeps over sampling density and noise level, written as CSV.

Configuration files are JSON objects with these keys:

``model``
    ``"standard"`` (Gaussian factors) or ``"ill_conditioned"``.
``n``, ``r``, and optionally ``m``
    Matrix size and true rank.  ``m`` defaults to ``n``.
``epsilon_grid``
    Average number of revealed entries per row, a nonempty list.
``snr_grid`` or ``inv_sqrt_snr_grid``
    Target signal-to-noise ratios.  ``"inf"`` (or ``0`` in the inverse
    grid) means no noise.
``noise``
    One of ``standard_gaussian``, ``multiplicative``, ``outlier``,
    ``quantization`` (ignored at infinite SNR).
``solvers``
    Subset of ``optspace``, ``incremental_optspace``, ``admira``, ``fpca``,
    ``rank_r_projection``, ``oracle``.
``trials``, ``master_seed``
    Instances per grid point and the root of every random stream.
``rank_source`` (optional)
    ``"estimate"`` (default) feeds the data-driven rank guess to the
    rank-aware solvers; ``"true"`` feeds them the true rank.

Output
------
One row per (grid point, trial, solver) followed by a ``mean`` row per
(grid point, solver).  Rows are sorted before writing and floats use the
shortest round-trip representation, so a rerun with the same configuration
produces byte-identical files regardless of ``jobs``.  Wall-clock times go
to a separate ``*.timing.csv`` file because they never repeat exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..admira import admira_solve
from ..core import Stopwatch, spectral_norm
from ..datagen import NOISE_KINDS, NoiseSpec, make_instance, measure_snr
from ..fpca import FpcaConfig, fpca_solve
from ..metrics import (
    bound_convex_relaxation,
    bound_optspace,
    observation_noise,
    oracle_estimate,
    oracle_rmse,
    rmse,
)
from ..optspace import OptSpaceConfig, incremental_optspace_solve, optspace_solve
from ..spectral import estimate_rank, rank_r_projection

__all__ = [
    "ConfigError",
    "SOLVERS",
    "SweepConfig",
    "SweepRecord",
    "load_config",
    "run_sweep",
    "write_csv",
    "write_timing_csv",
    "CSV_COLUMNS",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
SOLVERS = ("optspace", "incremental_optspace", "admira", "fpca", "rank_r_projection", "oracle")
MODELS = ("standard", "ill_conditioned")
SNR_TOLERANCE = 0.10
QUANTIZATION_SNR_TOLERANCE = 0.02


class ConfigError(ValueError):
    """Invalid or inconsistent sweep configuration."""


def _parse_snr(value):
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"bad SNR value {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"bad SNR value {value!r}")
    if not value > 0:
        raise ConfigError(f"SNR must be positive, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class SweepConfig:
    model: str
    n: int
    r: int
    epsilon_grid: tuple
    snr_grid: tuple
    noise: str
    solvers: tuple
    trials: int = 10
    master_seed: int = 0
    m: int | None = None
    rank_source: str = "estimate"
    name: str = ""

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.noise not in NOISE_KINDS or self.noise == "none":
            raise ConfigError(f"noise must be one of {NOISE_KINDS[1:]}, got {self.noise!r}")
        for key in ("n", "r", "trials"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{key} must be a positive integer, got {v!r}")
        if self.m is not None and (not isinstance(self.m, int) or self.m < 1):
            raise ConfigError(f"m must be a positive integer, got {self.m!r}")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        if not self.epsilon_grid or not self.snr_grid:
            raise ConfigError("epsilon_grid and snr_grid must be nonempty")
        for eps in self.epsilon_grid:
            if not eps > 0 or eps > self.n:
                raise ConfigError(f"epsilon {eps!r} must lie in (0, n]")
        if not self.solvers:
            raise ConfigError("solvers must be nonempty")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ConfigError(f"unknown solvers {bad}; choose from {SOLVERS}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ConfigError("solvers must not repeat")
        if self.rank_source not in ("estimate", "true"):
            raise ConfigError("rank_source must be 'estimate' or 'true'")
        if self.model == "ill_conditioned" and (self.r != 4 or (self.m or self.n) != self.n):
            raise ConfigError("ill_conditioned model is square with r = 4")

    @property
    def rows(self):
        return self.n if self.m is None else self.m

    def grid(self):
        """``(grid_index, epsilon, snr)`` in epsilon-major order."""
        out = []
        for eps in self.epsilon_grid:
            for snr in self.snr_grid:
                out.append((len(out), eps, snr))
        return out

    def noise_spec(self, snr):
        if math.isinf(snr):
            return NoiseSpec()
        return NoiseSpec(self.noise, snr)

    @classmethod
    def from_dict(cls, d, **overrides):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        known = {f.name for f in fields(cls)} | {"inv_sqrt_snr_grid"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        if ("snr_grid" in d) == ("inv_sqrt_snr_grid" in d):
            raise ConfigError("give exactly one of snr_grid and inv_sqrt_snr_grid")
        if "snr_grid" in d:
            snrs = tuple(_parse_snr(v) for v in _as_list(d.pop("snr_grid"), "snr_grid"))
        else:
            snrs = []
            for v in _as_list(d.pop("inv_sqrt_snr_grid"), "inv_sqrt_snr_grid"):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                    raise ConfigError(f"bad 1/sqrt(SNR) value {v!r}")
                snrs.append(math.inf if v == 0 else 1.0 / float(v) ** 2)
            snrs = tuple(snrs)
        missing = [k for k in ("model", "n", "r", "epsilon_grid", "noise", "solvers") if k not in d]
        if missing:
            raise ConfigError(f"missing configuration keys {missing}")
        raw_eps = _as_list(d.pop("epsilon_grid"), "epsilon_grid")
        if any(isinstance(e, bool) or not isinstance(e, (int, float)) for e in raw_eps):
            raise ConfigError(f"epsilon_grid must hold numbers, got {raw_eps!r}")
        eps = tuple(float(e) for e in raw_eps)
        solvers = tuple(_as_list(d.pop("solvers"), "solvers"))
        try:
            return cls(epsilon_grid=eps, snr_grid=snrs, solvers=solvers, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _as_list(v, key):
    if not isinstance(v, list):
        raise ConfigError(f"{key} must be a list")
    return v


def load_config(path, **overrides):
    """Read a JSON sweep configuration; keyword overrides win over the file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(raw, dict):
        raw.setdefault("name", os.path.splitext(os.path.basename(str(path)))[0])
    return SweepConfig.from_dict(raw, **overrides)


@dataclass
class SweepRecord:
    row_type: str
    model: str
    m: int
    n: int
    r: int
    noise: str
    epsilon: float
    snr: float
    grid_index: int
    trial: int | str
    solver: str
    status: str = "ok"
    rmse: float = math.nan
    rmse_std: float | None = None
    rank_estimated: int | None = None
    rank_used: int | None = None
    iterations: int | None = None
    realized_snr: float | None = None
    realized_E_size: int | None = None
    quantization_a: float | None = None
    snr_warning: int = 0
    oracle_rmse: float | None = None
    bound_convex_relaxation: float | None = None
    bound_optspace: float | None = None
    seconds: float = field(default=0.0, compare=False)


CSV_COLUMNS = ["schema_version"] + [f.name for f in fields(SweepRecord) if f.name != "seconds"]
TIMING_COLUMNS = ["grid_index", "trial", "solver", "seconds"]


def _solve(name, inst, r_used):
    """Run one solver; returns ``(estimate, rank_used, iterations, seconds, status)``."""
    obs = inst.observations
    noiseless = inst.noise.kind == "none"
    if name == "optspace":
        cfg = OptSpaceConfig.noiseless(rank=r_used) if noiseless else OptSpaceConfig(rank=r_used)
        res = optspace_solve(obs, cfg)
    elif name == "incremental_optspace":
        cfg = OptSpaceConfig.noiseless(rank=r_used) if noiseless else OptSpaceConfig(rank=r_used)
        res = incremental_optspace_solve(obs, cfg)
    elif name == "admira":
        res = admira_solve(obs, r_used)
    elif name == "fpca":
        res = fpca_solve(obs, FpcaConfig.for_noise(obs, inst.sigma))
    elif name == "rank_r_projection":
        clock = Stopwatch()
        est = rank_r_projection(obs, r_used)
        return est, est.rank, 0, clock.elapsed(), "ok"
    elif name == "oracle":
        clock = Stopwatch()
        dense, info = oracle_estimate(obs, inst.factors.left, inst.factors.right, return_info=True)
        return dense, inst.rank, info["lsqr_iterations"], clock.elapsed(), "ok"
    else:  # pragma: no cover - validated by SweepConfig
        raise ConfigError(f"unknown solver {name!r}")
    status = res.info.get("status", "ok")
    return res.estimate, res.rank_used, res.iterations, res.seconds, f"ok:{status}"


def _snr_warning(kind, target, realized):
    if math.isinf(target):
        return 0
    tol = QUANTIZATION_SNR_TOLERANCE if kind == "quantization" else SNR_TOLERANCE
    return int(not abs(realized / target - 1.0) <= tol)


def _reference_columns(inst, snr):
    obs = inst.observations
    m, n = obs.shape
    sigma = inst.sigma
    noise = observation_noise(inst.truth, obs)
    sv = inst.factors.singular_values()
    kappa = float(sv[0] / sv[-1])
    square = max(m, n)
    return {
        "oracle_rmse": oracle_rmse(sigma, square, inst.rank, obs.size / square),
        "bound_convex_relaxation": bound_convex_relaxation(
            float(np.linalg.norm(noise.values)), square, obs.alpha, obs.size
        ),
        "bound_optspace": bound_optspace(
            spectral_norm(noise) if np.any(noise.values) else 0.0,
            square,
            obs.alpha,
            inst.rank,
            kappa,
            obs.size,
        ),
    }


def _run_task(cfg, grid_index, eps, snr, trial):
    """All solvers on one instance; returns a list of records."""
    inst = make_instance(
        cfg.model, cfg.n, cfg.r, eps, cfg.noise_spec(snr), cfg.master_seed, trial, grid_index, m=cfg.m
    )
    obs = inst.observations
    realized = measure_snr(inst.truth, obs) if obs.size else math.nan
    try:
        r_est = estimate_rank(obs)
    except Exception:  # noqa: BLE001 - recorded as a missing estimate
        r_est = None
    r_used = cfg.r if cfg.rank_source == "true" or r_est is None else r_est
    base = {
        "row_type": "trial",
        "model": cfg.model,
        "m": cfg.rows,
        "n": cfg.n,
        "r": cfg.r,
        "noise": inst.noise.kind,
        "epsilon": float(eps),
        "snr": float(snr),
        "grid_index": grid_index,
        "trial": trial,
        "rank_estimated": r_est,
        "realized_snr": realized,
        "realized_E_size": obs.size,
        "quantization_a": inst.noise_params.get("a") if inst.noise.kind == "quantization" else None,
        "snr_warning": _snr_warning(inst.noise.kind, snr, realized),
    }
    try:
        base.update(_reference_columns(inst, snr))
    except Exception:  # noqa: BLE001 - reference curves are informational
        pass
    out = []
    for name in cfg.solvers:
        rec = SweepRecord(solver=name, **base)
        try:
            est, rank_used, iters, secs, status = _solve(name, inst, r_used)
            rec.rmse = rmse(inst.truth, est)
            rec.rank_used, rec.iterations, rec.seconds, rec.status = int(rank_used), int(iters), secs, status
        except Exception as exc:  # noqa: BLE001 - a failing solver never aborts the sweep
            rec.status = f"error:{type(exc).__name__}:{exc}".replace("\n", " ")
        out.append(rec)
    return out


def _mean_rows(cfg, records):
    order = {s: i for i, s in enumerate(cfg.solvers)}
    groups = {}
    for rec in records:
        groups.setdefault((rec.grid_index, rec.solver), []).append(rec)
    out = []
    for (g, solver), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], order[kv[0][1]])):
        ok = [x for x in recs if x.status.startswith("ok")]
        vals = np.array([x.rmse for x in ok])
        first = recs[0]

        def mean_of(attr):
            xs = [getattr(x, attr) for x in recs if getattr(x, attr) is not None]
            return float(np.mean(xs)) if xs else None

        out.append(
            replace(
                first,
                row_type="mean",
                trial="mean",
                status=f"ok:{len(ok)}/{len(recs)}",
                rmse=float(vals.mean()) if vals.size else math.nan,
                rmse_std=float(vals.std(ddof=1)) if vals.size > 1 else None,
                rank_estimated=None,
                rank_used=None,
                iterations=None,
                realized_snr=mean_of("realized_snr"),
                realized_E_size=None,
                quantization_a=mean_of("quantization_a"),
                snr_warning=int(any(x.snr_warning for x in recs)),
                oracle_rmse=mean_of("oracle_rmse"),
                bound_convex_relaxation=mean_of("bound_convex_relaxation"),
                bound_optspace=mean_of("bound_optspace"),
                seconds=float(sum(x.seconds for x in recs)),
            )
        )
    return out


def _sort_key(cfg):
    order = {s: i for i, s in enumerate(cfg.solvers)}

    def key(rec):
        is_mean = rec.row_type == "mean"
        return (rec.grid_index, is_mean, -1 if is_mean else rec.trial, order[rec.solver])

    return key


def run_sweep(cfg, jobs=1):
    """Run every (grid point, trial) task and return sorted records.

    The list holds the per-trial records followed, within each grid point,
    by one ``mean`` record per solver.
    """
    tasks = [(cfg, g, eps, snr, t) for g, eps, snr in cfg.grid() for t in range(cfg.trials)]
    records = []
    if jobs is None or jobs <= 1:
        for task in tasks:
            records.extend(_run_task(*task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_run_task, *zip(*tasks)):
                records.extend(recs)
    records.extend(_mean_rows(cfg, records))
    records.sort(key=_sort_key(cfg))
    return records


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(rows, header, path_or_buffer):
    if hasattr(path_or_buffer, "write"):
        fh, close = path_or_buffer, False
    else:
        fh, close = open(path_or_buffer, "w", encoding="utf-8", newline=""), True
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    finally:
        if close:
            fh.close()


def write_csv(records, path_or_buffer):
    """Write the deterministic results table (no timing columns)."""
    names = CSV_COLUMNS[1:]
    rows = ([SCHEMA_VERSION] + [getattr(rec, k) for k in names] for rec in records)
    _write(rows, CSV_COLUMNS, path_or_buffer)


def write_timing_csv(records, path_or_buffer):
    """Write per-solve wall-clock seconds (trial rows only)."""
    rows = (
        [rec.grid_index, rec.trial, rec.solver, rec.seconds] for rec in records if rec.row_type == "trial"
    )
    _write(rows, TIMING_COLUMNS, path_or_buffer)


def records_to_csv_text(records):
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def config_as_dict(cfg):
    d = asdict(cfg)
    d["epsilon_grid"] = list(cfg.epsilon_grid)
    d["snr_grid"] = ["inf" if math.isinf(s) else s for s in cfg.snr_grid]
    d["solvers"] = list(cfg.solvers)
    return d
