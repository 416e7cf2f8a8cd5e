"""Rating datasets, held-out evaluation and the random-prediction baseline.

File formats
------------
Jester
    CSV text, one user per line: the number of rated jokes followed by 100
    rating fields in ``[-10, 10]``; the literal ``99`` marks a missing
    rating.  The published spreadsheets must be exported to CSV first
    (one ``.csv`` per sheet); ``path`` may be one such file or a directory,
    whose ``*.csv`` files are read in sorted order.
MovieLens
    Tab-separated ``user item rating timestamp`` lines with 1-based ids, as
    in the ``u1.base`` / ``u1.test`` split files.

Matrices are laid out users x items.
"""

from __future__ import annotations

import csv
import glob
import os
from dataclasses import dataclass, field

import numpy as np

from ..admira import admira_solve
from ..core import SparseObservations, Stopwatch
from ..datagen import substream
from ..fpca import FpcaConfig, fpca_solve
from ..metrics import EvalReport, mae_nmae
from ..optspace import OptSpaceConfig, incremental_optspace_solve, optspace_solve
from ..spectral import estimate_rank

__all__ = [
    "DataError",
    "RatingsDataset",
    "load_jester",
    "load_movielens",
    "jester_complete_submatrix",
    "eval_real",
    "spectrum_dump",
    "random_prediction_nmae",
    "REAL_SOLVERS",
]

JESTER_ITEMS = 100
JESTER_MISSING = 99.0
JESTER_RANGE = (-10.0, 10.0)
MOVIELENS_RANGE = (1.0, 5.0)
TEST_PER_USER = 2
MIN_RATINGS_FOR_HOLDOUT = 3
FPCA_SIGMA_FRACTION = 0.1
REAL_SOLVERS = ("optspace", "incremental_optspace", "admira", "fpca", "midpoint")


class DataError(ValueError):
    """Malformed, missing or inconsistent dataset input."""


@dataclass
class RatingsDataset:
    name: str
    train: SparseObservations
    test: SparseObservations
    M_min: float
    M_max: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.train.shape != self.test.shape:
            raise DataError("train and test shapes differ")
        if self.train.overlaps(self.test):
            raise DataError("train and test share entries")
        for part in (self.train, self.test):
            if part.size and (part.values.min() < self.M_min or part.values.max() > self.M_max):
                raise DataError(f"ratings outside [{self.M_min}, {self.M_max}]")

    @property
    def shape(self):
        return self.train.shape


def _jester_files(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.csv")))
        if not files:
            raise DataError(f"no .csv files in {path}")
        return files
    if not os.path.isfile(path):
        raise DataError(f"no such file or directory: {path}")
    return [path]


def _read_jester(path):
    """All users as an ``(users, 100)`` array with NaN for missing ratings."""
    rows = []
    count_mismatch = 0
    for fname in _jester_files(path):
        with open(fname, encoding="utf-8-sig", newline="") as fh:
            for lineno, fields_ in enumerate(csv.reader(fh), start=1):
                if not fields_ or all(not f.strip() for f in fields_):
                    continue
                if len(fields_) != JESTER_ITEMS + 1:
                    raise DataError(
                        f"{fname}:{lineno}: expected {JESTER_ITEMS + 1} fields, got {len(fields_)}"
                    )
                try:
                    vals = np.array([float(f) for f in fields_])
                except ValueError as exc:
                    raise DataError(f"{fname}:{lineno}: {exc}") from exc
                ratings = vals[1:]
                missing = ratings == JESTER_MISSING
                present = ratings[~missing]
                if np.any(~np.isfinite(present)) or np.any(
                    (present < JESTER_RANGE[0]) | (present > JESTER_RANGE[1])
                ):
                    raise DataError(f"{fname}:{lineno}: rating outside {list(JESTER_RANGE)}")
                if int(vals[0]) != int(np.sum(~missing)):
                    count_mismatch += 1
                rows.append(np.where(missing, np.nan, ratings))
    if not rows:
        raise DataError(f"no users found in {path}")
    return np.vstack(rows), count_mismatch


def _holdout(R, seed, name, M_min, M_max, meta):
    """Split a users x items array (NaN = missing) into train/test, two per user."""
    rng = substream(seed, "holdout")
    train_r, train_c, train_v, test_r, test_c, test_v = [], [], [], [], [], []
    for u in range(R.shape[0]):
        items = np.flatnonzero(~np.isnan(R[u]))
        held = rng.choice(items, size=TEST_PER_USER, replace=False)
        keep = np.setdiff1d(items, held)
        train_r.append(np.full(keep.size, u))
        train_c.append(keep)
        train_v.append(R[u, keep])
        test_r.append(np.full(held.size, u))
        test_c.append(held)
        test_v.append(R[u, held])
    shape = R.shape
    train = SparseObservations(shape, np.concatenate(train_r), np.concatenate(train_c), np.concatenate(train_v))
    test = SparseObservations(shape, np.concatenate(test_r), np.concatenate(test_c), np.concatenate(test_v))
    return RatingsDataset(name, train, test, M_min, M_max, meta)


def load_jester(path, n_users, rng_seed=0):
    """Subsample ``n_users`` Jester users and hold out two ratings per user.

    Users with fewer than three ratings cannot keep a training rating after
    the holdout and are excluded from sampling; their count is recorded in
    ``meta['excluded_users']``.
    """
    R, count_mismatch = _read_jester(path)
    counts = np.sum(~np.isnan(R), axis=1)
    eligible = np.flatnonzero(counts >= MIN_RATINGS_FOR_HOLDOUT)
    if n_users < 1 or n_users > eligible.size:
        raise DataError(f"requested {n_users} users but {eligible.size} are eligible")
    chosen = np.sort(substream(rng_seed, "jester-users").choice(eligible, size=n_users, replace=False))
    sub = R[chosen]
    used_items = np.flatnonzero(np.any(~np.isnan(sub), axis=0))
    meta = {
        "dataset": "jester",
        "orientation": "users_by_items",
        "seed": int(rng_seed),
        "users_total": int(R.shape[0]),
        "excluded_users": int(R.shape[0] - eligible.size),
        "count_field_mismatches": int(count_mismatch),
        "items_with_ratings": int(used_items.size),
    }
    return _holdout(sub, rng_seed, "jester", *JESTER_RANGE, meta)


def _read_movielens(fname):
    users, items, ratings = [], [], []
    try:
        fh = open(fname, encoding="latin-1")
    except OSError as exc:
        raise DataError(f"cannot read {fname}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{fname}:{lineno}: expected 4 tab-separated fields")
            try:
                u, i, r = int(parts[0]), int(parts[1]), float(parts[2])
                int(parts[3])
            except ValueError as exc:
                raise DataError(f"{fname}:{lineno}: {exc}") from exc
            if u < 1 or i < 1:
                raise DataError(f"{fname}:{lineno}: ids are 1-based")
            if not MOVIELENS_RANGE[0] <= r <= MOVIELENS_RANGE[1]:
                raise DataError(f"{fname}:{lineno}: rating {r} outside {list(MOVIELENS_RANGE)}")
            users.append(u - 1)
            items.append(i - 1)
            ratings.append(r)
    return np.array(users, dtype=np.int64), np.array(items, dtype=np.int64), np.array(ratings)


def load_movielens(base_path, test_path):
    """Train/test split from a pair of MovieLens rating files."""
    tu, ti, tr = _read_movielens(base_path)
    su, si, sr = _read_movielens(test_path)
    if tu.size == 0 or su.size == 0:
        raise DataError("empty MovieLens split")
    shape = (int(max(tu.max(), su.max())) + 1, int(max(ti.max(), si.max())) + 1)
    try:
        train = SparseObservations(shape, tu, ti, tr)
        test = SparseObservations(shape, su, si, sr)
    except ValueError as exc:
        raise DataError(f"bad MovieLens split: {exc}") from exc
    if train.overlaps(test):
        raise DataError("a (user, item) pair appears in both splits")
    meta = {"dataset": "movielens", "orientation": "users_by_items"}
    return RatingsDataset("movielens", train, test, *MOVIELENS_RANGE, meta)


def _shifted(obs, offset):
    return obs.with_values(obs.values - offset)


class _Shift:
    """Adds a constant back to a factored estimate at prediction time."""

    def __init__(self, estimate, offset):
        self.estimate, self.offset = estimate, offset
        self.shape = estimate.shape

    def values_at(self, rows, cols):
        return self.estimate.values_at(rows, cols) + self.offset


def eval_real(dataset, solver, rank=None, center=True, seed=None, clip=True):
    """Fit ``solver`` on the training ratings and score NMAE on the test set.

    Parameters
    ----------
    dataset : RatingsDataset
    solver : str
        One of ``REAL_SOLVERS``.  ``midpoint`` predicts ``(M_min + M_max)/2``
        everywhere and serves as a sanity baseline.
    rank : int, optional
        Rank for the rank-aware solvers; estimated from the training data
        when omitted.
    center : bool
        Subtract the mean training rating before fitting and add it back to
        the predictions.
    clip : bool
        Clip predictions to the rating range before scoring.

    Returns
    -------
    report : EvalReport
    row : dict
        Flat record suitable for CSV output.  For FPCA the noise level is a
        heuristic (``std of training ratings / 10``) and is flagged as such.
    """
    if solver not in REAL_SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {REAL_SOLVERS}")
    train = dataset.train
    offset = float(train.values.mean()) if center else 0.0
    fit_obs = _shifted(train, offset)
    row = {
        "dataset": dataset.name,
        "solver": solver,
        "users": dataset.shape[0],
        "items": dataset.shape[1],
        "train_size": train.size,
        "test_size": dataset.test.size,
        "seed": "" if seed is None else seed,
        "centered": int(bool(center)),
        "clipped": int(bool(clip)),
        "rank": "",
        "sigma_heuristic": "",
    }
    clock = Stopwatch()
    status = "ok"
    rank_used = 0
    try:
        if solver == "midpoint":
            mid = 0.5 * (dataset.M_min + dataset.M_max)
            estimate = np.full(dataset.shape, mid)
        else:
            r = rank
            if solver != "fpca" and r is None:
                r = estimate_rank(fit_obs)
            if solver == "optspace":
                res = optspace_solve(fit_obs, OptSpaceConfig(rank=r))
            elif solver == "incremental_optspace":
                res = incremental_optspace_solve(fit_obs, OptSpaceConfig(rank=r))
            elif solver == "admira":
                res = admira_solve(fit_obs, r)
            else:
                sigma = FPCA_SIGMA_FRACTION * float(np.std(train.values))
                row["sigma_heuristic"] = sigma
                res = fpca_solve(fit_obs, FpcaConfig.for_noise(fit_obs, sigma))
            status = f"ok:{res.info.get('status', 'ok')}"
            rank_used = res.rank_used
            row["rank"] = "" if r is None else int(r)
            estimate = _Shift(res.estimate, offset)
        seconds = clock.elapsed()
        mae, nmae = mae_nmae(dataset.test, estimate, dataset.M_max, dataset.M_min, clip=clip)
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        seconds = clock.elapsed()
        status = f"error:{type(exc).__name__}:{exc}".replace("\n", " ")
        mae = nmae = None
    report = EvalReport(rmse=None, mae=mae, nmae=nmae, rank_used=int(rank_used), seconds=seconds, status=status)
    row.update({"status": status, "rank_used": int(rank_used), "mae": mae, "nmae": nmae, "seconds": seconds})
    return report, row


def jester_complete_submatrix(path):
    """Users who rated every joke, as a dense ``(users, 100)`` array."""
    R, _ = _read_jester(path)
    full = R[~np.any(np.isnan(R), axis=1)]
    if full.shape[0] == 0:
        raise DataError("no user rated every item")
    return full


def spectrum_dump(source, k=None):
    """Descending singular values of a dense matrix or of the complete Jester submatrix.

    ``source`` is either an array or a path accepted by :func:`load_jester`.
    """
    if isinstance(source, (str, os.PathLike)):
        A = jester_complete_submatrix(source)
    else:
        A = np.asarray(source, dtype=float)
        if A.ndim != 2 or A.size == 0:
            raise DataError("spectrum needs a nonempty 2-D matrix")
    s = np.linalg.svd(A, compute_uv=False)
    return s if k is None else s[:k]


def random_prediction_nmae(rng_seed, pairs):
    """NMAE of uniform random guesses against uniform random ratings on ``[-10, 10]``.

    The expected value is ``E|X - Y| / 20 = 1/3``.
    """
    if pairs < 1:
        raise ValueError("need at least one pair")
    rng = substream(rng_seed, "random-prediction")
    lo, hi = JESTER_RANGE
    guess = rng.uniform(lo, hi, pairs)
    truth = rng.uniform(lo, hi, pairs)
    return float(np.mean(np.abs(guess - truth)) / (hi - lo))
