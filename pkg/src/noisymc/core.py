"""Matrix substrate shared by every solver.

Observed entries live in :class:`SparseObservations` (a canonical, row-major
sorted coordinate list with cached CSR/CSC adjacency).  Low-rank estimates
live in :class:`FactoredMatrix` so that an ``m x n`` product never has to be
materialized unless the caller asks for it.  Dense matrices are plain
``numpy.ndarray`` objects validated by :func:`as_dense`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, aslinearoperator, svds

__all__ = [
    "DENSE_SVD_LIMIT",
    "SVD_TOL",
    "DimensionError",
    "SVDConvergenceError",
    "SparseObservations",
    "FactoredMatrix",
    "SolveResult",
    "Stopwatch",
    "as_dense",
    "project_observed",
    "frobenius_norm",
    "spectral_norm",
    "truncated_svd",
    "factored_to_dense",
    "residual_on_observed",
    "orthonormalize",
]

DENSE_SVD_LIMIT = 1000
SVD_TOL = 1e-8
ORTHO_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when operands have incompatible shapes."""


class SVDConvergenceError(RuntimeError):
    """The iterative SVD backend did not converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


def as_dense(A, name="matrix"):
    """Return ``A`` as a finite 2-D float array (no copy when possible)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError(f"{name} must have positive dimensions, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains NaN or Inf")
    return A


def _readonly(a):
    a.setflags(write=False)
    return a


class SparseObservations:
    """Observed entries ``(i, j, N_ij)`` of an ``m x n`` matrix.

    Triples are stored sorted in row-major order, which makes the stored
    ``values`` array coincide with the ``data`` array of the CSR matrix and
    lets every solver build residual operators without re-sorting.

    Parameters
    ----------
    shape : (int, int)
        Dimensions ``(m, n)`` of the underlying matrix.
    rows, cols : array_like of int
        Indices of the observed entries.  Duplicates are rejected.
    values : array_like of float
        Observed values; must be finite.
    """

    def __init__(self, shape, rows, cols, values):
        m, n = (int(d) for d in shape)
        if m < 1 or n < 1:
            raise DimensionError(f"shape must be positive, got {(m, n)}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if not (rows.size == cols.size == values.size):
            raise DimensionError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise IndexError(f"observation index out of range for shape {(m, n)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values contain NaN or Inf")
        lin = rows * n + cols
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if lin.size > 1 and np.any(lin[1:] == lin[:-1]):
            raise ValueError("duplicate (i, j) index in observations")
        self.m = m
        self.n = n
        self.rows = _readonly(rows[order])
        self.cols = _readonly(cols[order])
        self.values = _readonly(values[order].copy())

    @classmethod
    def from_dense(cls, A, mask=None):
        """Observe ``A`` at ``mask`` (boolean array), or everywhere if ``mask`` is None."""
        A = as_dense(A)
        if mask is None:
            rows, cols = np.indices(A.shape).reshape(2, -1)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != A.shape:
                raise DimensionError(f"mask shape {mask.shape} != matrix shape {A.shape}")
            rows, cols = np.nonzero(mask)
        return cls(A.shape, rows, cols, A[rows, cols])

    @classmethod
    def empty(cls, shape):
        return cls(shape, [], [], [])

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def size(self):
        """Number of observed entries, ``|E|``."""
        return int(self.values.size)

    def __len__(self):
        return self.size

    @property
    def density(self):
        """Sampling fraction ``p = |E| / (m n)``."""
        return self.size / (self.m * self.n)

    @property
    def alpha(self):
        """Aspect ratio ``m / n`` (metadata only)."""
        return self.m / self.n

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    @cached_property
    def _indptr(self):
        counts = np.bincount(self.rows, minlength=self.m)
        indptr = np.zeros(self.m + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return indptr

    def pattern_matrix(self, data=None):
        """CSR matrix on this index set holding ``data`` (default: the values)."""
        if data is None:
            data = self.values
        data = np.asarray(data, dtype=float)
        if data.shape != (self.size,):
            raise DimensionError(f"expected {self.size} data values, got shape {data.shape}")
        return sp.csr_matrix((data, self.cols, self._indptr), shape=self.shape, copy=False)

    @cached_property
    def csr(self):
        return self.pattern_matrix()

    @cached_property
    def csc(self):
        return self.csr.tocsc()

    @cached_property
    def row_counts(self):
        return _readonly(np.bincount(self.rows, minlength=self.m))

    @cached_property
    def col_counts(self):
        return _readonly(np.bincount(self.cols, minlength=self.n))

    def to_dense(self):
        """Zero-filled ``m x n`` matrix ``N^E``."""
        A = np.zeros(self.shape)
        A[self.rows, self.cols] = self.values
        return A

    def with_values(self, values):
        """Same index set, new values.  Adjacency caches are shared."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size != self.size:
            raise DimensionError(f"expected {self.size} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values contain NaN or Inf")
        new = object.__new__(SparseObservations)
        new.m, new.n = self.m, self.n
        new.rows, new.cols = self.rows, self.cols
        new.values = _readonly(values.copy())
        if "_indptr" in self.__dict__:
            new.__dict__["_indptr"] = self._indptr
        for key in ("row_counts", "col_counts"):
            if key in self.__dict__:
                new.__dict__[key] = self.__dict__[key]
        return new

    def subset(self, keep):
        """Observations restricted to the boolean mask ``keep`` over triples."""
        keep = np.asarray(keep, dtype=bool)
        return SparseObservations(self.shape, self.rows[keep], self.cols[keep], self.values[keep])

    def index_set(self):
        return self.rows, self.cols

    def overlaps(self, other):
        """Whether the two index sets share any entry."""
        if self.shape != other.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")
        n = self.shape[1]
        return bool(np.intersect1d(self.rows * n + self.cols, other.rows * n + other.cols).size)

    def same_index_set(self, other):
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
        )

    def __eq__(self, other):
        if not isinstance(other, SparseObservations):
            return NotImplemented
        return self.same_index_set(other) and np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return f"SparseObservations(shape={self.shape}, size={self.size})"


def orthonormalize(A):
    """QR-based orthonormal basis with a sign fix (``diag(R) >= 0``).

    The sign fix makes the QR retraction continuous in ``A``.
    """
    Q, R = np.linalg.qr(A)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d, R * d[:, None]


@dataclass(frozen=True)
class FactoredMatrix:
    """``left @ core @ right.T`` with orthonormal ``left`` and ``right``.

    A rank-0 factorization (empty ``core``) represents the zero matrix.
    """

    left: np.ndarray
    core: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.atleast_2d(np.asarray(self.left, dtype=float))
        right = np.atleast_2d(np.asarray(self.right, dtype=float))
        core = np.asarray(self.core, dtype=float).reshape(left.shape[1], right.shape[1])
        r = left.shape[1]
        if right.shape[1] != r or core.shape != (r, r):
            raise DimensionError(
                f"inconsistent factor shapes: left {left.shape}, core {core.shape}, right {right.shape}"
            )
        for name, B in (("left", left), ("right", right)):
            if r and np.max(np.abs(B.T @ B - np.eye(r))) > ORTHO_TOL * max(1, B.shape[0]) ** 0.5:
                raise ValueError(f"{name} factor columns are not orthonormal")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(core)) and np.all(np.isfinite(right))):
            raise ValueError("factors contain NaN or Inf")
        object.__setattr__(self, "left", _readonly(left))
        object.__setattr__(self, "right", _readonly(right))
        object.__setattr__(self, "core", _readonly(core))

    @classmethod
    def zeros(cls, shape):
        m, n = shape
        return cls(np.zeros((m, 0)), np.zeros((0, 0)), np.zeros((n, 0)))

    @classmethod
    def from_svd(cls, U, s, V):
        return cls(U, np.diag(np.asarray(s, dtype=float)), V)

    @property
    def rank(self):
        return self.left.shape[1]

    r = rank

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    def to_dense(self):
        return self.left @ self.core @ self.right.T

    def values_at(self, rows, cols):
        """Entries of the product at ``(rows[k], cols[k])`` without densifying."""
        if self.rank == 0:
            return np.zeros(len(rows))
        return np.einsum("ij,ij->i", self.left[rows] @ self.core, self.right[cols])

    def singular_values(self):
        return np.linalg.svd(self.core, compute_uv=False)


@dataclass
class SolveResult:
    """Output of a matrix-completion solver."""

    estimate: FactoredMatrix
    iterations: int
    objective_trace: list
    seconds: float
    rank_used: int
    info: dict[str, Any] = field(default_factory=dict)

    def to_dense(self):
        return self.estimate.to_dense()


class Stopwatch:
    """Monotonic wall-clock timer."""

    def __init__(self):
        self.start = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.start


def _as_matrix_like(A):
    if isinstance(A, SparseObservations):
        return A.csr
    if isinstance(A, FactoredMatrix):
        return A.to_dense()
    if sp.issparse(A) or isinstance(A, LinearOperator):
        return A
    return as_dense(A)


def project_observed(A, E):
    """``P_E(A)`` as observations on the index set of ``E``.

    Parameters
    ----------
    A : ndarray or FactoredMatrix
        Matrix with the same shape as ``E``.
    E : SparseObservations
        Supplies the index set; its values are ignored.
    """
    if isinstance(A, FactoredMatrix):
        if A.shape != E.shape:
            raise DimensionError(f"matrix shape {A.shape} != observation shape {E.shape}")
        return E.with_values(A.values_at(E.rows, E.cols))
    A = as_dense(A)
    if A.shape != E.shape:
        raise DimensionError(f"matrix shape {A.shape} != observation shape {E.shape}")
    return E.with_values(A[E.rows, E.cols])


def frobenius_norm(A):
    if isinstance(A, SparseObservations):
        return float(np.linalg.norm(A.values))
    if isinstance(A, FactoredMatrix):
        return float(np.linalg.norm(A.core))
    if sp.issparse(A):
        return float(sp.linalg.norm(A))
    return float(np.linalg.norm(as_dense(A)))


def spectral_norm(A):
    """Largest singular value of ``A`` (dense, sparse or observations)."""
    A = _as_matrix_like(A)
    if isinstance(A, np.ndarray):
        return float(np.linalg.norm(A, 2))
    if A.shape[0] == 1 or A.shape[1] == 1 or min(A.shape) <= 2:
        return float(np.linalg.norm(A.toarray() if sp.issparse(A) else A @ np.eye(A.shape[1]), 2))
    s, _, _ = truncated_svd(A, 1, method="iterative")
    return float(s[0])


def _fix_signs(U, V):
    # first nonzero entry of each left vector made positive
    for k in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, k]) > 1e-14)
        if nz.size and U[nz[0], k] < 0:
            U[:, k] *= -1
            V[:, k] *= -1
    return U, V


def _densify(A):
    if isinstance(A, np.ndarray):
        return A
    if sp.issparse(A):
        return A.toarray()
    return A.matmat(np.eye(A.shape[1]))


def truncated_svd(A, k, method="auto", tol=SVD_TOL, maxiter=None, v0=None):
    """Top-``k`` singular triplets of ``A``.

    Parameters
    ----------
    A : ndarray, sparse matrix, LinearOperator or SparseObservations
    k : int
        Number of triplets, ``1 <= k <= min(m, n)``.
    method : {'auto', 'dense', 'iterative'}
        ``'auto'`` uses a dense SVD when ``min(m, n) <= 1000`` and ARPACK
        Lanczos otherwise.
    tol : float
        Convergence tolerance handed to the iterative backend.
    v0 : ndarray, optional
        Lanczos start vector of length ``min(m, n)``; a fixed pseudo-random
        vector is used when omitted so results are reproducible.

    Returns
    -------
    s : ndarray, shape (k,)
        Singular values in descending order.
    U : ndarray, shape (m, k)
    V : ndarray, shape (n, k)
        Orthonormal singular vectors; the first nonzero entry of each
        column of ``U`` is positive.
    """
    A = _as_matrix_like(A)
    m, n = A.shape
    k = int(k)
    if not 1 <= k <= min(m, n):
        raise ValueError(f"k={k} out of range [1, {min(m, n)}]")
    if method == "auto":
        method = "dense" if min(m, n) <= DENSE_SVD_LIMIT else "iterative"
    if method == "iterative" and k >= min(m, n) - 1:
        method = "dense"
    if method == "dense":
        U, s, Vt = np.linalg.svd(_densify(A), full_matrices=False)
        U, s, V = U[:, :k].copy(), s[:k].copy(), Vt[:k].T.copy()
    elif method == "iterative":
        op = aslinearoperator(A)
        if v0 is None:
            # fixed start vector: ARPACK would otherwise draw from the global RNG
            v0 = np.random.default_rng(0).standard_normal(min(m, n))
        try:
            U, s, Vt = svds(op, k=k, tol=tol, maxiter=maxiter, v0=v0, solver="arpack")
        except ArpackNoConvergence as exc:
            raise SVDConvergenceError(
                f"Lanczos SVD did not converge for k={k}", iterations=maxiter
            ) from exc
        order = np.argsort(s)[::-1]
        U, s, V = U[:, order], s[order], Vt[order].T
        # Rayleigh-Ritz on the converged subspaces restores exact orthonormality
        U, _ = orthonormalize(U)
        V, _ = orthonormalize(V)
        a, s, bt = np.linalg.svd(U.T @ op.matmat(V))
        U, V = U @ a, V @ bt.T
    else:
        raise ValueError(f"unknown method {method!r}")
    s = np.maximum(s, 0.0)
    U, V = _fix_signs(np.ascontiguousarray(U), np.ascontiguousarray(V))
    return s, U, V


def factored_to_dense(F):
    return F.to_dense()


def residual_on_observed(F, E):
    """``||P_E(F) - P_E(N)||_F`` computed over the observed entries only."""
    if F.shape != E.shape:
        raise DimensionError(f"estimate shape {F.shape} != observation shape {E.shape}")
    if E.size == 0:
        return 0.0
    return float(np.linalg.norm(F.values_at(E.rows, E.cols) - E.values))
