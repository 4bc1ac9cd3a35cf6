"""Sparse SPD linear algebra: a validated CSR container, a permuted banded
Cholesky factorization reused across many right-hand sides, a generic
conjugate gradient for SPD operators, and a dense elimination oracle used to
verify the sparse route on small instances."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee


class NotSpdError(Exception):
    """The matrix or operator is not symmetric positive definite."""


_factorization_count = 0


def factorization_count() -> int:
    """Total factorize_spd calls in this process; lets tests assert factor reuse."""
    return _factorization_count


@dataclass
class SparseMatrix:
    """Compressed-sparse-row matrix with sorted column indices.

    The symmetric flag asserts (i, j) and (j, i) agree to machine precision
    and is checked at construction.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.data = np.asarray(self.data, dtype=float)
        if self.indptr.shape != (self.n + 1,):
            raise ValueError("indptr must have length n + 1")
        if self.indices.shape != self.data.shape:
            raise ValueError("indices and data lengths differ")
        for row in range(self.n):
            cols = self.indices[self.indptr[row] : self.indptr[row + 1]]
            if cols.size and (np.any(np.diff(cols) <= 0) or cols[0] < 0 or cols[-1] >= self.n):
                raise ValueError(f"column indices not strictly increasing in row {row}")
        if self.symmetric:
            a = self.to_csr()
            scale = max(float(np.max(np.abs(self.data))), 1.0) if self.data.size else 1.0
            gap = abs(a - a.T)
            if gap.nnz and gap.max() > 1e-14 * scale:
                raise ValueError("symmetric flag set but matrix is not symmetric")

    @classmethod
    def from_csr(cls, a: sp.spmatrix, symmetric: bool = False) -> "SparseMatrix":
        a = sp.csr_matrix(a)
        a.sort_indices()
        a.sum_duplicates()
        if a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        return cls(n=a.shape[0], indptr=a.indptr, indices=a.indices, data=a.data, symmetric=symmetric)

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass
class SymFactor:
    """Reusable Cholesky factorization of an SPD sparse matrix.

    Stores the banded factor of the reverse Cuthill-McKee permuted matrix and
    a fingerprint of the source so stale factors are detectable.
    """

    n: int
    perm: np.ndarray
    cb: np.ndarray
    bandwidth: int
    fingerprint: str


def _to_csr(a) -> sp.csr_matrix:
    if isinstance(a, SparseMatrix):
        return a.to_csr()
    return sp.csr_matrix(a)


def fingerprint_of(a) -> str:
    a = _to_csr(a)
    a.sort_indices()
    hasher = hashlib.blake2b(digest_size=8)
    hasher.update(np.int64(a.shape[0]).tobytes())
    hasher.update(a.indptr.tobytes())
    hasher.update(a.indices.tobytes())
    hasher.update(a.data.tobytes())
    return hasher.hexdigest()


def factorize_spd(a) -> SymFactor:
    """Factorize a symmetric positive definite sparse matrix for repeated solves.

    Uses a reverse Cuthill-McKee permutation to shrink the band, then a banded
    Cholesky factorization; a non-positive pivot raises NotSpdError.
    """
    global _factorization_count
    a = _to_csr(a)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    gap = abs(a - a.T)
    scale = max(float(np.max(np.abs(a.data))), 1.0) if a.nnz else 1.0
    if gap.nnz and gap.max() > 1e-12 * scale:
        raise NotSpdError("matrix not SPD: not symmetric")
    perm = np.asarray(reverse_cuthill_mckee(a, symmetric_mode=True), dtype=np.int64)
    ap = a[perm][:, perm].tocoo()
    bandwidth = int(np.max(np.abs(ap.row - ap.col))) if ap.nnz else 0
    ab = np.zeros((bandwidth + 1, n))
    upper = ap.row <= ap.col
    ab[bandwidth + ap.row[upper] - ap.col[upper], ap.col[upper]] = ap.data[upper]
    try:
        cb = scipy.linalg.cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(f"matrix not SPD: non-positive pivot ({exc})") from exc
    _factorization_count += 1
    return SymFactor(n=n, perm=perm, cb=cb, bandwidth=bandwidth, fingerprint=fingerprint_of(a))


def solve_factored(factor: SymFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b with a prepared factor; b may be a vector or (n, k) block."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, factor expects {factor.n}")
    xp = scipy.linalg.cho_solve_banded((factor.cb, False), b[factor.perm])
    x = np.empty_like(xp)
    x[factor.perm] = xp
    return x


def cg_spd(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray,
    rel_tol: float,
    max_iter: int,
) -> tuple[np.ndarray, int]:
    """Conjugate gradient for an SPD operator given as a callable.

    Stops when ||apply(x) - b|| <= rel_tol * ||apply(x0) - b|| or after
    max_iter iterations (the caller can detect the latter from the returned
    count).  Non-positive direction curvature raises NotSpdError.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    x = np.array(x0, dtype=float, copy=True)
    r = np.asarray(b, dtype=float) - apply(x)
    r0 = float(np.linalg.norm(r))
    if r0 == 0.0:
        return x, 0
    p = r.copy()
    rs = float(r @ r)
    for m in range(1, max_iter + 1):
        ap = apply(p)
        p_ap = float(p @ ap)
        if p_ap <= 0.0:
            raise NotSpdError("operator not SPD: direction curvature <= 0 in CG")
        step = rs / p_ap
        x += step * p
        r -= step * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= rel_tol * r0:
            return x, m
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter


def dense_solve_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense Gaussian elimination with partial pivoting, for verification only.

    Independent of the sparse route on purpose; capped at dimension 2000.
    """
    a = np.array(a, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > 2000:
        raise ValueError("dense oracle capped at dimension 2000")
    if b.shape[0] != n:
        raise ValueError("right-hand side size mismatch")
    scale = float(np.max(np.abs(a))) if n else 0.0
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        if np.abs(a[pivot_row, col]) <= 1e-14 * max(scale, 1e-300):
            raise ValueError("singular matrix in dense oracle")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            b[[col, pivot_row]] = b[[pivot_row, col]]
        factors = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= np.outer(factors, a[col, col:])
        b[col + 1 :] -= np.outer(factors, np.atleast_1d(b[col])).reshape(b[col + 1 :].shape)
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x
