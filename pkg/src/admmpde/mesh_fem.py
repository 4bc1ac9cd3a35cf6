"""Uniform P1 finite elements on the unit square: grid construction, mass and
stiffness assembly, control-subdomain masks, the nodal box projection, and the
discrete space-time inner product used throughout the solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridSpec:
    """Uniform triangulated grid with mesh width h = 2^-i.

    Interior nodes are ordered lexicographically by (row, column):
    index = row * n_per_side + col, with x1 = (col + 1) * h and
    x2 = (row + 1) * h.  Each h-by-h cell is split into two triangles along
    the lower-left to upper-right diagonal.
    """

    i: int
    h: float
    n_per_side: int
    x1: np.ndarray
    x2: np.ndarray

    @property
    def n_interior(self) -> int:
        return self.n_per_side * self.n_per_side

    def node_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.n_per_side and 0 <= col < self.n_per_side):
            raise ValueError("row/col outside the interior grid")
        return row * self.n_per_side + col

    def row_col(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.n_interior):
            raise ValueError("node index out of range")
        return divmod(index, self.n_per_side)


@dataclass
class FemMatrices:
    """Assembled P1 matrices.

    M and K carry homogeneous Dirichlet elimination (interior-by-interior);
    M_full and K_full are the full-node-set assemblies kept for consistency
    checks (partition of unity, K annihilating constants).
    """

    M: sp.csr_matrix
    K: sp.csr_matrix
    M_full: sp.csr_matrix
    K_full: sp.csr_matrix
    interior_ids: np.ndarray


@dataclass(frozen=True)
class SubdomainMask:
    """Indicator of interior nodes inside the closed control rectangle."""

    indicator: np.ndarray
    indices: np.ndarray
    count: int
    n_total: int

    @property
    def full(self) -> bool:
        return self.count == self.n_total

    def restrict(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field)[..., self.indices]

    def prolong(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field)
        out = np.zeros(field.shape[:-1] + (self.n_total,), dtype=float)
        out[..., self.indices] = field
        return out


def build_grid(i: int) -> GridSpec:
    """Grid of interior nodes for mesh exponent i, h = 2^-i, 2 <= i <= 10."""
    if int(i) != i or not (2 <= i <= 10):
        raise ValueError(f"grid exponent must be an integer in [2, 10], got {i}")
    i = int(i)
    h = 2.0 ** (-i)
    n_per = 2**i - 1
    rows, cols = np.meshgrid(np.arange(n_per), np.arange(n_per), indexing="ij")
    x1 = (cols.ravel() + 1) * h
    x2 = (rows.ravel() + 1) * h
    return GridSpec(i=i, h=h, n_per_side=n_per, x1=x1, x2=x2)


def _p1_element_matrices(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness and mass matrix of one P1 triangle from its vertex coordinates."""
    x = coords[:, 0]
    y = coords[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    area = 0.5 * abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    k_e = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
    m_e = (area / 12.0) * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
    return k_e, m_e


def assemble_p1(grid: GridSpec) -> FemMatrices:
    """Assemble consistent mass and stiffness matrices on the triangulated grid.

    Every cell is congruent, so each of the two triangle orientations has one
    constant element matrix; assembly scatters those over all cells at once.
    """
    h = grid.h
    m = grid.n_per_side + 2  # nodes per side including the boundary
    n_full = m * m

    rr, cc = np.meshgrid(np.arange(m - 1), np.arange(m - 1), indexing="ij")
    ll = (rr * m + cc).ravel()
    lr = ll + 1
    ul = ll + m
    ur = ul + 1
    # diagonal runs lower-left to upper-right in every cell
    tris_a = np.stack([ll, lr, ur], axis=1)
    tris_b = np.stack([ll, ur, ul], axis=1)
    k_a, m_a = _p1_element_matrices(np.array([[0.0, 0.0], [h, 0.0], [h, h]]))
    k_b, m_b = _p1_element_matrices(np.array([[0.0, 0.0], [h, h], [0.0, h]]))

    rows, cols, k_vals, m_vals = [], [], [], []
    for tris, k_e, m_e in ((tris_a, k_a, m_a), (tris_b, k_b, m_b)):
        n_tri = tris.shape[0]
        for a in range(3):
            for b in range(3):
                rows.append(tris[:, a])
                cols.append(tris[:, b])
                k_vals.append(np.full(n_tri, k_e[a, b]))
                m_vals.append(np.full(n_tri, m_e[a, b]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    k_full = sp.coo_matrix((np.concatenate(k_vals), (rows, cols)), shape=(n_full, n_full)).tocsr()
    m_full = sp.coo_matrix((np.concatenate(m_vals), (rows, cols)), shape=(n_full, n_full)).tocsr()

    ir, ic = np.meshgrid(np.arange(grid.n_per_side), np.arange(grid.n_per_side), indexing="ij")
    interior_ids = ((ir + 1) * m + (ic + 1)).ravel()
    k_int = k_full[interior_ids][:, interior_ids].tocsr()
    m_int = m_full[interior_ids][:, interior_ids].tocsr()
    return FemMatrices(M=m_int, K=k_int, M_full=m_full, K_full=k_full, interior_ids=interior_ids)


def subdomain_mask(grid: GridSpec, rect: tuple[float, float, float, float]) -> SubdomainMask:
    """Mask of interior nodes lying in the closed rectangle (x1_lo, x1_hi, x2_lo, x2_hi).

    Closed membership: nodes on the rectangle boundary carry control degrees
    of freedom.
    """
    x1_lo, x1_hi, x2_lo, x2_hi = rect
    for lo, hi in ((x1_lo, x1_hi), (x2_lo, x2_hi)):
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"degenerate or out-of-range subdomain rectangle {rect}")
    indicator = (grid.x1 >= x1_lo) & (grid.x1 <= x1_hi) & (grid.x2 >= x2_lo) & (grid.x2 <= x2_hi)
    indices = np.flatnonzero(indicator)
    return SubdomainMask(
        indicator=indicator,
        indices=indices,
        count=int(indices.size),
        n_total=grid.n_interior,
    )


def nodal_project(field: np.ndarray, a: float, b: float) -> np.ndarray:
    """Nodewise clamp onto [a, b]; idempotent."""
    if a > b:
        raise ValueError(f"projection bounds out of order: a={a} > b={b}")
    return np.clip(field, a, b)


def _as_levels(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return f[None, :]
    if f.ndim == 2:
        return f
    raise ValueError(f"field must be 1- or 2-dimensional, got shape {f.shape}")


def discrete_inner(fa: np.ndarray, fb: np.ndarray, m_sub: sp.spmatrix, tau: float) -> float:
    """Discrete space-time inner product tau * sum_n fa(t_n)^T M_sub fb(t_n).

    Fields are (levels, nodes) arrays over t_1..t_N (a single level may be
    passed as a flat vector); M_sub is the mass matrix restricted to the
    field's node set.
    """
    fa = _as_levels(fa)
    fb = _as_levels(fb)
    if fa.shape != fb.shape:
        raise ValueError(f"field shapes differ: {fa.shape} vs {fb.shape}")
    if fa.shape[1] != m_sub.shape[0]:
        raise ValueError(f"field has {fa.shape[1]} nodes, mass matrix is {m_sub.shape[0]}")
    return float(tau) * float(np.sum(fa * (m_sub @ fb.T).T))


def discrete_norm(f: np.ndarray, m_sub: sp.spmatrix, tau: float) -> float:
    """Norm induced by discrete_inner."""
    return float(np.sqrt(max(discrete_inner(f, f, m_sub, tau), 0.0)))
