"""Operator splitting for box-constrained control problems.

The control variable is split into an unconstrained copy u and a projected
copy z tied together by a multiplier.  Each outer iteration solves the
u-subproblem inexactly with conjugate gradients on the reduced optimality
system, projects to get z, and takes an explicit multiplier step.  The inner
tolerance either contracts the subproblem residual by a beta-dependent factor
(adaptive mode) or enforces a fixed absolute threshold (fixed mode).

All norms and inner products on control-shaped and state-shaped fields are
weighted by the finite element mass matrices and the time step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics_report, pde_solvers
from .mesh_fem import discrete_inner, discrete_norm, nodal_project
from .sparse_linalg import NotSpdError

EPS_DEN = 1e-12


class InnerStagnationError(Exception):
    """The inner solver hit its iteration cap before reaching its target."""

    def __init__(self, message, ratio):
        super().__init__(message)
        self.ratio = ratio


def sigma_from_beta(beta: float, sigma_factor: float = 0.99) -> float:
    """Contraction factor for the adaptive inner tolerance.

    sqrt(2) / (sqrt(2) + sqrt(beta)) scaled by a safety factor; strictly
    below one for every positive beta, which is what makes the inexact outer
    loop contract.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not 0 < sigma_factor <= 1:
        raise ValueError("sigma_factor must lie in (0, 1]")
    root2 = np.sqrt(2.0)
    return sigma_factor * root2 / (root2 + np.sqrt(beta))


@dataclass
class AdmmConfig:
    beta: float
    alpha: float
    tol: float
    sigma_factor: float = 0.99
    max_outer: int = 500
    max_inner: int = 500
    inner_mode: str = "adaptive"
    inner_eps: Optional[float] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.sigma_factor <= 1:
            raise ValueError("sigma_factor must lie in (0, 1]")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be positive")
        if self.inner_mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown inner_mode {self.inner_mode!r}")
        if self.inner_mode == "fixed":
            if self.inner_eps is None or self.inner_eps <= 0:
                raise ValueError("fixed inner_mode needs a positive inner_eps")

    @property
    def gamma(self) -> float:
        return 1.0 / self.alpha


def algorithm_label(cfg: AdmmConfig) -> str:
    if cfg.inner_mode == "adaptive":
        return "adaptive"
    return f"fixed({cfg.inner_eps:.0e})"


@dataclass
class AdmmState:
    """Current iterates plus the incrementally maintained adjoint quantities.

    p is the scaled adjoint restricted to the control region for the current
    u, and ylin is the homogeneous state response to u; both are updated
    inside the inner solver so no extra sweeps are needed to evaluate the
    subproblem residual at the start of an outer iteration.
    """

    u: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    p: np.ndarray
    ylin: np.ndarray
    offset: np.ndarray
    y_d: np.ndarray
    k: int = 0


def residual_e(state: AdmmState, cfg: AdmmConfig) -> np.ndarray:
    """Reduced optimality residual of the u-subproblem at the current u."""
    return (1.0 + cfg.beta) * state.u + state.p - cfg.beta * state.z - state.lam


def init_state(data, op, cfg: AdmmConfig) -> AdmmState:
    """Set up iterates and pay the one-off sweeps for the data terms.

    The affine state response is computed once; the homogeneous response is
    computed only when the initial control is nonzero.
    """
    u = np.array(data.u_init, dtype=float, copy=True)
    offset = pde_solvers.affine_offset(
        op, f=data.f, phi=data.phi, y0=data.y0, y1=data.y1
    )
    if np.any(u):
        ylin = pde_solvers.apply_linear(op, u)
    else:
        ylin = np.zeros_like(offset)
    p = cfg.gamma * pde_solvers.apply_adjoint(op, ylin + offset - data.y_d)
    return AdmmState(
        u=u,
        z=np.array(data.z_init, dtype=float, copy=True),
        lam=np.array(data.lam_init, dtype=float, copy=True),
        p=p,
        ylin=ylin,
        offset=offset,
        y_d=np.asarray(data.y_d, dtype=float),
    )


def solve_u_subproblem_cg(state: AdmmState, op, cfg: AdmmConfig):
    """Inexact conjugate gradient step on the reduced optimality system.

    Mutates u together with its adjoint and state responses, so each
    iteration costs exactly one homogeneous forward sweep and one adjoint
    sweep.  Returns (inner_iters, entry_residual, exit_residual) in the
    weighted norm; the exit value is the number the adaptive test compared
    against its target.
    """
    m_omega, tau = op.m_omega, op.tau
    g = residual_e(state, cfg)
    gs = discrete_inner(g, g, m_omega, tau)
    e_prev = np.sqrt(max(gs, 0.0))
    if cfg.inner_mode == "adaptive":
        target = sigma_from_beta(cfg.beta, cfg.sigma_factor) * e_prev
    else:
        target = cfg.inner_eps
    e_cur = e_prev
    if e_cur <= target:
        return 0, e_prev, e_cur
    w = g.copy()
    iters = 0
    while e_cur > target:
        if iters >= cfg.max_inner:
            raise InnerStagnationError(
                f"inner solver stalled at residual ratio {e_cur / e_prev:.3e} "
                f"after {iters} iterations",
                ratio=e_cur / e_prev,
            )
        ybar = pde_solvers.apply_linear(op, w)
        pbar = cfg.gamma * pde_solvers.apply_adjoint(op, ybar)
        gbar = (1.0 + cfg.beta) * w + pbar
        curvature = discrete_inner(gbar, w, m_omega, tau)
        if curvature <= 0.0:
            raise NotSpdError("operator not SPD: nonpositive curvature in inner solver")
        rho = discrete_inner(g, w, m_omega, tau) / curvature
        state.u -= rho * w
        state.p -= rho * pbar
        state.ylin -= rho * ybar
        g = g - rho * gbar
        gs_new = discrete_inner(g, g, m_omega, tau)
        e_cur = np.sqrt(max(gs_new, 0.0))
        iters += 1
        if e_cur <= target:
            break
        w = g + (gs_new / gs) * w
        gs = gs_new
    return iters, e_prev, e_cur


def update_z(u, lam, beta, lower, upper) -> np.ndarray:
    """Projected copy of the control: clamp u - lam/beta to the box."""
    return nodal_project(u - lam / beta, lower, upper)


def update_lambda(lam, u, z, beta) -> np.ndarray:
    return lam - beta * (u - z)


def primal_dual_residuals(z_new, z_prev, u_new, u_prev_norm, z_prev_norm, m_omega, tau):
    """Relative change of z and relative split mismatch, denominators floored."""
    pi_s = discrete_norm(z_new - z_prev, m_omega, tau) / max(z_prev_norm, EPS_DEN)
    d_s = discrete_norm(u_new - z_new, m_omega, tau) / max(u_prev_norm, z_prev_norm, EPS_DEN)
    return pi_s, d_s


def _full_forward(op, u, data) -> np.ndarray:
    if op.kind == "parabolic":
        return pde_solvers.parabolic_forward(op, u=u, f=data.f, phi=data.phi)
    if op.kind == "wave":
        return pde_solvers.wave_forward(op, u=u, f=data.f, y0=data.y0, y1=data.y1)
    return pde_solvers.apply_linear(op, u)


def admm_solve(data, op, cfg: AdmmConfig, algorithm: Optional[str] = None):
    """Run the splitting loop to tolerance or the outer iteration cap.

    Returns (u, y, z, lam, report); the fields wrap the final iterates, and
    the report carries summary metrics plus the per-iteration history.  The
    reported state comes from one fresh forward sweep with the final control
    rather than from the incrementally maintained response.
    """
    t0 = time.perf_counter()
    state = init_state(data, op, cfg)
    hist = metrics_report.IterateHistory()
    m_omega, tau, m_full = op.m_omega, op.tau, op.fem.M
    converged = False
    for k in range(1, cfg.max_outer + 1):
        u_prev_norm = discrete_norm(state.u, m_omega, tau)
        z_prev_norm = discrete_norm(state.z, m_omega, tau)
        z_prev = state.z
        inner, e_entry, e_exit = solve_u_subproblem_cg(state, op, cfg)
        state.z = update_z(state.u, state.lam, cfg.beta, data.lower, data.upper)
        state.lam = update_lambda(state.lam, state.u, state.z, cfg.beta)
        state.k = k
        pi_s, d_s = primal_dual_residuals(
            state.z, z_prev, state.u, u_prev_norm, z_prev_norm, m_omega, tau
        )
        _, obj_k = metrics_report.reldis_obj(
            state.ylin + state.offset, state.y_d, state.u, cfg.alpha, m_full, m_omega, tau
        )
        # Squared weighted step of the (z, multiplier) pair; the multiplier
        # part equals beta times the squared split mismatch.
        dz = state.z - z_prev
        uz = state.u - state.z
        hdiff_sq = cfg.beta * (
            discrete_inner(dz, dz, m_omega, tau) + discrete_inner(uz, uz, m_omega, tau)
        )
        hist.append(k, inner, e_entry, e_exit, pi_s, d_s, obj_k, hdiff_sq)
        if max(pi_s, d_s) <= cfg.tol:
            converged = True
            break
    y = _full_forward(op, state.u, data)
    reldis, obj = metrics_report.reldis_obj(
        y, state.y_d, state.u, cfg.alpha, m_full, m_omega, tau
    )
    err_u, err_y = metrics_report.l2_errors(state.u, y, data, op.fem)
    total_inner = sum(hist.inner_iters)
    report = metrics_report.RunReport(
        mesh_i=op.grid.i,
        algorithm=algorithm if algorithm is not None else algorithm_label(cfg),
        outer_iters=state.k,
        mean_cg=total_inner / state.k,
        max_cg=max(hist.inner_iters),
        reldis=reldis,
        obj=obj,
        err_u=err_u,
        err_y=err_y,
        converged=converged,
        history=hist,
        wall_time_s=time.perf_counter() - t0,
    )
    u_field = pde_solvers.SpaceTimeField(state.u, "omega")
    y_field = pde_solvers.SpaceTimeField(y, "interior")
    z_field = pde_solvers.SpaceTimeField(state.z, "omega")
    lam_field = pde_solvers.SpaceTimeField(state.lam, "omega")
    return u_field, y_field, z_field, lam_field, report
