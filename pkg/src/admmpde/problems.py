"""Built-in control problems and their discretization into solver inputs.

Four benchmark problems are provided: two heat-type problems (one with a
known optimal pair built by the method of manufactured solutions, one target
tracking problem with an unreachable target), one wave problem with a known
optimal pair, and one stationary problem whose reference control is exact on
every mesh because its target absorbs the discrete solve.

All field callables are module-level functions of (x1, x2, t) so problem
specs can cross process boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh_fem import GridSpec, assemble_p1, build_grid, subdomain_mask
from .pde_solvers import (
    elliptic_solve,
    make_elliptic_operator,
    make_parabolic_operator,
    make_wave_operator,
)

PI = np.pi

EX1_ALPHA = 1e-5
EX3_ALPHA = 1e-4
EX4_ALPHA = 1e-4


def _sin1(x1, x2):
    return np.sin(PI * x1) * np.sin(PI * x2)


def _sin2(x1, x2):
    return np.sin(2 * PI * x1) * np.sin(2 * PI * x2)


# -- heat-type problem with known optimal pair --------------------------------


def ex1_y_star(x1, x2, t=0.0):
    return (1.0 - t) * _sin1(x1, x2)


def ex1_p_star(x1, x2, t=0.0):
    return EX1_ALPHA * (1.0 - t) * _sin2(x1, x2)


def ex1_u_star(x1, x2, t=0.0):
    return np.clip(-(1.0 - t) * _sin2(x1, x2), -0.5, 0.5)


def ex1_f(x1, x2, t=0.0):
    return -ex1_u_star(x1, x2, t) + (2.0 * PI * PI * (1.0 - t) - 1.0) * _sin1(x1, x2)


def ex1_y_d(x1, x2, t=0.0):
    return ex1_y_star(x1, x2, t) - EX1_ALPHA * (1.0 + 8.0 * PI * PI * (1.0 - t)) * _sin2(x1, x2)


def ex1_phi(x1, x2, t=0.0):
    return _sin1(x1, x2)


# -- heat-type tracking problem with localized control ------------------------


def ex2_y_d(x1, x2, t=0.0):
    # frequency 4pi: the target oscillates through two full periods per axis,
    # which keeps it only partially reachable from the corner control patch
    return np.exp(t) * np.sin(4.0 * PI * x1) * np.sin(4.0 * PI * x2)


# -- wave problem with known optimal pair -------------------------------------


def ex3_chi(x1, x2):
    return ((x1 <= 0.5) & (x2 <= 0.5)).astype(float)


def ex3_y_star(x1, x2, t=0.0):
    return np.exp(t) * _sin1(x1, x2)


def ex3_p_star(x1, x2, t=0.0):
    return np.sqrt(EX3_ALPHA) * (t - 1.0) ** 2 * _sin1(x1, x2)


def ex3_u_star(x1, x2, t=0.0):
    return np.clip(-((t - 1.0) ** 2) * _sin1(x1, x2) / np.sqrt(EX3_ALPHA), -5.0, 0.0)


def ex3_f(x1, x2, t=0.0):
    return (1.0 + 2.0 * PI * PI) * np.exp(t) * _sin1(x1, x2) - ex3_u_star(x1, x2, t) * ex3_chi(
        x1, x2
    )


def ex3_y_d(x1, x2, t=0.0):
    return ex3_y_star(x1, x2, t) - np.sqrt(EX3_ALPHA) * (
        2.0 + 2.0 * PI * PI * (t - 1.0) ** 2
    ) * _sin1(x1, x2)


def ex3_y0(x1, x2, t=0.0):
    return _sin1(x1, x2)


def ex3_y1(x1, x2, t=0.0):
    return _sin1(x1, x2)


# -- stationary problem -------------------------------------------------------


def ex4_u_star(x1, x2, t=0.0):
    return np.clip(2.0 * _sin1(x1, x2), 0.3, 1.0)


def ex4_p_star(x1, x2, t=0.0):
    return -2.0 * EX4_ALPHA * _sin1(x1, x2)


def ex4_yd_builder(grid, op):
    """Target that makes the clamped sine the exact discrete optimizer.

    The target is the discrete state response to the reference control plus
    the analytic adjoint correction, so the reference stays optimal on every
    mesh and the measured control error reflects the splitting alone.
    """
    r = ex4_u_star(grid.x1, grid.x2)
    y_r = elliptic_solve(op, r)
    return (4.0 * PI * PI * EX4_ALPHA * _sin1(grid.x1, grid.x2) + y_r)[np.newaxis, :]


@dataclass(frozen=True)
class ProblemSpec:
    """Static description of one control problem, independent of any mesh."""

    name: str
    kind: str
    T: float
    alpha: float
    lower: float
    upper: float
    omega_rect: tuple
    nu: float = 1.0
    a0: float = 0.0
    f: Optional[Callable] = None
    y_d: Optional[Callable] = None
    yd_builder: Optional[Callable] = None
    phi: Optional[Callable] = None
    y0: Optional[Callable] = None
    y1: Optional[Callable] = None
    u_star: Optional[Callable] = None
    y_star: Optional[Callable] = None
    p_star: Optional[Callable] = None
    default_beta: float = 3.0
    default_tol: float = 1e-4
    u_init_value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("parabolic", "wave", "elliptic"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.lower > self.upper:
            raise ValueError("empty control box")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.y_d is None and self.yd_builder is None:
            raise ValueError("a problem needs a target, either closed form or built")


_EXAMPLES = {}


def _register(spec: ProblemSpec):
    _EXAMPLES[spec.name] = spec
    return spec


_register(
    ProblemSpec(
        name="example1",
        kind="parabolic",
        T=1.0,
        alpha=EX1_ALPHA,
        lower=-0.5,
        upper=0.5,
        omega_rect=(0.0, 1.0, 0.0, 1.0),
        nu=1.0,
        a0=0.0,
        f=ex1_f,
        y_d=ex1_y_d,
        phi=ex1_phi,
        u_star=ex1_u_star,
        y_star=ex1_y_star,
        p_star=ex1_p_star,
        default_beta=3.0,
        default_tol=1e-4,
    )
)

_register(
    ProblemSpec(
        name="example2",
        kind="parabolic",
        T=1.0,
        alpha=1e-6,
        lower=-300.0,
        upper=300.0,
        omega_rect=(0.0, 0.25, 0.0, 0.25),
        nu=1.0,
        a0=1.0,
        y_d=ex2_y_d,
        default_beta=3.0,
        default_tol=1e-3,
    )
)

_register(
    ProblemSpec(
        name="example3",
        kind="wave",
        T=1.0,
        alpha=EX3_ALPHA,
        lower=-5.0,
        upper=0.0,
        omega_rect=(0.0, 0.5, 0.0, 0.5),
        f=ex3_f,
        y_d=ex3_y_d,
        y0=ex3_y0,
        y1=ex3_y1,
        u_star=ex3_u_star,
        y_star=ex3_y_star,
        p_star=ex3_p_star,
        default_beta=5.0,
        default_tol=1e-5,
    )
)

_register(
    ProblemSpec(
        name="example4",
        kind="elliptic",
        T=1.0,
        alpha=EX4_ALPHA,
        lower=0.3,
        upper=1.0,
        omega_rect=(0.0, 1.0, 0.0, 1.0),
        yd_builder=ex4_yd_builder,
        u_star=ex4_u_star,
        p_star=ex4_p_star,
        default_beta=2.0,
        default_tol=1e-7,
        u_init_value=0.5,
    )
)

_ALIASES = {"1": "example1", "2": "example2", "3": "example3", "4": "example4"}


def make_example(name) -> ProblemSpec:
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in _EXAMPLES:
        known = ", ".join(sorted(_EXAMPLES))
        raise ValueError(f"unknown example {name!r}; known: {known}")
    return _EXAMPLES[key]


@dataclass
class ProblemData:
    """Nodal data for one problem on one mesh, ready for the solver."""

    spec: ProblemSpec
    grid: GridSpec
    tau: float
    num_levels: int
    mask: object
    f: Optional[np.ndarray]
    y_d: np.ndarray
    phi: Optional[np.ndarray]
    y0: Optional[np.ndarray]
    y1: Optional[np.ndarray]
    u_init: np.ndarray
    z_init: np.ndarray
    lam_init: np.ndarray
    u_star_nodal: Optional[np.ndarray]
    y_star_nodal: Optional[np.ndarray]
    alpha: float
    lower: float
    upper: float


def eval_fields(spec: ProblemSpec, grid: GridSpec, tau: float, elliptic_op=None) -> ProblemData:
    """Evaluate all problem fields on one space-time grid.

    Control-shaped arrays live on the control region nodes at levels 1..N;
    sources live on interior nodes at levels 0..N.
    """
    if spec.kind == "elliptic":
        tau = 1.0
        num_levels = 1
        if elliptic_op is None and spec.yd_builder is not None:
            raise ValueError("stationary target construction needs the operator")
    else:
        num_levels = int(round(spec.T / tau))
        if num_levels < 1 or abs(num_levels * tau - spec.T) > 1e-9 * max(spec.T, 1.0):
            raise ValueError(f"tau={tau} does not divide the horizon T={spec.T}")
    mask = subdomain_mask(grid, spec.omega_rect)
    x1, x2 = grid.x1, grid.x2
    xo1, xo2 = mask.restrict(x1), mask.restrict(x2)
    levels = tau * np.arange(1, num_levels + 1)

    f = None
    if spec.f is not None:
        f = np.stack([spec.f(x1, x2, tau * n) for n in range(num_levels + 1)])
    if spec.yd_builder is not None:
        y_d = spec.yd_builder(grid, elliptic_op)
    else:
        y_d = np.stack([spec.y_d(x1, x2, t) for t in levels])

    phi = y0 = y1 = None
    if spec.kind == "parabolic":
        phi = spec.phi(x1, x2, 0.0) if spec.phi is not None else np.zeros(grid.n_interior)
    elif spec.kind == "wave":
        y0 = spec.y0(x1, x2, 0.0) if spec.y0 is not None else np.zeros(grid.n_interior)
        y1 = spec.y1(x1, x2, 0.0) if spec.y1 is not None else np.zeros(grid.n_interior)

    shape_ctrl = (num_levels, mask.count)
    u_init = np.full(shape_ctrl, float(spec.u_init_value))
    u_star_nodal = None
    if spec.u_star is not None:
        u_star_nodal = np.stack([spec.u_star(xo1, xo2, t) for t in levels])
    y_star_nodal = None
    if spec.y_star is not None:
        y_star_nodal = np.stack([spec.y_star(x1, x2, t) for t in levels])

    return ProblemData(
        spec=spec,
        grid=grid,
        tau=tau,
        num_levels=num_levels,
        mask=mask,
        f=f,
        y_d=y_d,
        phi=phi,
        y0=y0,
        y1=y1,
        u_init=u_init,
        z_init=np.zeros(shape_ctrl),
        lam_init=np.zeros(shape_ctrl),
        u_star_nodal=u_star_nodal,
        y_star_nodal=y_star_nodal,
        alpha=spec.alpha,
        lower=spec.lower,
        upper=spec.upper,
    )


@dataclass
class Discretization:
    """A problem, its mesh and matrices, its stepping operator, and its data."""

    spec: ProblemSpec
    grid: GridSpec
    fem: object
    mask: object
    op: object
    data: ProblemData


def discretize(spec: ProblemSpec, i: int, tau: Optional[float] = None) -> Discretization:
    """Set up everything needed to solve a problem at mesh level i.

    The time step defaults to the mesh width so space and time refine
    together.
    """
    grid = build_grid(i)
    fem = assemble_p1(grid)
    if spec.kind == "elliptic":
        mask = subdomain_mask(grid, spec.omega_rect)
        op = make_elliptic_operator(grid, fem, mask)
        data = eval_fields(spec, grid, 1.0, elliptic_op=op)
    else:
        if tau is None:
            tau = grid.h
        data = eval_fields(spec, grid, tau)
        if spec.kind == "parabolic":
            op = make_parabolic_operator(
                grid,
                fem,
                data.mask,
                nu=spec.nu,
                a0=spec.a0,
                tau=tau,
                num_levels=data.num_levels,
                phi=data.phi,
            )
        else:
            op = make_wave_operator(
                grid,
                fem,
                data.mask,
                tau=tau,
                num_levels=data.num_levels,
                y0=data.y0,
                y1=data.y1,
            )
        mask = data.mask
    return Discretization(spec=spec, grid=grid, fem=fem, mask=mask, op=op, data=data)
