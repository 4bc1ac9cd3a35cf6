"""Run records, quality metrics, and delimited output.

Everything here is passive bookkeeping: the solver appends per-iteration
rows, and the report functions turn finished runs into scalars, convergence
slopes, and CSV text with a fixed column set.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mesh_fem import discrete_norm

CSV_HEADER = "mesh,algorithm,outer_iters,mean_cg,max_cg,reldis,obj,err_u,err_y,converged"


@dataclass
class IterateHistory:
    """Per-outer-iteration log of one run."""

    k: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    e_prev: list = field(default_factory=list)
    e_new: list = field(default_factory=list)
    pi_s: list = field(default_factory=list)
    d_s: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    hdiff_sq: list = field(default_factory=list)

    def append(self, k, inner_iters, e_prev, e_new, pi_s, d_s, obj, hdiff_sq):
        self.k.append(int(k))
        self.inner_iters.append(int(inner_iters))
        self.e_prev.append(float(e_prev))
        self.e_new.append(float(e_new))
        self.pi_s.append(float(pi_s))
        self.d_s.append(float(d_s))
        self.obj.append(float(obj))
        self.hdiff_sq.append(float(hdiff_sq))

    def __len__(self):
        return len(self.k)


@dataclass
class RunReport:
    """Summary of one solver run, one CSV row."""

    mesh_i: int
    algorithm: str
    outer_iters: int
    mean_cg: float
    max_cg: int
    reldis: float
    obj: float
    err_u: Optional[float] = None
    err_y: Optional[float] = None
    converged: bool = True
    history: Optional[IterateHistory] = None
    wall_time_s: Optional[float] = None


def reldis_obj(y, y_d, u, alpha, m_full, m_omega, tau):
    """Relative squared misfit and the unscaled objective value.

    The misfit is measured against the target norm, which must be nonzero.
    """
    y = np.asarray(y, dtype=float)
    y_d = np.asarray(y_d, dtype=float)
    u = np.asarray(u, dtype=float)
    target_norm = discrete_norm(y_d, m_full, tau)
    if target_norm == 0.0:
        raise ValueError("target state has zero norm; relative misfit undefined")
    misfit = discrete_norm(y - y_d, m_full, tau)
    u_norm = discrete_norm(u, m_omega, tau)
    reldis = (misfit / target_norm) ** 2
    obj = 0.5 * misfit**2 + 0.5 * alpha * u_norm**2
    return reldis, obj


def l2_errors(u, y, data, fem):
    """Weighted space-time distances to the reference control and state.

    Returns (err_u, err_y); a component is None when the problem carries no
    reference for it.
    """
    mask = data.mask
    m_omega = fem.M if mask.full else fem.M[mask.indices][:, mask.indices].tocsr()
    err_u = None
    err_y = None
    if data.u_star_nodal is not None:
        err_u = discrete_norm(np.asarray(u) - data.u_star_nodal, m_omega, data.tau)
    if data.y_star_nodal is not None:
        err_y = discrete_norm(np.asarray(y) - data.y_star_nodal, fem.M, data.tau)
    return err_u, err_y


def convergence_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope p of err ~ C h^p."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.size < 2:
        raise ValueError("need at least two matching (h, error) pairs")
    if np.any(hs <= 0) or np.any(errors <= 0):
        raise ValueError("mesh sizes and errors must be positive")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


@dataclass
class RateDiagnostics:
    """Evidence for the O(1/K) decay of the smallest squared iterate step."""

    num_iters: int
    min_step_sq: float
    scaled: np.ndarray
    bound_constant: float
    bounded: bool
    faster_than_bound: bool


def rate_diagnostics(hdiff_sq) -> RateDiagnostics:
    """Check that K times the running minimum squared step stays bounded.

    hdiff_sq holds the squared weighted distance between consecutive (z,
    multiplier) pairs, one entry per outer iteration.
    """
    if isinstance(hdiff_sq, IterateHistory):
        hdiff_sq = hdiff_sq.hdiff_sq
    steps = np.asarray(hdiff_sq, dtype=float)
    if steps.size == 0:
        raise ValueError("empty iteration history")
    running_min = np.minimum.accumulate(steps)
    scaled = running_min * np.arange(1, steps.size + 1)
    peak = float(np.max(scaled))
    if peak == 0.0:
        bounded = True
        faster = True
    else:
        bounded = int(np.argmax(scaled)) < steps.size - 1
        faster = scaled[-1] <= 0.01 * peak
    return RateDiagnostics(
        num_iters=int(steps.size),
        min_step_sq=float(running_min[-1]),
        scaled=scaled,
        bound_constant=peak,
        bounded=bounded,
        faster_than_bound=bool(faster),
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    return "%.6g" % value


def emit_csv(reports, path=None) -> str:
    """Render reports as CSV with a fixed header; optionally write to path."""
    if isinstance(reports, RunReport):
        reports = [reports]
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in reports:
        row = [
            str(r.mesh_i),
            r.algorithm,
            str(r.outer_iters),
            _fmt(r.mean_cg),
            str(r.max_cg),
            _fmt(r.reldis),
            _fmt(r.obj),
            _fmt(r.err_u),
            _fmt(r.err_y),
            "true" if r.converged else "false",
        ]
        buf.write(",".join(row) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


ITERATIONS_HEADER = "k,inner_iters,e_prev,e_new,pi_s,d_s,obj"


def emit_iterations_csv(history: IterateHistory, path=None) -> str:
    """Render the per-iteration log as CSV; optionally write to path."""
    buf = io.StringIO()
    buf.write(ITERATIONS_HEADER + "\n")
    for j in range(len(history)):
        row = [
            str(history.k[j]),
            str(history.inner_iters[j]),
            "%.10g" % history.e_prev[j],
            "%.10g" % history.e_new[j],
            "%.10g" % history.pi_s[j],
            "%.10g" % history.d_s[j],
            "%.10g" % history.obj[j],
        ]
        buf.write(",".join(row) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
