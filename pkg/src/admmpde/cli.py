"""Command line interface: run one configured solve, regenerate the study
tables, or run the independent correctness oracles.

Config files are flat ``section.key = value`` lines with ``#`` comments.
Unknown keys are rejected so typos fail loudly.  Custom problems are defined
by expression strings over x1, x2, t built from +, -, *, /, unary sign,
sin, cos, exp, pi, and numbers.
"""

from __future__ import annotations

import argparse
import ast
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import figures, metrics_report, pde_solvers, problems, sparse_linalg
from .admm_core import AdmmConfig, admm_solve, init_state, sigma_from_beta, solve_u_subproblem_cg
from .mesh_fem import assemble_p1, build_grid, subdomain_mask


@dataclasses.dataclass
class RunConfig:
    """Raw key-value content of a config file, before case assembly."""

    problem_name: str = ""
    problem_kind: Optional[str] = None
    t_final: Optional[float] = None
    alpha: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    nu: Optional[float] = None
    a0: Optional[float] = None
    omega: Optional[str] = None
    f_expr: Optional[str] = None
    yd_expr: Optional[str] = None
    phi_expr: Optional[str] = None
    y0_expr: Optional[str] = None
    y1_expr: Optional[str] = None
    mesh_i: int = 5
    tau: Optional[float] = None
    beta: Optional[float] = None
    tol: Optional[float] = None
    sigma_factor: float = 0.99
    max_outer: int = 500
    max_inner: int = 500
    mode: str = "adaptive"
    inner_eps: Optional[float] = None
    label: Optional[str] = None


# dotted key -> (RunConfig attribute, value kind)
_KEYS = {
    "problem.name": ("problem_name", "str"),
    "problem.kind": ("problem_kind", "str"),
    "problem.t_final": ("t_final", "float"),
    "problem.alpha": ("alpha", "float"),
    "problem.lower": ("lower", "float"),
    "problem.upper": ("upper", "float"),
    "problem.nu": ("nu", "float"),
    "problem.a0": ("a0", "float"),
    "problem.omega": ("omega", "str"),
    "problem.f": ("f_expr", "str"),
    "problem.y_d": ("yd_expr", "str"),
    "problem.phi": ("phi_expr", "str"),
    "problem.y0": ("y0_expr", "str"),
    "problem.y1": ("y1_expr", "str"),
    "mesh.i": ("mesh_i", "int"),
    "mesh.tau": ("tau", "float"),
    "admm.beta": ("beta", "float"),
    "admm.tol": ("tol", "float"),
    "admm.sigma_factor": ("sigma_factor", "float"),
    "admm.max_outer": ("max_outer", "int"),
    "admm.max_inner": ("max_inner", "int"),
    "admm.mode": ("mode", "str"),
    "admm.inner_eps": ("inner_eps", "float"),
    "output.label": ("label", "str"),
}


def _convert(key: str, val: str, lineno: int):
    kind = _KEYS[key][1]
    try:
        if kind == "float":
            return float(val)
        if kind == "int":
            return int(val)
    except ValueError as exc:
        raise ValueError(f"line {lineno}: bad {kind} value for {key}: {val!r}") from exc
    return val


def parse_config_text(text: str) -> RunConfig:
    """Parse config text; unknown and duplicate keys raise ValueError."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _convert(key, val, lineno)
    cfg = RunConfig()
    for key, v in values.items():
        setattr(cfg, _KEYS[key][0], v)
    if not cfg.problem_name:
        raise ValueError("config must set problem.name")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Inverse of parse_config_text for every key that has a value."""
    lines = []
    for key, (attr, kind) in _KEYS.items():
        v = getattr(cfg, attr)
        if v is None:
            continue
        if kind == "float":
            sval = repr(float(v))
        elif kind == "int":
            sval = str(int(v))
        else:
            sval = str(v)
        lines.append(f"{key} = {sval}")
    return "\n".join(lines) + "\n"


_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_ALLOWED_NAMES = {"x1", "x2", "t", "pi"}


def _validate_expr(node):
    if isinstance(node, ast.Expression):
        _validate_expr(node.body)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
        _validate_expr(node.left)
        _validate_expr(node.right)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        _validate_expr(node.operand)
    elif isinstance(node, ast.Call):
        if (
            not isinstance(node.func, ast.Name)
            or node.func.id not in _ALLOWED_FUNCS
            or node.keywords
            or len(node.args) != 1
        ):
            raise ValueError("only sin(.), cos(.), exp(.) calls are allowed")
        _validate_expr(node.args[0])
    elif isinstance(node, ast.Name):
        if node.id not in _ALLOWED_NAMES:
            raise ValueError(f"unknown name {node.id!r} in expression")
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric constant {node.value!r} in expression")
    else:
        raise ValueError(f"disallowed expression element: {type(node).__name__}")


def compile_expression(text: str):
    """Compile a field expression over x1, x2, t into a vectorized callable."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc
    _validate_expr(tree)
    code = compile(tree, "<field expression>", "eval")

    def fn(x1, x2, t=0.0):
        out = eval(  # noqa: S307 - ast-validated arithmetic only
            code,
            {"__builtins__": {}},
            {"x1": x1, "x2": x2, "t": t, "pi": np.pi, **_ALLOWED_FUNCS},
        )
        out = np.asarray(out, dtype=float)
        if out.shape != np.shape(x1):
            out = np.broadcast_to(out, np.shape(x1)).copy()
        return out

    fn.source = text
    return fn


def _parse_omega(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError("problem.omega must be 'x1_lo,x1_hi,x2_lo,x2_hi'")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ValueError(f"bad problem.omega value {text!r}") from exc


def _custom_spec(cfg: RunConfig) -> problems.ProblemSpec:
    if cfg.problem_kind is None:
        raise ValueError("custom problems must set problem.kind")
    for field_name in ("alpha", "lower", "upper"):
        if getattr(cfg, field_name) is None:
            raise ValueError(f"custom problems must set problem.{field_name}")
    if cfg.yd_expr is None:
        raise ValueError("custom problems must set problem.y_d")
    omega = _parse_omega(cfg.omega) if cfg.omega is not None else (0.0, 1.0, 0.0, 1.0)
    return problems.ProblemSpec(
        name="custom",
        kind=cfg.problem_kind,
        T=cfg.t_final if cfg.t_final is not None else 1.0,
        alpha=cfg.alpha,
        lower=cfg.lower,
        upper=cfg.upper,
        omega_rect=omega,
        nu=cfg.nu if cfg.nu is not None else 1.0,
        a0=cfg.a0 if cfg.a0 is not None else 0.0,
        f=compile_expression(cfg.f_expr) if cfg.f_expr else None,
        y_d=compile_expression(cfg.yd_expr),
        phi=compile_expression(cfg.phi_expr) if cfg.phi_expr else None,
        y0=compile_expression(cfg.y0_expr) if cfg.y0_expr else None,
        y1=compile_expression(cfg.y1_expr) if cfg.y1_expr else None,
    )


def build_case(cfg: RunConfig):
    """Turn a parsed config into (spec, discretization, solver config)."""
    if cfg.problem_name == "custom":
        spec = _custom_spec(cfg)
    else:
        spec = problems.make_example(cfg.problem_name)
        overrides = {}
        for attr, spec_field in (
            ("alpha", "alpha"),
            ("lower", "lower"),
            ("upper", "upper"),
            ("nu", "nu"),
            ("a0", "a0"),
            ("t_final", "T"),
        ):
            v = getattr(cfg, attr)
            if v is not None:
                overrides[spec_field] = v
        if cfg.omega is not None:
            overrides["omega_rect"] = _parse_omega(cfg.omega)
        if overrides:
            spec = dataclasses.replace(spec, **overrides)
    disc = problems.discretize(spec, cfg.mesh_i, tau=cfg.tau)
    admm_cfg = AdmmConfig(
        beta=cfg.beta if cfg.beta is not None else spec.default_beta,
        alpha=spec.alpha,
        tol=cfg.tol if cfg.tol is not None else spec.default_tol,
        sigma_factor=cfg.sigma_factor,
        max_outer=cfg.max_outer,
        max_inner=cfg.max_inner,
        inner_mode=cfg.mode,
        inner_eps=cfg.inner_eps,
    )
    return spec, disc, admm_cfg


def _write_level_table(path, x1, x2, vals):
    with open(path, "w") as fh:
        fh.write("x1 x2 value\n")
        for a, b, v in zip(x1, x2, vals):
            fh.write("%.9g %.9g %.9g\n" % (a, b, v))


def write_snapshots(disc, u_rows, y_rows, out_dir, stride=1):
    """One text table per exported time level for the control and the state."""
    out_dir = Path(out_dir)
    xo1, xo2 = disc.mask.restrict(disc.grid.x1), disc.mask.restrict(disc.grid.x2)
    for level in range(1, disc.data.num_levels + 1, stride):
        _write_level_table(out_dir / f"u_t{level:03d}.txt", xo1, xo2, u_rows[level - 1])
        _write_level_table(
            out_dir / f"y_t{level:03d}.txt", disc.grid.x1, disc.grid.x2, y_rows[level - 1]
        )


def run_case_to_dir(cfg: RunConfig, out_dir, snapshots=None):
    """Solve one configured case and write reports, figures, and snapshots."""
    spec, disc, admm_cfg = build_case(cfg)
    u, y, _, _, report = admm_solve(disc.data, disc.op, admm_cfg, algorithm=cfg.label)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_report.emit_csv(report, out / "report.csv")
    metrics_report.emit_iterations_csv(report.history, out / "iterations.csv")
    figures.history_figure(report, out / "history.png")
    mid = (disc.data.num_levels - 1) // 2
    figures.field_figure(
        disc.grid,
        disc.mask.prolong(u.values[mid]),
        f"control, level {mid + 1}",
        out / "control.png",
    )
    figures.field_figure(disc.grid, y.values[mid], f"state, level {mid + 1}", out / "state.png")
    if snapshots:
        write_snapshots(disc, u.values, y.values, out, stride=snapshots)
    return report


_FIXED_EPS = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
_BETA_SWEEP = (0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)


def _run_row(params):
    """Worker for one table row; must stay importable for process pools."""
    spec = problems.make_example(params["example"])
    cfg = AdmmConfig(
        beta=params.get("beta", spec.default_beta),
        alpha=spec.alpha,
        tol=spec.default_tol,
        inner_mode=params.get("mode", "adaptive"),
        inner_eps=params.get("eps"),
    )
    disc = problems.discretize(spec, params["i"])
    _, _, _, _, report = admm_solve(disc.data, disc.op, cfg, algorithm=params["label"])
    return report


def _table_rows(table, min_i, max_i, table1_i):
    if table == 1:
        return [
            {"example": "example1", "i": table1_i, "beta": b, "label": f"adaptive[beta={b:g}]"}
            for b in _BETA_SWEEP
        ]
    if table in (2, 4, 5):
        example = {2: "example1", 4: "example2", 5: "example3"}[table]
        rows = []
        for i in range(min_i, max_i + 1):
            rows.append({"example": example, "i": i, "label": "adaptive"})
            for eps in _FIXED_EPS:
                rows.append(
                    {
                        "example": example,
                        "i": i,
                        "mode": "fixed",
                        "eps": eps,
                        "label": f"fixed({eps:.0e})",
                    }
                )
        return rows
    if table in (3, 6):
        example = {3: "example1", 6: "example4"}[table]
        return [
            {"example": example, "i": i, "label": "adaptive"} for i in range(min_i, max_i + 1)
        ]
    raise ValueError(f"unknown table {table}; expected 1..6")


def reproduce(table, max_i=6, out_dir="out", workers=1, min_i=5, table1_i=None):
    """Re-run one study table and write its CSV plus one figure."""
    if table1_i is None:
        table1_i = max_i
    rows = _table_rows(table, min_i, max_i, table1_i)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_row, rows))
    else:
        reports = [_run_row(r) for r in rows]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_report.emit_csv(reports, out / f"table{table}.csv")
    fig_path = out / f"table{table}.png"
    if table == 1:
        figures.sweep_figure(_BETA_SWEEP, [r.outer_iters for r in reports], fig_path)
    elif table in (3, 6):
        hs = [2.0 ** -r.mesh_i for r in reports]
        series = {"control error": [r.err_u for r in reports]}
        if all(r.err_y is not None for r in reports):
            series["state error"] = [r.err_y for r in reports]
        figures.slope_figure(hs, series, fig_path)
    else:
        figures.summary_figure(reports, fig_path)
    return reports


def _report_check(results, name, passed, detail):
    results.append((name, bool(passed), detail))


def _check_linalg(inject_fault):
    results = []
    rng = np.random.default_rng(1234)
    a = rng.standard_normal((25, 25))
    a = a @ a.T + 25.0 * np.eye(25)
    b = rng.standard_normal(25)
    factor = sparse_linalg.factorize_spd(sp.csr_matrix(a))
    x_banded = sparse_linalg.solve_factored(factor, b)
    x_dense = sparse_linalg.dense_solve_oracle(a, b)
    if inject_fault:
        x_banded = x_banded + 1e-6
    gap = float(np.max(np.abs(x_banded - x_dense)))
    _report_check(results, "linalg.solve_vs_dense", gap <= 1e-9, f"max gap {gap:.3e}")

    try:
        sparse_linalg.factorize_spd(sp.csr_matrix(np.diag([1.0, -1.0])))
        caught = False
    except sparse_linalg.NotSpdError:
        caught = True
    _report_check(results, "linalg.indefinite_rejected", caught, "NotSpdError raised")

    x_cg, iters = sparse_linalg.cg_spd(lambda v: a @ v, b, np.zeros(25), 1e-12, 200)
    gap = float(np.max(np.abs(x_cg - x_dense)))
    _report_check(results, "linalg.cg_vs_dense", gap <= 1e-8, f"max gap {gap:.3e}, {iters} iters")
    return results


def _small_operators():
    grid = build_grid(3)
    fem = assemble_p1(grid)
    half = subdomain_mask(grid, (0.0, 0.5, 0.0, 0.5))
    full = subdomain_mask(grid, (0.0, 1.0, 0.0, 1.0))
    par = pde_solvers.make_parabolic_operator(
        grid, fem, half, nu=1.0, a0=0.5, tau=0.125, num_levels=8
    )
    wav = pde_solvers.make_wave_operator(grid, fem, half, tau=0.125, num_levels=8)
    ell = pde_solvers.make_elliptic_operator(grid, fem, full)
    return [("parabolic", par), ("wave", wav), ("elliptic", ell)]


def _check_adjoint(inject_fault):
    results = []
    for name, op in _small_operators():
        apply_adj = None
        if inject_fault:
            apply_adj = lambda r, _op=op: pde_solvers.apply_adjoint(_op, r) * (1.0 + 1e-6)
        err = pde_solvers.adjoint_identity_error(op, n_pairs=10, seed=42, apply_adj=apply_adj)
        _report_check(results, f"adjoint.{name}", err <= 1e-10, f"worst rel defect {err:.3e}")
    return results


def _check_subproblem(inject_fault):
    results = []
    spec = problems.make_example("example1")
    disc = problems.discretize(spec, 3, tau=0.25)
    data, op = disc.data, disc.op

    cfg = AdmmConfig(
        beta=spec.default_beta,
        alpha=spec.alpha,
        tol=spec.default_tol,
        inner_mode="fixed",
        inner_eps=1e-12,
    )
    state = init_state(data, op, cfg)
    s_mat = pde_solvers.dense_linear_matrix(op)
    n_lev = data.num_levels
    wq = data.tau * np.kron(np.eye(n_lev), disc.fem.M.toarray())
    wo = data.tau * np.kron(np.eye(n_lev), op.m_omega.toarray())
    sts = sparse_linalg.dense_solve_oracle(wo, s_mat.T @ wq @ s_mat)
    t_mat = (1.0 + cfg.beta) * np.eye(sts.shape[0]) + cfg.gamma * sts
    p0 = sparse_linalg.dense_solve_oracle(
        wo, s_mat.T @ wq @ (state.offset - data.y_d).ravel()
    )
    rhs = (cfg.beta * state.z + state.lam).ravel() - cfg.gamma * p0
    if inject_fault:
        rhs = rhs + 1e-6
    u_dense = sparse_linalg.dense_solve_oracle(t_mat, rhs)
    solve_u_subproblem_cg(state, op, cfg)
    gap = float(np.max(np.abs(state.u.ravel() - u_dense)))
    _report_check(results, "subproblem.cg_vs_dense", gap <= 1e-8, f"max gap {gap:.3e}")

    run_cfg = AdmmConfig(beta=spec.default_beta, alpha=spec.alpha, tol=spec.default_tol)
    _, _, z, _, report = admm_solve(data, op, run_cfg)
    sigma = sigma_from_beta(run_cfg.beta, run_cfg.sigma_factor)
    hist = report.history
    crit_ok = all(
        e_new <= sigma * e_prev * (1.0 + 1e-10) for e_prev, e_new in zip(hist.e_prev, hist.e_new)
    )
    _report_check(
        results, "subproblem.adaptive_criterion", crit_ok, f"{len(hist)} outer iterations"
    )
    z_ok = float(z.values.min()) >= data.lower - 1e-15 and float(z.values.max()) <= data.upper + 1e-15
    _report_check(
        results,
        "subproblem.z_in_box",
        z_ok,
        f"range [{z.values.min():.3f}, {z.values.max():.3f}]",
    )
    return results


def oracle_check(level="all", inject_fault=False, stream=None):
    """Run the independent correctness checks; returns True when all pass."""
    if stream is None:
        stream = sys.stdout
    if level not in ("all", "linalg", "adjoint", "subproblem"):
        raise ValueError(f"unknown oracle level {level!r}")
    results = []
    if level in ("all", "linalg"):
        results += _check_linalg(inject_fault)
    if level in ("all", "adjoint"):
        results += _check_adjoint(inject_fault)
    if level in ("all", "subproblem"):
        results += _check_subproblem(inject_fault)
    for name, passed, detail in results:
        mark = "ok  " if passed else "FAIL"
        print(f"{mark} {name}: {detail}", file=stream)
    all_ok = all(passed for _, passed, _ in results)
    print(
        f"{'all checks passed' if all_ok else 'CHECKS FAILED'} "
        f"({sum(p for _, p, _ in results)}/{len(results)})",
        file=stream,
    )
    return all_ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="admmpde",
        description="Splitting solver for box-constrained PDE control problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve one case described by a config file")
    p_run.add_argument("--config", required=True, help="path to a config file")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument(
        "--snapshots",
        nargs="?",
        const=1,
        default=None,
        type=int,
        metavar="STRIDE",
        help="export per-level text tables, optionally with a level stride",
    )

    p_rep = sub.add_parser("reproduce", help="regenerate one study table")
    p_rep.add_argument("--table", type=int, required=True, choices=range(1, 7))
    p_rep.add_argument("--max-i", type=int, default=6, dest="max_i")
    p_rep.add_argument("--out", default="out")
    p_rep.add_argument("--workers", type=int, default=1)

    p_or = sub.add_parser("oracle-check", help="run independent correctness checks")
    p_or.add_argument(
        "--level", choices=["all", "linalg", "adjoint", "subproblem"], default="all"
    )
    p_or.add_argument(
        "--inject-fault",
        action="store_true",
        help="deliberately break the checked quantity to show the oracle bites",
    )

    args = parser.parse_args(argv)
    if args.command == "run":
        try:
            cfg = parse_config_text(Path(args.config).read_text())
            report = run_case_to_dir(cfg, args.out, snapshots=args.snapshots)
        except (ValueError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        print(
            f"{report.algorithm}: {'converged' if report.converged else 'no convergence'} "
            f"after {report.outer_iters} outer iterations "
            f"(mean inner {report.mean_cg:.2f}, rel. misfit {report.reldis:.4e})"
        )
        return 0 if report.converged else 1
    if args.command == "reproduce":
        try:
            reproduce(args.table, max_i=args.max_i, out_dir=args.out, workers=args.workers)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        print(f"table {args.table} written to {args.out}")
        return 0
    ok = oracle_check(level=args.level, inject_fault=args.inject_fault)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
