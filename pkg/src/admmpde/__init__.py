"""ADMM with nested conjugate-gradient inner solves for box-constrained
optimal control of parabolic, wave, and elliptic PDEs on the unit square."""

__version__ = "0.1.0"

from .mesh_fem import (
    GridSpec,
    FemMatrices,
    SubdomainMask,
    build_grid,
    assemble_p1,
    subdomain_mask,
    nodal_project,
    discrete_inner,
    discrete_norm,
)
from .sparse_linalg import (
    SparseMatrix,
    SymFactor,
    NotSpdError,
    factorize_spd,
    solve_factored,
    cg_spd,
    dense_solve_oracle,
)
from .pde_solvers import (
    SpaceTimeField,
    ParabolicOperator,
    WaveOperator,
    EllipticOperator,
    make_parabolic_operator,
    make_wave_operator,
    make_elliptic_operator,
    parabolic_forward,
    parabolic_adjoint,
    wave_forward,
    wave_adjoint,
    elliptic_solve,
    affine_offset,
    apply_linear,
    apply_adjoint,
)
from .admm_core import (
    AdmmConfig,
    AdmmState,
    sigma_from_beta,
    residual_e,
    solve_u_subproblem_cg,
    update_z,
    update_lambda,
    primal_dual_residuals,
    admm_solve,
)
from .problems import ProblemSpec, ProblemData, make_example, eval_fields, discretize
from .metrics_report import (
    RunReport,
    IterateHistory,
    reldis_obj,
    l2_errors,
    convergence_order,
    rate_diagnostics,
    emit_csv,
)
