"""Feasibility certificates for resistive DC grids of interconnected microgrids."""

__version__ = "0.1.0"

from gridcheck.errors import (  # noqa: E402
    ConditionNotApplicable,
    GridcheckError,
    SingularMatrixError,
    ValidationError,
)
from gridcheck.feasibility import (  # noqa: E402
    FeasibilityReport,
    check_lemma4_pattern,
    check_thm1,
    check_thm6,
    open_circuit_voltages,
)
from gridcheck.grid import (  # noqa: E402
    BlockStructure,
    GridGraph,
    NodeKind,
    PartitionedGrid,
    build_laplacian,
    check_hierarchy_assumption,
    partition_grid,
)
from gridcheck.interconnect import (  # noqa: E402
    InterconnectionSpec,
    ShuntLedger,
    apply_virtual_shunts,
    check_assumption9,
    check_plug_and_play,
    compute_hat_shunts,
    extend_bcd,
    merge_grids,
)
from gridcheck.linalg import (  # noqa: E402
    BlockCholesky,
    apply_inverse_factors,
    block_cholesky,
    is_invertible_m_matrix,
    is_order_preserving,
    schur_complement,
)
from gridcheck.pf_solver import (  # noqa: E402
    SolveOutcome,
    SolveStatus,
    residual,
    solve_diagonal_exact,
    solve_power_flow,
)

__all__ = [
    "__version__",
    "ConditionNotApplicable",
    "GridcheckError",
    "SingularMatrixError",
    "ValidationError",
    "FeasibilityReport",
    "check_lemma4_pattern",
    "check_thm1",
    "check_thm6",
    "open_circuit_voltages",
    "BlockStructure",
    "GridGraph",
    "NodeKind",
    "PartitionedGrid",
    "build_laplacian",
    "check_hierarchy_assumption",
    "partition_grid",
    "InterconnectionSpec",
    "ShuntLedger",
    "apply_virtual_shunts",
    "check_assumption9",
    "check_plug_and_play",
    "compute_hat_shunts",
    "extend_bcd",
    "merge_grids",
    "BlockCholesky",
    "apply_inverse_factors",
    "block_cholesky",
    "is_invertible_m_matrix",
    "is_order_preserving",
    "schur_complement",
    "SolveOutcome",
    "SolveStatus",
    "residual",
    "solve_diagonal_exact",
    "solve_power_flow",
]
