"""Open-circuit voltages and sufficient conditions for power flow feasibility.

Two certificates are provided:

``thm1``
    ``Y_LL^{-1} [V*]^{-1} P_L < V*/4`` with ``V*`` the open-circuit voltages.
``thm6``
    the block form ``D^{-1} C^{-1} [C^T V*]^{-1} P_L < C^T V*/4`` where
    ``Y_LL = C D C^T`` is factorized along the microgrid hierarchy.  It is
    more conservative than ``thm1`` but its rows for lower microgrids never
    depend on microgrids added later.

A strict inequality is accepted when every row clears it by more than
``epsilon`` (absolute, default ``1e-9``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gridcheck.errors import ConditionNotApplicable, SingularMatrixError
from gridcheck.grid import BlockStructure, PartitionedGrid, check_hierarchy_assumption
from gridcheck.linalg import (
    DEFAULT_EPSILON,
    BlockCholesky,
    apply_inverse_factors,
    block_cholesky,
    is_invertible_m_matrix,
    solve,
)

__all__ = [
    "FeasibilityReport",
    "open_circuit_voltages",
    "check_thm1",
    "check_thm6",
    "check_lemma4_pattern",
    "condition_margin",
]


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    """Verdict and margin vectors of one sufficient condition.

    ``lhs`` and ``rhs`` are the two sides of the tested vector inequality,
    row-aligned with ``load_ids``.  ``bound_vector`` is ``C^T V*`` for the
    block conditions and ``None`` for ``thm1``.
    """

    condition: str
    passed: bool
    load_ids: tuple[int, ...]
    v_open: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: float
    source_injection: np.ndarray
    epsilon: float
    bound_vector: np.ndarray | None = None
    notes: tuple[str, ...] = ()
    factors: BlockCholesky | None = field(default=None, repr=False)

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]

        return {
            "condition": self.condition,
            "verdict": "pass" if self.passed else "fail",
            "epsilon": float(self.epsilon),
            "margin": float(self.margin),
            "load_ids": list(self.load_ids),
            "v_open": vec(self.v_open),
            "bound_vector": vec(self.bound_vector),
            "lhs": vec(self.lhs),
            "rhs": vec(self.rhs),
            "source_injection": vec(self.source_injection),
            "notes": list(self.notes),
        }


def condition_margin(lhs: np.ndarray, rhs: np.ndarray):
    """Smallest row slack ``min(rhs - lhs)``; ``+inf`` for an empty system."""
    if len(lhs) == 0:
        return math.inf
    return min(r - l for l, r in zip(lhs, rhs))


def _require_m_matrix(grid: PartitionedGrid) -> None:
    check = is_invertible_m_matrix(grid.Y_LL)
    if not check:
        node = grid.load_ids[check.row] if check.row is not None else None
        raise SingularMatrixError(
            f"Y_LL is not an invertible M-matrix ({check.reason} at load node "
            f"{node}); some load is not connected to any source"
        )


def open_circuit_voltages(grid: PartitionedGrid) -> np.ndarray:
    """Load voltages at zero load current, ``-Y_LL^{-1} Y_LS V_S``."""
    _require_m_matrix(grid)
    return solve(grid.Y_LL, grid.source_injection)


def _report(condition, grid, v_open, lhs, rhs, epsilon, **extra) -> FeasibilityReport:
    margin = condition_margin(lhs, rhs)
    return FeasibilityReport(
        condition=condition,
        passed=bool(margin > epsilon),
        load_ids=grid.load_ids,
        v_open=v_open,
        lhs=lhs,
        rhs=rhs,
        margin=margin,
        source_injection=grid.source_injection,
        epsilon=epsilon,
        **extra,
    )


def check_thm1(grid: PartitionedGrid, epsilon: float = DEFAULT_EPSILON) -> FeasibilityReport:
    """Evaluate ``Y_LL^{-1} [V*]^{-1} P_L < V*/4``.

    Raises
    ------
    ConditionNotApplicable
        Some open-circuit voltage is not positive (load cut off from sources).
    """
    v_open = open_circuit_voltages(grid)
    dead = [i for i, v in zip(grid.load_ids, v_open) if not v > 0]
    if dead:
        raise ConditionNotApplicable(
            f"load nodes {dead} have nonpositive open-circuit voltage; they are "
            "disconnected from every source", nodes=dead,
        )
    lhs = solve(grid.Y_LL, grid.P_L / v_open)
    return _report("thm1", grid, v_open, lhs, v_open / 4, epsilon)


def check_thm6(grid: PartitionedGrid, structure: BlockStructure | None = None,
               epsilon: float = DEFAULT_EPSILON, route: str = "injection",
               condition: str = "thm6") -> FeasibilityReport:
    """Evaluate the block condition ``D^{-1} C^{-1} [C^T V*]^{-1} P_L < C^T V*/4``.

    ``route="injection"`` obtains ``C^T V*`` as ``D^{-1} C^{-1} I_S*`` with
    ``I_S* = -Y_LS V_S``; ``route="open_circuit"`` multiplies the
    open-circuit voltages by ``C^T``.  The two are algebraically identical.

    Raises
    ------
    ConditionNotApplicable
        The microgrid hierarchy assumption fails, or ``C^T V*`` has a
        nonpositive entry.
    """
    if route not in ("injection", "open_circuit"):
        raise ValueError(f"unknown route {route!r}")
    hierarchy = check_hierarchy_assumption(grid)
    if not hierarchy.passed:
        raise ConditionNotApplicable(
            f"load nodes {hierarchy.failing} reach no source along the microgrid "
            "hierarchy; the block condition does not apply", nodes=hierarchy.failing,
        )
    structure = structure or grid.structure
    v_open = open_circuit_voltages(grid)
    if grid.n_loads == 0:
        f = block_cholesky(grid.Y_LL, BlockStructure(()))
        empty = grid.P_L.copy()
        return _report(condition, grid, v_open, empty, empty, epsilon,
                       bound_vector=empty, factors=f)
    f = block_cholesky(grid.Y_LL, structure)
    if route == "injection":
        bound = apply_inverse_factors(f, grid.source_injection)
    else:
        bound = f.C.T @ v_open
    bad = [i for i, b in zip(grid.load_ids, bound) if not b > 0]
    if bad:
        raise ConditionNotApplicable(
            f"C^T V* is not positive at load nodes {bad}: these loads reach a "
            "source only through a microgrid higher in the hierarchy", nodes=bad,
        )
    lhs = apply_inverse_factors(f, grid.P_L / bound)
    notes = tuple(hierarchy.notes)
    report = _report(condition, grid, v_open, lhs, bound / 4, epsilon,
                     bound_vector=bound, factors=f, notes=notes)
    if report.passed:
        # the block condition implies the open-circuit inequality
        implied = f.solve(grid.P_L / v_open)
        if not all(l < r for l, r in zip(implied, v_open / 4)):
            raise ArithmeticError(
                "block condition passed but the implied open-circuit inequality "
                "does not hold; factorization is numerically unreliable"
            )
    return report


def check_lemma4_pattern(f: BlockCholesky, grid: PartitionedGrid, block: int,
                         threshold: float = 1e-10) -> bool:
    """Compare the positive pattern of a ``D`` block inverse with load connectivity.

    ``block`` is the hierarchy position starting at 1.  Entry ``(k, l)`` of
    the inverse of the ``block``-th diagonal block of ``D`` must exceed
    ``threshold`` exactly when loads ``k`` and ``l`` are path-connected in the
    subgraph induced by the loads of blocks ``1..block``.
    """
    sl = f.structure.slices()
    s = sl[block - 1]
    inv = f.d_block_inverse(block - 1)
    ids = grid.load_ids
    lower = set(ids[: s.stop])
    members = ids[s]
    for a, k in enumerate(members):
        comp = grid.graph.reachable([k], allowed=lower)
        for b, l in enumerate(members):
            if (inv[a, b] > threshold) != (l in comp):
                return False
    return True
