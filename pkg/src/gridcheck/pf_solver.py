"""Numerical solution of the resistive DC power flow equation.

Solves ``[V_L] Y_LL V_L + [V_L] Y_LS V_S + P_L = 0`` for ``V_L > 0``.  The
solver is an independent witness for the certificates in
:mod:`gridcheck.feasibility`; failure to converge is inconclusive, never a
proof of infeasibility.  Only :func:`solve_diagonal_exact` can prove
infeasibility, and only when loads are not connected to each other.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from gridcheck.errors import SingularMatrixError, ValidationError
from gridcheck.grid import PartitionedGrid

__all__ = [
    "SolveStatus",
    "SolveOutcome",
    "solve_power_flow",
    "solve_diagonal_exact",
    "residual",
]


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    NO_CONVERGENCE = "no_convergence"
    DIVERGED_TO_BOUNDARY = "diverged_to_boundary"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    status: SolveStatus
    load_ids: tuple[int, ...]
    v_load: np.ndarray | None
    iterations: int
    residual: float
    method: str

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "method": self.method,
            "iterations": self.iterations,
            "residual": float(self.residual),
            "load_ids": list(self.load_ids),
            "v_load": None if self.v_load is None else [float(v) for v in self.v_load],
        }


def residual(grid: PartitionedGrid, v_load: np.ndarray) -> np.ndarray:
    """Power mismatch per load, ``[V_L] Y_LL V_L + [V_L] Y_LS V_S + P_L`` (watts)."""
    g = grid.as_float()
    v = np.asarray(v_load, dtype=float)
    if v.shape != (g.n_loads,):
        raise ValidationError(f"voltage vector has shape {v.shape}, expected ({g.n_loads},)")
    return v * (g.Y_LL @ v) + v * (g.Y_LS @ g.V_S) + g.P_L


def _factor(y_ll: np.ndarray):
    try:
        cho = sla.cho_factor(y_ll, lower=True)
        return lambda b: sla.cho_solve(cho, b)
    except sla.LinAlgError:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(y_ll)
        scale = max(1.0, float(np.abs(y_ll).max()))
        if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * scale):
            raise SingularMatrixError("Y_LL is singular: some load reaches no source")
        return lambda b: sla.lu_solve(lu, b)


def solve_power_flow(grid: PartitionedGrid, tol: float = 1e-12,
                     max_iter: int = 100_000, residual_tol: float = 1e-9,
                     history: list | None = None) -> SolveOutcome:
    """Fixed-point iteration ``V <- V* - Y_LL^{-1} [V]^{-1} P_L`` from ``V*``.

    Targets the high-voltage solution.  Stops with ``CONVERGED`` once
    successive iterates differ by less than ``tol`` (infinity norm) and the
    residual is below ``residual_tol``.  When ``history`` is a list every
    iterate is appended to it.
    """
    g = grid.as_float()
    n = g.n_loads
    if n == 0:
        return SolveOutcome(SolveStatus.CONVERGED, g.load_ids, np.zeros(0), 0, 0.0,
                            "fixed_point")
    apply_inv = _factor(g.Y_LL)
    v_open = apply_inv(g.source_injection)
    v = v_open
    if history is not None:
        history.append(v.copy())
    if not np.all(v > 0):
        return SolveOutcome(SolveStatus.DIVERGED_TO_BOUNDARY, g.load_ids, None, 0,
                            math.inf, "fixed_point")
    for it in range(1, max_iter + 1):
        v_new = v_open - apply_inv(g.P_L / v)
        if history is not None:
            history.append(v_new.copy())
        if not np.all(v_new > 0) or not np.all(np.isfinite(v_new)):
            return SolveOutcome(SolveStatus.DIVERGED_TO_BOUNDARY, g.load_ids, None, it,
                                math.inf, "fixed_point")
        step = float(np.max(np.abs(v_new - v)))
        v = v_new
        if step < tol:
            res = float(np.max(np.abs(residual(g, v))))
            if res < residual_tol:
                return SolveOutcome(SolveStatus.CONVERGED, g.load_ids, v, it, res,
                                    "fixed_point")
    res = float(np.max(np.abs(residual(g, v))))
    return SolveOutcome(SolveStatus.NO_CONVERGENCE, g.load_ids, v, max_iter, res,
                        "fixed_point")


def solve_diagonal_exact(grid: PartitionedGrid) -> SolveOutcome:
    """Closed-form high root per load when ``Y_LL`` is diagonal.

    Each row reads ``g v^2 - b v + P = 0`` with ``b = -(Y_LS V_S)``; a
    positive solution exists iff every discriminant ``b^2 - 4 g P`` is
    nonnegative.
    """
    g = grid.as_float()
    y = g.Y_LL
    if np.any(y - np.diag(np.diag(y)) != 0):
        raise ValidationError("solve_diagonal_exact requires a diagonal Y_LL")
    diag = np.diag(y)
    b = g.source_injection
    disc = b * b - 4.0 * diag * g.P_L
    if np.any(disc < 0) or np.any(diag <= 0):
        return SolveOutcome(SolveStatus.INFEASIBLE, g.load_ids, None, 0, math.inf,
                            "diagonal_exact")
    v = (b + np.sqrt(disc)) / (2.0 * diag)
    if not np.all(v > 0):
        return SolveOutcome(SolveStatus.INFEASIBLE, g.load_ids, None, 0, math.inf,
                            "diagonal_exact")
    res = float(np.max(np.abs(residual(g, v)))) if len(v) else 0.0
    return SolveOutcome(SolveStatus.CONVERGED, g.load_ids, v, 0, res, "diagonal_exact")
