"""Plug-and-play admission of a microgrid into a certified grid.

The existing grid reserves *virtual shunts* at its load nodes: placeholder
conductances for lines it may receive later.  Its block condition is proved
once, on the grid with those shunts applied.  A newcomer is admitted by
checking only its own block rows of the condition; the existing factors are
extended by a single Schur complement and never recomputed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gridcheck.errors import ConditionNotApplicable, SingularMatrixError, ValidationError
from gridcheck.feasibility import FeasibilityReport, check_thm6, condition_margin
from gridcheck.grid import (
    BlockStructure,
    GridGraph,
    HierarchyReport,
    Line,
    NodeKind,
    PartitionedGrid,
    check_hierarchy_assumption,
    partition_grid,
    to_exact,
)
from gridcheck.linalg import DEFAULT_EPSILON, BlockCholesky, _BlockSolver, is_exact

__all__ = [
    "ShuntLedger",
    "InterconnectionSpec",
    "HatShunts",
    "Assumption9Result",
    "ExtendedBCD",
    "AttachResult",
    "apply_virtual_shunts",
    "compute_hat_shunts",
    "check_assumption9",
    "extend_bcd",
    "merge_grids",
    "microgrid_id_map",
    "check_plug_and_play",
]

_BUDGET_RTOL = 1e-12


def _budget_tol(cap) -> float:
    return 0.0 if not isinstance(cap, float) else _BUDGET_RTOL * max(1.0, abs(cap))


@dataclass(frozen=True)
class ShuntLedger:
    """Virtual shunt capacity and the part already used by real lines.

    All maps are keyed by node id; values are conductances in siemens.
    """

    capacity: Mapping[int, float]
    consumed: Mapping[int, float] = field(default_factory=dict)
    source_consumed: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        cap = {int(k): v for k, v in self.capacity.items()}
        used = {int(k): v for k, v in self.consumed.items()}
        for k in cap:
            used.setdefault(k, 0 * cap[k])
        stray = sorted(set(used) - set(cap))
        if stray:
            raise ValidationError(f"ledger consumption for nodes without capacity: {stray}")
        for k, c in cap.items():
            if c < 0:
                raise ValidationError(f"negative shunt capacity at node {k}")
            if used[k] < 0 or used[k] > c + _budget_tol(c):
                raise ValidationError(
                    f"node {k} consumed {used[k]} outside its capacity [0, {c}]"
                )
        object.__setattr__(self, "capacity", dict(sorted(cap.items())))
        object.__setattr__(self, "consumed", dict(sorted(used.items())))
        object.__setattr__(self, "source_consumed",
                           dict(sorted((int(k), v) for k, v in self.source_consumed.items())))

    @classmethod
    def zero(cls, load_ids: Sequence[int]) -> "ShuntLedger":
        return cls({i: 0.0 for i in load_ids})

    def remaining(self, node: int):
        return self.capacity[node] - self.consumed[node]

    def consume(self, loads: Mapping[int, float],
                sources: Mapping[int, float] = ()) -> "ShuntLedger":
        used = dict(self.consumed)
        for k, v in loads.items():
            used[k] = used[k] + v
        src = dict(self.source_consumed)
        for k, v in dict(sources).items():
            src[k] = src.get(k, 0 * v) + v
        return ShuntLedger(self.capacity, used, src)

    def renamed(self, id_map: Mapping[int, int]) -> "ShuntLedger":
        def ren(d):
            return {id_map.get(k, k): v for k, v in d.items()}
        return ShuntLedger(ren(self.capacity), ren(self.consumed), ren(self.source_consumed))

    def union(self, other: "ShuntLedger") -> "ShuntLedger":
        clash = set(self.capacity) & set(other.capacity)
        if clash:
            raise ValidationError(f"ledgers overlap at nodes {sorted(clash)}")
        return ShuntLedger({**self.capacity, **other.capacity},
                           {**self.consumed, **other.consumed},
                           {**self.source_consumed, **other.source_consumed})

    def to_dict(self) -> dict:
        return {
            "loads": [
                {"id": k, "capacity": float(self.capacity[k]),
                 "consumed": float(self.consumed[k])}
                for k in self.capacity
            ],
            "sources": [{"id": k, "consumed": float(v)}
                        for k, v in self.source_consumed.items()],
        }


@dataclass(frozen=True)
class InterconnectionSpec:
    """New lines ``(node of grid 1, node of microgrid, conductance)``."""

    lines: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        lines = tuple((int(a), int(b), g) for a, b, g in self.lines)
        seen = set()
        for a, b, g in lines:
            if not g > 0:
                raise ValidationError(f"interconnection line ({a}, {b}) has nonpositive conductance")
            if (a, b) in seen:
                raise ValidationError(f"interconnection line ({a}, {b}) is listed twice")
            seen.add((a, b))
        object.__setattr__(self, "lines", lines)

    def validate(self, grid1: PartitionedGrid, grid2: PartitionedGrid) -> None:
        ids1, ids2 = set(grid1.graph.ids), set(grid2.graph.ids)
        for a, b, _ in self.lines:
            if a not in ids1:
                raise ValidationError(f"interconnection endpoint {a} is not a node of the grid")
            if b not in ids2:
                raise ValidationError(f"interconnection endpoint {b} is not a node of the microgrid")


@dataclass(frozen=True, eq=False)
class HatShunts:
    """Conductance each node gains from the new lines, per side and kind.

    Arrays follow ``load_ids``/``source_ids`` of the respective grid.
    """

    load1: np.ndarray
    load2: np.ndarray
    source1: np.ndarray
    source2: np.ndarray


def _exact_like(grid: PartitionedGrid, value):
    return to_exact(value) if grid.exact else float(value)


def apply_virtual_shunts(grid: PartitionedGrid, ledger: ShuntLedger) -> PartitionedGrid:
    """Add the unused shunt capacity ``capacity - consumed`` to the load block.

    Source rows are left untouched.
    """
    missing = [i for i in grid.load_ids if i not in ledger.capacity]
    extra = sorted(set(ledger.capacity) - set(grid.load_ids))
    if missing or extra:
        raise ValidationError(
            f"ledger does not match the load nodes (missing {missing}, extra {extra})"
        )
    rest = [_exact_like(grid, ledger.remaining(i)) for i in grid.load_ids]
    for i, r in zip(grid.load_ids, rest):
        if r < -_budget_tol(ledger.capacity[i]):
            raise ValidationError(f"negative remaining shunt capacity at node {i}")
    return grid.with_shunts(np.array(rest, dtype=grid.Y_LL.dtype))


def compute_hat_shunts(spec: InterconnectionSpec, grid1: PartitionedGrid,
                       grid2: PartitionedGrid) -> HatShunts:
    """Total conductance of new lines incident to every node, on both sides."""
    spec.validate(grid1, grid2)

    def empty(grid, ids):
        return np.array([_exact_like(grid, 0)] * len(ids), dtype=grid.Y_LL.dtype)

    l1, s1 = empty(grid1, grid1.load_ids), empty(grid1, grid1.source_ids)
    l2, s2 = empty(grid2, grid2.load_ids), empty(grid2, grid2.source_ids)
    for a, b, g in spec.lines:
        if grid1.graph.kinds[a] is NodeKind.LOAD:
            l1[grid1.load_ids.index(a)] += _exact_like(grid1, g)
        else:
            s1[grid1.source_ids.index(a)] += _exact_like(grid1, g)
        if grid2.graph.kinds[b] is NodeKind.LOAD:
            l2[grid2.load_ids.index(b)] += _exact_like(grid2, g)
        else:
            s2[grid2.source_ids.index(b)] += _exact_like(grid2, g)
    return HatShunts(l1, l2, s1, s2)


def microgrid_id_map(grid1: PartitionedGrid, grid2: PartitionedGrid) -> dict[int, int]:
    """Ids for the microgrid's nodes in the merged grid.

    Ids already used by the grid are moved past the largest id in use, in
    ascending order; all other ids are kept.
    """
    taken = set(grid1.graph.ids)
    nxt = max(taken | set(grid2.graph.ids), default=0) + 1
    out = {}
    for nid in sorted(grid2.graph.ids):
        if nid in taken:
            out[nid] = nxt
            nxt += 1
        else:
            out[nid] = nid
    return out


def merge_grids(grid1: PartitionedGrid, grid2: PartitionedGrid,
                spec: InterconnectionSpec) -> PartitionedGrid:
    """Physical interconnection; the microgrid becomes hierarchy block ``k+1``.

    Microgrid node ids that collide with the grid are renamed as described by
    :func:`microgrid_id_map`.
    """
    if grid2.k > 1:
        raise ValidationError("the attached grid must be a single microgrid")
    if grid1.exact != grid2.exact:
        raise ValidationError("cannot merge exact and floating-point grids")
    spec.validate(grid1, grid2)
    ren = microgrid_id_map(grid1, grid2)
    g2 = grid2.graph
    nodes = list(grid1.graph.nodes) + [(ren[i], k) for i, k in g2.nodes]
    lines = list(grid1.graph.lines)
    lines += [Line(ren[ln.i], ren[ln.j], ln.conductance) for ln in g2.lines]
    lines += [Line(a, ren[b], g) for a, b, g in spec.lines]
    graph = GridGraph(tuple(nodes), tuple(lines))

    k1 = grid1.k
    membership = dict(grid1.membership)
    membership.update({ren[i]: k1 + 1 for i in g2.ids})
    v_s = dict(zip(grid1.source_ids, grid1.V_S))
    v_s.update({ren[i]: v for i, v in zip(grid2.source_ids, grid2.V_S)})
    p_l = dict(zip(grid1.load_ids, grid1.P_L))
    p_l.update({ren[i]: p for i, p in zip(grid2.load_ids, grid2.P_L)})
    merged = partition_grid(graph, membership, v_s, p_l, exact=grid1.exact)

    shunt = dict(zip(grid1.load_ids, grid1.shunts))
    shunt.update({ren[i]: s for i, s in zip(grid2.load_ids, grid2.shunts)})
    extra = np.array([shunt[i] for i in merged.load_ids], dtype=merged.Y_LL.dtype)
    if any(s != 0 for s in extra):
        merged = merged.with_shunts(extra)
    return merged


@dataclass(frozen=True)
class Assumption9Result:
    """Shunt budgets and merged hierarchy for a proposed interconnection.

    ``slack`` maps every load id (merged naming) to remaining capacity minus
    the conductance the new lines would consume there.
    """

    passed: bool
    slack: Mapping[int, float]
    over_budget: tuple[int, ...]
    hierarchy: HierarchyReport

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "over_budget": list(self.over_budget),
            "hierarchy_passed": self.hierarchy.passed,
            "hierarchy_failing": self.hierarchy.failing,
            "slack": [{"id": k, "slack": float(v)} for k, v in self.slack.items()],
        }


def check_assumption9(spec: InterconnectionSpec, grid1: PartitionedGrid,
                      grid2: PartitionedGrid, ledger1: ShuntLedger,
                      ledger2: ShuntLedger) -> Assumption9Result:
    """New lines fit the remaining virtual shunts and the merged hierarchy holds."""
    hat = compute_hat_shunts(spec, grid1, grid2)
    ren = microgrid_id_map(grid1, grid2)
    slack, over = {}, []
    sides = ((grid1, ledger1, hat.load1, {}), (grid2, ledger2, hat.load2, ren))
    for grid, ledger, used, names in sides:
        for nid, e in zip(grid.load_ids, used):
            if nid not in ledger.capacity:
                raise ValidationError(f"ledger has no entry for load node {nid}")
            s = ledger.remaining(nid) - e
            key = names.get(nid, nid)
            slack[key] = s
            if s < -_budget_tol(ledger.capacity[nid]):
                over.append(key)
    merged = merge_grids(grid1, grid2, spec)
    hierarchy = check_hierarchy_assumption(merged)
    return Assumption9Result(
        passed=not over and hierarchy.passed,
        slack=slack,
        over_budget=tuple(over),
        hierarchy=hierarchy,
    )


@dataclass(frozen=True, eq=False)
class ExtendedBCD:
    """Block factors of the grid extended by one trailing microgrid block.

    ``base`` are the untouched factors of the grid's virtual load matrix
    ``A1 = C D C^T``; ``R`` is the Schur complement of ``A1`` in the virtual
    interconnected load matrix; ``coupling_action`` is ``-Y_{L2L1} A1^{-1}``,
    the lower-left block of ``C~^{-1}``.
    """

    base: BlockCholesky
    R: np.ndarray
    coupling: np.ndarray
    coupling_action: np.ndarray
    _r_solver: _BlockSolver = field(repr=False)

    @property
    def n1(self) -> int:
        return self.base.n

    def r_inverse(self) -> np.ndarray:
        n2 = self.R.shape[0]
        eye = np.eye(n2) if not is_exact(self.R) else np.array(
            [[1 if i == j else 0 for j in range(n2)] for i in range(n2)], dtype=object)
        return self._r_solver.solve(eye)

    def apply_inverse_factors(self, x: np.ndarray) -> np.ndarray:
        """``D~^{-1} C~^{-1} x`` using only the base factors and ``R``."""
        x1, x2 = x[: self.n1], x[self.n1:]
        top = self.base.solve_d(self.base.solve_c(x1))
        bottom = self._r_solver.solve(x2 + self.coupling_action @ x1)
        return np.concatenate([top, bottom])

    def solve(self, x: np.ndarray) -> np.ndarray:
        """Inverse of the virtual interconnected load matrix applied to ``x``."""
        y = self.apply_inverse_factors(x)
        y1, y2 = y[: self.n1], y[self.n1:]
        top = self.base.solve_ct(y1) + self.coupling_action.T @ y2
        return np.concatenate([top, y2])

    def as_block_cholesky(self) -> BlockCholesky:
        """Assemble ``C~`` and ``D~`` as a :class:`BlockCholesky`."""
        b = self.base
        n1, n2 = self.n1, self.R.shape[0]
        exact = is_exact(self.R)
        dtype = object if exact else float
        zero = 0 if exact else 0.0
        C = np.full((n1 + n2, n1 + n2), zero, dtype=dtype)
        D = np.full((n1 + n2, n1 + n2), zero, dtype=dtype)
        C[:n1, :n1] = b.C
        C[n1:, :n1] = -self.coupling_action @ b.C
        for i in range(n2):
            C[n1 + i, n1 + i] = 1
        D[:n1, :n1] = b.D
        D[n1:, n1:] = self.R
        structure = BlockStructure(b.structure.sizes + (n2,))
        return BlockCholesky(C, D, structure, b._solvers + (self._r_solver,))


def extend_bcd(base: BlockCholesky, coupling: np.ndarray,
               microgrid_block: np.ndarray) -> ExtendedBCD:
    """Extend ``base`` by one block without refactorizing it.

    Parameters
    ----------
    base : factors of the grid's virtual load matrix
    coupling : ``Y_{L2L1}``, microgrid loads by grid loads
    microgrid_block : the microgrid's virtual load block ``Y_{L2L2} + E_{L2}``
    """
    coupling = np.asarray(coupling)
    block = np.asarray(microgrid_block)
    n2 = block.shape[0]
    if coupling.shape != (n2, base.n):
        raise ValidationError(
            f"coupling has shape {coupling.shape}, expected ({n2}, {base.n})"
        )
    # A1^{-1} Y_{L1L2}
    solved = base.solve(coupling.T) if base.n else coupling.T
    R = block - coupling @ solved
    if not is_exact(R):
        R = 0.5 * (R + R.T)
    try:
        solver = _BlockSolver(R, base.structure.k)
    except SingularMatrixError:
        raise SingularMatrixError(
            "trailing Schur complement R is singular: some microgrid load "
            "reaches no source in the merged grid", block=base.structure.k,
        ) from None
    return ExtendedBCD(base, R, coupling, -solved.T, solver)


@dataclass(frozen=True, eq=False)
class AttachResult:
    """Outcome of a plug-and-play admission attempt.

    ``status`` is ``"pass"`` (merged grid certified), ``"fail"`` (hypotheses
    hold but the microgrid's block rows violate the condition) or
    ``"inapplicable"`` (a hypothesis fails; see ``reasons``).
    """

    status: str
    reasons: tuple[str, ...]
    assumption7: FeasibilityReport | None
    assumption9: Assumption9Result | None
    report: FeasibilityReport | None = None
    certificate: FeasibilityReport | None = None
    extended: ExtendedBCD | None = None
    merged: PartitionedGrid | None = None
    ledger: ShuntLedger | None = None
    hat: HatShunts | None = None
    id_map: Mapping[int, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        renamed = {str(k): v for k, v in self.id_map.items() if k != v}
        out = {
            "status": self.status,
            "reasons": list(self.reasons),
            "assumption7": self.assumption7.to_dict() if self.assumption7 else None,
            "assumption9": self.assumption9.to_dict() if self.assumption9 else None,
            "thm8": self.report.to_dict() if self.report else None,
            "merged_certificate": self.certificate.to_dict() if self.certificate else None,
            "renamed_microgrid_nodes": renamed,
        }
        if self.extended is not None:
            out["R_inverse"] = [[float(v) for v in row] for row in self.extended.r_inverse()]
        if self.ledger is not None:
            out["ledger"] = self.ledger.to_dict()
        return out


def check_plug_and_play(grid1: PartitionedGrid, ledger1: ShuntLedger,
                        microgrid: PartitionedGrid, ledger2: ShuntLedger,
                        spec: InterconnectionSpec,
                        certificate: FeasibilityReport | None = None,
                        epsilon: float = DEFAULT_EPSILON) -> AttachResult:
    """Decide whether ``microgrid`` may join ``grid1`` along ``spec``.

    ``grid1`` and ``microgrid`` are physical grids; their ledgers say how much
    virtual shunt capacity is left.  ``certificate`` is the passing block
    condition of ``grid1``'s virtual grid, with its factors; it is computed
    when omitted.  Only the microgrid's rows of the condition are evaluated:
    the grid's rows follow from its certificate.
    """
    reasons = []
    if certificate is None:
        try:
            certificate = check_thm6(apply_virtual_shunts(grid1, ledger1), epsilon=epsilon)
        except ConditionNotApplicable as exc:
            return AttachResult("inapplicable", (f"grid certificate: {exc}",), None, None)
    if certificate.factors is None or certificate.load_ids != grid1.load_ids:
        raise ValidationError("certificate does not belong to this grid")
    if not certificate.passed:
        reasons.append("the grid's own block condition does not hold on its virtual grid")

    a9 = check_assumption9(spec, grid1, microgrid, ledger1, ledger2)
    if a9.over_budget:
        reasons.append(f"new lines exceed the remaining virtual shunts at nodes {list(a9.over_budget)}")
    if not a9.hierarchy.passed:
        reasons.append(f"merged grid violates the hierarchy assumption at nodes {a9.hierarchy.failing}")
    if reasons:
        return AttachResult("inapplicable", tuple(reasons), certificate, a9)

    ren = microgrid_id_map(grid1, microgrid)
    hat = compute_hat_shunts(spec, grid1, microgrid)
    merged = merge_grids(grid1, microgrid, spec)
    ledger = ledger1.consume(dict(zip(grid1.load_ids, hat.load1)),
                             dict(zip(grid1.source_ids, hat.source1)))
    ledger = ledger.union(
        ledger2.consume(dict(zip(microgrid.load_ids, hat.load2)),
                        dict(zip(microgrid.source_ids, hat.source2))).renamed(ren)
    )
    virtual = apply_virtual_shunts(merged, ledger)
    n1 = grid1.n_loads
    A = virtual.Y_LL
    ext = extend_bcd(certificate.factors, A[n1:, :n1], A[n1:, n1:])

    injection = virtual.source_injection
    bound = ext.apply_inverse_factors(injection)
    v_prime = ext.solve(injection)
    bad = [i for i, b in zip(virtual.load_ids, bound) if not b > 0]
    if bad:
        return AttachResult(
            "inapplicable",
            (f"C~^T V' is not positive at load nodes {bad}",),
            certificate, a9, merged=merged, ledger=ledger, hat=hat, id_map=ren,
        )
    b1, b2 = bound[:n1], bound[n1:]
    P1, P2 = virtual.P_L[:n1], virtual.P_L[n1:]
    lhs2 = ext._r_solver.solve(ext.coupling_action @ (P1 / b1) + P2 / b2)
    rhs2 = b2 / 4
    ids2 = virtual.load_ids[n1:]
    margin2 = condition_margin(lhs2, rhs2)
    report = FeasibilityReport(
        condition="thm8",
        passed=bool(margin2 > epsilon),
        load_ids=ids2,
        v_open=v_prime[n1:],
        lhs=lhs2,
        rhs=rhs2,
        margin=margin2,
        source_injection=injection[n1:],
        epsilon=epsilon,
        bound_vector=b2,
    )

    lhs1 = certificate.factors.solve_d(certificate.factors.solve_c(P1 / b1))
    lhs = np.concatenate([lhs1, lhs2])
    margin = condition_margin(lhs, bound / 4)
    merged_cert = FeasibilityReport(
        condition="thm6",
        passed=bool(margin > epsilon),
        load_ids=virtual.load_ids,
        v_open=v_prime,
        lhs=lhs,
        rhs=bound / 4,
        margin=margin,
        source_injection=injection,
        epsilon=epsilon,
        bound_vector=bound,
        notes=("virtual merged grid certified by extending the grid's factors",),
        factors=ext.as_block_cholesky(),
    )
    status = "pass" if report.passed else "fail"
    if report.passed and not merged_cert.passed:
        raise ArithmeticError(
            "microgrid rows pass but the inherited rows of the merged certificate "
            "fail; the grid certificate is inconsistent with its factors"
        )
    return AttachResult(status, (), certificate, a9, report, merged_cert, ext,
                        merged, ledger, hat, ren)
