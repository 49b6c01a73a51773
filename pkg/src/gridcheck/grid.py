"""Grid graphs, load/source partitions and the microgrid hierarchy.

A grid is an undirected graph whose nodes are loads or sources and whose
lines carry a positive conductance (siemens).  Microgrids partition the node
set; their numbering ``1..k`` is the order in which they joined the grid and
fixes the block order used by every factorization downstream.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from gridcheck.errors import ValidationError

__all__ = [
    "NodeKind",
    "Line",
    "GridGraph",
    "BlockStructure",
    "PartitionedGrid",
    "HierarchyVerdict",
    "HierarchyReport",
    "build_laplacian",
    "partition_grid",
    "check_hierarchy_assumption",
    "to_exact",
]


class NodeKind(str, enum.Enum):
    LOAD = "load"
    SOURCE = "source"


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    conductance: float


def to_exact(value) -> Fraction:
    """Convert a number to a Fraction, reading floats by their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridGraph:
    """Weighted undirected graph of load and source nodes.

    Node ids are arbitrary integers supplied by the user; the position of a
    node in :attr:`nodes` is its dense index in :func:`build_laplacian`.
    """

    nodes: tuple[tuple[int, NodeKind], ...]
    lines: tuple[Line, ...] = ()

    def __post_init__(self):
        nodes = tuple((int(i), NodeKind(k)) for i, k in self.nodes)
        lines = tuple(
            ln if isinstance(ln, Line) else Line(int(ln[0]), int(ln[1]), ln[2])
            for ln in self.lines
        )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lines", lines)

        ids = [i for i, _ in nodes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate node ids: {dup}")
        known = set(ids)
        seen = set()
        for ln in lines:
            where = f"line ({ln.i}, {ln.j})"
            if ln.i not in known or ln.j not in known:
                raise ValidationError(f"{where} references an unknown node")
            if ln.i == ln.j:
                raise ValidationError(f"{where} is a self-loop")
            if not ln.conductance > 0:
                raise ValidationError(
                    f"{where} has nonpositive conductance {ln.conductance!r}"
                )
            key = frozenset((ln.i, ln.j))
            if key in seen:
                raise ValidationError(
                    f"{where} duplicates an existing line; aggregate parallel "
                    "conductances before loading"
                )
            seen.add(key)

    @classmethod
    def from_edges(cls, nodes: Mapping[int, NodeKind | str] | Iterable,
                   lines: Iterable = ()) -> "GridGraph":
        if isinstance(nodes, Mapping):
            nodes = nodes.items()
        return cls(tuple(nodes), tuple(lines))

    @cached_property
    def index(self) -> dict[int, int]:
        return {nid: pos for pos, (nid, _) in enumerate(self.nodes)}

    @cached_property
    def kinds(self) -> dict[int, NodeKind]:
        return dict(self.nodes)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.nodes]

    @property
    def loads(self) -> list[int]:
        return [i for i, k in self.nodes if k is NodeKind.LOAD]

    @property
    def sources(self) -> list[int]:
        return [i for i, k in self.nodes if k is NodeKind.SOURCE]

    @cached_property
    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i: [] for i in self.ids}
        for ln in self.lines:
            adj[ln.i].append(ln.j)
            adj[ln.j].append(ln.i)
        return adj

    def reachable(self, starts: Iterable[int], allowed=None) -> set[int]:
        """Breadth-first closure of ``starts`` moving only through ``allowed``."""
        allowed = set(self.ids) if allowed is None else set(allowed)
        seen = {s for s in starts if s in allowed}
        queue = deque(seen)
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if v in allowed and v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen


def build_laplacian(graph: GridGraph, exact: bool = False) -> np.ndarray:
    """Weighted Laplacian in the node order of ``graph.nodes``.

    With ``exact=True`` the result is an object array of Fractions.
    """
    n = len(graph.nodes)
    if exact:
        lap = np.full((n, n), Fraction(0), dtype=object)
    else:
        lap = np.zeros((n, n))
    idx = graph.index
    for ln in graph.lines:
        a, b = idx[ln.i], idx[ln.j]
        w = to_exact(ln.conductance) if exact else float(ln.conductance)
        lap[a, b] -= w
        lap[b, a] -= w
        lap[a, a] += w
        lap[b, b] += w
    return lap


@dataclass(frozen=True)
class BlockStructure:
    """Sizes of consecutive diagonal blocks, in hierarchy order."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if any(s <= 0 for s in sizes):
            raise ValidationError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for s in self.sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    def leading(self, i: int) -> "BlockStructure":
        return BlockStructure(self.sizes[:i])


@dataclass(frozen=True, eq=False)
class PartitionedGrid:
    """Admittance blocks of a grid split into loads (L) and sources (S).

    Load rows are ordered by ascending microgrid index, then node id, so each
    microgrid occupies a contiguous block of ``Y_LL``.  ``shunts`` is the
    diagonal added on the load rows on top of the line Laplacian (virtual
    shunts, or nothing for a physical grid).
    """

    graph: GridGraph
    membership: Mapping[int, int]
    load_ids: tuple[int, ...]
    source_ids: tuple[int, ...]
    Y_LL: np.ndarray
    Y_LS: np.ndarray
    Y_SS: np.ndarray
    V_S: np.ndarray
    P_L: np.ndarray
    shunts: np.ndarray
    exact: bool = False
    load_blocks: tuple[int, ...] = field(default=())

    @property
    def Y_SL(self) -> np.ndarray:
        return self.Y_LS.T

    @property
    def n_loads(self) -> int:
        return len(self.load_ids)

    @property
    def k(self) -> int:
        return max(self.membership.values(), default=0)

    @property
    def structure(self) -> BlockStructure:
        sizes = [self.load_blocks.count(m) for m in range(1, self.k + 1)]
        return BlockStructure(tuple(s for s in sizes if s))

    @property
    def source_injection(self) -> np.ndarray:
        """Current pushed by the sources into neighbouring loads, ``-Y_LS V_S``."""
        return -(self.Y_LS @ self.V_S)

    @property
    def ordering(self) -> tuple[int, ...]:
        """Node ids in row order of the reassembled admittance matrix."""
        return self.load_ids + self.source_ids

    def reassemble(self) -> np.ndarray:
        """Full ``[[Y_LL, Y_LS], [Y_SL, Y_SS]]`` in :attr:`ordering`."""
        return np.block([[self.Y_LL, self.Y_LS], [self.Y_SL, self.Y_SS]])

    def with_shunts(self, extra: np.ndarray) -> "PartitionedGrid":
        """Copy with ``diag(extra)`` added to the load block."""
        extra = np.asarray(extra, dtype=self.Y_LL.dtype)
        if extra.shape != (self.n_loads,):
            raise ValidationError(
                f"shunt vector has shape {extra.shape}, expected ({self.n_loads},)"
            )
        y_ll = self.Y_LL.copy()
        y_ll[np.diag_indices(self.n_loads)] += extra
        return _replace(self, Y_LL=_readonly(y_ll),
                        shunts=_readonly(self.shunts + extra))

    def with_demand(self, P_L: np.ndarray) -> "PartitionedGrid":
        P_L = np.array(P_L, dtype=self.P_L.dtype)
        if P_L.shape != self.P_L.shape:
            raise ValidationError("demand vector does not match the load count")
        return _replace(self, P_L=_readonly(P_L))

    def as_float(self) -> "PartitionedGrid":
        if not self.exact:
            return self
        conv = {name: _readonly(np.asarray(getattr(self, name), dtype=float))
                for name in ("Y_LL", "Y_LS", "Y_SS", "V_S", "P_L", "shunts")}
        return _replace(self, exact=False, **conv)

    def load_position(self, node_id: int) -> int:
        return self.load_ids.index(node_id)


def _replace(grid: PartitionedGrid, **changes) -> PartitionedGrid:
    return replace(grid, **changes)


def partition_grid(graph: GridGraph, membership: Mapping[int, int],
                   V_S: Mapping[int, float], P_L: Mapping[int, float],
                   exact: bool = False) -> PartitionedGrid:
    """Split the Laplacian of ``graph`` into load and source blocks.

    Parameters
    ----------
    membership : mapping node id -> microgrid index (1..k, contiguous)
    V_S : source voltages in volts, strictly positive
    P_L : load power demands in watts, nonnegative
    exact : build Fraction matrices instead of float64
    """
    membership = {int(k): int(v) for k, v in membership.items()}
    missing = [i for i in graph.ids if i not in membership]
    if missing:
        raise ValidationError(f"nodes without a microgrid: {missing}")
    extra = sorted(set(membership) - set(graph.ids))
    if extra:
        raise ValidationError(f"membership names unknown nodes: {extra}")
    used = sorted(set(membership.values()))
    if used and used != list(range(1, len(used) + 1)):
        raise ValidationError(
            f"microgrid indices must be contiguous from 1, got {used}"
        )

    kinds = graph.kinds
    load_ids = tuple(sorted(graph.loads, key=lambda i: (membership[i], i)))
    source_ids = tuple(sorted(graph.sources, key=lambda i: (membership[i], i)))

    conv = to_exact if exact else float
    dtype = object if exact else float
    try:
        v_s = [conv(V_S[i]) for i in source_ids]
    except KeyError as exc:
        raise ValidationError(f"source node {exc.args[0]} has no voltage") from None
    try:
        p_l = [conv(P_L[i]) for i in load_ids]
    except KeyError as exc:
        raise ValidationError(f"load node {exc.args[0]} has no power demand") from None
    for i, v in zip(source_ids, v_s):
        if not v > 0:
            raise ValidationError(f"source node {i} has nonpositive voltage {v}")
    for i, p in zip(load_ids, p_l):
        if p < 0:
            raise ValidationError(f"load node {i} has negative power demand {p}")
    stray = [i for i in set(V_S) | set(P_L)
             if i in kinds and ((i in V_S and kinds[i] is NodeKind.LOAD)
                                or (i in P_L and kinds[i] is NodeKind.SOURCE))]
    if stray:
        raise ValidationError(f"voltage/demand given for the wrong node kind: {sorted(stray)}")

    lap = build_laplacian(graph, exact=exact)
    idx = graph.index
    li = [idx[i] for i in load_ids]
    si = [idx[i] for i in source_ids]
    zero = Fraction(0) if exact else 0.0
    return PartitionedGrid(
        graph=graph,
        membership=membership,
        load_ids=load_ids,
        source_ids=source_ids,
        Y_LL=_readonly(lap[np.ix_(li, li)]),
        Y_LS=_readonly(lap[np.ix_(li, si)]),
        Y_SS=_readonly(lap[np.ix_(si, si)]),
        V_S=_readonly(np.array(v_s, dtype=dtype)),
        P_L=_readonly(np.array(p_l, dtype=dtype)),
        shunts=_readonly(np.array([zero] * len(load_ids), dtype=dtype)),
        exact=exact,
        load_blocks=tuple(membership[i] for i in load_ids),
    )


class HierarchyVerdict(str, enum.Enum):
    SATISFIES_I = "satisfies-i"
    SATISFIES_II = "satisfies-ii"
    BOTH = "both"
    NEITHER = "neither"

    @classmethod
    def of(cls, i: bool, ii: bool) -> "HierarchyVerdict":
        if i and ii:
            return cls.BOTH
        if i:
            return cls.SATISFIES_I
        if ii:
            return cls.SATISFIES_II
        return cls.NEITHER


@dataclass(frozen=True)
class HierarchyReport:
    """Per-load verdicts for the island/descending-path assumption.

    ``verdicts`` reads condition (ii) literally: the load shares a connected
    component of the whole graph with some node of a lower microgrid.
    ``strict_verdicts`` uses the path shape the positivity argument relies on:
    the path stays inside the load's own microgrid until its last step into a
    lower one.
    """

    verdicts: Mapping[int, HierarchyVerdict]
    strict_verdicts: Mapping[int, HierarchyVerdict]

    @property
    def passed(self) -> bool:
        return all(v is not HierarchyVerdict.NEITHER for v in self.verdicts.values())

    @property
    def strict_passed(self) -> bool:
        return all(v is not HierarchyVerdict.NEITHER
                   for v in self.strict_verdicts.values())

    @property
    def failing(self) -> list[int]:
        return sorted(i for i, v in self.verdicts.items() if v is HierarchyVerdict.NEITHER)

    @property
    def notes(self) -> list[str]:
        out = []
        differ = sorted(i for i in self.verdicts
                        if self.verdicts[i] is not self.strict_verdicts[i])
        if differ:
            out.append(
                "literal and path-shaped readings of condition (ii) differ at "
                f"load nodes {differ}"
            )
        return out

    def satisfying(self, which: str) -> list[int]:
        """Load ids satisfying condition ``'i'`` or ``'ii'`` (literal reading)."""
        want = {"i": (HierarchyVerdict.SATISFIES_I, HierarchyVerdict.BOTH),
                "ii": (HierarchyVerdict.SATISFIES_II, HierarchyVerdict.BOTH)}[which]
        return sorted(i for i, v in self.verdicts.items() if v in want)


def check_hierarchy_assumption(grid: PartitionedGrid,
                               graph: GridGraph | None = None) -> HierarchyReport:
    """Check that every load reaches a source along a hierarchy-descending route.

    Condition (i): the load reaches a source of its own microgrid inside the
    subgraph induced by that microgrid.  Condition (ii): the load is
    path-connected in the whole graph to a node of a lower-indexed microgrid.
    """
    graph = graph or grid.graph
    member = grid.membership
    kinds = graph.kinds
    by_grid: dict[int, list[int]] = {}
    for nid in graph.ids:
        by_grid.setdefault(member[nid], []).append(nid)

    # lowest microgrid index present in each connected component
    comp_min: dict[int, int] = {}
    for nid in graph.ids:
        if nid in comp_min:
            continue
        comp = graph.reachable([nid])
        low = min(member[c] for c in comp)
        for c in comp:
            comp_min[c] = low

    verdicts, strict = {}, {}
    for m, members in sorted(by_grid.items()):
        inside = set(members)
        own_sources = [i for i in members if kinds[i] is NodeKind.SOURCE]
        island = graph.reachable(own_sources, allowed=inside)
        gates = [i for i in members
                 if any(member[j] < m for j in graph.adjacency[i])]
        descending = graph.reachable(gates, allowed=inside)
        for nid in members:
            if kinds[nid] is not NodeKind.LOAD:
                continue
            cond_i = nid in island
            verdicts[nid] = HierarchyVerdict.of(cond_i, comp_min[nid] < m)
            strict[nid] = HierarchyVerdict.of(cond_i, nid in descending)
    return HierarchyReport(verdicts, strict)
