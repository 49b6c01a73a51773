"""Random grids that satisfy the microgrid hierarchy assumption by construction.

Every load is wired, when it is created, to an *anchor*: a source of its own
microgrid, an earlier load of its own microgrid, or any node of a lower
microgrid.  Anchors already have a hierarchy-descending route to a source,
so each new load inherits one.  Extra lines are then sprinkled at random,
which can only add routes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridcheck.errors import ConditionNotApplicable
from gridcheck.feasibility import check_thm1, check_thm6
from gridcheck.grid import GridGraph, Line, NodeKind, PartitionedGrid, partition_grid
from gridcheck.interconnect import (
    InterconnectionSpec,
    ShuntLedger,
    apply_virtual_shunts,
    check_plug_and_play,
)

__all__ = ["CorpusConfig", "random_grid", "random_corpus", "AttachCase", "random_attach_case"]


@dataclass(frozen=True)
class CorpusConfig:
    max_loads: int = 30
    max_microgrids: int = 4
    max_sources: int = 3
    conductance: tuple[float, float] = (0.5, 2.0)
    voltage: tuple[float, float] = (0.95, 1.05)
    extra_line_density: float = 0.08
    # demand is this fraction of the thm1 boundary scale
    load_scale: tuple[float, float] = (0.3, 1.2)


def _wire(rng, cfg, first_id, k_offset, n_loads_per, sources_per, lower_nodes,
          lines, kinds, member):
    """Create microgrids with loads anchored on a descending route."""
    nid = first_id
    lower = list(lower_nodes)
    for m, (nl, ns) in enumerate(zip(n_loads_per, sources_per), start=k_offset + 1):
        srcs = list(range(nid, nid + ns))
        nid += ns
        for s in srcs:
            kinds[s] = NodeKind.SOURCE
            member[s] = m
        own = list(srcs)
        for _ in range(nl):
            kinds[nid] = NodeKind.LOAD
            member[nid] = m
            pool = own + lower
            if not pool:
                raise RuntimeError("microgrid without sources and nothing below it")
            anchor = pool[rng.integers(len(pool))]
            lines[frozenset((nid, anchor))] = rng.uniform(*cfg.conductance)
            own.append(nid)
            nid += 1
        lower += own
    return nid


def _sprinkle(rng, cfg, ids, lines):
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            key = frozenset((ids[a], ids[b]))
            if key not in lines and rng.random() < cfg.extra_line_density:
                lines[key] = rng.uniform(*cfg.conductance)


def _graph(kinds, lines):
    return GridGraph(tuple(sorted(kinds.items())),
                     tuple(Line(*sorted(k), float(g)) for k, g in
                           sorted(lines.items(), key=lambda kv: sorted(kv[0]))))


def _split(rng, total, parts):
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False)) if parts > 1 else []
    return list(np.diff(np.concatenate([[0], cuts, [total]])).astype(int))


def _thm1_scale(grid: PartitionedGrid) -> float:
    """Largest demand multiplier keeping the thm1 inequality, for unit demand."""
    rep = check_thm1(grid, epsilon=0.0)
    return float(np.min(rep.rhs / rep.lhs))


def random_grid(rng: np.random.Generator, cfg: CorpusConfig = CorpusConfig(),
                n_loads: int | None = None, k: int | None = None) -> PartitionedGrid:
    """A random multi-microgrid grid with demand scaled around the thm1 boundary."""
    n_loads = n_loads or int(rng.integers(1, cfg.max_loads + 1))
    k = k or int(rng.integers(1, min(cfg.max_microgrids, n_loads) + 1))
    per = _split(rng, n_loads, k)
    # only the first microgrid must have a source
    sources = [int(rng.integers(1, cfg.max_sources + 1)) if m == 0 or rng.random() < 0.6 else 0
               for m in range(k)]
    kinds, member, lines = {}, {}, {}
    _wire(rng, cfg, 1, 0, per, sources, [], lines, kinds, member)
    _sprinkle(rng, cfg, sorted(kinds), lines)
    graph = _graph(kinds, lines)
    v_s = {i: rng.uniform(*cfg.voltage) for i, kd in kinds.items() if kd is NodeKind.SOURCE}
    direction = {i: rng.uniform(0.2, 1.0) for i, kd in kinds.items() if kd is NodeKind.LOAD}
    grid = partition_grid(graph, member, v_s, direction)
    scale = _thm1_scale(grid) * rng.uniform(*cfg.load_scale)
    return grid.with_demand(grid.P_L * scale)


def random_corpus(count: int, seed: int = 0, cfg: CorpusConfig = CorpusConfig()):
    rng = np.random.default_rng(seed)
    return [random_grid(rng, cfg) for _ in range(count)]


@dataclass(frozen=True, eq=False)
class AttachCase:
    grid: PartitionedGrid
    ledger: ShuntLedger
    microgrid: PartitionedGrid
    microgrid_ledger: ShuntLedger
    spec: InterconnectionSpec


def random_attach_case(rng: np.random.Generator, cfg: CorpusConfig = CorpusConfig(),
                       max_loads: int = 15) -> AttachCase:
    """A certified grid, a microgrid and boundary lines within the shunt budget.

    Grid demand is scaled so the grid's own virtual block condition holds;
    microgrid demand is scaled around the boundary of its block rows.
    """
    n1 = int(rng.integers(1, max_loads + 1))
    k1 = int(rng.integers(1, min(cfg.max_microgrids - 1, n1) + 1))
    per1 = _split(rng, n1, k1)
    src1 = [int(rng.integers(1, cfg.max_sources + 1)) if m == 0 or rng.random() < 0.6 else 0
            for m in range(k1)]
    kinds1, member1, lines1 = {}, {}, {}
    nxt = _wire(rng, cfg, 1, 0, per1, src1, [], lines1, kinds1, member1)
    _sprinkle(rng, cfg, sorted(kinds1), lines1)

    # microgrid ids continue after the grid's; loads without an own source are
    # anchored on a boundary line into the grid
    n2 = int(rng.integers(1, max_loads + 1))
    ns2 = int(rng.integers(0, cfg.max_sources + 1))
    kinds2, member2, lines2 = {}, {}, {}
    boundary: dict[tuple[int, int], float] = {}
    grid_nodes = sorted(kinds1)
    srcs2 = list(range(nxt, nxt + ns2))
    for s in srcs2:
        kinds2[s] = NodeKind.SOURCE
        member2[s] = 1
    nid = nxt + ns2
    own = list(srcs2)
    for _ in range(n2):
        kinds2[nid] = NodeKind.LOAD
        member2[nid] = 1
        if not own or rng.random() < 0.25:
            target = grid_nodes[rng.integers(len(grid_nodes))]
            boundary[(target, nid)] = rng.uniform(*cfg.conductance)
        else:
            anchor = own[rng.integers(len(own))]
            lines2[frozenset((nid, anchor))] = rng.uniform(*cfg.conductance)
        own.append(nid)
        nid += 1
    _sprinkle(rng, cfg, sorted(kinds2), lines2)
    for a in grid_nodes:
        for b in sorted(kinds2):
            if (a, b) not in boundary and rng.random() < 0.03:
                boundary[(a, b)] = rng.uniform(*cfg.conductance)
    spec = InterconnectionSpec(tuple((a, b, float(g)) for (a, b), g in sorted(boundary.items())))

    used: dict[int, float] = {}
    for (a, b), g in boundary.items():
        used[a] = used.get(a, 0.0) + g
        used[b] = used.get(b, 0.0) + g

    def ledger(kinds):
        cap = {}
        for i, kd in kinds.items():
            if kd is NodeKind.LOAD:
                base = used.get(i, 0.0)
                cap[i] = base + (rng.uniform(0.0, 1.0) if rng.random() < 0.5 else 0.0)
        return ShuntLedger(cap)

    ledger1, ledger2 = ledger(kinds1), ledger(kinds2)
    g1 = partition_grid(_graph(kinds1, lines1), member1,
                        {i: rng.uniform(*cfg.voltage) for i, kd in kinds1.items() if kd is NodeKind.SOURCE},
                        {i: rng.uniform(0.2, 1.0) for i, kd in kinds1.items() if kd is NodeKind.LOAD})
    g2 = partition_grid(_graph(kinds2, lines2), member2,
                        {i: rng.uniform(*cfg.voltage) for i, kd in kinds2.items() if kd is NodeKind.SOURCE},
                        {i: rng.uniform(0.2, 1.0) for i, kd in kinds2.items() if kd is NodeKind.LOAD})

    cert = check_thm6(apply_virtual_shunts(g1, ledger1), epsilon=0.0)
    s1 = float(np.min(cert.rhs / cert.lhs)) * rng.uniform(0.3, 0.95)
    g1 = g1.with_demand(g1.P_L * s1)

    # microgrid rows are affine in its own demand
    base = check_plug_and_play(g1, ledger1, g2.with_demand(g2.P_L * 0.0), ledger2, spec,
                               epsilon=0.0)
    unit = check_plug_and_play(g1, ledger1, g2, ledger2, spec, epsilon=0.0)
    if base.report is None or unit.report is None:
        raise ConditionNotApplicable("generated interconnection is not applicable")
    room = base.report.rhs - base.report.lhs
    inc = unit.report.lhs - base.report.lhs
    pos = inc > 0
    t = float(np.min(room[pos] / inc[pos])) if pos.any() else 1.0
    g2 = g2.with_demand(g2.P_L * max(t, 0.0) * rng.uniform(*cfg.load_scale))
    return AttachCase(g1, ledger1, g2, ledger2, spec)
