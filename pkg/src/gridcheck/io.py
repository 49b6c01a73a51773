"""JSON file formats for grids, shunt ledgers, interconnections and reports.

Units are SI throughout: conductance in siemens, voltage in volts, power in
watts.  Numbers may be written as JSON numbers or as rational strings such
as ``"2/25"``; rationals survive a round trip unchanged.  Output is
deterministic: keys keep their insertion order and floats are written with
17 significant digits.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from gridcheck.errors import ValidationError
from gridcheck.grid import GridGraph, Line, NodeKind, PartitionedGrid, partition_grid
from gridcheck.interconnect import InterconnectionSpec, ShuntLedger

__all__ = [
    "SCHEMA_VERSION",
    "GridFile",
    "dumps",
    "load_json",
    "read_grid",
    "write_grid",
    "read_ledger",
    "write_ledger",
    "read_spec",
    "write_spec",
]

SCHEMA_VERSION = 1
UNITS = {"conductance": "S", "voltage": "V", "power": "W"}


def _fmt_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, Fraction):
        return json.dumps(f"{x.numerator}/{x.denominator}")
    x = float(x)
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if not any(c in text for c in ".eE"):
        text += ".0"
    return text


def dumps(obj: Any, indent: int = 2) -> str:
    """Serialize ``obj`` as JSON with 17-significant-digit floats."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            return "null"
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, (bool, np.bool_, int, float, Fraction, np.integer, np.floating)):
            return _fmt_number(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            seq = list(o)
            if not seq:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
                return "[" + ", ".join(enc(v, level + 1) for v in seq) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in seq) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read file ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None


def _number(value, where: str):
    if isinstance(value, bool) or value is None:
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            pass
    raise ValidationError(f"{where}: expected a number, got {value!r}")


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    if key not in obj:
        raise ValidationError(f"{where}: missing field '{key}'")
    return obj[key]


def _check_version(doc, where):
    version = _field(doc, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"{where}: unsupported schema_version {version!r}")


@dataclass(frozen=True)
class GridFile:
    """In-memory form of a grid file.

    ``nodes`` holds ``(id, kind, value, shunt_capacity)`` where ``value`` is
    the source voltage or the load demand.  ``microgrids`` maps hierarchy
    index to its node ids.
    """

    nodes: tuple[tuple[int, NodeKind, Any, Any], ...]
    lines: tuple[tuple[int, int, Any], ...]
    microgrids: tuple[tuple[int, tuple[int, ...]], ...]

    @classmethod
    def from_dict(cls, doc: Any, where: str = "grid") -> "GridFile":
        _check_version(doc, where)
        nodes, lines, micro = [], [], []
        raw_nodes = _field(doc, "nodes", where)
        if not isinstance(raw_nodes, list):
            raise ValidationError(f"{where}.nodes: expected a list")
        for n, item in enumerate(raw_nodes):
            at = f"{where}.nodes[{n}]"
            nid = _field(item, "id", at)
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise ValidationError(f"{at}.id: expected an integer")
            try:
                kind = NodeKind(_field(item, "kind", at))
            except ValueError:
                raise ValidationError(f"{at}.kind: must be 'load' or 'source'") from None
            if kind is NodeKind.SOURCE:
                value = _number(_field(item, "voltage", at), f"{at}.voltage")
                cap = None
            else:
                value = _number(_field(item, "power", at), f"{at}.power")
                cap = item.get("shunt_capacity")
                cap = None if cap is None else _number(cap, f"{at}.shunt_capacity")
            nodes.append((nid, kind, value, cap))
        for n, item in enumerate(_field(doc, "lines", where)):
            at = f"{where}.lines[{n}]"
            i, j = _field(item, "i", at), _field(item, "j", at)
            g = _number(_field(item, "conductance", at), f"{at}.conductance")
            lines.append((i, j, g))
        for n, item in enumerate(_field(doc, "microgrids", where)):
            at = f"{where}.microgrids[{n}]"
            idx = _field(item, "index", at)
            members = _field(item, "nodes", at)
            micro.append((idx, tuple(members)))
        out = cls(tuple(nodes), tuple(lines), tuple(micro))
        out.to_partitioned()  # validate structure eagerly
        return out

    def to_dict(self) -> dict:
        nodes = []
        for nid, kind, value, cap in self.nodes:
            if kind is NodeKind.SOURCE:
                nodes.append({"id": nid, "kind": kind.value, "voltage": value})
            else:
                entry = {"id": nid, "kind": kind.value, "power": value}
                if cap is not None:
                    entry["shunt_capacity"] = cap
                nodes.append(entry)
        return {
            "schema_version": SCHEMA_VERSION,
            "units": dict(UNITS),
            "nodes": nodes,
            "lines": [{"i": i, "j": j, "conductance": g} for i, j, g in self.lines],
            "microgrids": [{"index": k, "nodes": list(ids)} for k, ids in self.microgrids],
        }

    def graph(self) -> GridGraph:
        return GridGraph(tuple((nid, kind) for nid, kind, _, _ in self.nodes),
                         tuple(Line(i, j, g) for i, j, g in self.lines))

    def membership(self) -> dict[int, int]:
        out = {}
        for idx, members in self.microgrids:
            for nid in members:
                if nid in out:
                    raise ValidationError(f"node {nid} belongs to two microgrids")
                out[nid] = idx
        return out

    @property
    def exact(self) -> bool:
        """True when every number in the file is an integer or a rational."""
        values = [v for _, _, v, _ in self.nodes] + [g for _, _, g in self.lines]
        values += [c for *_, c in self.nodes if c is not None]
        return all(isinstance(v, (int, Fraction)) for v in values)

    def to_partitioned(self, exact: bool = False) -> PartitionedGrid:
        def conv(v):
            return v if exact else float(v)
        graph = GridGraph(tuple((nid, kind) for nid, kind, _, _ in self.nodes),
                          tuple(Line(i, j, conv(g)) for i, j, g in self.lines))
        v_s = {nid: v for nid, kind, v, _ in self.nodes if kind is NodeKind.SOURCE}
        p_l = {nid: v for nid, kind, v, _ in self.nodes if kind is NodeKind.LOAD}
        return partition_grid(graph, self.membership(), v_s, p_l, exact=exact)

    def ledger(self) -> ShuntLedger:
        """Ledger with the file's shunt capacities and nothing consumed."""
        cap = {}
        for nid, kind, _, c in self.nodes:
            if kind is NodeKind.LOAD:
                cap[nid] = 0.0 if c is None else float(c)
        return ShuntLedger(cap)

    @classmethod
    def from_partitioned(cls, grid: PartitionedGrid,
                         ledger: ShuntLedger | None = None) -> "GridFile":
        """File form of a physical grid; capacities are taken from ``ledger``."""
        p = dict(zip(grid.load_ids, grid.P_L))
        v = dict(zip(grid.source_ids, grid.V_S))
        nodes = []
        for nid, kind in grid.graph.nodes:
            if kind is NodeKind.SOURCE:
                nodes.append((nid, kind, _plain(v[nid]), None))
            else:
                cap = None if ledger is None else _plain(ledger.capacity.get(nid))
                nodes.append((nid, kind, _plain(p[nid]), cap))
        lines = tuple((ln.i, ln.j, _plain(ln.conductance)) for ln in grid.graph.lines)
        groups: dict[int, list[int]] = {}
        for nid in grid.graph.ids:
            groups.setdefault(grid.membership[nid], []).append(nid)
        micro = tuple((k, tuple(ids)) for k, ids in sorted(groups.items()))
        return cls(tuple(nodes), lines, micro)


def _plain(x):
    if x is None or isinstance(x, (int, Fraction)):
        return x
    if isinstance(x, np.integer):
        return int(x)
    return float(x)


def read_grid(path: str | Path) -> GridFile:
    return GridFile.from_dict(load_json(path), where=str(path))


def write_grid(path: str | Path, grid: GridFile) -> None:
    Path(path).write_text(dumps(grid.to_dict()))


def ledger_to_dict(ledger: ShuntLedger) -> dict:
    return {"schema_version": SCHEMA_VERSION, "units": {"conductance": "S"},
            **ledger.to_dict()}


def read_ledger(path: str | Path) -> ShuntLedger:
    doc = load_json(path)
    where = str(path)
    _check_version(doc, where)
    cap, used, src = {}, {}, {}
    for n, item in enumerate(_field(doc, "loads", where)):
        at = f"{where}.loads[{n}]"
        nid = _field(item, "id", at)
        cap[nid] = float(_number(_field(item, "capacity", at), f"{at}.capacity"))
        used[nid] = float(_number(item.get("consumed", 0), f"{at}.consumed"))
    for n, item in enumerate(doc.get("sources", [])):
        at = f"{where}.sources[{n}]"
        src[_field(item, "id", at)] = float(_number(_field(item, "consumed", at), f"{at}.consumed"))
    return ShuntLedger(cap, used, src)


def write_ledger(path: str | Path, ledger: ShuntLedger) -> None:
    Path(path).write_text(dumps(ledger_to_dict(ledger)))


def spec_to_dict(spec: InterconnectionSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "units": {"conductance": "S"},
        "lines": [{"grid_node": a, "microgrid_node": b, "conductance": _plain(g)}
                  for a, b, g in spec.lines],
    }


def read_spec(path: str | Path) -> InterconnectionSpec:
    doc = load_json(path)
    where = str(path)
    _check_version(doc, where)
    lines = []
    for n, item in enumerate(_field(doc, "lines", where)):
        at = f"{where}.lines[{n}]"
        lines.append((_field(item, "grid_node", at), _field(item, "microgrid_node", at),
                      float(_number(_field(item, "conductance", at), f"{at}.conductance"))))
    return InterconnectionSpec(tuple(lines))


def write_spec(path: str | Path, spec: InterconnectionSpec) -> None:
    Path(path).write_text(dumps(spec_to_dict(spec)))
