from fractions import Fraction as F
from pathlib import Path

import numpy as np
import pytest

from gridcheck.corpus import random_attach_case, random_corpus
from gridcheck.grid import GridGraph, partition_grid
from gridcheck.interconnect import InterconnectionSpec, ShuntLedger

FIXTURES = Path(__file__).parent / "fixtures"

# Two-microgrid reference grid with unit conductances: M1 = loads 1, 2 and source 6;
# M2 = loads 3, 4, 5 and source 7.  Node 3 has no line inside M2.
M1_NODES = {1: "load", 2: "load", 6: "source"}
M1_LINES = [(1, 6, 1), (2, 6, 1)]
M2_NODES = {3: "load", 4: "load", 5: "load", 7: "source"}
M2_LINES = [(4, 5, 1), (4, 7, 1), (5, 7, 1)]
CROSSING = [(1, 3, 1), (2, 4, 1), (2, 5, 1), (6, 4, 1)]
P_M1 = {1: F(2, 25), 2: F(2, 25)}
P_M2 = {3: F(1, 25), 4: F(9, 25), 5: F(7, 25)}


def make_m1(exact=True, demand=P_M1):
    g = GridGraph.from_edges(M1_NODES, M1_LINES)
    return partition_grid(g, {1: 1, 2: 1, 6: 1}, {6: 1}, demand, exact=exact)


def make_m2(exact=True, demand=P_M2):
    g = GridGraph.from_edges(M2_NODES, M2_LINES)
    return partition_grid(g, {3: 1, 4: 1, 5: 1, 7: 1}, {7: 1}, demand, exact=exact)


def make_twin(exact=True, order=(1, 2)):
    g = GridGraph.from_edges({**M1_NODES, **M2_NODES}, M1_LINES + M2_LINES + CROSSING)
    a, b = order
    member = {1: a, 2: a, 6: a, 3: b, 4: b, 5: b, 7: b}
    return partition_grid(g, member, {6: 1, 7: 1}, {**P_M1, **P_M2}, exact=exact)


def ledgers(exact=True):
    one = F(1) if exact else 1.0
    return (ShuntLedger({1: 1 * one, 2: 2 * one}),
            ShuntLedger({3: 1 * one, 4: 2 * one, 5: 1 * one}))


SPEC = InterconnectionSpec(tuple(CROSSING))


@pytest.fixture(scope="session")
def corpus():
    return random_corpus(600, seed=2024)


@pytest.fixture(scope="session")
def attach_cases():
    rng = np.random.default_rng(77)
    return [random_attach_case(rng) for _ in range(150)]


_ACCEPTANCE = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    ok = call.excinfo is None
    _ACCEPTANCE.append((marker.args[0], marker.args[1], ok,
                        getattr(item, "acceptance_detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(_ACCEPTANCE):
        line = f"criterion {num} [{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
