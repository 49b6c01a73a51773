from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SPEC, ledgers, make_twin, make_m1, make_m2
from gridcheck.errors import ValidationError
from gridcheck.feasibility import check_thm1, check_thm6, open_circuit_voltages
from gridcheck.grid import GridGraph, partition_grid
from gridcheck.interconnect import (
    InterconnectionSpec,
    ShuntLedger,
    apply_virtual_shunts,
    check_assumption9,
    check_plug_and_play,
    compute_hat_shunts,
    extend_bcd,
    merge_grids,
    microgrid_id_map,
)
from gridcheck.linalg import block_cholesky, inverse, solve
from gridcheck.pf_solver import solve_power_flow

from test_grid import MERGED_Y_LL
from test_linalg import frac, random_m_matrix

R_INV = [[2, 0, 0], [0, F(1, 3), F(1, 6)], [0, F(1, 6), F(11, 24)]]


def attach_twin(exact=True, demand2=None):
    l1, l2 = ledgers(exact)
    m2 = make_m2(exact) if demand2 is None else make_m2(exact, demand=demand2)
    return check_plug_and_play(make_m1(exact), l1, m2, l2, SPEC)


# -- virtual shunts -----------------------------------------------------------

def test_zero_capacity_leaves_grid_unchanged():
    grid = make_twin()
    virt = apply_virtual_shunts(grid, ShuntLedger.zero(grid.load_ids))
    assert virt.Y_LL.tolist() == grid.Y_LL.tolist()
    assert virt.Y_LS.tolist() == grid.Y_LS.tolist()


def test_virtual_m1():
    virt = apply_virtual_shunts(make_m1(), ledgers()[0])
    assert virt.Y_LL.tolist() == [[2, 0], [0, 3]]


def test_virtual_m2():
    virt = apply_virtual_shunts(make_m2(), ledgers()[1])
    assert virt.Y_LL.tolist() == [[1, 0, 0], [0, 4, -1], [0, -1, 3]]


def test_ledger_must_match_loads():
    with pytest.raises(ValidationError, match="missing"):
        apply_virtual_shunts(make_m1(), ShuntLedger({1: 1.0}))


def test_ledger_rejects_overconsumption():
    with pytest.raises(ValidationError):
        ShuntLedger({1: 1.0}, {1: 2.0})


# -- hat shunts ---------------------------------------------------------------

def test_hat_shunts_empty_spec():
    hat = compute_hat_shunts(InterconnectionSpec(()), make_m1(), make_m2())
    assert not any(hat.load1) and not any(hat.load2)
    assert not any(hat.source1) and not any(hat.source2)


def test_hat_shunts_twin():
    # both sides consume exactly their capacity E
    hat = compute_hat_shunts(SPEC, make_m1(), make_m2())
    assert hat.load1.tolist() == [1, 2]
    assert hat.load2.tolist() == [1, 2, 1]
    assert hat.source1.tolist() == [1]
    assert hat.source2.tolist() == [0]


def test_hat_shunts_single_line_to_source():
    spec = InterconnectionSpec(((1, 7, 0.5),))
    hat = compute_hat_shunts(spec, make_m1(False), make_m2(False))
    assert hat.load1.tolist() == [0.5, 0.0]
    assert hat.source2.tolist() == [0.5]


def test_spec_unknown_endpoint():
    with pytest.raises(ValidationError):
        compute_hat_shunts(InterconnectionSpec(((1, 99, 1.0),)), make_m1(), make_m2())


# -- assumption 9 -------------------------------------------------------------

def test_assumption9_twin_zero_slack():
    l1, l2 = ledgers()
    res = check_assumption9(SPEC, make_m1(), make_m2(), l1, l2)
    assert res.passed
    assert set(res.slack.values()) == {0}


def test_assumption9_halved_budget():
    l1, _ = ledgers()
    half = ShuntLedger({3: F(1, 2), 4: F(1), 5: F(1, 2)})
    res = check_assumption9(SPEC, make_m1(), make_m2(), l1, half)
    assert not res.passed
    assert res.over_budget == (3, 4, 5)


def test_assumption9_sourceless_microgrid():
    graph = GridGraph.from_edges({20: "load"})
    micro = partition_grid(graph, {20: 1}, {}, {20: 0.1})
    res = check_assumption9(InterconnectionSpec(()), make_m1(False), micro,
                            ledgers(False)[0], ShuntLedger({20: 0.0}))
    assert not res.passed
    assert res.hierarchy.failing == [20]


# -- merge --------------------------------------------------------------------

def test_merge_twin_gives_merged_matrix():
    merged = merge_grids(make_m1(), make_m2(), SPEC)
    assert merged.Y_LL.tolist() == MERGED_Y_LL
    assert merged.structure.sizes == (2, 3)


def test_merge_empty_spec_is_block_diagonal():
    merged = merge_grids(make_m1(), make_m2(), InterconnectionSpec(()))
    assert not any(merged.Y_LL[:2, 2:].ravel())
    assert merged.Y_LL[2:, 2:].tolist() == make_m2().Y_LL.tolist()


def test_merge_grid_block_gains_hat_shunts():
    merged = merge_grids(make_m1(), make_m2(), SPEC)
    hat = compute_hat_shunts(SPEC, make_m1(), make_m2())
    expected = make_m1().Y_LL + np.diag(hat.load1)
    assert merged.Y_LL[:2, :2].tolist() == expected.tolist()


def test_virtual_diagonal_consistency():
    res = attach_twin()
    virt = apply_virtual_shunts(res.merged, res.ledger)
    l1, l2 = ledgers()
    cap = {**l1.capacity, **l2.capacity}
    hat = np.concatenate([res.hat.load1, res.hat.load2])
    for i, nid in enumerate(virt.load_ids):
        assert virt.Y_LL[i, i] == res.merged.Y_LL[i, i] + cap[nid] - hat[i]


def test_id_collision_is_remapped():
    graph = GridGraph.from_edges({1: "load", 2: "source"}, [(1, 2, 1.0)])
    micro = partition_grid(graph, {1: 1, 2: 1}, {2: 1.0}, {1: 0.01})
    m1 = make_m1(False)
    assert microgrid_id_map(m1, micro) == {1: 7, 2: 8}
    res = check_plug_and_play(m1, ledgers(False)[0].consume({1: 0.0}), micro,
                              ShuntLedger({1: 1.0}), InterconnectionSpec(((2, 1, 0.5),)))
    assert res.passed
    assert res.merged.load_ids == (1, 2, 7)
    assert res.to_dict()["renamed_microgrid_nodes"] == {"1": 7, "2": 8}


# -- extended factors ---------------------------------------------------------

def test_extend_zero_coupling():
    base = block_cholesky(np.diag([2.0, 3.0]), (2,))
    block = np.array([[2.0, -1.0], [-1.0, 2.0]])
    ext = extend_bcd(base, np.zeros((2, 2)), block)
    assert np.array_equal(ext.R, block)
    bcd = ext.as_block_cholesky()
    assert np.array_equal(bcd.C, np.eye(4))


def test_extend_rejects_bad_coupling_shape():
    base = block_cholesky(np.eye(2), (2,))
    with pytest.raises(ValidationError):
        extend_bcd(base, np.zeros((1, 3)), np.eye(1))


def test_extend_matches_full_factorization():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 20))
        a = random_m_matrix(rng, n)
        n1 = int(rng.integers(1, n))
        base = block_cholesky(a[:n1, :n1], (n1,))
        ext = extend_bcd(base, a[n1:, :n1], a[n1:, n1:])
        full = block_cholesky(a, (n1, n - n1))
        bcd = ext.as_block_cholesky()
        np.testing.assert_allclose(bcd.C, full.C, atol=1e-12)
        np.testing.assert_allclose(bcd.D, full.D, atol=1e-12)
        assert np.abs(bcd.reconstruct() - a).max() <= 1e-9 * np.abs(a).max()
        x = rng.normal(size=n)
        np.testing.assert_allclose(ext.solve(x), np.linalg.solve(a, x), rtol=1e-9, atol=1e-12)


# -- plug and play ------------------------------------------------------------

def test_reference_attach_end_to_end_exact():
    res = attach_twin()
    assert res.passed
    assert res.assumption7.lhs.tolist() == [F(2, 25), F(2, 25)]
    assert res.assumption7.rhs.tolist() == [F(1, 8), F(1, 12)]
    assert res.extended.r_inverse().tolist() == R_INV
    assert res.certificate.v_open.tolist() == [1] * 5
    assert res.certificate.bound_vector.tolist() == [F(1, 2), F(1, 3), 1, 1, 1]
    assert res.report.lhs.tolist() == [F(6, 25), F(31, 150), F(143, 600)]
    assert res.report.rhs.tolist() == [F(1, 4)] * 3
    assert res.merged.Y_LL.tolist() == MERGED_Y_LL


def test_reference_attach_replay_of_printed_matrices():
    """Evaluate the microgrid rows from hand-entered matrices only."""
    y21 = frac([[-1, 0], [0, -1], [0, -1]])
    a1_inv = frac([[F(1, 2), 0], [0, F(1, 3)]])
    r_inv = frac(R_INV)
    b1 = [F(1, 2), F(1, 3)]
    b2 = [F(1), F(1), F(1)]
    p1 = np.array([F(2, 25) / b for b in b1], dtype=object)
    p2 = np.array([p / b for p, b in zip([F(1, 25), F(9, 25), F(7, 25)], b2)], dtype=object)
    lhs = -r_inv @ y21 @ a1_inv @ p1 + r_inv @ p2
    assert lhs.tolist() == attach_twin().report.lhs.tolist()


def test_reference_attach_float_path_matches():
    res = attach_twin(exact=False)
    assert res.passed
    np.testing.assert_allclose(res.report.lhs, [0.24, 0.2067, 0.2383], atol=5e-4)
    np.testing.assert_allclose(res.report.lhs, [6 / 25, 31 / 150, 143 / 600], rtol=1e-12)


def test_reference_attach_tripled_demand_fails():
    res = attach_twin(demand2={3: F(3, 25), 4: F(27, 25), 5: F(21, 25)})
    assert res.status == "fail"
    assert res.report.lhs[1] > F(1, 4)
    assert res.merged is not None


def test_halved_budget_is_inapplicable():
    l1, _ = ledgers()
    half = ShuntLedger({3: F(1, 2), 4: F(1), 5: F(1, 2)})
    res = check_plug_and_play(make_m1(), l1, make_m2(), half, SPEC)
    assert res.status == "inapplicable"
    assert "3, 4, 5" in res.reasons[0]


def test_tiny_uncoupled_microgrid_reduces_to_own_check():
    graph = GridGraph.from_edges({30: "load", 31: "source"}, [(30, 31, 1.0)])
    micro = partition_grid(graph, {30: 1, 31: 1}, {31: 1.0}, {30: 1e-6})
    res = check_plug_and_play(make_m1(False), ledgers(False)[0], micro,
                              ShuntLedger({30: 0.0}), InterconnectionSpec(()))
    assert res.passed
    own = check_thm6(micro)
    np.testing.assert_allclose(res.report.lhs, own.lhs, rtol=1e-12)


def test_certificate_is_reused_unmodified():
    l1, l2 = ledgers()
    m1 = make_m1()
    cert = check_thm6(apply_virtual_shunts(m1, l1))
    c_before, d_before = cert.factors.C.tolist(), cert.factors.D.tolist()
    res = check_plug_and_play(m1, l1, make_m2(), l2, SPEC, certificate=cert)
    assert res.extended.base is cert.factors
    assert cert.factors.C.tolist() == c_before
    assert cert.factors.D.tolist() == d_before


def test_plug_and_play_soundness(attach_cases):
    passed = 0
    for case in attach_cases:
        res = check_plug_and_play(case.grid, case.ledger, case.microgrid,
                                  case.microgrid_ledger, case.spec)
        if not res.passed:
            continue
        passed += 1
        virtual = apply_virtual_shunts(res.merged, res.ledger)
        assert check_thm6(virtual).passed
        bcd = res.certificate.factors
        err = np.abs(bcd.reconstruct() - virtual.Y_LL).max()
        assert err <= 1e-9 * np.abs(virtual.Y_LL).max()
        out = solve_power_flow(res.merged)
        assert out.converged and np.all(out.v_load > 0) and out.residual < 1e-9
        v_merged = open_circuit_voltages(res.merged)
        assert np.all(res.certificate.v_open <= v_merged * (1 + 1e-12))
    assert passed >= 50


def test_iterative_attach():
    res = attach_twin()
    graph = GridGraph.from_edges({40: "load", 41: "load"}, [(40, 41, 1.0)])
    third = partition_grid(graph, {40: 1, 41: 1}, {}, {40: F(1, 100), 41: F(1, 100)},
                           exact=True)
    spec = InterconnectionSpec(((7, 40, F(1)),))
    res2 = check_plug_and_play(res.merged, res.ledger, third,
                               ShuntLedger({40: F(1), 41: F(0)}), spec,
                               certificate=res.certificate)
    assert res2.passed
    assert res2.merged.structure.sizes == (2, 3, 2)
    assert res2.extended.base.C.tolist() == res.certificate.factors.C.tolist()


@st.composite
def shunt_instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 15))
    a = random_m_matrix(rng, n)
    e = rng.uniform(0.0, 2.0, n) * (rng.random(n) < 0.6)
    b = rng.uniform(0.0, 2.0, n)
    b[rng.integers(n)] += 0.5
    c = rng.uniform(0.0, 1.0, n)
    return a, e, b, c, rng.uniform(0.05, 2.0)


@settings(max_examples=300, deadline=None)
@given(shunt_instances())
def test_virtual_condition_implies_physical(case):
    a, e, b, c, scale = case
    virt = a + np.diag(e)
    v_virt = solve(virt, b)
    v_phys = solve(a, b)
    assert np.all(v_virt > 0)
    c = c * scale
    if np.all(solve(virt, c / v_virt) < v_virt / 4):
        assert np.all(solve(a, c / v_phys) < v_phys / 4)


def test_virtual_pass_implies_physical_pass_on_grids(attach_cases):
    for case in attach_cases:
        virtual = apply_virtual_shunts(case.grid, case.ledger)
        if check_thm1(virtual).passed:
            assert check_thm1(case.grid).passed


def test_exact_inverse_sanity():
    assert inverse(frac([[2, 0], [0, 3]])).tolist() == [[F(1, 2), 0], [0, F(1, 3)]]
