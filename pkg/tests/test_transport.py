import math

import numpy as np
import pytest

from hypwr.errors import BranchCollision, ChartExit
from hypwr.lopatinskii import find_critical_set
from hypwr.symmetrizer import build_symmetrizer
from hypwr.system_model import BasePoint, Frequency, reduced_symbol
from hypwr.transport import (
    Chart,
    FlowState,
    block_diag_correction,
    boundary_relation_check,
    build_delta_field,
    chart_sample,
    delta_tilde_at,
    flow_growth_and_sandwich,
    flowed_critical_points,
    hamiltonian_flow,
    kernel_invariance_residual,
    real_principal_type_check,
    refined_basis,
    transport_delta,
    transport_residual,
)

SQ2 = math.sqrt(2.0)


def bp(tau, eta, gamma=0.0, t=0.0, y=0.0, x_d=0.0):
    return BasePoint(t, (y,), x_d, Frequency(tau, (eta,), gamma))


@pytest.fixture(scope="module")
def s1v_chart(sys_s1v):
    return Chart.from_dict(sys_s1v.chart)


@pytest.fixture(scope="module")
def s1v_roots(sys_s1v):
    return [r.base_point for r in find_critical_set(sys_s1v, 360) if r.tau > 0]


@pytest.fixture(scope="module")
def s1v_flowed(sys_s1v, s1v_roots):
    return flowed_critical_points(sys_s1v, s1v_roots, 0.5, branch=0)


# flow ----------------------------------------------------------------------


def test_constant_coefficient_flow_is_linear(sys_wr):
    start = FlowState.from_point(bp(2.0, 1.0, t=0.3, y=-0.2))
    tr = hamiltonian_flow(sys_wr, 0, start, 0.8, h=0.1, at=[0.4])
    mu = math.sqrt(3.0)
    for i, x in enumerate(tr.x_d):
        st = tr.state(i)
        assert st.t == pytest.approx(0.3 + x * 2.0 / mu, abs=1e-12)
        assert st.y[0] == pytest.approx(-0.2 - x * 1.0 / mu, abs=1e-12)
        assert (st.tau, st.eta[0]) == (2.0, 1.0)


def test_zero_span_is_identity(sys_s1v):
    start = FlowState.from_point(bp(1.0, 0.3, 0.2, y=0.4, x_d=0.3))
    tr = hamiltonian_flow(sys_s1v, 0, start, 0.3)
    np.testing.assert_array_equal(tr.states[-1], start.vector())


def test_rk4_order(sys_s1v):
    start = FlowState.from_point(bp(1.0, 0.4, 0.0, y=0.2))
    ref = hamiltonian_flow(sys_s1v, 0, start, 1.0, h=1 / 320, estimate_error=False).states[-1]
    e = [np.abs(hamiltonian_flow(sys_s1v, 0, start, 1.0, h=h, estimate_error=False).states[-1]
                - ref).max() for h in (0.2, 0.1)]
    assert 16 * 0.8 <= e[0] / e[1] <= 16 * 1.2


def test_step_control_meets_tolerance(sys_s1v):
    start = FlowState.from_point(bp(1.0, 0.4, 0.0, y=0.2))
    tr = hamiltonian_flow(sys_s1v, 0, start, 1.0, h=0.2, control=True)
    assert tr.error_estimate <= 1e-10


def test_branch_collision_at_glancing(sys_wr):
    with pytest.raises(BranchCollision):
        hamiltonian_flow(sys_wr, None, FlowState.from_point(bp(1.0, 1.0)), 0.1, mu_start=0.0)


def test_chart_exit(sys_s1v, s1v_chart):
    start = FlowState.from_point(bp(0.8165, 0.5774, 0.0, t=1.5))
    with pytest.raises(ChartExit):
        hamiltonian_flow(sys_s1v, 0, start, 1.0, h=0.05, chart=s1v_chart)


def test_chart_membership(s1v_chart):
    inside = FlowState(0.0, (0.0,), 0.8165, (0.5774,), 0.0, 0.5)
    assert s1v_chart.contains(inside)
    assert not s1v_chart.contains(FlowState(0.0, (0.0,), 0.0, (1.0,), 0.0, 0.5))
    assert not s1v_chart.contains(FlowState(3.0, (0.0,), 0.8165, (0.5774,), 0.0, 0.5))


# transported Dt ------------------------------------------------------------


def test_transport_delta_initial_value(sys_wr):
    X = bp(1.0, 0.5, 0.2)
    # closed form: the zero on this tau line is sqrt(2) eta
    expected = (0.2 + 1j * (1.0 - SQ2 * 0.5)) / X.weight
    assert transport_delta(sys_wr, 0, X).value == pytest.approx(expected, abs=1e-12)


def test_transport_delta_constant_coefficients(sys_wr):
    X = bp(1.0, 0.5, 0.2, t=0.1, y=0.2, x_d=0.7)
    td = transport_delta(sys_wr, 0, X)
    assert (td.flow_origin.tau, td.flow_origin.eta) == (1.0, (0.5,))
    assert td.flow_origin.x_d == 0.0
    expected = (0.2 + 1j * (1.0 - SQ2 * 0.5)) / X.weight
    assert td.value == pytest.approx(expected, abs=1e-12)


def test_transport_residual_decreases(sys_s1v, s1v_flowed):
    X = s1v_flowed[0]
    r = [transport_residual(sys_s1v, 0, X, H) for H in (0.04, 0.02)]
    assert r[1] < r[0] / 3


# refined basis and the filter ----------------------------------------------


def test_refined_basis_p1(sys_wr):
    r = find_critical_set(sys_wr, 360)[-1]
    rb = refined_basis(sys_wr, r.base_point)
    assert rb.s == 1
    col = rb.basis[:, 0]
    ell = rb.ell / np.linalg.norm(rb.ell)
    assert abs(abs(np.vdot(col, ell)) - 1) < 1e-12
    assert sum(rb.components) == rb.s


def test_refined_basis_p2_invariant_kernel(sys_s2):
    for r in find_critical_set(sys_s2, 360):
        X = r.base_point
        rb = refined_basis(sys_s2, X)
        assert rb.s == 2
        assert sum(rb.components) == rb.s
        field = build_delta_field(sys_s2)(X)
        inv = kernel_invariance_residual(sys_s2, X, field)
        assert inv["dim"] == 2
        assert inv["residual"] < 1e-8


def test_delta_field_initial_condition(sys_s2):
    r = find_critical_set(sys_s2, 360)[-1]
    X = bp(r.tau + 0.01, r.eta[0], 0.05)
    field = build_delta_field(sys_s2)(X)
    dt = delta_tilde_at(sys_s2, FlowState.from_point(X))[0]
    np.testing.assert_allclose(field["diag"], [dt, dt, 1, 1], atol=1e-12)
    assert field["branch_spread"] < 1e-12


def test_delta_field_noncritical_chart(sys_ukl, rng):
    field = build_delta_field(sys_ukl)
    worst = np.inf
    for _ in range(20):
        tau, eta = rng.normal(size=2)
        v = field(bp(tau, eta, rng.uniform(0.01, 1)))
        worst = min(worst, np.abs(np.diag(v["delta"])).min())
    assert worst > 0


def test_kernel_at_flowed_roots(sys_s1v, s1v_flowed, s1v_chart):
    field = build_delta_field(sys_s1v, s1v_chart, h=0.01)
    for X in s1v_flowed:
        v = field(X)
        inv = kernel_invariance_residual(sys_s1v, X, v)
        assert inv["dim"] == 1
        assert inv["residual"] < 1e-8
        off = field(X.replace(tau=X.tau + 1e-3))
        assert np.abs(off["diag"]).min() > 1e-8


# boundary relation ---------------------------------------------------------


def test_boundary_relation_p1_identity(sys_wr):
    X = bp(1.0, 0.5, 0.05)
    sym = build_symmetrizer(sys_wr, X)
    assert (sym.q @ sym.b_dot[:, :1])[0, 0] == pytest.approx(sym.delta_tilde, abs=1e-12)
    assert boundary_relation_check(sys_wr, X)["residual"] < 1e-12


def test_boundary_relation_p2(sys_s2):
    for r in find_critical_set(sys_s2, 360):
        for dtau, g in ((0.0, 0.0), (1e-3, 1e-3), (-1e-2, 0.0)):
            X = bp(r.tau + dtau, r.eta[0], g)
            rep = boundary_relation_check(sys_s2, X)
            assert rep["critical"] and rep["s"] == 2
            assert rep["residual"] < 1e-9


def test_boundary_relation_noncritical(sys_ukl):
    rep = boundary_relation_check(sys_ukl, bp(0.3, 1.0, 0.2))
    assert not rep["critical"]
    assert rep["residual"] < 1e-14


def test_boundary_relation_needs_boundary_point(sys_wr):
    with pytest.raises(ValueError):
        boundary_relation_check(sys_wr, bp(1.0, 0.5, x_d=0.1))


# lower-order correction ----------------------------------------------------


def test_correction_block_diagonal_source(sys_wr):
    from hypwr.spectral import ordered_eigenbasis, symbol_partials_gamma

    X = bp(1.3, 0.4, 0.3)
    res = block_diag_correction(sys_wr, X, a0=np.zeros((2, 2)))
    np.testing.assert_allclose(res.e_minus1, 0, atol=1e-14)
    # a0 diagonal in the eigenbasis gives no off-block source either
    a = reduced_symbol(sys_wr, X)
    _, V, _ = ordered_eigenbasis(a, symbol_partials_gamma(sys_wr, X), X.weight, X.gamma)
    a0 = V @ np.diag([0.7, -1.1j]) @ np.linalg.inv(V)
    res = block_diag_correction(sys_wr, X, a0=a0)
    np.testing.assert_allclose(res.e_minus1, 0, atol=1e-13)
    np.testing.assert_allclose(np.diag(res.a0_ddot), [0.7, -1.1j], atol=1e-13)


def test_correction_dense_closed_form(sys_s2, rng):
    from hypwr.spectral import ordered_eigenbasis, symbol_partials_gamma

    X = bp(1.3, 0.4, 0.3)
    a0 = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    res = block_diag_correction(sys_s2, X, a0=a0)
    a = reduced_symbol(sys_s2, X)
    mu, V, _ = ordered_eigenbasis(a, symbol_partials_gamma(sys_s2, X), X.weight, X.gamma)
    G = np.linalg.inv(V) @ a0 @ V
    F = np.zeros_like(G)
    for i in range(4):
        for k in range(4):
            if i != k:
                F[i, k] = G[i, k] / (mu[i] - mu[k])
    np.testing.assert_allclose(res.F, F, atol=1e-12)
    assert res.residual < 1e-12
    np.testing.assert_allclose(np.diag(res.a0_ddot), np.diag(G), atol=1e-12)


def test_correction_variable_refinement(sys_s1v):
    X = BasePoint(0.1, (0.4,), 0.3, Frequency(1.0, (0.3,), 0.5))
    r = [block_diag_correction(sys_s1v, X, h=h).fd_residual for h in (4e-3, 2e-3)]
    assert r[0] / r[1] == pytest.approx(4.0, rel=0.15)
    assert block_diag_correction(sys_s1v, X).fd_residual < 1e-6


# sandwich ------------------------------------------------------------------


def test_sandwich_constant_coefficients(sys_wr, rng):
    sample = [bp(*rng.normal(size=2) * 3, rng.uniform(1, 4), t=rng.uniform(-1, 1),
                 y=rng.uniform(-1, 1), x_d=rng.uniform(0, 1)) for _ in range(30)]
    rep = flow_growth_and_sandwich(sys_wr, sample)
    assert rep["C"] == pytest.approx(1.0, abs=1e-10)
    assert rep["C_min_ratio"] == pytest.approx(1.0, abs=1e-10)
    assert rep["lower_holds"]


def test_sandwich_gamma0_scaling(sys_s1v, s1v_chart):
    sample = chart_sample(sys_s1v, s1v_chart, 20, gamma_range=(2.0, 4.0), seed=5)
    one = flow_growth_and_sandwich(sys_s1v, sample, gamma0=1.0)
    two = flow_growth_and_sandwich(sys_s1v, sample, gamma0=2.0)
    assert two["lower_min"] == pytest.approx(one["lower_min"] / 2, rel=1e-12)
    with pytest.raises(ValueError):
        flow_growth_and_sandwich(sys_s1v, sample, gamma0=3.0)


# real principal type -------------------------------------------------------


def test_real_principal_type_at_boundary(sys_wr):
    roots = [r.base_point for r in find_critical_set(sys_wr, 360)]
    rep = real_principal_type_check(sys_wr, 0, roots)
    # Dt = i (tau - nu) / lambda on gamma = 0, so |d_tau Dt| = 1 on the unit sphere
    assert rep["min_abs_dtau"] == pytest.approx(1.0, rel=1e-6)
    assert rep["passed"]


def test_delta_elliptic_off_boundary_sphere(sys_s1v, s1v_chart):
    # sample points from the whole box flow out of the small cap, so no chart here
    field = build_delta_field(sys_s1v, h=0.02)
    sample = chart_sample(sys_s1v, s1v_chart, 10, gamma_range=(0.05, 0.2), seed=9)
    assert min(abs(field(X)["diag"][0]) for X in sample) > 0


def test_real_principal_type_flowed(sys_s1v, s1v_flowed):
    rep = real_principal_type_check(sys_s1v, 0, s1v_flowed, dtau=1e-4)
    assert rep["passed"]
    assert rep["min_abs_dtau"] > 1e-6
