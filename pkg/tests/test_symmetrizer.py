import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from hypwr.errors import RankDeficient
from hypwr.lopatinskii import find_critical_set
from hypwr.spectral import orthonormal_range
from hypwr.symmetrizer import (
    boundary_constant,
    build_boundary_projector_factor,
    build_symmetrizer,
    check_krylov_degeneracy,
    choose_rho,
    frequency_sample,
    krylov_space,
    verify_symmetrizer_conditions,
)
from hypwr.system_model import BasePoint, HyperbolicSystem, reduced_symbol

ETA0 = 1 / math.sqrt(3)


def X(tau, eta, gamma=0.0):
    return BasePoint.at(tau, eta, gamma)


@pytest.fixture(scope="module")
def wr_roots(sys_wr):
    return find_critical_set(sys_wr, 360)


# symbols -------------------------------------------------------------------


def test_sigma_signature_and_determinant(sys_wr):
    # hyperbolic, on a tau line that meets the critical set, off the root
    sym = build_symmetrizer(sys_wr, X(1.0, ETA0))
    assert sym.critical
    dt = sym.delta_tilde
    w = np.linalg.eigvalsh(sym.sigma)
    assert w[0] < 0 < w[1]
    assert abs(np.linalg.det(sym.sigma)) == pytest.approx(abs(dt) ** 2 * sym.rho, rel=1e-12)
    np.testing.assert_allclose(sym.sigma, np.diag([-abs(dt) ** 2, sym.rho]), atol=1e-14)


def test_sigma_annihilates_critical_direction(sys_wr, wr_roots):
    for r in wr_roots:
        sym = build_symmetrizer(sys_wr, r.base_point)
        ell = sym.lop.critical_direction
        assert abs(sym.delta_tilde) < 1e-10
        assert np.linalg.norm(sym.sigma_original() @ ell) < 1e-8


def test_noncritical_filter_trivial(sys_ukl):
    sym = build_symmetrizer(sys_ukl, X(0.3, 1.0, 0.2))
    assert not sym.critical
    np.testing.assert_array_equal(sym.delta, np.eye(2))
    np.testing.assert_array_equal(sym.q, np.eye(1))


def test_full_stable_block():
    sys = HyperbolicSystem.constant([[[0.5]], [[1.0]]], [[2.0]])
    sym = build_symmetrizer(sys, X(0.3, 1.0, 0.2))
    assert sym.p == 1 and sym.sigma.shape == (1, 1)
    assert sym.boundary_constant == pytest.approx(0.25)
    assert sym.rho == pytest.approx(2 * sym.boundary_constant + 1)


def test_boundary_constant_single_point_oracle(sys_ukl):
    Xp = X(0.3, 1.0, 0.2)
    C = boundary_constant(sys_ukl, Xp)
    # oracle: |v^-|^2 <= C (|b E v|^2 + |v^+|^2) is sharp for the inverse map
    sym = build_symmetrizer(sys_ukl, Xp)
    M = np.vstack([sym.b_dot, [[0.0, 1.0]]])
    Minv = np.linalg.inv(M)
    assert C == pytest.approx(np.linalg.norm(Minv[:1], 2) ** 2, rel=1e-12)
    assert np.isfinite(choose_rho(sys_ukl, [Xp]))


def test_choose_rho_monotone(sys_wr):
    pts = frequency_sample(sys_wr, 10, (0.01, 0.1, 1.0), seed=3)
    r_small = choose_rho(sys_wr, pts[:7])
    r_all = choose_rho(sys_wr, pts)
    assert r_small <= r_all
    assert np.isfinite(r_all)


def test_gamma_scaling_of_r(sys_wr):
    a = build_symmetrizer(sys_wr, X(1.0, ETA0, 0.1), rho=5.0)
    b = build_symmetrizer(sys_wr, X(1.0, ETA0, 0.4), rho=5.0)
    np.testing.assert_array_equal(a.r, b.r)


def test_stable_dimension_mismatch_raises(sys_wr):
    # a boundary with two rows for a system with one incoming mode
    with pytest.raises(Exception):
        build_symmetrizer(sys_wr.with_boundary(np.eye(2)), X(1.0, 0.2, 0.1))


# conditions ----------------------------------------------------------------


def test_conditions_hold_near_and_far(sys_wr):
    pts = frequency_sample(sys_wr, 8, (1e-2, 1.0), seed=1)
    rho = choose_rho(sys_wr, pts)
    for Xp in pts:
        sym = build_symmetrizer(sys_wr, Xp, rho=rho)
        rep = verify_symmetrizer_conditions(sym, reduced_symbol(sys_wr, Xp), 500, seed=0)
        assert rep.passed, rep.as_dict()
        assert rep.conditions["iii"].min_slack > 0


def test_kernel_vectors_make_both_sides_vanish(sys_wr, wr_roots):
    sym = build_symmetrizer(sys_wr, wr_roots[0].base_point)
    v = np.zeros(2, complex)
    v[0] = 1.0
    assert np.linalg.norm(sym.delta @ v) < 1e-12
    w = np.array([0.3 + 0.1j, -0.7])
    assert abs(np.vdot(w, sym.sigma @ v)) < 1e-12


def test_sigma_negative_on_stable_space(sys_wr, rng):
    count = 0
    for _ in range(60):
        tau, eta = rng.normal(size=2)
        if abs(abs(tau) - abs(eta)) < 0.05:
            continue
        Xp = X(tau, eta)
        sym = build_symmetrizer(sys_wr, Xp)
        Q = orthonormal_range(sym.basis[:, :1] @ sym.basis[:, :1].conj().T, 1)
        S = Q.conj().T @ sym.sigma_original() @ Q
        assert np.linalg.eigvalsh(0.5 * (S + S.conj().T)).max() <= 1e-8
        count += 1
    assert count > 30


def test_conditions_p2(sys_s2):
    pts = frequency_sample(sys_s2, 6, (1e-2, 1.0), seed=2)
    rho = choose_rho(sys_s2, pts)
    for Xp in pts:
        sym = build_symmetrizer(sys_s2, Xp, rho=rho)
        assert verify_symmetrizer_conditions(sym, reduced_symbol(sys_s2, Xp), 300).passed


# Krylov --------------------------------------------------------------------


def test_krylov_diagonal():
    K = krylov_space(np.diag([1.0, 2.0, 3.0]), np.array([1.0, 0, 0]))
    assert K.shape == (3, 1)


def test_krylov_rotation():
    K = krylov_space(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([1.0, 0.0]))
    assert K.shape == (2, 2)


def test_krylov_designed_block(rng):
    S = rng.normal(size=(4, 4))
    blk = scipy.linalg.block_diag(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    a = S @ blk @ np.linalg.inv(S)
    ell = S[:, :2] @ rng.normal(size=2)
    K = krylov_space(a, ell)
    assert K.shape[1] == 2
    angles = scipy.linalg.subspace_angles(K, S[:, :2])
    assert angles.max() < 1e-8


def test_krylov_rejects_zero():
    with pytest.raises(ValueError):
        krylov_space(np.eye(2), np.zeros(2))


def test_krylov_degeneracy_at_roots(sys_wr, sys_s2):
    for sys in (sys_wr, sys_s2):
        for r in find_critical_set(sys, 360):
            Xp = r.base_point
            sym = build_symmetrizer(sys, Xp)
            ell = sym.lop.critical_direction
            res = check_krylov_degeneracy(sym, reduced_symbol(sys, Xp), ell)
            assert res["passed"] and res["max_abs"] < 1e-8
            val = np.vdot(ell, sym.sigma_original() @ ell)
            assert abs(val) < 1e-12


# projector factor ----------------------------------------------------------


def test_projector_factor_block_identity():
    b = np.hstack([np.eye(2), np.zeros((2, 2))])
    y, x, d = build_boundary_projector_factor(b)
    np.testing.assert_allclose(y, np.vstack([np.eye(2), np.zeros((2, 2))]), atol=1e-15)
    np.testing.assert_allclose(np.abs(x), np.hstack([np.zeros((2, 2)), np.eye(2)]), atol=1e-15)


def test_projector_factor_random(rng):
    for _ in range(100):
        p = int(rng.integers(1, 4))
        n = p + int(rng.integers(1, 4))
        b = rng.normal(size=(p, n))
        y, x, d = build_boundary_projector_factor(b)
        assert np.linalg.norm(b @ y - np.eye(p)) < 1e-12
        M = np.vstack([b, x])
        np.testing.assert_allclose(M @ np.hstack([y, d]), np.eye(n), atol=1e-10)


def test_projector_factor_scaling(rng):
    b = rng.normal(size=(2, 4))
    y1, x1, _ = build_boundary_projector_factor(b)
    y5, x5, _ = build_boundary_projector_factor(5 * b)
    np.testing.assert_allclose(y5, y1 / 5, atol=1e-13)
    np.testing.assert_allclose((5 * b) @ y5, b @ y1, atol=1e-13)


def test_projector_factor_rank_deficient():
    with pytest.raises(RankDeficient):
        build_boundary_projector_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_subnormal=False), min_size=3, max_size=3))
def test_projector_factor_property(row):
    b = np.array([row])
    if np.linalg.norm(b) < 1e-3:
        return
    y, x, d = build_boundary_projector_factor(b)
    assert np.linalg.norm(b @ y - 1) < 1e-12 * max(1.0, np.linalg.norm(b) * np.linalg.norm(y))
    np.testing.assert_allclose(x @ x.T, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(x @ b.T, 0, atol=1e-12)
