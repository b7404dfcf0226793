"""Acceptance criteria, one test per criterion.

Every test prints a ``criterion NN PASS|FAIL`` line (collected again in the
terminal summary) and then asserts the same verdict.
"""
import math
import time

import numpy as np
import scipy.linalg

from hypwr.cli import main
from hypwr.estimator import approach_sequence, gamma_scaling_sweep, sharp_constant_report
from hypwr.fixtures import s1
from hypwr.lopatinskii import check_wr_membership, continuous_stable_basis, factor_boundary_matrix
from hypwr.lopatinskii import find_critical_set
from hypwr.spectral import PointClass, classify_point, kappa_signs, ordered_eigenbasis
from hypwr.spectral import symbol_partials_gamma
from hypwr.symmetrizer import symmetrizer_suite
from hypwr.system_model import BasePoint, Frequency, check_assumptions, reduced_symbol
from hypwr.transport import (
    Chart,
    FlowState,
    block_diag_correction,
    boundary_relation_check,
    build_delta_field,
    chart_sample,
    flow_growth_and_sandwich,
    flowed_critical_points,
    hamiltonian_flow,
    kernel_invariance_residual,
    transport_residual,
)


def X(tau, eta, gamma=0.0):
    return BasePoint.at(tau, eta, gamma)


def _verdict(acceptance, number, title, checks: dict, t0, limit, extra=""):
    elapsed = time.perf_counter() - t0
    checks = {**checks, f"runtime<{limit:g}s": elapsed < limit}
    failed = [k for k, v in checks.items() if not v]
    detail = f"{elapsed:.2f}s" + (f"; {extra}" if extra else "")
    if failed:
        detail += "; failed: " + ", ".join(failed)
    ok = acceptance(number, title, not failed, detail)
    assert ok, detail


# 1 -------------------------------------------------------------------------


def test_c01_classification(acceptance, sys_s1):
    t0 = time.perf_counter()
    k = kappa_signs(sys_s1, X(1, 0))
    checks = {
        "assumptions": check_assumptions(sys_s1, [X(1, 0)]).all_pass,
        "hyperbolic (1,0,0)": classify_point(sys_s1, X(1, 0)) == PointClass.HYPERBOLIC,
        "elliptic (0,1,0)": classify_point(sys_s1, X(0, 1)) == PointClass.ELLIPTIC,
        "glancing (1,1,0)": classify_point(sys_s1, X(1, 1)) == PointClass.GLANCING,
        "kappa (-1,+1)": bool(np.allclose(k, [-1, 1], atol=1e-8)),
    }
    _verdict(acceptance, 1, "assumption and classification suite", checks, t0, 1.0,
             f"kappa={np.round(k, 10).tolist()}")


# 2 -------------------------------------------------------------------------


def _max_jump(sys, Z0, Z1, steps):
    grid = [X(*(Z0 + (Z1 - Z0) * s)) for s in np.linspace(0, 1, steps + 1)]
    Q = continuous_stable_basis(sys, grid)
    return max(scipy.linalg.subspace_angles(Q[i], Q[i + 1]).max() for i in range(steps))


def test_c02_stable_bundle_continuity(acceptance, sys_wr):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    ratios = []
    for _ in range(10):
        # gamma > 0 keeps the path away from the glancing set
        Z0 = np.r_[rng.normal(size=2), rng.uniform(0.05, 1.0)]
        Z1 = np.r_[rng.normal(size=2), rng.uniform(0.05, 1.0)]
        ratios.append(_max_jump(sys_wr, Z0, Z1, 200) / _max_jump(sys_wr, Z0, Z1, 400))
    checks = {"ratio in [1.7, 2.3]": all(1.7 <= r <= 2.3 for r in ratios)}
    _verdict(acceptance, 2, "stable-bundle continuity", checks, t0, 10.0,
             f"ratios {min(ratios):.3f}..{max(ratios):.3f}")


# 3 -------------------------------------------------------------------------


def _dense_sign_cells(theta, n=10_000):
    """Sign changes of b.e on the gamma = 0 circle (closed-form stable vector)."""
    phi = np.linspace(-math.pi, math.pi, n + 1)
    tau, eta = np.cos(phi), np.sin(phi)
    hyp = np.abs(tau) > np.abs(eta)
    mu = np.sign(tau) * np.sqrt(np.where(hyp, tau * tau - eta * eta, 0.0))
    val = math.cos(theta) * (mu + tau) - math.sin(theta) * eta
    cells = [(phi[i], phi[i + 1]) for i in range(n)
             if hyp[i] and hyp[i + 1] and val[i] * val[i + 1] <= 0]
    return cells


def test_c03_wr_gate(acceptance, sys_ukl, sys_wr, theta_star):
    t0 = time.perf_counter()
    ukl = check_wr_membership(sys_ukl)
    bad = check_wr_membership(s1(math.pi / 2))
    wr = check_wr_membership(sys_wr)
    cells = _dense_sign_cells(theta_star)
    angles = [math.atan2(r.eta[0], r.tau) for r in wr.roots]
    inside = all(any(a <= ang <= b for a, b in cells) for ang in angles)
    covered = all(any(a <= ang <= b for ang in angles) for a, b in cells)
    checks = {
        "b=(1,0) uniform LC": ukl.uniform_lc,
        "b=(0,1) weak LC violated": not bad.weak_lc,
        "b(theta*) WR": wr.wr,
        "roots hyperbolic": wr.critical_hyperbolic,
        "|d_tau Delta| > 1e-6": all(abs(r.dtau_delta) > 1e-6 for r in wr.roots),
        "roots inside sign-change cells": inside,
        "every cell has a root": covered and len(cells) == len(angles),
    }
    _verdict(acceptance, 3, "WR gate", checks, t0, 30.0,
             f"{len(wr.roots)} roots, {len(cells)} cells, "
             f"min|dtau|={min(abs(r.dtau_delta) for r in wr.roots):.3f}")


# 4 -------------------------------------------------------------------------


def _near_gamma_points(sys, rng, n):
    roots = find_critical_set(sys)
    pts = []
    for k in range(n):
        r = roots[k % len(roots)]
        # |Dt| between 1e-6 and 1e-2: below 1e-6 the relative residual
        # is dominated by the roundoff in b^- itself
        mag = 10 ** rng.uniform(-6, -2)
        ang = rng.uniform(0, math.pi)
        lam = math.hypot(r.tau, r.eta[0])
        pts.append(X(r.tau + mag * lam * math.cos(ang), r.eta[0], mag * lam * math.sin(ang)))
    return pts


def test_c04_factorization(acceptance, sys_wr, sys_s2):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = {}
    for name, sys in (("s1_wr", sys_wr), ("s2", sys_s2)):
        res = []
        for Xp in _near_gamma_points(sys, rng, 100):
            lop = factor_boundary_matrix(sys, Xp)
            p = sys.p
            D = np.eye(p, dtype=complex)
            D[0, 0] = lop.delta_tilde
            recon = lop.p_matrix @ D @ np.linalg.inv(lop.c_matrix)
            res.append(np.linalg.norm(lop.b_minus - recon) / np.linalg.norm(lop.b_minus))
        worst[name] = max(res)
    checks = {f"{k} <= 1e-9": v <= 1e-9 for k, v in worst.items()}
    _verdict(acceptance, 4, "factorization residual", checks, t0, 5.0,
             ", ".join(f"{k} max {v:.1e}" for k, v in worst.items()))


# 5 -------------------------------------------------------------------------


def test_c05_symmetrizer(acceptance, sys_wr):
    t0 = time.perf_counter()
    res = symmetrizer_suite(sys_wr, n_freq=20, gammas=(1e-2, 1e-1, 1.0), trials=10_000, seed=5)
    checks = {
        "conditions (i)-(iv)": res["report"].passed,
        "c > 0": res["c_min"] > 0,
        "boundary slack >= -1e-10": res["boundary_min"] >= -1e-10,
        "krylov < 1e-8": res["krylov_max"] < 1e-8,
        "60 frequencies": res["n_points"] == 60,
    }
    _verdict(acceptance, 5, "symmetrizer conditions", checks, t0, 60.0,
             f"rho={res['rho']:.2f}, c={res['c_min']:.2e}, slack={res['boundary_min']:.2e}, "
             f"krylov={res['krylov_max']:.1e}")


# 6 -------------------------------------------------------------------------


def test_c06_transport(acceptance, sys_s1v, sys_s2):
    t0 = time.perf_counter()
    start = FlowState.from_point(X(1.0, 0.4, 0.0))
    ref = hamiltonian_flow(sys_s1v, 0, start, 1.0, h=1 / 320, estimate_error=False).states[-1]
    e = [np.abs(hamiltonian_flow(sys_s1v, 0, start, 1.0, h=h, estimate_error=False).states[-1]
                - ref).max() for h in (0.2, 0.1)]
    rk4 = e[0] / e[1]

    roots = [r.base_point for r in find_critical_set(sys_s1v) if r.tau > 0]
    flowed = flowed_critical_points(sys_s1v, roots, 0.5)
    r = [transport_residual(sys_s1v, 0, flowed[0], H) for H in (0.04, 0.02, 0.01)]
    order = math.log2(r[0] / r[2]) / 2

    rel = max(boundary_relation_check(sys_s2, rr.base_point)["residual"]
              for rr in find_critical_set(sys_s2))
    rel_p1 = max(boundary_relation_check(sys_s1v, Xp)["residual"] for Xp in roots)

    field = build_delta_field(sys_s1v, Chart.from_dict(sys_s1v.chart), h=0.01)
    ker = [kernel_invariance_residual(sys_s1v, Fp, field(Fp)) for Fp in flowed]
    ker_res = max(k["residual"] for k in ker)
    ker_dim = min(k["dim"] for k in ker)

    s0 = FlowState.from_point(BasePoint(0.2, (0.1,), 0.0, Frequency(1.0, (0.4,), 0.0)))
    full = hamiltonian_flow(sys_s1v, 0, s0, 0.8, h=0.05, control=True).final
    # the split point is off the step lattice so the two paths take different steps
    part = hamiltonian_flow(sys_s1v, 0, s0, 0.37, h=0.05, control=True)
    half, mu_half = part.final, part.mu[-1]
    comp = hamiltonian_flow(sys_s1v, None, half, 0.8, h=0.05, control=True, mu_start=mu_half).final
    group = float(np.abs(full.vector() - comp.vector()).max())
    mu_end = hamiltonian_flow(sys_s1v, 0, s0, 0.8, h=0.05, control=True).mu[-1]
    back = hamiltonian_flow(sys_s1v, None, full, 0.0, h=0.05, control=True, mu_start=mu_end).final
    inv = float(np.abs(back.vector() - s0.vector()).max())

    checks = {
        "rk4 ratio 16 +- 20%": 12.8 <= rk4 <= 19.2,
        "residual order >= 2": order >= 2.0,
        "boundary relation < 1e-9": max(rel, rel_p1) < 1e-9,
        "ker delta invariance < 1e-8": ker_dim >= 1 and ker_res < 1e-8,
        "group law < 1e-8": group < 1e-8,
        "inversion < 1e-8": inv < 1e-8,
    }
    _verdict(acceptance, 6, "transport suite", checks, t0, 60.0,
             f"rk4={rk4:.2f}, order={order:.3f}, relation={max(rel, rel_p1):.1e}, "
             f"ker={ker_res:.1e}, group={group:.1e}, inverse={inv:.1e}")


# 7 -------------------------------------------------------------------------


def test_c07_sandwich(acceptance, sys_s1v, sys_wr):
    t0 = time.perf_counter()
    chart = Chart.from_dict(sys_s1v.chart)
    rep = flow_growth_and_sandwich(sys_s1v, chart_sample(sys_s1v, chart, 1000, seed=7), gamma0=1.0)
    const = flow_growth_and_sandwich(sys_wr, chart_sample(sys_wr, chart, 100, seed=8), gamma0=1.0)
    checks = {
        "C finite": math.isfinite(rep["C"]),
        "lower bound at every sample": rep["lower_holds"] and rep["n"] == 1000,
        "constant C = 1 +- 1e-10": abs(const["C"] - 1) <= 1e-10 and abs(const["C_min_ratio"] - 1) <= 1e-10,
    }
    _verdict(acceptance, 7, "norm sandwich and flow growth", checks, t0, 30.0,
             f"C={rep['C']:.6f}, min lower={rep['lower_min']:.3f}, constant C-1={const['C'] - 1:.1e}")


# 8 -------------------------------------------------------------------------


def _ladder_ok(sys, Z):
    rows = gamma_scaling_sweep(sys, Z, [1, 2, 4, 8], n_data=0)
    r = [row["ratio"] for row in rows]
    return all(b <= a * (1 + 1e-9) for a, b in zip(r[:-1], r[1:])) and max(r) <= rows[0]["sharp_gamma0"] * (1 + 1e-9)


def test_c08_estimate_dichotomy(acceptance, sys_wr, sys_ukl):
    t0 = time.perf_counter()
    root = [r for r in find_critical_set(sys_wr) if r.tau > 0][0]
    seq = approach_sequence(sys_wr, root, (1e-1, 1e-2, 1e-3))
    wr = [sharp_constant_report(sys_wr, Z, n_data=32, seed=8) for Z in seq]
    unf = [r.sharp_unfiltered for r in wr]
    fil = [r.sharp_constant for r in wr]
    ukl = [sharp_constant_report(sys_ukl, Z, n_data=32, seed=8) for Z in seq]
    u_unf = [r.sharp_unfiltered for r in ukl]
    u_fil = [r.sharp_constant for r in ukl]
    growth = [b / a for a, b in zip(unf[:-1], unf[1:])]
    checks = {
        "|Dt| levels": all(abs(r.abs_delta_tilde - e) < 1e-8 * e for r, e in zip(wr, (1e-1, 1e-2, 1e-3))),
        "unfiltered >= 10x per decade": min(growth) >= 10,
        "filtered variation < 3x": max(fil) / min(fil) < 3,
        "UKL unfiltered variation < 3x": max(u_unf) / min(u_unf) < 3,
        "UKL filtered variation < 3x": max(u_fil) / min(u_fil) < 3,
        "gamma ladder": all(_ladder_ok(s, Z) for s in (sys_wr, sys_ukl) for Z in seq),
    }
    _verdict(acceptance, 8, "estimate dichotomy", checks, t0, 120.0,
             "unfiltered " + ", ".join(f"{v:.3g}" for v in unf)
             + "; filtered " + ", ".join(f"{v:.3g}" for v in fil)
             + f"; UKL {min(u_unf):.3g}..{max(u_unf):.3g}")


# 9 -------------------------------------------------------------------------


def test_c09_lower_order_correction(acceptance, sys_s2, sys_s1v):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    Xc = X(1.3, 0.4, 0.3)
    a0 = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    res = block_diag_correction(sys_s2, Xc, a0=a0)
    mu, V, _ = ordered_eigenbasis(reduced_symbol(sys_s2, Xc), symbol_partials_gamma(sys_s2, Xc),
                                  Xc.weight, Xc.gamma)
    G = np.linalg.inv(V) @ a0 @ V
    diff = mu[:, None] - mu[None, :]
    F = np.where(np.eye(4, dtype=bool), 0.0, G / np.where(np.eye(4, dtype=bool), 1.0, diff))
    closed = float(np.abs(res.F - F).max())

    Xv = BasePoint(0.1, (0.4,), 0.3, Frequency(1.0, (0.3,), 0.5))
    fd = [block_diag_correction(sys_s1v, Xv, h=h).fd_residual for h in (4e-3, 2e-3)]
    default = block_diag_correction(sys_s1v, Xv).fd_residual
    gain = fd[0] / fd[1]
    checks = {
        "closed form to 1e-12": closed < 1e-12,
        "variable residual < 1e-6": max(default, fd[1]) < 1e-6,
        "4x per halving": 4 * 0.85 <= gain <= 4 * 1.15,
    }
    _verdict(acceptance, 9, "lower-order correction", checks, t0, 10.0,
             f"closed={closed:.1e}, fd {fd[0]:.2e}->{fd[1]:.2e} (x{gain:.2f}), default h {default:.1e}")


# 10 ------------------------------------------------------------------------


def test_c10_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    codes = [main(["estimate", "s1_wr", "--seed", "11", "--out", str(tmp_path / d)]) for d in "ab"]
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    b = (tmp_path / "b" / "sweep.csv").read_bytes()
    checks = {"exit 0": codes == [0, 0], "byte-identical": a == b and len(a) > 0}
    rows = len(a.splitlines()) - 1
    _verdict(acceptance, 10, "determinism of estimate", checks, t0, math.inf,
             f"{len(a)} bytes, {rows} rows")
