"""Lopatinskii determinant, critical set, WR membership and the
factorization of the restricted boundary matrix near its zero set.

Conventions
-----------
The boundary frequency sphere is parameterized by ``(tau, eta) =
(cos phi, sin phi * e)`` with ``e`` a unit vector in ``R^{d-1}``.  For
``d = 2`` a single closed circle ``phi in [0, 2 pi]`` is used.
At hyperbolic points the stable subspace is of real type, so a real
orthonormal basis aligned by orthogonal Procrustes gives a real and
continuous determinant whose sign changes locate the zeros.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import config
from .errors import GlancingOnPath, OmegaRootNotFound, RankDeficient
from .spectral import (
    PointClass,
    classify_batch,
    classify_symbol,
    limit_projector,
    limit_projector_batch,
    perturbation_projectors_batch,
    orthonormal_range,
    realify_basis,
    stable_projectors_batch,
)
from .system_model import BasePoint, Frequency, HyperbolicSystem, reduced_symbol

__all__ = [
    "LopatinskiiData",
    "CriticalPoint",
    "WRReport",
    "continuous_stable_basis",
    "lopatinskii_determinant",
    "sphere_paths",
    "find_critical_set",
    "check_wr_membership",
    "factor_boundary_matrix",
    "find_nu",
    "delta_sweep",
    "stable_projector_at",
    "critical_direction",
]


# --------------------------------------------------------------------------
# low level helpers


class _Frozen:
    """Coefficients of ``sys`` frozen at one space-time point."""

    def __init__(self, sys: HyperbolicSystem, t=0.0, y=None, x_d=0.0):
        if y is None:
            y = np.zeros(sys.d - 1)
        A = sys.coefficients(t, y, x_d)
        self.Adi = np.linalg.inv(A[-1])
        self.Aeta = np.array([self.Adi @ a for a in A[:-1]])
        self.b = sys.boundary(t, y)
        self.n, self.p = sys.n, sys.p
        self.dg = -1j * self.Adi

    def symbols(self, taus, etas, gammas=0.0) -> np.ndarray:
        taus = np.atleast_1d(np.asarray(taus, float))
        etas = np.asarray(etas, float).reshape(len(taus), -1)
        gammas = np.broadcast_to(np.asarray(gammas, float), taus.shape)
        rho = (taus - 1j * gammas)[:, None, None]
        return rho * self.Adi[None] + np.einsum("mk,kij->mij", etas, self.Aeta)

    def symbol(self, tau, eta, gamma=0.0) -> np.ndarray:
        return self.symbols([tau], [np.atleast_1d(eta)], gamma)[0]

    def projectors(self, taus, etas, gammas=0.0) -> np.ndarray:
        """Stable projectors; gamma = 0 entries use the limit mode."""
        taus = np.atleast_1d(np.asarray(taus, float))
        etas = np.asarray(etas, float).reshape(len(taus), -1)
        gammas = np.broadcast_to(np.asarray(gammas, float), taus.shape).copy()
        lam = np.sqrt(taus**2 + np.sum(etas**2, axis=1) + gammas**2)
        a = self.symbols(taus, etas, gammas)
        out = np.empty_like(a)
        small = gammas < 1e-10 * lam
        if np.any(~small):
            out[~small] = stable_projectors_batch(a[~small])
        if np.any(small):
            a0 = self.symbols(taus[small], etas[small], 0.0)
            out[small] = perturbation_projectors_batch(a0, self.dg, lam[small])
        return out


def _bases_from_projectors(P: np.ndarray, p: int) -> np.ndarray:
    U, _, _ = np.linalg.svd(P)
    return U[..., :, :p]


def _procrustes(Q: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Rotate the columns of ``Q`` (same span) as close as possible to ``ref``."""
    M = Q.conj().T @ ref
    W, _, Vh = np.linalg.svd(M)
    return Q @ (W @ Vh)


def stable_projector_at(sys: HyperbolicSystem, X: BasePoint) -> np.ndarray:
    fr = _Frozen(sys, X.t, X.y, X.x_d)
    return fr.projectors([X.tau], [X.eta], X.gamma)[0]


# --------------------------------------------------------------------------
# continuous bases and the determinant


def continuous_stable_basis(sys: HyperbolicSystem, grid: Sequence[BasePoint],
                            real: bool = False) -> list:
    """Stable bases along a path, aligned point to point.

    Each new basis is the orthonormal basis of the new stable space closest
    to the previous basis (orthogonal Procrustes), which is the minimal
    rotation between consecutive subspaces.

    Parameters
    ----------
    real : bool
        Use real bases (valid at hyperbolic points with ``gamma = 0``).

    Raises
    ------
    GlancingOnPath
        If a point with ``gamma = 0`` is glancing.
    """
    out = []
    prev = None
    for X in grid:
        a = reduced_symbol(sys, X)
        if X.gamma == 0 and classify_symbol(a, X.weight) == PointClass.GLANCING:
            raise GlancingOnPath(f"glancing point at tau={X.tau}, eta={X.eta}",
                                 "continuous_stable_basis")
        P = stable_projector_at(sys, X)
        if prev is None:
            Q = orthonormal_range(P, sys.p)
            if real:
                Q = realify_basis(Q, sys.p).astype(complex)
        else:
            W = P @ prev
            if real:
                W = realify_basis(W, sys.p)
                Q = _procrustes(W, prev.real).real.astype(complex)
            else:
                Q = _procrustes(orthonormal_range(P, sys.p), prev)
        out.append(Q)
        prev = Q
    return out


def lopatinskii_determinant(sys: HyperbolicSystem, X: BasePoint, basis: np.ndarray) -> complex:
    """``det(B(t, y) @ basis)``."""
    b = sys.boundary(X.t, X.y)
    basis = np.asarray(basis).reshape(sys.n, -1)
    return complex(np.linalg.det(b @ basis))


# --------------------------------------------------------------------------
# sphere paths


def sphere_paths(d: int, resolution: int) -> list:
    """Paths covering the boundary sphere at ``gamma = 0``.

    Returns a list of ``(phi, e)`` pairs: ``phi`` a 1-d grid and ``e`` the
    unit direction in ``R^{d-1}``.  Points are ``(cos phi, sin phi * e)``.
    """
    if d == 2:
        phi = np.linspace(0.0, 2 * np.pi, resolution + 1)
        return [(phi, np.array([1.0]))]
    m = d - 1
    n_dirs = max(4, resolution // 8)
    dirs = []
    golden = (1 + 5**0.5) / 2
    for k in range(n_dirs):
        if m == 2:
            ang = 2 * np.pi * k / golden
            dirs.append(np.array([np.cos(ang), np.sin(ang)]))
        else:
            rng = np.random.default_rng(1000 + k)
            v = rng.standard_normal(m)
            dirs.append(v / np.linalg.norm(v))
    phi = np.linspace(0.0, np.pi, resolution // 2 + 1)
    return [(phi, e) for e in dirs]


def _path_points(phi, e):
    return np.cos(phi), np.sin(phi)[:, None] * e[None, :]


# --------------------------------------------------------------------------
# scanning along a path


@dataclass
class _Scan:
    taus: np.ndarray
    etas: np.ndarray
    classes: list
    delta: np.ndarray      # complex; real on hyperbolic runs
    bases: list


def _scan(fr: _Frozen, taus, etas) -> _Scan:
    m = len(taus)
    lam = np.sqrt(taus**2 + np.sum(etas**2, axis=1))
    a0 = fr.symbols(taus, etas, 0.0)
    classes = classify_batch(a0, lam)
    P = fr.projectors(taus, etas, 0.0)
    Q = _bases_from_projectors(P, fr.p)
    bases, delta = [], np.empty(m, complex)
    prev, prev_real = None, False
    for i in range(m):
        hyp = classes[i] == PointClass.HYPERBOLIC
        if hyp:
            R = realify_basis(Q[i], fr.p)
            if prev is not None and prev_real:
                R = _procrustes(R, prev.real).real
            Bi = R.astype(complex)
        else:
            Bi = Q[i]
            if prev is not None and classes[i] != PointClass.GLANCING:
                Bi = _procrustes(Bi, prev)
        bases.append(Bi)
        delta[i] = np.linalg.det(fr.b @ Bi)
        prev, prev_real = Bi, hyp
    return _Scan(np.asarray(taus), np.asarray(etas), classes, delta, bases)


def _real_delta_at(fr: _Frozen, tau, eta, ref: np.ndarray) -> tuple:
    P = fr.projectors([tau], [eta], 0.0)[0]
    R = realify_basis(orthonormal_range(P, fr.p), fr.p)
    R = _procrustes(R, ref.real).real
    return float(np.linalg.det(fr.b @ R).real), R


def _illinois(f, a, b, fa, fb, tol, maxit=100):
    """Safeguarded secant (Illinois variant of regula falsi)."""
    side = 0
    c, fc = a, fa
    for _ in range(maxit):
        c = (a * fb - b * fa) / (fb - fa)
        fc = f(c)
        if abs(fc) < tol or abs(b - a) < 1e-15 * max(1.0, abs(c)):
            return c, fc
        if fc * fb > 0:
            b, fb = c, fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = c, fc
            if side == 1:
                fb *= 0.5
            side = 1
    return c, fc


# --------------------------------------------------------------------------
# critical set


@dataclass
class CriticalPoint:
    """A zero of the Lopatinskii determinant on the boundary sphere."""

    tau: float
    eta: tuple
    dtau_delta: float
    residual: float
    point_class: PointClass
    min_singular: float
    t: float = 0.0
    y: tuple = ()

    def as_fixture(self) -> dict:
        return {"tau": self.tau, "eta": list(self.eta), "dtau_delta": self.dtau_delta}

    @property
    def base_point(self) -> BasePoint:
        return BasePoint(self.t, self.y or (0.0,) * len(self.eta), 0.0,
                         Frequency(self.tau, self.eta, 0.0))


def _annotate(fr: _Frozen, tau, eta, cls, t, y, ref) -> CriticalPoint:
    lam = math.sqrt(tau**2 + float(np.dot(eta, eta)))
    tau, eta = tau / lam, np.asarray(eta) / lam
    P = fr.projectors([tau], [eta], 0.0)[0]
    Q = orthonormal_range(P, fr.p)
    smin = float(np.linalg.svd(fr.b @ Q, compute_uv=False)[-1])
    if cls == PointClass.HYPERBOLIC:
        d0, R = _real_delta_at(fr, tau, eta, ref)
        h = config.get("lopatinskii.dtau_step")
        dp, _ = _real_delta_at(fr, tau + h, eta, R)
        dm, _ = _real_delta_at(fr, tau - h, eta, R)
        dtau = (dp - dm) / (2 * h)
        res = abs(d0)
    else:
        dtau = 0.0
        res = smin
    return CriticalPoint(float(tau), tuple(float(e) for e in eta), float(dtau), float(res),
                         cls, smin, float(t), tuple(float(v) for v in np.atleast_1d(y)))


def _to_cot(phi, e):
    """Map a sphere angle to (tau, eta) with |eta| = 1 (fixed-eta line)."""
    s = math.sin(phi)
    return math.cos(phi) / abs(s), np.sign(s) * e


def _roots_on_path(fr: _Frozen, phi, e, t, y) -> list:
    taus, etas = _path_points(phi, e)
    sc = _scan(fr, taus, etas)
    tol = config.get("lopatinskii.root_tol")
    roots = []
    m = len(phi)
    H = PointClass.HYPERBOLIC
    d = sc.delta
    # exact zeros on grid points and sign changes inside hyperbolic runs
    for i in range(m - 1):
        if sc.classes[i] != H or sc.classes[i + 1] != H:
            continue
        fa, fb = d[i].real, d[i + 1].real
        if fa == 0.0:
            roots.append(_annotate(fr, taus[i], etas[i], H, t, y, sc.bases[i]))
            continue
        if fa * fb >= 0:
            continue
        ref = sc.bases[i]
        s0, s1 = math.sin(phi[i]), math.sin(phi[i + 1])
        if min(abs(s0), abs(s1)) > 0.05 and s0 * s1 > 0:
            ta, ea = _to_cot(phi[i], e)
            tb, _ = _to_cot(phi[i + 1], e)
            f = lambda tt: _real_delta_at(fr, tt, ea, ref)[0]
            fa2, fb2 = f(ta), f(tb)
            r, fr_ = _illinois(f, ta, tb, fa2, fb2, tol)
            tau_r, eta_r = r, ea
        else:
            def f(ph):
                tt, ee = _path_points(np.array([ph]), e)
                return _real_delta_at(fr, tt[0], ee[0], ref)[0]
            r, fr_ = _illinois(f, phi[i], phi[i + 1], f(phi[i]), f(phi[i + 1]), tol)
            tt, ee = _path_points(np.array([r]), e)
            tau_r, eta_r = tt[0], ee[0]
        roots.append(_annotate(fr, tau_r, eta_r, H, t, y, ref))
    # zeros sitting at class transitions (glancing points)
    roots.extend(_transition_roots(fr, phi, e, sc, t, y))
    # isolated minima of |Delta| that do not change sign
    roots.extend(_minimum_roots(fr, phi, e, sc, t, y))
    return roots


def _transition_roots(fr, phi, e, sc, t, y) -> list:
    H = PointClass.HYPERBOLIC
    out = []
    margin = config.get("lopatinskii.glancing_margin")
    for i in range(len(phi) - 1):
        ci, cj = sc.classes[i], sc.classes[i + 1]
        if (ci == H) == (cj == H):
            continue
        hi, lo = (i, i + 1) if ci == H else (i + 1, i)
        if abs(sc.delta[hi]) > 0.5:
            continue
        a, b = phi[hi], phi[lo]

        def is_h(ph):
            tt, ee = _path_points(np.array([ph]), e)
            a0 = fr.symbol(tt[0], ee[0])
            return classify_symbol(a0, 1.0) == H

        for _ in range(60):
            mid = 0.5 * (a + b)
            if is_h(mid):
                a = mid
            else:
                b = mid
        # Delta near a glancing point behaves like D0 + c sqrt(dist)
        vals, dists = [], []
        ref = sc.bases[hi]
        for k in (4, 6, 8):
            dist = 10.0 ** (-k)
            ph = a + np.sign(a - b) * dist
            tt, ee = _path_points(np.array([ph]), e)
            if not is_h(ph):
                continue
            v, ref = _real_delta_at(fr, tt[0], ee[0], ref)
            vals.append(v)
            dists.append(dist)
        if len(vals) < 2:
            continue
        s1, s2 = math.sqrt(dists[-2]), math.sqrt(dists[-1])
        d0 = (vals[-1] * s1 - vals[-2] * s2) / (s1 - s2)
        if abs(d0) < margin * 1e-2:
            tt, ee = _path_points(np.array([b]), e)
            cp = _annotate(fr, tt[0], ee[0], PointClass.GLANCING, t, y, ref)
            cp.residual = float(abs(d0))
            out.append(cp)
    return out


def _minimum_roots(fr, phi, e, sc, t, y) -> list:
    from scipy.optimize import minimize_scalar

    out = []
    ad = np.abs(sc.delta)
    tol = config.get("lopatinskii.weak_tol")
    for i in range(1, len(phi) - 1):
        if not (ad[i] <= ad[i - 1] and ad[i] <= ad[i + 1]):
            continue
        cls = {sc.classes[i - 1], sc.classes[i], sc.classes[i + 1]}
        if PointClass.GLANCING in cls or len(cls) > 1:
            continue
        # sign changes already handled on hyperbolic runs
        if sc.classes[i] == PointClass.HYPERBOLIC and (
                sc.delta[i - 1].real * sc.delta[i].real < 0
                or sc.delta[i].real * sc.delta[i + 1].real < 0
                or sc.delta[i].real == 0.0):
            continue
        if ad[i] > 1e-2:
            continue

        def g(ph):
            tt, ee = _path_points(np.array([ph]), e)
            P = fr.projectors(tt, ee, 0.0)[0]
            Q = orthonormal_range(P, fr.p)
            return float(np.linalg.svd(fr.b @ Q, compute_uv=False)[-1])

        res = minimize_scalar(g, bounds=(phi[i - 1], phi[i + 1]), method="bounded",
                              options={"xatol": 1e-13})
        if res.fun < tol:
            tt, ee = _path_points(np.array([res.x]), e)
            out.append(_annotate(fr, tt[0], ee[0], sc.classes[i], t, y, sc.bases[i]))
    return out


def find_critical_set(sys: HyperbolicSystem, resolution: int = 720, gamma: float = 0.0,
                      t: float = 0.0, y=None) -> list:
    """Zeros of the Lopatinskii determinant on the boundary sphere.

    At ``gamma = 0``: sign changes of the real aligned determinant are
    refined by a safeguarded secant iteration in ``tau`` at fixed ``eta``.
    Zeros at glancing transitions and sign-preserving zeros (local minima
    of ``|Delta|``) are reported as well, with their class.
    At ``gamma > 0`` grid points with ``|Delta|`` below the weak
    tolerance are returned (no refinement).
    """
    if y is None:
        y = np.zeros(sys.d - 1)
    fr = _Frozen(sys, t, y, 0.0)
    roots: list = []
    if gamma > 0:
        tol = config.get("lopatinskii.weak_tol")
        for phi, e in sphere_paths(sys.d, resolution):
            taus, etas = _path_points(phi, e)
            lam = np.sqrt(taus**2 + np.sum(etas**2, 1) + gamma**2)
            P = fr.projectors(taus, etas, gamma)
            Q = _bases_from_projectors(P, sys.p)
            sv = np.linalg.svd(fr.b[None] @ Q, compute_uv=False)[:, -1]
            for i in np.flatnonzero(sv < tol):
                roots.append(CriticalPoint(float(taus[i] / lam[i]),
                                           tuple(etas[i] / lam[i]), 0.0, float(sv[i]),
                                           PointClass.ELLIPTIC, float(sv[i]), t,
                                           tuple(np.atleast_1d(y))))
        return roots
    for phi, e in sphere_paths(sys.d, resolution):
        roots.extend(_roots_on_path(fr, phi, e, t, y))
    return _dedupe(roots)


def _dedupe(roots: list, tol: float = 1e-7) -> list:
    out: list = []
    for r in roots:
        z = np.concatenate([[r.tau], r.eta])
        if any(np.linalg.norm(z - np.concatenate([[q.tau], q.eta])) < tol for q in out):
            continue
        out.append(r)
    out.sort(key=lambda r: (r.tau, r.eta))
    return out


# --------------------------------------------------------------------------
# WR membership


@dataclass
class WRReport:
    """Outcome of the WR membership test."""

    weak_lc: bool
    weak_min_abs_delta: float
    gamma_nonempty: bool
    all_hyperbolic: bool
    dtau_nonzero: bool
    roots: list = field(default_factory=list)

    @property
    def critical_hyperbolic(self) -> bool:
        return self.gamma_nonempty and self.all_hyperbolic

    @property
    def wr(self) -> bool:
        return self.weak_lc and self.critical_hyperbolic and self.dtau_nonzero

    @property
    def uniform_lc(self) -> bool:
        return self.weak_lc and not self.gamma_nonempty

    def as_dict(self) -> dict:
        return {
            "weak_lc": self.weak_lc,
            "weak_min_abs_delta": self.weak_min_abs_delta,
            "gamma_nonempty": self.gamma_nonempty,
            "all_hyperbolic": self.all_hyperbolic,
            "dtau_nonzero": self.dtau_nonzero,
            "wr": self.wr,
            "uniform_lc": self.uniform_lc,
            "roots": [
                {"tau": r.tau, "eta": list(r.eta), "dtau_delta": r.dtau_delta,
                 "class": r.point_class.value, "residual": r.residual}
                for r in self.roots
            ],
        }


def weak_lc_minimum(sys: HyperbolicSystem, resolution: int = 720, gammas=None,
                    t: float = 0.0, y=None) -> float:
    """min |Delta| over a gamma ladder times the sphere grid (orthonormal bases)."""
    if gammas is None:
        gammas = np.geomspace(1e-2, 10.0, 13)
    if y is None:
        y = np.zeros(sys.d - 1)
    fr = _Frozen(sys, t, y, 0.0)
    best = np.inf
    for phi, e in sphere_paths(sys.d, resolution):
        taus, etas = _path_points(phi, e)
        for g in gammas:
            P = stable_projectors_batch(fr.symbols(taus, etas, g))
            Q = _bases_from_projectors(P, sys.p)
            vals = np.abs(np.linalg.det(fr.b[None] @ Q))
            best = min(best, float(vals.min()))
    return best


def check_wr_membership(sys: HyperbolicSystem, resolution: int = 720, gammas=None,
                        t: float = 0.0, y=None) -> WRReport:
    """Decide WR membership at the boundary point ``(t, y)``."""
    wmin = weak_lc_minimum(sys, resolution, gammas, t, y)
    weak = wmin > config.get("lopatinskii.weak_tol")
    roots = find_critical_set(sys, resolution, 0.0, t, y)
    nonempty = len(roots) > 0
    allh = nonempty and all(r.point_class == PointClass.HYPERBOLIC for r in roots)
    dmin = config.get("lopatinskii.dtau_min")
    dtau = nonempty and all(abs(r.dtau_delta) > dmin for r in roots)
    return WRReport(weak, wmin, nonempty, allh, dtau, roots)


def delta_sweep(sys: HyperbolicSystem, resolution: int = 720, t: float = 0.0, y=None) -> list:
    """Rows ``(tau, eta, gamma, Delta, class)`` over the sphere grid at gamma = 0."""
    if y is None:
        y = np.zeros(sys.d - 1)
    fr = _Frozen(sys, t, y, 0.0)
    rows = []
    for phi, e in sphere_paths(sys.d, resolution):
        taus, etas = _path_points(phi, e)
        sc = _scan(fr, taus, etas)
        for i in range(len(phi)):
            rows.append((float(taus[i]), tuple(float(v) for v in etas[i]), 0.0,
                         complex(sc.delta[i]), sc.classes[i].value))
    return rows


# --------------------------------------------------------------------------
# nu and the factorization


def find_nu(sys: HyperbolicSystem, t, y, eta, tau_guess: float, weight: Optional[float] = None,
            x_d: float = 0.0) -> float:
    """Real zero ``nu`` of ``tau -> Delta(tau, eta)`` nearest to ``tau_guess``.

    The search bracket is ``[-c |(tau, eta)|, c |(tau, eta)|]`` (``c`` from
    ``lopatinskii.tau_bracket``) split into at least ``lopatinskii.tau_cells``
    cells, refined so that no cell is wider than ``|eta| / 8``.  Sign
    changes on hyperbolic cells are refined by the safeguarded secant
    method.

    Raises
    ------
    OmegaRootNotFound
    """
    eta = np.atleast_1d(np.asarray(eta, float))
    lam = weight if weight is not None else math.sqrt(tau_guess**2 + float(eta @ eta))
    c = config.get("lopatinskii.tau_bracket")
    cells = config.get("lopatinskii.tau_cells")
    fr = _Frozen(sys, t, y, x_d)
    # zeros scale with the tangential frequency, not with gamma
    span = c * max(math.sqrt(tau_guess**2 + float(eta @ eta)), 1e-300)
    # and the cells must resolve the glancing gap near |tau| ~ |eta|
    ne = float(np.linalg.norm(eta))
    if ne > 0:
        cells = max(cells, min(int(math.ceil(16 * span / ne)), 20000))
    taus = np.linspace(-span, span, cells + 1)
    etas = np.broadcast_to(eta, (len(taus), len(eta)))
    sc = _scan(fr, taus, np.array(etas))
    H = PointClass.HYPERBOLIC
    tol = config.get("lopatinskii.root_tol")
    roots = []
    for i in range(len(taus) - 1):
        if sc.classes[i] != H or sc.classes[i + 1] != H:
            continue
        fa, fb = sc.delta[i].real, sc.delta[i + 1].real
        if fa == 0:
            roots.append(taus[i])
            continue
        if fa * fb > 0:
            continue
        ref = sc.bases[i]
        f = lambda tt: _real_delta_at(fr, tt, eta, ref)[0]
        # Dt is built from nu, so resolve it well below the root tolerance
        r, _ = _illinois(f, taus[i], taus[i + 1], f(taus[i]), f(taus[i + 1]), 1e-4 * tol * lam)
        roots.append(r)
    if not roots:
        raise OmegaRootNotFound(f"no zero of Delta for eta={eta.tolist()}", "factor_boundary_matrix")
    roots = np.array(roots)
    return float(roots[np.argmin(np.abs(roots - tau_guess))])


@dataclass
class LopatinskiiData:
    """Factorization ``b^- = p diag(Dt, 1, .., 1) c^{-1}`` near the critical set.

    ``basis_used`` is the stable basis with its columns permuted by the
    pivoting, ``d``, ``c`` and ``critical_direction`` refer to it.
    """

    delta_value: complex
    basis_used: np.ndarray
    dcoeffs: np.ndarray
    p_matrix: np.ndarray
    c_matrix: np.ndarray
    omega: float
    nu: float
    delta_tilde: complex
    critical_direction: np.ndarray
    b_minus: np.ndarray
    col_perm: tuple
    row_perm: tuple
    residual: float
    p_cond: float
    det_h: complex


def _pivot(bm: np.ndarray, cols: Optional[Sequence[int]] = None) -> tuple:
    """Choose the (row, column) whose deletion leaves the best conditioned cofactor."""
    p = bm.shape[0]
    if p == 1:
        return 0, 0
    cols = range(p) if cols is None else cols
    best, arg = -1.0, (0, 0)
    for r in range(p):
        for c in cols:
            h = np.delete(np.delete(bm, r, axis=0), c, axis=1)
            v = abs(np.linalg.det(h))
            if v > best * (1 + 1e-12):
                best, arg = v, (r, c)
    return arg


def _perm_first(p: int, k: int) -> list:
    return [k] + [i for i in range(p) if i != k]


def _k_vector(bm: np.ndarray):
    """Return (k, d, h) for ``bm`` already pivoted."""
    p = bm.shape[0]
    if p == 1:
        return bm[:, 0].copy(), np.zeros(0, complex), np.zeros((0, 0), complex)
    h = bm[1:, 1:]
    d = np.linalg.solve(h, bm[1:, 0])
    k = bm[:, 0] - bm[:, 1:] @ d
    return k, d, h


def _stable_basis_default(sys: HyperbolicSystem, X: BasePoint) -> np.ndarray:
    P = stable_projector_at(sys, X)
    return orthonormal_range(P, sys.p)


def factor_boundary_matrix(sys: HyperbolicSystem, X: BasePoint, basis: Optional[np.ndarray] = None,
                           nu: Optional[float] = None,
                           pivot_cols: Optional[Sequence[int]] = None) -> LopatinskiiData:
    """Factor the restricted boundary matrix near a zero of Delta.

    Parameters
    ----------
    basis : (n, p) ndarray, optional
        Stable basis at ``X``; an orthonormal one is used when omitted.
    nu : float, optional
        Precomputed zero of ``Delta(., eta)``; found by :func:`find_nu`
        when omitted.
    pivot_cols : sequence of int, optional
        Restrict the pivot column to these indices.

    Raises
    ------
    RankDeficient
        If ``rank b^- < p - 1``.
    OmegaRootNotFound
        If no real zero exists in the tau bracket.
    """
    n, p = sys.n, sys.p
    if basis is None:
        basis = _stable_basis_default(sys, X)
    basis = np.asarray(basis, dtype=complex)
    b = sys.boundary(X.t, X.y)
    bm0 = b @ basis
    sv = np.linalg.svd(bm0, compute_uv=False)
    rtol = config.get("system.rank_tol") * max(sv[0], 1e-300)
    if p >= 2 and np.sum(sv > rtol) < p - 1:
        raise RankDeficient("restricted boundary matrix has rank < p - 1", "factor_boundary_matrix")
    r, c = _pivot(bm0, pivot_cols)
    cperm = _perm_first(p, c)
    rperm = _perm_first(p, r)
    E = basis[:, cperm]
    bm = b @ E
    bmr = bm[rperm, :]
    k, d, h = _k_vector(bmr)
    det_h = complex(np.linalg.det(h)) if p > 1 else 1.0 + 0j
    cm = np.eye(p, dtype=complex)
    cm[1:, 0] = -d
    lam = X.weight
    if nu is None:
        nu = find_nu(sys, X.t, X.y, X.eta, X.tau, lam, X.x_d)
    omega = X.tau - nu
    Dt = (X.gamma + 1j * omega) / lam
    first = np.empty(p, complex)
    if abs(Dt) > config.get("lopatinskii.lhopital_cut"):
        first = k / Dt
    else:
        # k / Dt is smooth across the root: interpolate it from tau +- H,
        # tau +- 2H where the division is well conditioned (error O(H^4))
        H = 1e-3 * lam
        F = {}
        for m in (-2, -1, 1, 2):
            Xs = X.replace(tau=X.tau + m * H)
            Es = stable_projector_at(sys, Xs) @ E
            ks = _k_vector((b @ Es)[rperm, :])[0]
            F[m] = ks / ((X.gamma + 1j * (Xs.tau - nu)) / lam)
        first = (4 * (F[1] + F[-1]) - (F[2] + F[-2])) / 6
    pm_r = bmr.copy()
    pm_r[:, 0] = first
    inv_rperm = np.argsort(rperm)
    pm = pm_r[inv_rperm, :]
    D = np.eye(p, dtype=complex)
    D[0, 0] = Dt
    recon = pm @ D @ np.linalg.inv(cm)
    nrm = np.linalg.norm(bm)
    residual = float(np.linalg.norm(bm - recon) / nrm) if nrm > 0 else 0.0
    ell = E @ cm[:, 0]
    sv_p = np.linalg.svd(pm, compute_uv=False)
    pcond = float(sv_p[0] / sv_p[-1]) if sv_p[-1] > 0 else np.inf
    return LopatinskiiData(
        delta_value=complex(np.linalg.det(bm)),
        basis_used=E,
        dcoeffs=d,
        p_matrix=pm,
        c_matrix=cm,
        omega=float(omega),
        nu=float(nu),
        delta_tilde=complex(Dt),
        critical_direction=ell,
        b_minus=bm,
        col_perm=tuple(cperm),
        row_perm=tuple(rperm),
        residual=residual,
        p_cond=pcond,
        det_h=det_h,
    )


def critical_direction(sys: HyperbolicSystem, X: BasePoint, basis: np.ndarray,
                       pivot_cols: Optional[Sequence[int]] = None) -> tuple:
    """``ell = e_1 - sum d_i e_i`` for the pivoted basis, without computing ``nu``.

    Returns
    -------
    ell : ndarray
    d : ndarray
    col_perm : list
    """
    b = sys.boundary(X.t, X.y)
    basis = np.asarray(basis, dtype=complex)
    bm0 = b @ basis
    r, c = _pivot(bm0, pivot_cols)
    cperm = _perm_first(sys.p, c)
    rperm = _perm_first(sys.p, r)
    E = basis[:, cperm]
    _, d, _ = _k_vector((b @ E)[rperm, :])
    return E[:, 0] - E[:, 1:] @ d, d, cperm
