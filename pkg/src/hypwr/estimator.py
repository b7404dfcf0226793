"""Per-frequency boundary value problems and energy-estimate constants.

After Fourier-Laplace transform in ``(t, y)`` the problem at a frequency
``zeta`` with ``gamma > 0`` is the ODE on the half line::

    u' = -i a(zeta) u + i f,    b u(0) = g,

and the filtered estimate compares

    lhs = gamma ||delta u||^2 + |delta u(0)|^2
    rhs = (1/gamma) ||delta f||^2 + |q g|^2

(``delta`` acting in the eigen-coordinates of ``a``).  Without the filter
both sides use the plain norms.

Two solvers are provided.  :func:`solve_frequency_bvp` works on a grid
with data held piecewise linear.  The sharp constants use data that are
finite sums of exponentials, for which the bounded solution and all the
norms are available in closed form; the ratio is then a quotient of two
Hermitian forms and its supremum over the data span is a generalized
eigenvalue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from . import config
from .errors import CriticalFrequency, NoGap
from .spectral import ordered_eigenbasis, symbol_partials_gamma
from .system_model import BasePoint, Frequency, HyperbolicSystem, reduced_symbol

__all__ = [
    "FrequencyBVP",
    "BVPSolution",
    "EstimateReport",
    "ExpData",
    "solve_frequency_bvp",
    "solve_exponential",
    "weighted_norms",
    "filter_symbols",
    "sharp_constant",
    "sharp_constant_report",
    "gamma_scaling_sweep",
    "coulombel_comparison",
    "approach_sequence",
    "frequency_sweep",
    "SWEEP_COLUMNS",
]


def _point(X) -> BasePoint:
    return X if isinstance(X, BasePoint) else BasePoint(0.0, (0.0,) * len(X.eta), 0.0, X)


def _check_gap(mu: np.ndarray, gamma: float, lam: float, op: str):
    if gamma <= 0:
        raise NoGap("the frequency problem needs gamma > 0", op)
    if np.min(np.abs(mu.imag)) <= config.get("spectral.gap_tol") * lam:
        raise NoGap("an eigenvalue sits on the real axis", op)


def _boundary_solve(b: np.ndarray, Vs: np.ndarray, op: str) -> np.ndarray:
    Q, _ = np.linalg.qr(Vs)
    smin = np.linalg.svd(b @ Q, compute_uv=False)[-1]
    if smin < config.get("estimator.critical_tol") * np.linalg.norm(b, 2):
        raise CriticalFrequency(f"boundary solve is singular (sigma_min={smin:.2e})", op)
    return np.linalg.inv(b @ Vs)


# --------------------------------------------------------------------------
# grid solver


@dataclass
class FrequencyBVP:
    """Frequency problem on a uniform ``x_d`` grid.

    ``f_hat`` holds the forcing at the grid nodes and is interpolated
    linearly between them; it should vanish beyond ``0.9 * X_max``.
    """

    a: np.ndarray
    b: np.ndarray
    f_hat: np.ndarray
    g_hat: np.ndarray
    grid: np.ndarray
    gamma: float
    weight: float
    dgamma: Optional[np.ndarray] = None
    f_mid: Optional[np.ndarray] = None

    def midpoints(self) -> np.ndarray:
        """Forcing at the cell midpoints (linear average when not sampled)."""
        if self.f_mid is not None:
            return np.asarray(self.f_mid, complex)
        f = np.asarray(self.f_hat, complex)
        return (f[:-1] + f[1:]) / 2

    @classmethod
    def from_system(cls, sys: HyperbolicSystem, X, f=None, g=None, n_points: Optional[int] = None,
                    x_max: Optional[float] = None) -> "FrequencyBVP":
        """Build the problem at ``X``; ``f`` may be a callable of ``x_d`` or an array."""
        X = _point(X)
        a = reduced_symbol(sys, X)
        mu = np.linalg.eigvals(a)
        _check_gap(mu, X.gamma, X.weight, "solve_frequency_bvp")
        if x_max is None:
            x_max = config.get("estimator.xmax_factor") / np.min(np.abs(mu.imag))
        N = config.get("estimator.grid_points") if n_points is None else int(n_points)
        grid = np.linspace(0.0, x_max, N)
        fmid = None
        if f is None:
            fv = np.zeros((N, sys.n), complex)
        elif callable(f):
            fv = np.array([f(x) for x in grid], complex).reshape(N, sys.n)
            xm = (grid[:-1] + grid[1:]) / 2
            fmid = np.array([f(x) for x in xm], complex).reshape(N - 1, sys.n)
        else:
            fv = np.asarray(f, complex).reshape(N, sys.n)
        gv = np.zeros(sys.p, complex) if g is None else np.asarray(g, complex).reshape(sys.p)
        return cls(a, sys.boundary(X.t, X.y), fv, gv, grid, X.gamma, X.weight,
                   symbol_partials_gamma(sys, X), fmid)

    def decay_report(self) -> dict:
        mu = np.linalg.eigvals(self.a)
        r = float(np.min(np.abs(mu.imag)))
        x_max = float(self.grid[-1])
        h = float(self.grid[1] - self.grid[0])
        return {"min_decay": r, "x_max": x_max, "truncation_bound": math.exp(-r * x_max),
                "osc_per_step": float(np.max(np.abs(mu.real)) * h),
                "decay_per_step": float(np.max(np.abs(mu.imag)) * h)}


@dataclass
class BVPSolution:
    u: np.ndarray
    u0: np.ndarray
    grid: np.ndarray
    ode_residual: float = float("nan")
    boundary_residual: float = float("nan")
    report: dict = field(default_factory=dict)


def _series(z, m, backward):
    # forward: int_0^1 e^{z(1-th)} th^m dth ; backward: int_0^1 e^{z th} th^m dth
    out = np.zeros_like(z)
    term = np.ones_like(z)
    fact = 1.0
    for k in range(25):
        if backward:
            out = out + term / (fact * (k + m + 1))
        else:
            out = out + term * math.factorial(m) / math.factorial(k + m + 1)
        term = term * z
        fact *= k + 1
    return out


def _cell_weights(z: np.ndarray, backward: bool) -> tuple:
    """Exponential moments ``int_0^1 e^{z(1-th)} th^m`` (or ``e^{z th}``), m = 0, 1, 2."""
    z = np.asarray(z, complex)
    small = np.abs(z) < 0.5
    zs = np.where(small, 1.0, z)
    e = np.exp(zs)
    if backward:
        closed = ((e - 1) / zs, (e * (zs - 1) + 1) / zs**2,
                  (e * (zs * zs - 2 * zs + 2) - 2) / zs**3)
    else:
        closed = ((e - 1) / zs, (e - 1 - zs) / zs**2,
                  2 * (e - 1 - zs - zs * zs / 2) / zs**3)
    return tuple(np.where(small, _series(z, m, backward), closed[m]) for m in range(3))


def _quadratic_coeffs(f0, fm, f1):
    return f0, -3 * f0 + 4 * fm - f1, 2 * f0 - 4 * fm + 2 * f1


def solve_frequency_bvp(bvp: FrequencyBVP, check: bool = True) -> BVPSolution:
    """Bounded solution of ``u' = -i a u + i f``, ``b u(0) = g`` on the grid.

    The forcing is held quadratic on each cell (through the node and
    midpoint values).  Stable modes (``Im mu < 0``) are integrated forward
    from 0, unstable ones backward from ``X_max`` with zero end value; both
    steps are exact for the held forcing.  A homogeneous stable solution
    then fixes the boundary condition.

    Raises
    ------
    NoGap
        For ``gamma = 0`` or an eigenvalue on the real axis.
    CriticalFrequency
        If the boundary matrix restricted to the stable space is singular.
    """
    a, b = np.asarray(bvp.a, complex), np.asarray(bvp.b, complex)
    n = a.shape[0]
    mu, V = np.linalg.eig(a)
    _check_gap(mu, bvp.gamma, bvp.weight, "solve_frequency_bvp")
    order = np.argsort(mu.imag >= 0, kind="stable")
    mu, V = mu[order], V[:, order]
    ns = int(np.sum(mu.imag < 0))
    Vi = np.linalg.inv(V)
    x = bvp.grid
    N = len(x)
    h = np.diff(x)
    fm = bvp.midpoints()
    c0, c1, c2 = _quadratic_coeffs(bvp.f_hat[:-1] @ Vi.T, fm @ Vi.T, bvp.f_hat[1:] @ Vi.T)
    W = np.zeros((N, n), complex)
    for j in range(n):
        lam = -1j * mu[j]
        if j < ns:
            z = lam * h
            m0, m1, m2 = _cell_weights(z, False)
            e = np.exp(z)
            inc = 1j * h * (m0 * c0[:, j] + m1 * c1[:, j] + m2 * c2[:, j])
            for k in range(N - 1):
                W[k + 1, j] = e[k] * W[k, j] + inc[k]
        else:
            z = -lam * h
            m0, m1, m2 = _cell_weights(z, True)
            e = np.exp(z)
            inc = 1j * h * (m0 * c0[:, j] + m1 * c1[:, j] + m2 * c2[:, j])
            for k in range(N - 2, -1, -1):
                W[k, j] = e[k] * W[k + 1, j] - inc[k]
    Binv = _boundary_solve(b, V[:, :ns], "solve_frequency_bvp")
    c = Binv @ (bvp.g_hat - b @ (V @ W[0]))
    W[:, :ns] += np.exp(np.outer(x, -1j * mu[:ns])) * c[None, :]
    U = W @ V.T
    sol = BVPSolution(U, U[0].copy(), x, report=bvp.decay_report())
    if check:
        sol.ode_residual = _van_loan_residual(a, bvp.f_hat, fm, x, U)
        sol.boundary_residual = float(np.linalg.norm(b @ U[0] - bvp.g_hat))
    return sol


def _van_loan_residual(a, f, fm, x, U) -> float:
    """Cell-wise propagation of the grid solution by an augmented exponential."""
    n = a.shape[0]
    h = np.diff(x)
    c0, c1, c2 = _quadratic_coeffs(f[:-1], fm, f[1:])
    M = np.zeros((len(h), n + 3, n + 3), complex)
    M[:, :n, :n] = -1j * a[None] * h[:, None, None]
    M[:, :n, n] = 1j * c0 * h[:, None]
    M[:, :n, n + 1] = 1j * c1 * h[:, None]
    M[:, :n, n + 2] = 1j * c2 * h[:, None]
    M[:, n + 1, n] = 1.0
    M[:, n + 2, n + 1] = 2.0
    E = scipy.linalg.expm(M)
    pred = np.einsum("kij,kj->ki", E[:, :n, :n], U[:-1]) + E[:, :n, n]
    scale = max(1.0, float(np.abs(U).max()), float(np.abs(f).max()))
    return float(np.abs(pred - U[1:]).max() / scale)


def weighted_norms(u: np.ndarray, grid: np.ndarray, zeta, s: float = 0.0,
                   method: str = "simpson", weight: Optional[np.ndarray] = None) -> tuple:
    """``(int lambda^{2s} |W u|^2 dx_d, lambda^{2s} |W u(0)|^2)``.

    ``weight`` is an optional matrix ``W`` applied pointwise.  ``method`` is
    ``"simpson"`` or ``"trapezoid"``.
    """
    u = np.asarray(u, complex)
    if u.ndim == 1:
        u = u[:, None]
    if weight is not None:
        u = u @ np.asarray(weight).T
    lam = zeta.weight if hasattr(zeta, "weight") else float(zeta)
    dens = np.sum(np.abs(u) ** 2, axis=1)
    if method == "simpson":
        interior = float(scipy.integrate.simpson(dens, x=grid))
    elif method == "trapezoid":
        interior = float(scipy.integrate.trapezoid(dens, x=grid))
    else:
        raise ValueError(f"unknown quadrature {method!r}")
    w = lam ** (2 * s)
    return w * interior, w * float(dens[0])


# --------------------------------------------------------------------------
# closed-form solver for exponential data


@dataclass
class ExpData:
    """Data ``f(x) = sum_k C_k exp(-beta_k x)`` and ``g``."""

    betas: np.ndarray
    C: np.ndarray
    g: np.ndarray

    def scaled(self, c: complex) -> "ExpData":
        return ExpData(self.betas, c * self.C, c * self.g)


@dataclass
class ExpSolution:
    """``u(x) = sum_l vecs[l] exp(-alphas[l] x)``."""

    alphas: np.ndarray
    vecs: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        return np.exp(-np.outer(x, self.alphas)) @ self.vecs


def _gram(alphas: np.ndarray) -> np.ndarray:
    return 1.0 / (alphas.conj()[:, None] + alphas[None, :])


def _sq_norm(alphas, vecs, W=None) -> float:
    v = vecs if W is None else vecs @ np.asarray(W).T
    return float(np.real(np.einsum("li,lm,mi->", v.conj(), _gram(alphas), v)))


def solve_exponential(a: np.ndarray, b: np.ndarray, data: ExpData, gamma: float, weight: float,
                      mu_V=None) -> ExpSolution:
    """Bounded solution for exponential data (exact)."""
    if mu_V is None:
        mu, V = np.linalg.eig(a)
    else:
        mu, V = mu_V
    _check_gap(mu, gamma, weight, "sharp_constant")
    stable = mu.imag < 0
    Vi = np.linalg.inv(V)
    G = np.asarray(data.C, complex) @ Vi.T                    # (K, n)
    den = 1j * mu[None, :] - data.betas[:, None]
    if np.any(np.abs(den) <= 1e-12 * max(weight, 1.0)):
        raise ValueError("forcing exponent resonates with a mode")
    Wp = 1j * G / den                                           # (K, n)
    part_vecs = Wp @ V.T
    Binv = _boundary_solve(b, V[:, stable], "sharp_constant")
    c = Binv @ (data.g - b @ part_vecs.sum(axis=0))
    hom = V[:, stable] * c[None, :]
    alphas = np.concatenate([data.betas, 1j * mu[stable]])
    vecs = np.concatenate([part_vecs, hom.T], axis=0)
    return ExpSolution(alphas, vecs)


# --------------------------------------------------------------------------
# filters and constants


@dataclass
class FilterSymbols:
    D: np.ndarray          # delta E^{-1}
    q: np.ndarray
    delta_tilde: complex
    critical: bool


def filter_symbols(sys: HyperbolicSystem, X) -> FilterSymbols:
    """``D = delta E^{-1}`` and ``q`` at ``X``; identity for a non-critical point."""
    from .symmetrizer import build_symmetrizer

    X = _point(X)
    sym = build_symmetrizer(sys, X)
    D = sym.delta @ np.linalg.inv(sym.basis)
    return FilterSymbols(D, sym.q, complex(sym.delta_tilde), bool(sym.critical))


@dataclass
class EstimateReport:
    zeta: Frequency
    lhs: float
    rhs_filtered: float
    rhs_unfiltered: float
    sharp_constant: float
    abs_delta_tilde: float
    lhs_unfiltered: float = float("nan")
    sharp_unfiltered: float = float("nan")
    extra: dict = field(default_factory=dict)


RATE_FACTORS = (0.3, 0.7, 1.6, 3.7, 8.5)


def _dictionary(mu: np.ndarray, factors=RATE_FACTORS) -> np.ndarray:
    """Exponents ``beta = r c + i Re mu_j`` (``r = min |Im mu|``), kept off resonance."""
    r = float(np.min(np.abs(mu.imag)))
    betas = []
    for m in mu:
        for c in factors:
            beta = r * c + 1j * m.real
            for _ in range(10):
                if np.min(np.abs(1j * mu - beta)) > 1e-3 * r:
                    break
                beta = beta * 1.013
            betas.append(beta)
    return np.array(betas)


class _Forms:
    """Hermitian forms ``lhs`` and ``rhs`` on the span of exponential data."""

    def __init__(self, sys: HyperbolicSystem, X, filter_on: bool, betas=None, kind: str = "filtered"):
        X = _point(X)
        self.X = X
        a = reduced_symbol(sys, X)
        b = sys.boundary(X.t, X.y).astype(complex)
        n, p = sys.n, sys.p
        mu, V = np.linalg.eig(a)
        _check_gap(mu, X.gamma, X.weight, "sharp_constant")
        if betas is None:
            betas = _dictionary(mu)
        self.betas = np.asarray(betas, complex)
        K = len(self.betas)
        self.dim = K * n + p
        if filter_on:
            fs = filter_symbols(sys, X)
            Wu, Wf, Wg = fs.D, fs.D, fs.q
            self.delta_tilde = fs.delta_tilde
        else:
            Wu, Wf, Wg = np.eye(n), np.eye(n), np.eye(p)
            self.delta_tilde = complex("nan")
        gam, lam = X.gamma, X.weight
        # solution coefficients for each unit data vector
        cols_u, cols_f, cols_g = [], [], []
        for k in range(self.dim):
            e = np.zeros(self.dim, complex)
            e[k] = 1.0
            C, g = e[:K * n].reshape(K, n), e[K * n:]
            sol = solve_exponential(a, b, ExpData(self.betas, C, g), gam, lam, (mu, V))
            cols_u.append((sol.vecs @ Wu.T).ravel())
            cols_f.append((C @ Wf.T).ravel())
            cols_g.append(Wg @ g)
        self.alphas = sol.alphas
        Lu = np.array(cols_u).T.reshape(len(sol.alphas), n, self.dim)
        Lf = np.array(cols_f).T.reshape(K, n, self.dim)
        Lg = np.array(cols_g).T
        Gu, Gf = _gram(self.alphas), _gram(self.betas)
        interior_u = np.einsum("lia,lm,mib->ab", Lu.conj(), Gu, Lu)
        trace_u0 = Lu.sum(axis=0)
        trace_u = trace_u0.conj().T @ trace_u0
        interior_f = np.einsum("lia,lm,mib->ab", Lf.conj(), Gf, Lf)
        trace_g = Lg.conj().T @ Lg
        self.parts = {"u_int": _herm(interior_u), "u_tr": _herm(trace_u),
                      "f_int": _herm(interior_f), "g_tr": _herm(trace_g)}
        self.gamma, self.lam = gam, lam
        self.kind = kind

    def matrices(self, kind: Optional[str] = None):
        kind = self.kind if kind is None else kind
        P, g, lam = self.parts, self.gamma, self.lam
        lhs = g * P["u_int"] + P["u_tr"]
        if kind == "coulombel":
            rhs = (lam**2 / g**3) * P["f_int"] + (lam**2 / g**2) * P["g_tr"]
        else:
            rhs = P["f_int"] / g + P["g_tr"]
        return lhs, rhs

    def ratio(self, d: np.ndarray, kind: Optional[str] = None) -> tuple:
        lhs, rhs = self.matrices(kind)
        L = float(np.real(d.conj() @ lhs @ d))
        R = float(np.real(d.conj() @ rhs @ d))
        return L, R


def _herm(M):
    return (M + M.conj().T) / 2


def _max_ratio(lhs: np.ndarray, rhs: np.ndarray) -> tuple:
    """Largest generalized eigenvalue of ``(lhs, rhs)`` on the range of ``rhs``."""
    w, U = np.linalg.eigh(rhs)
    keep = w > 1e-13 * w.max()
    Wh = U[:, keep] / np.sqrt(w[keep])[None, :]
    M = _herm(Wh.conj().T @ lhs @ Wh)
    ev, Z = np.linalg.eigh(M)
    return float(ev[-1]), Wh @ Z[:, -1]


def sharp_constant_report(sys: HyperbolicSystem, zeta, filter: str = "on", n_data: int = 32,
                          seed: int = 0, kind: str = "filtered") -> EstimateReport:
    """Sharp constant with its maximizing data and the plain-norm companion.

    The maximum is taken over the span of ``n x 5`` exponential profiles per
    eigenvalue and the boundary data; ``n_data`` random members of the span
    (from ``seed``) are evaluated as well.  The value is a lower bound for
    the constant over all data.
    """
    X = _point(zeta)
    on = filter == "on"
    forms = _Forms(sys, X, on, kind=kind)
    lhs, rhs = forms.matrices()
    best, dvec = _max_ratio(lhs, rhs)
    rng = np.random.default_rng(seed)
    for _ in range(int(n_data)):
        d = rng.standard_normal(forms.dim) + 1j * rng.standard_normal(forms.dim)
        L, R = forms.ratio(d)
        if R > 0:
            best = max(best, L / R)
    L, R = forms.ratio(dvec)
    plain = _Forms(sys, X, False, betas=forms.betas)
    Lp, Rp = plain.ratio(dvec)
    plain_best = _max_ratio(*plain.matrices())[0] if on else best
    if on:
        fs = filter_symbols(sys, X)
        adt = abs(fs.delta_tilde) if fs.critical else 1.0
    else:
        try:
            fs = filter_symbols(sys, X)
            adt = abs(fs.delta_tilde) if fs.critical else 1.0
        except Exception:
            adt = float("nan")
    return EstimateReport(X.freq, L, R if on else float("nan"), Rp, best, adt,
                          lhs_unfiltered=Lp, sharp_unfiltered=plain_best,
                          extra={"data": dvec, "betas": forms.betas})


def sharp_constant(sys: HyperbolicSystem, zeta, filter: str = "on", n_data: int = 32,
                   seed: int = 0) -> float:
    """Largest ``lhs / rhs`` found (filtered or plain norms)."""
    return sharp_constant_report(sys, zeta, filter, n_data, seed).sharp_constant


def _fixed_profile_ratio(sys, X, betas, d, filter_on) -> tuple:
    forms = _Forms(sys, X, filter_on, betas=betas)
    return forms.ratio(d)


def gamma_scaling_sweep(sys: HyperbolicSystem, zeta_base, gamma_ladder: Sequence[float],
                        filter: str = "on", n_data: int = 32, seed: int = 0) -> list:
    """Fixed data profile (the maximizer at the first rung) across the ladder.

    Rows hold ``gamma, lhs, rhs, ratio, sharp_gamma0``; the profile keeps the
    same exponents, so only ``gamma`` changes.
    """
    ladder = [float(g) for g in gamma_ladder]
    if any(g2 <= g1 for g1, g2 in zip(ladder[:-1], ladder[1:])):
        raise ValueError("gamma ladder must increase strictly")
    if ladder[0] < config.get("estimator.gamma0"):
        raise ValueError("gamma ladder must start at or above gamma0")
    X0 = _point(zeta_base)
    first = sharp_constant_report(sys, X0.replace(gamma=ladder[0]), filter, n_data, seed)
    betas, d = first.extra["betas"], first.extra["data"]
    rows = []
    for g in ladder:
        L, R = _fixed_profile_ratio(sys, X0.replace(gamma=g), betas, d, filter == "on")
        rows.append({"gamma": g, "lhs": L, "rhs": R, "ratio": L / R,
                     "sharp_gamma0": first.sharp_constant})
    return rows


def approach_sequence(sys: HyperbolicSystem, root, levels=(1e-1, 1e-2, 1e-3),
                      gamma: float = 1.0) -> list:
    """Frequencies above a boundary root with ``|Dt|`` close to each level.

    ``zeta = (tau_0, eta_0, 0) gamma / eps`` shifted to ``gamma``: on the
    ray of the root ``tau - nu = 0`` so ``|Dt| = gamma / lambda``.
    """
    X0 = root.base_point if hasattr(root, "base_point") else _point(root)
    s = math.sqrt(X0.tau**2 + sum(e * e for e in X0.freq.eta))
    out = []
    for eps in levels:
        lam_xi = gamma * math.sqrt(1.0 / eps**2 - 1.0)
        k = lam_xi / s
        out.append(X0.replace(tau=X0.tau * k, eta=tuple(e * k for e in X0.freq.eta), gamma=gamma))
    return out


def coulombel_comparison(sys: HyperbolicSystem, zeta_sequence: Sequence, n_data: int = 32,
                         seed: int = 0) -> list:
    """Plain constant next to the constant with data in ``lambda``-weighted norms."""
    rows = []
    for X in zeta_sequence:
        X = _point(X)
        forms = _Forms(sys, X, False)
        plain = _max_ratio(*forms.matrices("filtered"))[0]
        weighted = _max_ratio(*forms.matrices("coulombel"))[0]
        fs = filter_symbols(sys, X)
        rows.append({"tau": X.tau, "eta": tuple(X.freq.eta), "gamma": X.gamma,
                     "abs_delta_tilde": abs(fs.delta_tilde) if fs.critical else 1.0,
                     "unfiltered": plain, "weighted": weighted})
    return rows


# --------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = ("tau", "eta", "gamma", "abs_delta_tilde", "sharp_filtered", "sharp_unfiltered",
                 "lhs", "rhs")


def _sweep_row(args) -> dict:
    sys, X, n_data, seed = args
    rep = sharp_constant_report(sys, X, "on", n_data, seed)
    return {"tau": X.tau, "eta": tuple(X.freq.eta), "gamma": X.gamma,
            "abs_delta_tilde": rep.abs_delta_tilde, "sharp_filtered": rep.sharp_constant,
            "sharp_unfiltered": rep.sharp_unfiltered, "lhs": rep.lhs, "rhs": rep.rhs_filtered}


def frequency_sweep(sys: HyperbolicSystem, points: Sequence, n_data: int = 32, seed: int = 0,
                    map_fn=map) -> list:
    """One sweep row per frequency; ``map_fn`` may be an ordered parallel map.

    Each point draws its random data from ``seed + index`` so the result
    does not depend on the scheduling.
    """
    args = [(sys, _point(X), n_data, seed + i) for i, X in enumerate(points)]
    return list(map_fn(_sweep_row, args))
