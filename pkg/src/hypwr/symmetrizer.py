"""Constant-coefficient WR symmetrizer symbols and their verification.

All symbols live in the eigen-coordinates ``v = e0^{-1} u`` where ``e0`` is
an eigenbasis of the reduced symbol with the ``p`` stable columns first:

* ``delta = diag(Dt I_p, I_{n-p})`` (``Dt`` the normalized distance to
  the critical set),
* ``r = diag(-1 on stable columns, rho on unstable columns)``,
* ``sigma = delta^* r delta``,
* ``q = c diag(1, Dt, .., Dt) p^{-1}`` so that ``q b^- = Dt I_p``,
* ``m = [I_p | q b^+]``.

Away from the critical set (no real zero of the determinant on the
``tau`` line) the filter is trivial: ``delta = I`` and ``q = I_p``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from . import config
from .errors import OmegaRootNotFound, RankDeficient
from .lopatinskii import LopatinskiiData, factor_boundary_matrix
from .spectral import ordered_eigenbasis, symbol_partials_gamma
from .system_model import BasePoint, Frequency, HyperbolicSystem, reduced_symbol

__all__ = [
    "SymmetrizerSymbols",
    "ConditionResult",
    "ConditionReport",
    "build_symmetrizer",
    "boundary_constant",
    "choose_rho",
    "verify_symmetrizer_conditions",
    "merge_reports",
    "krylov_space",
    "check_krylov_degeneracy",
    "build_boundary_projector_factor",
    "frequency_sample",
    "symmetrizer_suite",
]


def _as_point(z: Union[Frequency, BasePoint]) -> BasePoint:
    if isinstance(z, BasePoint):
        return z
    return BasePoint(0.0, (0.0,) * len(z.eta), 0.0, z)


@dataclass
class SymmetrizerSymbols:
    """Symbols of the WR symmetrizer at one frequency (eigen-coordinates)."""

    delta: np.ndarray
    r: np.ndarray
    sigma: np.ndarray
    q: np.ndarray
    m: np.ndarray
    rho: float
    basis: np.ndarray
    eigenvalues: np.ndarray
    delta_tilde: complex
    b_dot: np.ndarray
    coercivity_map: np.ndarray
    gamma: float
    point: BasePoint
    critical: bool
    lop: Optional[LopatinskiiData] = None

    @property
    def p(self) -> int:
        return self.q.shape[0]

    @property
    def boundary_constant(self) -> float:
        """Smallest ``C`` with ``|delta^- v^-|^2 <= C (|q bdot v|^2 + |v^+|^2)``."""
        return float(np.linalg.norm(self.coercivity_map, 2) ** 2)

    def with_rho(self, rho: float) -> "SymmetrizerSymbols":
        p = self.p
        rr = np.diag(np.r_[-np.ones(p), rho * np.ones(len(self.eigenvalues) - p)])
        sig = self.delta.conj().T @ rr @ self.delta
        out = SymmetrizerSymbols(**{**self.__dict__})
        out.r, out.sigma, out.rho = rr, sig, float(rho)
        return out

    def sigma_original(self) -> np.ndarray:
        """``sigma`` expressed in the original coordinates."""
        Ei = np.linalg.inv(self.basis)
        return Ei.conj().T @ self.sigma @ Ei


def build_symmetrizer(sys: HyperbolicSystem, zeta: Union[Frequency, BasePoint],
                      lop: Optional[LopatinskiiData] = None,
                      rho: Optional[float] = None, nu: Optional[float] = None) -> SymmetrizerSymbols:
    """Build ``delta, r, sigma, q, m`` at ``zeta``.

    Parameters
    ----------
    lop : LopatinskiiData, optional
        Factorization computed with the stable eigenvector columns as basis.
        When omitted it is computed here; if no real zero of the
        determinant exists on the ``tau`` line the trivial filter is used.
    rho : float, optional
        Weight of the unstable block; defaults to ``2 C + 1`` with ``C``
        the boundary constant at this point alone.
    """
    X = _as_point(zeta)
    a = reduced_symbol(sys, X)
    dg = symbol_partials_gamma(sys, X)
    mu, V, ns = ordered_eigenbasis(a, dg, X.weight, X.gamma)
    p, n = sys.p, sys.n
    if ns != p:
        raise RankDeficient(f"stable dimension {ns} differs from p={p}", "build_symmetrizer")
    b = sys.boundary(X.t, X.y)
    critical = True
    if lop is None:
        try:
            lop = factor_boundary_matrix(sys, X, basis=V[:, :p], nu=nu)
        except OmegaRootNotFound:
            critical = False
    if critical:
        perm = list(lop.col_perm)
        V = np.concatenate([V[:, :p][:, perm], V[:, p:]], axis=1)
        mu = np.concatenate([mu[:p][perm], mu[p:]])
        Dt = lop.delta_tilde
        ups = np.eye(p, dtype=complex)
        ups[1:, 1:] *= Dt
        q = lop.c_matrix @ ups @ np.linalg.inv(lop.p_matrix)
    else:
        Dt = 1.0 + 0j
        q = np.eye(p, dtype=complex)
    delta = np.eye(n, dtype=complex)
    if critical:
        delta[:p, :p] *= Dt
    b_dot = b @ V
    bp = b_dot[:, p:]
    m = np.concatenate([np.eye(p), q @ bp], axis=1)
    if critical:
        cmap = np.concatenate([np.eye(p), -q @ bp], axis=1)
    else:
        bmi = np.linalg.inv(b_dot[:, :p])
        cmap = bmi @ np.concatenate([np.eye(p), -bp], axis=1)
    sym = SymmetrizerSymbols(delta=delta, r=np.eye(n), sigma=np.eye(n, dtype=complex), q=q, m=m,
                             rho=1.0, basis=V, eigenvalues=mu, delta_tilde=complex(Dt),
                             b_dot=b_dot, coercivity_map=cmap, gamma=X.gamma, point=X,
                             critical=critical, lop=lop if critical else None)
    if rho is None:
        rho = 2.0 * sym.boundary_constant + 1.0
    return sym.with_rho(rho)


def boundary_constant(sys: HyperbolicSystem, X: Union[Frequency, BasePoint]) -> float:
    """Boundary constant ``C`` at one point (see :class:`SymmetrizerSymbols`)."""
    return build_symmetrizer(sys, X).boundary_constant


def choose_rho(sys: HyperbolicSystem, neighborhood_sample: Sequence) -> float:
    """``rho = 2 C + 1`` with ``C`` the sup of the boundary constant over the sample."""
    C = max(boundary_constant(sys, X) for X in neighborhood_sample)
    return 2.0 * C + 1.0


# --------------------------------------------------------------------------
# verification


@dataclass
class ConditionResult:
    name: str
    min_slack: float
    argmin_vector: list
    n_trials: int
    gamma_range: tuple
    passed: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "min_slack": self.min_slack,
            "argmin_vector": self.argmin_vector,
            "n_trials": self.n_trials,
            "gamma_range": list(self.gamma_range),
            "passed": self.passed,
            **self.extra,
        }


@dataclass
class ConditionReport:
    conditions: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def as_dict(self) -> dict:
        return {k: v.as_dict() for k, v in self.conditions.items()}


def _vec_list(v: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.ravel(v)]


def _unit_vectors(rng, k: int, n: int) -> np.ndarray:
    v = rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def verify_symmetrizer_conditions(sym: SymmetrizerSymbols, a: np.ndarray, trials: int = 1000,
                                  seed: Optional[int] = None) -> ConditionReport:
    """Check the four symmetrizer conditions on random unit vectors.

    (i) ``sigma`` Hermitian; (ii) ``|<sigma v1, v2>| <= C2 |delta v1||delta v2|``
    with ``C2 = max |r|``; (iii) ``Im <sigma adot v, v> >= c gamma |delta v|^2``,
    reporting the smallest ratio ``c``; (iv) ``<sigma v, v> >= |delta v|^2 -
    beta |q bdot v|^2`` with ``beta = rho - 1``.  Besides the random trials
    the exact extremum of (iii) and (iv) is computed from the Hermitian
    forms and folded into the minimum.
    """
    seed = config.get("seed") if seed is None else seed
    rng = np.random.default_rng(seed)
    n = sym.sigma.shape[0]
    E = sym.basis
    ad = np.linalg.solve(E, np.asarray(a) @ E)
    sg, dl = sym.sigma, sym.delta
    gamma = sym.gamma
    gr = (gamma, gamma)
    out = {}

    nrm = np.linalg.norm(sg)
    herm = float(np.linalg.norm(sg - sg.conj().T) / nrm) if nrm > 0 else 0.0
    out["i"] = ConditionResult("hermitian", -herm, [], 1, gr,
                               herm <= config.get("symmetrizer.hermitian_tol"),
                               {"residual": herm})

    C2 = float(np.abs(np.diag(sym.r)).max())
    v1, v2 = _unit_vectors(rng, trials, n), _unit_vectors(rng, trials, n)
    lhs = np.abs(np.einsum("ki,ij,kj->k", v2.conj(), sg, v1))
    rhs = C2 * np.linalg.norm(v1 @ dl.T, axis=1) * np.linalg.norm(v2 @ dl.T, axis=1)
    sl = rhs - lhs
    k = int(np.argmin(sl))
    out["ii"] = ConditionResult("boundedness", float(sl[k]), _vec_list(v1[k]), trials, gr,
                                bool(sl[k] >= -1e-12 * max(1.0, rhs.max())), {"C2": C2})

    v = _unit_vectors(rng, trials, n)
    dv2 = np.linalg.norm(v @ dl.T, axis=1) ** 2
    sa = sg @ ad
    if gamma > 0:
        im = np.einsum("ki,ij,kj->k", v.conj(), sa, v).imag
        ratio = np.where(dv2 > 0, im / (gamma * np.where(dv2 > 0, dv2, 1.0)), np.inf)
        k = int(np.argmin(ratio))
        cmin, cv = float(ratio[k]), v[k]
        # exact: generalized Rayleigh quotient of Im(sigma adot) against delta* delta
        Hm = (sa - sa.conj().T) / 2j
        Dm = dl.conj().T @ dl
        if np.linalg.matrix_rank(Dm) == n:
            w, U = scipy.linalg.eigh(Hm, Dm)
            if w[0] / gamma < cmin:
                cmin, cv = float(w[0] / gamma), U[:, 0] / np.linalg.norm(U[:, 0])
        out["iii"] = ConditionResult("dissipativity", cmin, _vec_list(cv), trials, gr, cmin > 0,
                                     {"c": cmin, "c_diagonal": float(np.min(
                                         np.diag(sym.r) * ad.diagonal().imag) / gamma)})
    else:
        im = np.einsum("ki,ij,kj->k", v.conj(), sa, v).imag
        k = int(np.argmin(im))
        out["iii"] = ConditionResult("dissipativity", float(im[k]), _vec_list(v[k]), trials, gr,
                                     bool(im[k] >= -1e-12), {"c": None})

    beta = sym.rho - 1.0
    qb = sym.q @ sym.b_dot
    H = sg - dl.conj().T @ dl + beta * qb.conj().T @ qb
    H = 0.5 * (H + H.conj().T)
    vals = np.einsum("ki,ij,kj->k", v.conj(), H, v).real
    k = int(np.argmin(vals))
    smin, sv = float(vals[k]), v[k]
    w, U = np.linalg.eigh(H)
    if w[0] < smin:
        smin, sv = float(w[0]), U[:, 0]
    out["iv"] = ConditionResult("boundary", smin, _vec_list(sv), trials, gr, smin >= -1e-10,
                                {"alpha": 1.0, "beta": beta})
    return ConditionReport(out)


def merge_reports(reports: Sequence[ConditionReport]) -> ConditionReport:
    """Combine reports (minimum slack, union of gamma ranges)."""
    merged = {}
    for key in reports[0].conditions:
        cs = [r.conditions[key] for r in reports]
        worst = min(cs, key=lambda c: c.min_slack)
        g = (min(c.gamma_range[0] for c in cs), max(c.gamma_range[1] for c in cs))
        extra = dict(worst.extra)
        merged[key] = ConditionResult(worst.name, worst.min_slack, worst.argmin_vector,
                                      sum(c.n_trials for c in cs), g,
                                      all(c.passed for c in cs), extra)
    return ConditionReport(merged)


# --------------------------------------------------------------------------
# Krylov space


def krylov_space(a: np.ndarray, ell: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of the smallest ``a``-invariant subspace containing ``ell``.

    Gram-Schmidt with one reorthogonalization pass; stops when the new
    direction has norm below ``tol * ||a||_2``.
    """
    tol = config.get("symmetrizer.krylov_tol") if tol is None else tol
    a = np.asarray(a, dtype=complex)
    ell = np.asarray(ell, dtype=complex).ravel()
    if not np.any(ell):
        raise ValueError("ell must be nonzero")
    scale = max(np.linalg.norm(a, 2), 1e-300)
    Q = [ell / np.linalg.norm(ell)]
    n = a.shape[0]
    while len(Q) < n:
        w = a @ Q[-1]
        Qm = np.array(Q).T
        for _ in range(2):
            w = w - Qm @ (Qm.conj().T @ w)
        nw = np.linalg.norm(w)
        if nw <= tol * scale:
            break
        Q.append(w / nw)
    return np.array(Q).T


def check_krylov_degeneracy(sym: SymmetrizerSymbols, a: np.ndarray, ell: np.ndarray) -> dict:
    """Largest ``|<sigma w, w>|`` over unit ``w`` in the Krylov space of ``ell``."""
    K = krylov_space(a, ell)
    S = K.conj().T @ sym.sigma_original() @ K
    S = 0.5 * (S + S.conj().T)
    mx = float(np.abs(np.linalg.eigvalsh(S)).max())
    return {"max_abs": mx, "dim": K.shape[1],
            "passed": mx <= config.get("symmetrizer.degeneracy_tol")}


# --------------------------------------------------------------------------
# boundary projector factor


def build_boundary_projector_factor(sys_or_b, zeta=None) -> tuple:
    """Factor ``I_n = [b; x] [y | d]`` with ``x`` orthonormal rows spanning
    the orthogonal complement of the rows of ``b``.

    Returns
    -------
    y : (n, p) ndarray
    x : (n - p, n) ndarray
    d : (n, n - p) ndarray
    """
    if isinstance(sys_or_b, HyperbolicSystem):
        X = _as_point(zeta) if zeta is not None else None
        b = sys_or_b.boundary(X.t, X.y) if X is not None else sys_or_b.boundary()
    else:
        b = np.atleast_2d(np.asarray(sys_or_b))
    p, n = b.shape
    sv = np.linalg.svd(b, compute_uv=False)
    if np.sum(sv > config.get("system.rank_tol") * max(sv[0], 1e-300)) < p:
        raise RankDeficient("boundary matrix not of full rank", "build_boundary_projector_factor")
    N = scipy.linalg.null_space(b.conj())
    Pk = N @ N.conj().T
    rows = []
    for i in range(n):
        r = Pk[i].copy()
        for q in rows:
            r = r - (q.conj() @ r) * q
        for q in rows:
            r = r - (q.conj() @ r) * q
        nr = np.linalg.norm(r)
        if nr > 1e-8:
            # short residuals carry roundoff out of ker b: project back
            r = Pk @ (r / nr)
            rows.append(r / np.linalg.norm(r))
        if len(rows) == n - p:
            break
    x = np.array(rows).reshape(n - p, n)
    if not np.iscomplexobj(b):
        x = x.real
    M = np.concatenate([b, x], axis=0)
    Mi = np.linalg.inv(M)
    y, dmat = Mi[:, :p], Mi[:, p:]
    err = np.linalg.norm(b @ y - np.eye(p))
    if err > 1e-12 * max(1.0, np.linalg.cond(M)):
        raise RankDeficient(f"b y differs from identity by {err:.2e}", "build_boundary_projector_factor")
    return y, x, dmat


# --------------------------------------------------------------------------
# sampled verification


def frequency_sample(sys: HyperbolicSystem, n_freq: int = 20, gammas=(1e-2, 1e-1, 1.0),
                     seed: int = 0, roots=None) -> list:
    """Unit frequencies ``(xi sqrt(1 - gamma^2), gamma)`` for the condition checks.

    Half of the boundary directions sit near the critical set (when there
    is one), the rest are random.
    """
    from .lopatinskii import find_critical_set

    rng = np.random.default_rng(seed)
    if roots is None:
        roots = find_critical_set(sys)
    m = sys.d - 1
    dirs = []
    for k in range(n_freq):
        if roots and k < n_freq // 2:
            r = roots[k % len(roots)]
            v = np.concatenate([[r.tau], r.eta]) + rng.normal(scale=1e-2, size=m + 1)
        else:
            v = rng.normal(size=m + 1)
        dirs.append(v / np.linalg.norm(v))
    pts = []
    for g in gammas:
        s = np.sqrt(1.0 - g * g)
        for v in dirs:
            pts.append(BasePoint.at(v[0] * s, tuple(v[1:] * s), g))
    return pts


def symmetrizer_suite(sys: HyperbolicSystem, n_freq: int = 20, gammas=(1e-2, 1e-1, 1.0),
                      trials: int = 10000, seed: int = 0) -> dict:
    """One ``rho`` from :func:`choose_rho`, then conditions (i)-(iv) at every
    sampled frequency and the Krylov degeneracy at the roots."""
    from .lopatinskii import find_critical_set

    roots = find_critical_set(sys)
    pts = frequency_sample(sys, n_freq, gammas, seed, roots)
    rho = choose_rho(sys, pts)
    reps = []
    for i, X in enumerate(pts):
        sym = build_symmetrizer(sys, X, rho=rho)
        reps.append(verify_symmetrizer_conditions(sym, reduced_symbol(sys, X), trials, seed + i))
    merged = merge_reports(reps)
    kry = []
    for r in roots:
        X = r.base_point
        sym = build_symmetrizer(sys, X, rho=rho)
        if sym.lop is not None:
            kry.append(check_krylov_degeneracy(sym, reduced_symbol(sys, X),
                                               sym.lop.critical_direction)["max_abs"])
    return {"rho": rho, "report": merged, "n_points": len(pts),
            "krylov_max": max(kry) if kry else 0.0,
            "c_min": merged.conditions["iii"].min_slack,
            "boundary_min": merged.conditions["iv"].min_slack}
