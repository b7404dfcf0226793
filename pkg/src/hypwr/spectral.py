"""Eigenstructure of the reduced symbol.

Stable subspaces (eigenvalues with negative imaginary part), their
continuous extension to ``gamma = 0``, classification of boundary
frequencies and the signs ``kappa_j = -i d mu_j / d gamma``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import config
from .errors import NoSpectralGap, ZeroKappa
from .system_model import BasePoint, HyperbolicSystem, reduced_symbol, symbol_partials

__all__ = [
    "SpectralData",
    "PointClass",
    "eigendecompose",
    "stable_subspace",
    "stable_subspace_at",
    "stable_projectors_batch",
    "classify_point",
    "kappa_signs",
    "real_type_check",
    "realify_basis",
    "orthonormal_range",
]


class PointClass(str, enum.Enum):
    """Class of a boundary frequency at ``gamma = 0``."""

    ELLIPTIC = "Elliptic"
    HYPERBOLIC = "Hyperbolic"
    MIXED = "Mixed"
    GLANCING = "Glancing"


@dataclass
class SpectralData:
    """Eigen-data of a square matrix.

    Attributes
    ----------
    eigenvalues : ndarray
        One entry per column of ``eigenvectors``.
    eigenvectors : ndarray
        Unit columns with the first nonzero entry real positive.
    clusters : list of list of int
        Column indices grouped into clustered eigenvalues.
    jordan : bool
        True when some cluster has geometric multiplicity below its size.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: list
    jordan: bool
    geometric: list
    cond: float
    stable_projector: Optional[np.ndarray] = None
    stable_dim: int = 0
    kappa: Optional[np.ndarray] = None

    @property
    def cluster_values(self) -> np.ndarray:
        return np.array([self.eigenvalues[c].mean() for c in self.clusters])


def _phase_fix(V: np.ndarray) -> np.ndarray:
    V = V / np.linalg.norm(V, axis=0, keepdims=True)
    for j in range(V.shape[1]):
        col = V[:, j]
        k = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())[0]
        V[:, j] = col * (abs(col[k]) / col[k])
    return V


def _scale_of(a: np.ndarray, weight: Optional[float]) -> float:
    if weight is not None and weight > 0:
        return float(weight)
    s = float(np.linalg.norm(a, 2))
    return s if s > 0 else 1.0


def _cluster(w: np.ndarray, V: np.ndarray, scale: float) -> list:
    n = len(w)
    tol = config.get("spectral.cluster_tol") * scale
    split = config.get("spectral.jordan_split") * scale
    par = config.get("spectral.jordan_parallel")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for k in range(i + 1, n):
            gap = abs(w[i] - w[k])
            merge = gap <= tol
            if not merge and gap <= split:
                c = abs(np.vdot(V[:, i], V[:, k]))
                merge = c >= 1.0 - par
            if merge:
                parent[find(k)] = find(i)
    groups: dict = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def eigendecompose(a: np.ndarray, weight: Optional[float] = None) -> SpectralData:
    """Diagonalize ``a`` with clustering and Jordan-block detection.

    Eigenvalues are ordered by decreasing real part, ties broken by
    decreasing imaginary part.  Eigenvalues closer than
    ``spectral.cluster_tol * weight`` form one cluster; nearly coincident
    eigenvalues with nearly parallel eigenvectors (the numerical signature of
    a Jordan block) are merged as well.

    Parameters
    ----------
    a : (n, n) array_like
    weight : float, optional
        Frequency scale ``lambda(zeta)``; defaults to ``||a||_2``.
    """
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    scale = _scale_of(a, weight)
    w, V = np.linalg.eig(a)
    key_re = np.round(w.real / scale, 10)
    key_im = np.round(w.imag / scale, 10)
    order = np.lexsort((-key_im, -key_re))
    w, V = w[order], _phase_fix(V[:, order])
    clusters = _cluster(w, V, scale)
    geo, jordan = [], False
    for c in clusters:
        if len(c) == 1:
            geo.append(1)
            continue
        sv = np.linalg.svd(V[:, c], compute_uv=False)
        g = int(np.sum(sv > 1e-6 * sv[0]))
        geo.append(g)
        if g < len(c):
            jordan = True
    sv = np.linalg.svd(V, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    stable = w.imag < 0
    P = None
    if not jordan and cond < np.inf:
        Vi = np.linalg.inv(V)
        P = (V[:, stable] @ Vi[stable, :])
    return SpectralData(w, V, clusters, jordan, geo, cond, P, int(stable.sum()))


# --------------------------------------------------------------------------
# projectors


def _sign_newton(M: np.ndarray, maxit: int = 100) -> np.ndarray:
    """Matrix sign function by the scaled Newton iteration."""
    X = M.copy()
    n = M.shape[0]
    for _ in range(maxit):
        Xi = np.linalg.inv(X)
        det = abs(np.linalg.det(X))
        mu = det ** (-1.0 / n) if det > 0 else 1.0
        Xn = 0.5 * (mu * X + Xi / mu)
        if np.linalg.norm(Xn - X, 1) <= 1e-14 * np.linalg.norm(Xn, 1):
            return Xn
        X = Xn
    return X


def _direct_projector(a: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eig(a)
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > config.get("spectral.projector_cond_max"):
        # ill-conditioned eigenvectors: Im mu < 0  <=>  Re(i mu) > 0
        S = _sign_newton(1j * a)
        return 0.5 * (np.eye(a.shape[0]) + S)
    stable = w.imag < 0
    return V[:, stable] @ np.linalg.inv(V)[stable, :]


def stable_projectors_batch(stack: np.ndarray) -> np.ndarray:
    """Stable spectral projectors of a stack ``(..., n, n)`` of matrices.

    Assumes a well-conditioned eigenbasis, as is the case along gamma
    ladders away from glancing points.
    """
    w, V = np.linalg.eig(stack)
    mask = (w.imag < 0).astype(complex)
    Vi = np.linalg.inv(V)
    return (V * mask[..., None, :]) @ Vi


def orthonormal_range(P: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal basis of the dominant ``k``-dimensional range of ``P``."""
    U, _, _ = np.linalg.svd(P)
    return U[:, :k]


def _richardson(seq: Sequence[np.ndarray]) -> tuple:
    """Richardson tableau for values at h, h/2, h/4, ... (order-1 base)."""
    T = [list(seq)]
    m = len(seq)
    for j in range(1, m):
        prev = T[-1]
        f = 2.0 ** j
        T.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
    best = T[-1][0]
    second = T[-2][-1] if len(T) >= 2 else best
    return best, float(np.linalg.norm(best - second))


def limit_projector(a0: np.ndarray, dgamma: np.ndarray, weight: float) -> tuple:
    """Stable projector at ``gamma = 0`` by extrapolation from ``gamma > 0``.

    Returns
    -------
    P : ndarray
    err : float
        Difference of the last two extrapolants.
    """
    kmin, kmax = config.get("spectral.limit_kmin"), config.get("spectral.limit_kmax")
    ks = np.arange(kmin, kmax + 1)
    gam = (2.0 ** (-ks.astype(float))) * weight
    stack = a0[None, :, :] + gam[:, None, None] * dgamma[None, :, :]
    try:
        Ps = stable_projectors_batch(stack)
    except np.linalg.LinAlgError:
        Ps = np.array([_direct_projector(s) for s in stack])
    return _richardson(list(Ps))


def limit_projector_batch(a0s: np.ndarray, dgamma: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Vectorized :func:`limit_projector` over many base points."""
    kmin, kmax = config.get("spectral.limit_kmin"), config.get("spectral.limit_kmax")
    ks = np.arange(kmin, kmax + 1)
    fac = 2.0 ** (-ks.astype(float))
    gam = weights[:, None] * fac[None, :]
    dg = dgamma if dgamma.ndim == 3 else np.broadcast_to(dgamma, a0s.shape)
    stack = a0s[:, None] + gam[:, :, None, None] * dg[:, None]
    Ps = stable_projectors_batch(stack)
    T = [Ps[:, i] for i in range(len(ks))]
    m = len(T)
    for j in range(1, m):
        f = 2.0 ** j
        T = [(f * T[i + 1] - T[i]) / (f - 1) for i in range(len(T) - 1)]
    return T[0]


def perturbation_projectors_batch(a0s: np.ndarray, dgamma: np.ndarray,
                                  weights: np.ndarray) -> np.ndarray:
    """Limit stable projectors at ``gamma = 0`` from first-order perturbation.

    Non-real eigenvalues are stable when ``Im mu < 0``.  A real cluster
    splits under ``gamma > 0`` according to the eigenvalues of the
    compressed matrix ``-i W_c dgamma V_c``; the directions with negative
    values (``kappa < 0``) are stable.  Points with a defective real
    cluster fall back to the Richardson limit mode.
    """
    a0s = np.asarray(a0s, complex)
    m, n, _ = a0s.shape
    dg = dgamma if dgamma.ndim == 3 else np.broadcast_to(dgamma, a0s.shape)
    w, V = np.linalg.eig(a0s)
    out = np.empty_like(a0s)
    rtol = config.get("spectral.real_tol")
    ctol = config.get("spectral.cluster_tol")
    cmax = config.get("spectral.projector_cond_max")
    sv = np.linalg.svd(V, compute_uv=False)
    good = sv[:, -1] > sv[:, 0] / cmax
    Vinv = np.linalg.inv(np.where(good[:, None, None], V, np.eye(n)))
    gaps = np.where(np.eye(n, dtype=bool)[None], np.inf, np.abs(w[:, :, None] - w[:, None, :]))
    simple = good & (gaps.min(axis=(1, 2)) > ctol * weights)
    if np.any(simple):
        Vs, Ws = V[simple], Vinv[simple]
        kap = -1j * np.einsum("mij,mjk,mki->mi", Ws, dg[simple], Vs)
        real = np.abs(w[simple].imag) <= rtol * weights[simple, None]
        stable = np.where(real, kap.real < 0, w[simple].imag < 0)
        out[simple] = (Vs * stable[:, None, :]) @ Ws
    fallback = []
    for i in range(m):
        if simple[i]:
            continue
        if not good[i]:
            fallback.append(i)
            continue
        Vi = np.linalg.inv(V[i])
        lam = weights[i]
        real = np.abs(w[i].imag) <= rtol * lam
        cols = []
        for j in np.flatnonzero(~real):
            if w[i][j].imag < 0:
                cols.append(V[i][:, [j]])
        rows = []
        for j in np.flatnonzero(~real):
            if w[i][j].imag < 0:
                rows.append(Vi[[j], :])
        idx = np.flatnonzero(real)
        done = np.zeros(n, bool)
        for j in idx:
            if done[j]:
                continue
            c = [k for k in idx if not done[k] and abs(w[i][k] - w[i][j]) <= ctol * lam]
            done[c] = True
            Vc, Wc = V[i][:, c], Vi[c, :]
            K = -1j * (Wc @ dg[i] @ Vc)
            kv, S = np.linalg.eig(K)
            Si = np.linalg.inv(S)
            neg = kv.real < 0
            cols.append(Vc @ S[:, neg])
            rows.append(Si[neg, :] @ Wc)
        if cols:
            Cm = np.concatenate(cols, axis=1)
            Rm = np.concatenate(rows, axis=0)
            out[i] = Cm @ Rm
        else:
            out[i] = 0.0
    if fallback:
        fb = np.array(fallback)
        out[fb] = limit_projector_batch(a0s[fb], dg[fb], weights[fb])
    return out


def stable_subspace(a: np.ndarray, gamma: float, *, dgamma: Optional[np.ndarray] = None,
                    weight: Optional[float] = None) -> tuple:
    """Stable projector and orthonormal basis.

    Parameters
    ----------
    a : ndarray
        Reduced symbol at the frequency of interest.
    gamma : float
        ``gamma > 0`` selects the direct mode.  ``gamma == 0`` selects the
        limit mode, which needs ``dgamma = d a / d gamma``.
    weight : float, optional
        ``lambda(zeta)``, used for the gap test and the gamma ladder.

    Returns
    -------
    projector, basis, info : ndarray, ndarray, dict
    """
    a = np.asarray(a, dtype=complex)
    scale = _scale_of(a, weight)
    if gamma > 0:
        w = np.linalg.eigvals(a)
        gap = np.abs(w.imag).min()
        if gap < config.get("spectral.gap_tol") * scale:
            raise NoSpectralGap(f"min |Im mu| = {gap:.3e}", "stable_subspace")
        P = _direct_projector(a)
        err = 0.0
    else:
        if dgamma is None:
            raise ValueError("limit mode needs dgamma")
        P, err = limit_projector(a, np.asarray(dgamma, complex), scale)
    k = int(round(np.trace(P).real))
    basis = orthonormal_range(P, k)
    return P, basis, {"stable_dim": k, "extension_error": err}


def stable_subspace_at(sys: HyperbolicSystem, X: BasePoint) -> tuple:
    """:func:`stable_subspace` for the reduced symbol of ``sys`` at ``X``."""
    a = reduced_symbol(sys, X)
    if X.gamma > 0:
        return stable_subspace(a, X.gamma, weight=X.weight)
    dg = symbol_partials_gamma(sys, X)
    return stable_subspace(a, 0.0, dgamma=dg, weight=X.weight)


def symbol_partials_gamma(sys: HyperbolicSystem, X: BasePoint) -> np.ndarray:
    A = sys.coefficients(X.t, X.y, X.x_d)
    return -1j * np.linalg.inv(A[-1])


# --------------------------------------------------------------------------
# classification and kappa


def classify_point(sys: HyperbolicSystem, X: BasePoint) -> PointClass:
    """Classify a boundary frequency with ``gamma = 0``."""
    if X.gamma != 0:
        raise ValueError("classification is defined at gamma = 0")
    a = reduced_symbol(sys, X)
    return classify_symbol(a, X.weight)


def classify_symbol(a: np.ndarray, weight: float) -> PointClass:
    sd = eigendecompose(a, weight)
    rtol = config.get("spectral.real_tol") * weight
    real = [bool(np.all(np.abs(sd.eigenvalues[c].imag) <= rtol)) for c in sd.clusters]
    for c, r, g in zip(sd.clusters, real, sd.geometric):
        if r and g < len(c):
            return PointClass.GLANCING
    if all(real):
        return PointClass.HYPERBOLIC
    if not any(real):
        return PointClass.ELLIPTIC
    return PointClass.MIXED


def classify_batch(a0s: np.ndarray, weights: np.ndarray) -> list:
    """Vectorized :func:`classify_symbol`; only near-degenerate points are
    passed to the full eigendecomposition."""
    w = np.linalg.eigvals(a0s)
    n = w.shape[1]
    rtol = config.get("spectral.real_tol")
    split = config.get("spectral.jordan_split")
    real = np.abs(w.imag) <= rtol * weights[:, None]
    gaps = np.where(np.eye(n, dtype=bool)[None], np.inf, np.abs(w[:, :, None] - w[:, None, :]))
    sep = gaps.min(axis=(1, 2)) > split * weights
    out = []
    for i in range(len(w)):
        if not sep[i]:
            out.append(classify_symbol(a0s[i], weights[i]))
        elif real[i].all():
            out.append(PointClass.HYPERBOLIC)
        elif not real[i].any():
            out.append(PointClass.ELLIPTIC)
        else:
            out.append(PointClass.MIXED)
    return out


def _match(ref: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Permutation of ``new`` nearest to ``ref`` (greedy on sorted distances)."""
    n = len(ref)
    D = np.abs(ref[:, None] - new[None, :])
    perm = -np.ones(n, dtype=int)
    used = set()
    for flat in np.argsort(D, axis=None):
        i, j = divmod(int(flat), n)
        if perm[i] < 0 and j not in used:
            perm[i] = j
            used.add(j)
    return new[perm]


def kappa_signs(sys: HyperbolicSystem, X: BasePoint, return_residue: bool = False):
    """``kappa_j = -i d mu_j / d gamma`` at a hyperbolic point.

    Central differences in ``gamma`` with nearest-neighbour continuation;
    the step is halved while two branches are within ten cluster
    tolerances of each other.  Values are listed in the eigenvalue order of
    :func:`eigendecompose`.

    Raises
    ------
    ZeroKappa
        If some ``|kappa_j| < spectral.zero_kappa``.
    """
    lam = X.weight
    a0 = reduced_symbol(sys, X.replace(gamma=0.0))
    dg = symbol_partials_gamma(sys, X)
    mu0 = eigendecompose(a0, lam).eigenvalues
    k = _kappa_from(a0, dg, mu0, lam)
    kap, res = k.real, float(np.abs(k.imag).max())
    if np.any(np.abs(kap) < config.get("spectral.zero_kappa")):
        raise ZeroKappa("kappa vanishes at a hyperbolic point", "kappa_signs")
    return (kap, res) if return_residue else kap


def _kappa_from(a0, dg, mu0, lam) -> np.ndarray:
    h = 1e-5 * lam
    ctol = config.get("spectral.cluster_tol") * lam
    for _ in range(30):
        mp = _match(mu0, np.linalg.eigvals(a0 + h * dg))
        mm = _match(mu0, np.linalg.eigvals(a0 - h * dg))
        gaps = np.where(np.eye(len(mu0), dtype=bool), np.inf, np.abs(mp[:, None] - mp[None, :]))
        if gaps.min() > 10 * ctol or h < 1e-14 * lam:
            break
        h *= 0.5
    return -1j * (mp - mm) / (2 * h)


def kappa_perturbation(a0: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """First-order perturbation values ``-i l* dg r / (l* r)`` per eigenvector."""
    w, V = np.linalg.eig(a0)
    W = np.linalg.inv(V)
    return np.array([-1j * (W[j] @ dg @ V[:, j]) for j in range(len(w))]), w


# --------------------------------------------------------------------------
# real type


def realify_basis(basis: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Real orthonormal basis of the span of ``[Re basis, Im basis]``."""
    k = basis.shape[1] if k is None else k
    M = np.concatenate([basis.real, basis.imag], axis=1)
    U, _, _ = np.linalg.svd(M)
    return U[:, :k]


def real_type_check(basis: np.ndarray) -> bool:
    """True iff the column space of ``basis`` has a real basis."""
    basis = np.atleast_2d(np.asarray(basis, dtype=complex))
    if basis.shape[0] == 1:
        basis = basis.T
    k = np.linalg.matrix_rank(basis)
    M = np.concatenate([basis.real, basis.imag], axis=1)
    sv = np.linalg.svd(M, compute_uv=False)
    r = int(np.sum(sv > config.get("spectral.real_type_tol") * sv[0]))
    return r == k


def ordered_eigenbasis(a: np.ndarray, dgamma: np.ndarray, weight: float, gamma: float) -> tuple:
    """Eigenbasis with the stable columns first.

    For ``gamma > 0`` stable means ``Im mu < 0``.  At ``gamma = 0`` real
    eigenvalues are stable when ``kappa < 0`` (first-order perturbation)
    and non-real ones when ``Im mu < 0``.  Within each group the order of
    :func:`eigendecompose` is kept.

    Returns
    -------
    mu : ndarray
    V : ndarray
        Unit, phase-fixed columns.
    n_stable : int
    """
    sd = eigendecompose(a, weight)
    mu, V = sd.eigenvalues, sd.eigenvectors
    if gamma > 0:
        stable = mu.imag < 0
    else:
        W = np.linalg.inv(V)
        kap = np.real(-1j * np.einsum("ij,jk,ki->i", W, dgamma, V))
        real = np.abs(mu.imag) <= config.get("spectral.real_tol") * weight
        stable = np.where(real, kap < 0, mu.imag < 0)
    order = np.concatenate([np.flatnonzero(stable), np.flatnonzero(~stable)])
    return mu[order], V[:, order], int(stable.sum())
