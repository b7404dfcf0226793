"""Variable-coefficient symbol pipeline.

Bicharacteristic flows of an eigenvalue branch ``mu_j`` of the reduced
symbol, with ``x_d`` as the flow parameter and ``gamma`` frozen::

    dt/dx_d   =  d mu_j / d tau        dtau/dx_d = -d mu_j / d t
    dy_k/dx_d =  d mu_j / d eta_k      deta_k/dx_d = -d mu_j / d y_k

For ``gamma > 0`` the eigenvalue is complex; the real parts of its
partials drive the flow so that the state stays real.

The normalized distance ``Dt`` to the critical set is transported by
``delta_j(X) = Dt(phi^{-1}_j(X))``, which solves
``d_{x_d} delta + {delta, mu_j} = 0`` with the bracket
``{f, g} = sum_k (d_{x_k} f d_{eta_k} g - d_{eta_k} f d_{x_k} g)`` over
``(t, tau)`` and ``(y_k, eta_k)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import config
from .errors import (
    BasisSwapFailed,
    BranchCollision,
    ChartExit,
    ClusterTooClose,
    OmegaRootNotFound,
)
from .lopatinskii import critical_direction, factor_boundary_matrix, find_nu
from .spectral import eigendecompose, ordered_eigenbasis, symbol_partials_gamma
from .symmetrizer import krylov_space
from .system_model import (
    BasePoint,
    Frequency,
    HyperbolicSystem,
    _unchecked_point,
    reduced_symbol,
    reduced_symbol_batch,
    symbol_partials,
)

__all__ = [
    "Chart",
    "FlowState",
    "Trajectory",
    "TransportedDelta",
    "RefinedBasis",
    "hamiltonian_flow",
    "transport_delta",
    "refined_basis",
    "DeltaField",
    "build_delta_field",
    "boundary_relation_check",
    "block_diag_correction",
    "flow_growth_and_sandwich",
    "real_principal_type_check",
    "kernel_invariance_residual",
    "transport_residual",
    "branch_eigenvalue",
    "flowed_critical_points",
    "chart_s",
    "delta_tilde_at",
    "hamiltonian_flow_batch",
    "chart_sample",
]


# --------------------------------------------------------------------------
# states and charts


@dataclass(frozen=True)
class FlowState:
    """Point on a bicharacteristic; ``x_d`` is the flow parameter."""

    t: float
    y: tuple
    tau: float
    eta: tuple
    gamma: float
    x_d: float

    @classmethod
    def from_point(cls, X: BasePoint) -> "FlowState":
        return cls(X.t, tuple(X.y), X.tau, tuple(X.freq.eta), X.gamma, X.x_d)

    def to_point(self) -> BasePoint:
        return _unchecked_point(self.t, self.y, self.x_d,
                                Frequency(self.tau, self.eta, self.gamma))

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.t], self.y, [self.tau], self.eta])

    @classmethod
    def from_vector(cls, z: np.ndarray, gamma: float, x_d: float) -> "FlowState":
        m = len(z) // 2
        return cls(float(z[0]), tuple(float(v) for v in z[1:m]), float(z[m]),
                   tuple(float(v) for v in z[m + 1:]), float(gamma), float(x_d))

    @property
    def weight(self) -> float:
        return math.sqrt(self.gamma**2 + self.tau**2 + sum(e * e for e in self.eta))


@dataclass(frozen=True)
class Chart:
    """Box in ``(t, y, x_d)`` times a spherical cap of frequencies."""

    box: tuple
    cap_center: tuple
    cap_radius: float

    @classmethod
    def from_dict(cls, d: dict) -> "Chart":
        box = tuple((float(a), float(b)) for a, b in d["box"])
        c = np.asarray(d["cap_center"], float)
        c = c / np.linalg.norm(c)
        return cls(box, tuple(c), float(d["cap_radius"]))

    def cap_angle(self, st: FlowState) -> float:
        z = np.concatenate([[st.tau], st.eta, [st.gamma]])
        z = z / np.linalg.norm(z)
        return float(np.arccos(np.clip(np.dot(z, self.cap_center), -1.0, 1.0)))

    def contains(self, st: FlowState, slack: float = 1e-12) -> bool:
        pt = np.concatenate([[st.t], st.y, [st.x_d]])
        for v, (lo, hi) in zip(pt, self.box):
            if v < lo - slack or v > hi + slack:
                return False
        return self.cap_angle(st) <= self.cap_radius + slack


# --------------------------------------------------------------------------
# branch derivatives


def _nearest(w: np.ndarray, mu_ref: complex, lam: float):
    d = np.abs(w - mu_ref)
    order = np.argsort(d)
    k = int(order[0])
    if len(w) > 1:
        sep = abs(w[order[1]] - w[k])
        if sep <= 10 * config.get("spectral.cluster_tol") * lam:
            raise BranchCollision(f"branch separation {sep:.2e}", "hamiltonian_flow")
    return k


def _branch_partials(sys: HyperbolicSystem, X: BasePoint, mu_ref: complex):
    """Eigenvalue nearest ``mu_ref`` and its partials (perturbation formula)."""
    a = reduced_symbol(sys, X)
    w, V = np.linalg.eig(a)
    k = _nearest(w, mu_ref, X.weight)
    Vi = np.linalg.inv(V)
    r, l = V[:, k], Vi[k, :]
    P = symbol_partials(sys, X, normal=False)
    d = sys.d
    out = np.empty(2 * d, complex)
    out[0] = l @ P["t"] @ r
    for j in range(d - 1):
        out[1 + j] = l @ P[("y", j)] @ r
    out[d] = l @ P["tau"] @ r
    for j in range(d - 1):
        out[d + 1 + j] = l @ P[("eta", j)] @ r
    return complex(w[k]), out


def branch_eigenvalue(sys: HyperbolicSystem, X: BasePoint, j: int) -> complex:
    """Eigenvalue ``j`` in the stable-first ordering at ``X``."""
    a = reduced_symbol(sys, X)
    mu, _, _ = ordered_eigenbasis(a, symbol_partials_gamma(sys, X), X.weight, X.gamma)
    return complex(mu[j])


# --------------------------------------------------------------------------
# RK4


@dataclass
class Trajectory:
    """Samples of a bicharacteristic at the requested ``x_d`` values."""

    x_d: np.ndarray
    states: np.ndarray
    mu: np.ndarray
    gamma: float
    branch: int
    error_estimate: float
    steps: int
    step: float

    @property
    def final(self) -> FlowState:
        return FlowState.from_vector(self.states[-1], self.gamma, self.x_d[-1])

    def state(self, i: int) -> FlowState:
        return FlowState.from_vector(self.states[i], self.gamma, self.x_d[i])


class _Flow:
    def __init__(self, sys, gamma, mu0, chart):
        self.sys, self.gamma, self.mu, self.chart = sys, gamma, mu0, chart
        self.d = sys.d

    def rhs(self, x, z):
        m = self.d
        X = _unchecked_point(z[0], z[1:m], x, Frequency(z[m], z[m + 1:], self.gamma))
        mu, g = _branch_partials(self.sys, X, self.mu)
        g = g.real
        dz = np.empty_like(z)
        dz[:m] = g[m:]
        dz[m:] = -g[:m]
        return dz, mu

    def check(self, x, z):
        if self.chart is None:
            return
        st = FlowState.from_vector(z, self.gamma, x)
        if not self.chart.contains(st):
            raise ChartExit(f"trajectory left the chart at x_d={x:.4g}", "hamiltonian_flow")

    def run(self, z0, xs, h):
        """Integrate through the breakpoints ``xs`` (xs[0] is the start)."""
        z = np.array(z0, float)
        states, mus = [z.copy()], [self.mu]
        steps = 0
        for xa, xb in zip(xs[:-1], xs[1:]):
            span = xb - xa
            n = max(1, int(math.ceil(abs(span) / h - 1e-12))) if span != 0 else 0
            if n == 0:
                states.append(z.copy())
                mus.append(self.mu)
                continue
            hh = span / n
            x = xa
            for _ in range(n):
                k1, _ = self.rhs(x, z)
                k2, _ = self.rhs(x + hh / 2, z + hh / 2 * k1)
                k3, _ = self.rhs(x + hh / 2, z + hh / 2 * k2)
                k4, _ = self.rhs(x + hh, z + hh * k3)
                z = z + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                x = x + hh
                _, self.mu = self.rhs(x, z)
                self.check(x, z)
                steps += 1
            states.append(z.copy())
            mus.append(self.mu)
        return np.array(states), np.array(mus), steps


def hamiltonian_flow(sys: HyperbolicSystem, branch, start: FlowState, x_d_target: float,
                     h: float = 0.01, at: Optional[Sequence[float]] = None,
                     chart: Optional[Chart] = None, control: bool = False,
                     estimate_error: bool = True, mu_start: Optional[complex] = None) -> Trajectory:
    """Integrate the bicharacteristic of ``branch`` from ``start`` to ``x_d_target``.

    Parameters
    ----------
    branch : int
        Eigenvalue index in the stable-first ordering at ``start``.
    h : float
        RK4 step (the last step of each segment is shortened).
    at : sequence of float, optional
        Extra ``x_d`` values at which the state is recorded.
    control : bool
        Halve the step until the step-halving error estimate is below
        ``transport.rk4_tol`` per unit ``x_d``.
    estimate_error : bool
        Run the half-step solution to estimate the global error; the finer
        of the two solutions is returned.
    mu_start : complex, optional
        Eigenvalue to track instead of ``branch`` (useful when the caller
        has its own column order).

    Raises
    ------
    BranchCollision, ChartExit
    """
    X0 = start.to_point()
    if mu_start is None:
        mu_start = branch_eigenvalue(sys, X0, int(branch))
    x0 = start.x_d
    xs = [x0]
    if at is not None:
        pts = sorted(set(float(v) for v in at), reverse=x_d_target < x0)
        xs += [v for v in pts if min(x0, x_d_target) < v < max(x0, x_d_target)]
    xs.append(float(x_d_target))
    z0 = start.vector()
    if chart is not None:
        _Flow(sys, start.gamma, mu_start, chart).check(x0, z0)
    tol = config.get("transport.rk4_tol") * max(abs(x_d_target - x0), 1e-300)
    halvings = 0
    while True:
        f1 = _Flow(sys, start.gamma, mu_start, chart)
        S1, M1, n1 = f1.run(z0, xs, h)
        if not estimate_error and not control:
            err, S, M, n = float("nan"), S1, M1, n1
            break
        f2 = _Flow(sys, start.gamma, mu_start, chart)
        S2, M2, n2 = f2.run(z0, xs, h / 2)
        err = float(np.abs(S1 - S2).max() / 15.0)
        S, M, n = S2, M2, n2
        if not control or err <= tol or halvings >= config.get("transport.max_halvings"):
            break
        h /= 2
        halvings += 1
    return Trajectory(np.array(xs), S, M, start.gamma, int(branch) if branch is not None else -1,
                      err, n, h)


def _batch_rhs(sys, Z, x, gamma, mu):
    N, d = Z.shape[0], sys.d
    t, y, tau, eta = Z[:, 0], Z[:, 1:d], Z[:, d], Z[:, d + 1:]
    A = sys.coefficients_batch(t, y, x)
    Adi = np.linalg.inv(A[-1])
    a = reduced_symbol_batch(sys, t, y, x, tau, eta, gamma)
    w, V = np.linalg.eig(a)
    k = np.argmin(np.abs(w - mu[:, None]), axis=1)
    idx = np.arange(N)
    if sys.n > 1:
        srt = np.sort(np.abs(w - w[idx, k][:, None]), axis=1)[:, 1]
        lam = np.sqrt(gamma**2 + tau**2 + (eta**2).sum(1))
        if np.any(srt <= 10 * config.get("spectral.cluster_tol") * lam):
            raise BranchCollision("branch separation below the cluster tolerance",
                                  "hamiltonian_flow")
    Vi = np.linalg.inv(V)
    r = V[idx, :, k]
    l = Vi[idx, k, :]

    def rq(M):
        return np.einsum("ni,nij,nj->n", l, M, r)

    g = np.empty((N, 2 * d), complex)
    g[:, d] = rq(Adi)
    for j in range(d - 1):
        g[:, d + 1 + j] = rq(Adi @ A[j])
    ht = config.get("system.fd_rel_step") * np.maximum(1.0, np.abs(t))
    g[:, 0] = rq((reduced_symbol_batch(sys, t + ht, y, x, tau, eta, gamma)
                  - reduced_symbol_batch(sys, t - ht, y, x, tau, eta, gamma)) / (2 * ht)[:, None, None])
    for j in range(d - 1):
        hy = config.get("system.fd_rel_step") * np.maximum(1.0, np.abs(y[:, j]))
        yp, ym = y.copy(), y.copy()
        yp[:, j] += hy
        ym[:, j] -= hy
        g[:, 1 + j] = rq((reduced_symbol_batch(sys, t, yp, x, tau, eta, gamma)
                          - reduced_symbol_batch(sys, t, ym, x, tau, eta, gamma)) / (2 * hy)[:, None, None])
    g = g.real
    dz = np.empty_like(Z)
    dz[:, :d] = g[:, d:]
    dz[:, d:] = -g[:, :d]
    return dz, w[idx, k]


def hamiltonian_flow_batch(sys: HyperbolicSystem, states: Sequence[FlowState], x_d_target: float,
                           h: float = 0.01, mu_start: Optional[np.ndarray] = None,
                           branch: int = 0) -> list:
    """RK4 for many starts at once, all flowing to the same ``x_d_target``.

    Each trajectory is reparametrized over ``[0, 1]``, so the starts may
    have different ``x_d`` and ``gamma``; the number of steps is set by the
    longest span and ``h``.  No chart test is made.  Returns the final states.
    """
    states = list(states)
    x0 = np.array([s.x_d for s in states], float)
    gamma = np.array([s.gamma for s in states], float)
    Z = np.array([s.vector() for s in states])
    if mu_start is None:
        mu_start = [branch_eigenvalue(sys, s.to_point(), branch) for s in states]
    mu = np.asarray(mu_start, complex)
    span = x_d_target - x0
    nstep = max(1, int(math.ceil(np.abs(span).max() / h - 1e-12)))
    ds = 1.0 / nstep

    def f(sv, Zs):
        dz, m = _batch_rhs(sys, Zs, x0 + sv * span, gamma, mu)
        return dz * span[:, None], m

    sv = 0.0
    for _ in range(nstep):
        k1, _ = f(sv, Z)
        k2, _ = f(sv + ds / 2, Z + ds / 2 * k1)
        k3, _ = f(sv + ds / 2, Z + ds / 2 * k2)
        k4, _ = f(sv + ds, Z + ds * k3)
        Z = Z + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        sv += ds
        _, mu = f(sv, Z)
    return [FlowState.from_vector(z, g, x_d_target) for z, g in zip(Z, gamma)]


# --------------------------------------------------------------------------
# transported Dt


@dataclass
class TransportedDelta:
    branch: int
    value: complex
    flow_origin: FlowState
    nu: float


def delta_tilde_at(sys: HyperbolicSystem, st: FlowState) -> tuple:
    """``Dt = (gamma + i (tau - nu)) / lambda`` at a boundary state."""
    lam = st.weight
    nu = find_nu(sys, st.t, st.y, st.eta, st.tau, lam, 0.0)
    return complex((st.gamma + 1j * (st.tau - nu)) / lam), nu


def transport_delta(sys: HyperbolicSystem, j, X: BasePoint, h: float = 0.02,
                    chart: Optional[Chart] = None, mu_start: Optional[complex] = None,
                    estimate_error: bool = False) -> TransportedDelta:
    """``Dt`` at the foot ``X_flat`` of the backward bicharacteristic through ``X``."""
    st = FlowState.from_point(X)
    if X.x_d != 0.0:
        tr = hamiltonian_flow(sys, j, st, 0.0, h=h, chart=chart, mu_start=mu_start,
                              estimate_error=estimate_error)
        st = tr.final
    val, nu = delta_tilde_at(sys, st)
    return TransportedDelta(int(j) if j is not None else -1, val, st, nu)


def transport_residual(sys: HyperbolicSystem, j: int, X: BasePoint, H: float,
                       h: Optional[float] = None) -> float:
    """Central-difference residual of ``d_{x_d} delta + {delta, mu_j}`` at ``X``.

    ``H`` is the difference step, ``h`` the RK4 step (defaults to ``H``).
    """
    h = H if h is None else h
    mu0 = branch_eigenvalue(sys, X, j)
    d = sys.d

    def dv(**kw):
        t = kw.get("t", X.t)
        y = np.array(kw.get("y", X.y), float)
        x = kw.get("x_d", X.x_d)
        tau = kw.get("tau", X.tau)
        eta = np.array(kw.get("eta", X.freq.eta), float)
        P = _unchecked_point(t, y, x, Frequency(tau, eta, X.gamma))
        return transport_delta(sys, None, P, h=h, mu_start=mu0).value

    ddx = (dv(x_d=X.x_d + H) - dv(x_d=X.x_d - H)) / (2 * H)
    _, g = _branch_partials(sys, X, mu0)
    # the flow is driven by the real part of the partials
    g = g.real
    # x-like variables: t, y_k ; conjugates tau, eta_k
    br = (dv(t=X.t + H) - dv(t=X.t - H)) / (2 * H) * g[d] \
        - (dv(tau=X.tau + H) - dv(tau=X.tau - H)) / (2 * H) * g[0]
    for k in range(d - 1):
        yp, ym = np.array(X.y), np.array(X.y)
        yp[k] += H
        ym[k] -= H
        ep, em = np.array(X.freq.eta), np.array(X.freq.eta)
        ep[k] += H
        em[k] -= H
        br += (dv(y=yp) - dv(y=ym)) / (2 * H) * g[d + 1 + k] \
            - (dv(eta=ep) - dv(eta=em)) / (2 * H) * g[1 + k]
    return float(abs(ddx + br))


# --------------------------------------------------------------------------
# refined basis


def _eigen_aligned(a: np.ndarray, mu_ref: np.ndarray, V_ref: np.ndarray, lam: float):
    """Eigenpairs matched to ``mu_ref`` with unit columns phase-aligned to ``V_ref``."""
    w, V = np.linalg.eig(a)
    D = np.abs(mu_ref[:, None] - w[None, :])
    perm = np.argmin(D, axis=1)
    if len(set(perm.tolist())) != len(perm):
        raise BranchCollision("eigenvalue matching is ambiguous", "block_diag_correction")
    w, V = w[perm], V[:, perm]
    V = V / np.linalg.norm(V, axis=0, keepdims=True)
    ph = np.einsum("ij,ij->j", V_ref.conj(), V)
    V = V * (np.abs(ph) / ph)[None, :].conj()
    return w, V


@dataclass
class RefinedBasis:
    """Eigenbasis whose first ``s`` columns span the Krylov space of ``ell``."""

    basis: np.ndarray
    s: int
    eigenvalues: np.ndarray
    krylov: np.ndarray
    ell: np.ndarray
    components: list
    n_stable: int


def refined_basis(sys: HyperbolicSystem, X: BasePoint, ell: Optional[np.ndarray] = None) -> RefinedBasis:
    """Swap eigenvector columns so that the leading ``s`` span ``K_ell``.

    ``K_ell`` is split over the clustered eigenspaces by the spectral
    projectors; components below ``transport.component_tol`` are dropped.

    Raises
    ------
    BasisSwapFailed
        If the swapped basis is too ill-conditioned.
    """
    a = reduced_symbol(sys, X)
    mu, V, ns = ordered_eigenbasis(a, symbol_partials_gamma(sys, X), X.weight, X.gamma)
    p = sys.p
    if ell is None:
        ell, _, _ = critical_direction(sys, X, V[:, :p])
    K = krylov_space(a, ell)
    s = K.shape[1]
    sd = eigendecompose(a, X.weight)
    Vi = np.linalg.inv(V)
    # clusters in the stable-first column order
    clusters: list = []
    used = np.zeros(len(mu), bool)
    ctol = config.get("spectral.cluster_tol") * X.weight
    for i in range(len(mu)):
        if used[i]:
            continue
        c = [k for k in range(len(mu)) if not used[k] and abs(mu[k] - mu[i]) <= ctol]
        used[c] = True
        clusters.append(c)
    ctol2 = config.get("transport.component_tol")
    lead, comps = [], []
    for c in clusters:
        Pk = V[:, c] @ Vi[c, :]
        W = Pk @ K
        U, sv, _ = np.linalg.svd(W, full_matrices=False)
        r = int(np.sum(sv > ctol2 * max(1.0, np.linalg.norm(K))))
        comps.append(r)
        if r == 0:
            continue
        if len(c) == 1:
            lead.append(c[0])
        else:
            lead.append(("sub", c, U[:, :r]))
    if sum(comps) != s:
        raise BasisSwapFailed(f"component dimensions {comps} do not add up to {s}", "refined_basis")
    cols, vals, taken = [], [], set()
    for item in lead:
        if isinstance(item, tuple):
            _, c, U = item
            for k in range(U.shape[1]):
                u = U[:, k]
                cols.append(u / np.linalg.norm(u))
                vals.append(mu[c].mean())
        else:
            cols.append(V[:, item])
            vals.append(mu[item])
            taken.add(item)
    # complete with the remaining columns, stable ones first
    for k in range(len(mu)):
        if k in taken:
            continue
        cand = np.array(cols + [V[:, k]]).T
        if np.linalg.matrix_rank(cand, tol=1e-8) == cand.shape[1]:
            cols.append(V[:, k])
            vals.append(mu[k])
        if len(cols) == len(mu):
            break
    E = np.array(cols).T
    sv = np.linalg.svd(E, compute_uv=False)
    if E.shape[1] != len(mu) or sv[-1] == 0 or sv[0] / sv[-1] > config.get("transport.basis_cond_max"):
        raise BasisSwapFailed("refined basis is singular or ill-conditioned", "refined_basis")
    return RefinedBasis(E, s, np.array(vals), K, ell, comps, ns)


# --------------------------------------------------------------------------
# delta field


class DeltaField:
    """Evaluator of the diagonal filter ``delta(X)`` in the refined basis."""

    def __init__(self, sys: HyperbolicSystem, chart: Optional[Chart] = None, s: Optional[int] = None,
                 h: float = 0.02):
        self.sys, self.chart, self.s_fixed, self.h = sys, chart, s, h

    def __call__(self, X: BasePoint) -> dict:
        rb = refined_basis(self.sys, X)
        s = rb.s if self.s_fixed is None else self.s_fixed
        n = self.sys.n
        diag = np.ones(n, complex)
        vals, feet = [], []
        for j in range(s):
            try:
                td = transport_delta(self.sys, None, X, h=self.h, chart=self.chart,
                                     mu_start=rb.eigenvalues[j])
            except OmegaRootNotFound:
                # no critical set on this tau line: trivial filter
                return {"delta": np.eye(n, dtype=complex), "diag": diag, "basis": rb.basis,
                        "s": 0, "eigenvalues": rb.eigenvalues, "feet": [],
                        "branch_spread": 0.0}
            diag[j] = td.value
            vals.append(td.value)
            feet.append(td.flow_origin)
        spread = float(np.ptp(np.abs(vals))) if len(vals) > 1 else 0.0
        return {"delta": np.diag(diag), "diag": diag, "basis": rb.basis, "s": s,
                "eigenvalues": rb.eigenvalues, "feet": feet, "branch_spread": spread}


def build_delta_field(sys: HyperbolicSystem, chart=None, s: Optional[int] = None,
                      h: float = 0.02) -> DeltaField:
    """Filter evaluator over a chart (``chart`` may be a dict from the system file)."""
    if isinstance(chart, dict):
        chart = Chart.from_dict(chart)
    return DeltaField(sys, chart, s, h)


def chart_s(sys: HyperbolicSystem, sample: Sequence[BasePoint]) -> int:
    """Largest Krylov dimension met on a sample."""
    return max(refined_basis(sys, X).s for X in sample)


def kernel_invariance_residual(sys: HyperbolicSystem, X: BasePoint, field_value: dict,
                               tol: float = 1e-8) -> dict:
    """``||(I - Pi) a Pi|| / ||a||`` for the numerical kernel ``Pi`` of ``delta``."""
    diag = field_value["diag"]
    E = field_value["basis"]
    ker = np.flatnonzero(np.abs(diag) < tol)
    if len(ker) == 0:
        return {"dim": 0, "residual": 0.0}
    Q, _ = np.linalg.qr(E[:, ker])
    Pi = Q @ Q.conj().T
    a = reduced_symbol(sys, X)
    res = np.linalg.norm((np.eye(sys.n) - Pi) @ a @ Pi, 2) / np.linalg.norm(a, 2)
    return {"dim": int(len(ker)), "residual": float(res)}


# --------------------------------------------------------------------------
# boundary relation


def boundary_relation_check(sys: HyperbolicSystem, X: BasePoint, refined: Optional[RefinedBasis] = None,
                            nu: Optional[float] = None) -> dict:
    """Residual ``||q bdot - m delta||_F`` at a boundary point.

    ``q = diag(c_s ups_1, I_{p-s}) p^{-1}`` with ``ups_1 = diag(1, Dt, .., Dt)``
    (size ``s``), ``delta = diag(Dt I_s, I_{n-s})`` and ``m = [I_p | q b^+]``.
    Without a real zero on the ``tau`` line the trivial choice ``q = I``,
    ``delta = I``, ``m = bdot delta^{-1}`` is checked instead.
    """
    if X.x_d != 0:
        raise ValueError("boundary relation is checked at x_d = 0")
    rb = refined_basis(sys, X) if refined is None else refined
    p, n, s = sys.p, sys.n, rb.s
    b = sys.boundary(X.t, X.y)
    try:
        lop = factor_boundary_matrix(sys, X, basis=rb.basis[:, :p], nu=nu,
                                     pivot_cols=range(s))
    except OmegaRootNotFound:
        bd = b @ rb.basis
        delta = np.eye(n)
        m = bd @ np.linalg.inv(delta)
        return {"residual": float(np.linalg.norm(np.eye(p) @ bd - m @ delta)), "critical": False,
                "s": s}
    perm = list(lop.col_perm)
    E = np.concatenate([rb.basis[:, :p][:, perm], rb.basis[:, p:]], axis=1)
    Dt = lop.delta_tilde
    cs = lop.c_matrix[:s, :s]
    ups = np.eye(s, dtype=complex)
    ups[1:, 1:] *= Dt
    blk = np.eye(p, dtype=complex)
    blk[:s, :s] = cs @ ups
    q = blk @ np.linalg.inv(lop.p_matrix)
    bd = b @ E
    m = np.concatenate([np.eye(p), q @ bd[:, p:]], axis=1)
    delta = np.eye(n, dtype=complex)
    delta[:s, :s] *= Dt
    res = float(np.linalg.norm(q @ bd - m @ delta))
    tail = float(np.abs(lop.dcoeffs[s - 1:]).max()) if len(lop.dcoeffs) >= s else 0.0
    return {"residual": res, "critical": True, "s": s, "delta_tilde": Dt, "d_tail": tail}


# --------------------------------------------------------------------------
# lower-order correction


def _offblock(M: np.ndarray, labels: np.ndarray) -> np.ndarray:
    mask = labels[:, None] != labels[None, :]
    return np.where(mask, M, 0.0)


@dataclass
class CorrectionResult:
    e_minus1: np.ndarray
    a0_ddot: np.ndarray
    residual: float
    F: np.ndarray
    G: np.ndarray
    fd_residual: float = float("nan")


def _conjugator_data(sys, X, mu_ref, V_ref):
    a = reduced_symbol(sys, X)
    w, V = _eigen_aligned(a, mu_ref, V_ref, X.weight)
    return w, V, np.linalg.inv(V)


def _source(sys, X, a0, h, mu, V):
    """Order-zero source ``G`` with difference step ``h`` (relative to the point)."""
    n, d = sys.n, sys.d
    T = np.linalg.inv(V)

    def at(**kw):
        t = kw.get("t", X.t)
        y = np.array(kw.get("y", X.y), float)
        x = kw.get("x_d", X.x_d)
        tau = kw.get("tau", X.tau)
        eta = np.array(kw.get("eta", X.freq.eta), float)
        P = _unchecked_point(t, y, x, Frequency(tau, eta, X.gamma))
        w, Vp, Tp = _conjugator_data(sys, P, mu, V)
        return np.diag(w), Tp

    def dd(**kw):
        (k, v), = kw.items()
        Ap, Tp = at(**{k: v + h})
        Am, Tm = at(**{k: v - h})
        return (Ap - Am) / (2 * h), (Tp - Tm) / (2 * h)

    Ti = V
    a0d = T @ a0 @ Ti
    _, dT_normal = dd(x_d=X.x_d)
    G = a0d + (-1j * dT_normal) @ Ti
    # pair (t, tau) and (y_k, eta_k)
    dA_x, dT_x = dd(t=X.t)
    dA_e, dT_e = dd(tau=X.tau)
    G = G + (1 / 1j) * (dT_e @ dA_x - dA_e @ dT_x) @ Ti
    for k in range(d - 1):
        y = np.array(X.y, float)
        e = np.array(X.freq.eta, float)

        def ddy(vec, key):
            vp, vm = vec.copy(), vec.copy()
            vp[k] += h
            vm[k] -= h
            Ap, Tp = at(**{key: vp})
            Am, Tm = at(**{key: vm})
            return (Ap - Am) / (2 * h), (Tp - Tm) / (2 * h)

        dA_x, dT_x = ddy(y, "y")
        dA_e, dT_e = ddy(e, "eta")
        G = G + (1 / 1j) * (dT_e @ dA_x - dA_e @ dT_x) @ Ti
    return G, a0d


def block_diag_correction(sys: HyperbolicSystem, X: BasePoint, a0=None, h: Optional[float] = None,
                          reference: bool = True) -> CorrectionResult:
    """Remove the off-block part of the order-zero term by an order ``-1`` correction.

    With ``T = E^{-1}`` (``E`` the eigenbasis, so ``T a T^{-1} = diag(mu)``)
    the source is ``G = adot_0 + (D_d T) T^{-1} + (1/i) sum_k (d_eta_k T
    d_x_k adot_1 - d_eta_k adot_1 d_x_k T) T^{-1}``; ``F_ik = G_ik / (mu_i -
    mu_k)`` across clusters, ``e_{-1} = F T`` and ``addot_0`` is the block
    diagonal part of ``G``.

    Parameters
    ----------
    a0 : ndarray or callable, optional
        Order-zero symbol in the original coordinates (zero by default).
    h : float, optional
        Difference step; defaults to ``system.fd_rel_step``.
    reference : bool
        Also compute the derivative-induced residual against a
        Richardson-extrapolated source.

    Raises
    ------
    ClusterTooClose
    """
    n = sys.n
    lam = X.weight
    a = reduced_symbol(sys, X)
    mu, V, _ = ordered_eigenbasis(a, symbol_partials_gamma(sys, X), lam, X.gamma)
    if a0 is None:
        a0m = np.zeros((n, n), complex)
    elif callable(a0):
        a0m = np.asarray(a0(X), complex)
    else:
        a0m = np.asarray(a0, complex)
    sep = config.get("transport.cluster_sep") * lam
    ctol = config.get("spectral.cluster_tol") * lam
    labels = np.arange(n)
    for i in range(n):
        for k in range(i):
            if abs(mu[i] - mu[k]) <= ctol:
                labels[i] = labels[k]
                break
    for i in range(n):
        for k in range(n):
            if labels[i] != labels[k] and abs(mu[i] - mu[k]) <= sep:
                raise ClusterTooClose(f"|mu_i - mu_k| = {abs(mu[i] - mu[k]):.2e}",
                                      "block_diag_correction")
    if h is None:
        h = config.get("system.fd_rel_step") * max(1.0, lam)
    G, a0d = _source(sys, X, a0m, h, mu, V)
    diff = mu[:, None] - mu[None, :]
    off = labels[:, None] != labels[None, :]
    F = np.where(off, G / np.where(off, diff, 1.0), 0.0)
    T = np.linalg.inv(V)
    e_m1 = F @ T
    a0dd = np.where(off, 0.0, G)
    comm = np.diag(mu) @ F - F @ np.diag(mu)
    residual = float(np.linalg.norm(_offblock(G - comm, labels)))
    fd_res = float("nan")
    if reference and sys.coeff_kind != "constant":
        G4, _ = _source(sys, X, a0m, h / 4, mu, V)
        G8, _ = _source(sys, X, a0m, h / 8, mu, V)
        Gref = (4 * G8 - G4) / 3
        fd_res = float(np.linalg.norm(_offblock(G - Gref, labels)))
    elif reference:
        fd_res = 0.0
    return CorrectionResult(e_m1, a0dd, residual, F, G, fd_res)


# --------------------------------------------------------------------------
# sandwich and real principal type


def flow_growth_and_sandwich(sys: HyperbolicSystem, sample: Sequence[BasePoint], gamma0: float = 1.0,
                             branch: int = 0, h: float = 0.05) -> dict:
    """Growth constant ``C = sup lambda(phi^{-1} X) / lambda(X)`` and the
    symbol-level sandwich ``1/lambda <= (C / gamma0) |delta_j|``, ``|delta_j| <= C2``.

    ``delta_j`` here is the transported ``Dt`` of branch ``branch``.
    """
    sample = list(sample)
    if any(X.gamma < gamma0 for X in sample):
        raise ValueError("sample frequencies need gamma >= gamma0")
    feet = hamiltonian_flow_batch(sys, [FlowState.from_point(X) for X in sample], 0.0, h=h,
                                  branch=branch)
    lams = np.array([X.weight for X in sample])
    ratios = np.array([f.weight for f in feet]) / lams
    dvals = np.array([abs(delta_tilde_at(sys, f)[0]) for f in feet])
    C = float(ratios.max())
    lower = (C / gamma0) * dvals * lams
    return {
        "C": C,
        "C_min_ratio": float(ratios.min()),
        "lower_min": float(lower.min()),
        "lower_holds": bool(np.all(lower >= 1.0 - 1e-12)),
        "C2": float(dvals.max()),
        "n": int(len(dvals)),
    }


def chart_sample(sys: HyperbolicSystem, chart: Chart, n: int, gamma_range=(1.0, 4.0),
                 seed: int = 0) -> list:
    """Random base points in ``chart`` with ``gamma`` in ``gamma_range``.

    Frequencies are the cap centre tilted by a random angle below the cap
    radius, scaled so that the requested ``gamma`` is attained.
    """
    rng = np.random.default_rng(seed)
    c = np.asarray(chart.cap_center, float)
    out = []
    for _ in range(n):
        pt = [rng.uniform(lo, hi) for lo, hi in chart.box]
        for _ in range(1000):
            v = c + rng.normal(size=len(c)) * chart.cap_radius / 2
            v /= np.linalg.norm(v)
            if v[-1] > 0.1 * chart.cap_radius and math.acos(min(1.0, float(v @ c))) < chart.cap_radius:
                break
        g = rng.uniform(*gamma_range)
        z = v * g / v[-1]
        out.append(_unchecked_point(pt[0], pt[1:-1], pt[-1], Frequency(z[0], z[1:-1], z[-1])))
    return out


def flowed_critical_points(sys: HyperbolicSystem, roots: Sequence[BasePoint], x_d: float,
                           branch: int = 0, h: float = 0.01, chart: Optional[Chart] = None) -> list:
    """Push boundary critical points into ``x_d > 0`` along ``branch``."""
    out = []
    for X0 in roots:
        tr = hamiltonian_flow(sys, branch, FlowState.from_point(X0), x_d, h=h, chart=chart,
                              control=True)
        out.append(tr.final.to_point())
    return out


def real_principal_type_check(sys: HyperbolicSystem, branch: int, flowed: Sequence[BasePoint],
                              h: float = 0.01, dtau: float = 1e-4) -> dict:
    """On flowed critical points check ``-i delta_j`` real and ``|d_tau delta_j| > 0``."""
    imag_res, dtaus, vals = [], [], []
    for X in flowed:
        mu0 = branch_eigenvalue(sys, X, branch)
        v = transport_delta(sys, None, X, h=h, mu_start=mu0).value
        vp = transport_delta(sys, None, _shift_tau(X, dtau), h=h, mu_start=mu0).value
        vm = transport_delta(sys, None, _shift_tau(X, -dtau), h=h, mu_start=mu0).value
        imag_res.append(abs((-1j * v).imag))
        vals.append(abs(v))
        dtaus.append(abs((vp - vm) / (2 * dtau)))
    return {
        "max_imag_residue": float(max(imag_res)),
        "min_abs_dtau": float(min(dtaus)),
        "max_abs_delta": float(max(vals)),
        "passed": bool(max(imag_res) < 1e-8 and min(dtaus) > config.get("lopatinskii.dtau_min")),
    }


def _shift_tau(X: BasePoint, d: float) -> BasePoint:
    return _unchecked_point(X.t, X.y, X.x_d, Frequency(X.tau + d, X.freq.eta, X.gamma))
