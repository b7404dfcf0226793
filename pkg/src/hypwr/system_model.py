"""Hyperbolic boundary value problems and their reduced boundary symbol.

A problem is given by coefficient matrices ``A_1 .. A_d`` (functions of the
space-time point ``(t, y, x_d)``) and a boundary matrix ``B(t, y)``.  The
normal direction is the last one, so ``A_d`` multiplies ``D_{x_d}``.
"""
from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import config
from .errors import ExpressionError, SingularBoundaryMatrix

__all__ = [
    "Frequency",
    "BasePoint",
    "HyperbolicSystem",
    "AssumptionReport",
    "reduced_symbol",
    "reduced_symbol_batch",
    "characteristic_polynomial",
    "symbol_partials",
    "check_assumptions",
    "load_system",
    "system_from_dict",
]


# --------------------------------------------------------------------------
# frequencies and base points


@dataclass(frozen=True)
class Frequency:
    """Frequency ``zeta = (tau, eta, gamma)`` with ``gamma >= 0``."""

    tau: float
    eta: tuple
    gamma: float = 0.0

    def __post_init__(self):
        eta = tuple(float(e) for e in np.atleast_1d(self.eta))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.weight == 0.0:
            raise ValueError("frequency must be nonzero")

    @property
    def eta_array(self) -> np.ndarray:
        return np.asarray(self.eta, dtype=float)

    @property
    def weight(self) -> float:
        """lambda(zeta) = (gamma^2 + tau^2 + |eta|^2)^(1/2)."""
        return math.sqrt(self.gamma**2 + self.tau**2 + sum(e * e for e in self.eta))

    def scaled(self, s: float) -> "Frequency":
        return Frequency(s * self.tau, tuple(s * e for e in self.eta), s * self.gamma)

    def normalized(self) -> "Frequency":
        return self.scaled(1.0 / self.weight)

    def replace(self, **kw) -> "Frequency":
        vals = dict(tau=self.tau, eta=self.eta, gamma=self.gamma)
        vals.update(kw)
        return Frequency(**vals)


@dataclass(frozen=True)
class BasePoint:
    """Point ``X = (t, y, x_d, zeta)``."""

    t: float
    y: tuple
    x_d: float
    freq: Frequency

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in np.atleast_1d(self.y)))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x_d", float(self.x_d))
        if self.x_d < 0:
            raise ValueError("x_d must be non-negative")

    @classmethod
    def at(cls, tau, eta, gamma=0.0, t=0.0, y=None, x_d=0.0) -> "BasePoint":
        eta = tuple(np.atleast_1d(eta).astype(float))
        if y is None:
            y = (0.0,) * len(eta)
        return cls(t, y, x_d, Frequency(tau, eta, gamma))

    @property
    def tau(self) -> float:
        return self.freq.tau

    @property
    def eta(self) -> np.ndarray:
        return self.freq.eta_array

    @property
    def gamma(self) -> float:
        return self.freq.gamma

    @property
    def weight(self) -> float:
        return self.freq.weight

    def replace(self, **kw) -> "BasePoint":
        fkeys = {"tau", "eta", "gamma"}
        fkw = {k: kw.pop(k) for k in list(kw) if k in fkeys}
        vals = dict(t=self.t, y=self.y, x_d=self.x_d, freq=self.freq)
        if fkw:
            vals["freq"] = self.freq.replace(**fkw)
        vals.update(kw)
        return BasePoint(**vals)

    def with_freq(self, freq: Frequency) -> "BasePoint":
        return BasePoint(self.t, self.y, self.x_d, freq)


# --------------------------------------------------------------------------
# restricted expression evaluation for coefficient files

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "arctan": np.arctan, "abs": np.abs,
}
_ALLOWED_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


class _Expr:
    """Compiled scalar expression in the variables t, y1.., xd and params."""

    def __init__(self, src: str, params: dict, d: int):
        self.src = src
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {src!r}: {exc.msg}", "load_system") from None
        allowed = set(_ALLOWED_FUNCS) | set(_ALLOWED_CONSTS) | set(params)
        allowed |= {"t", "xd"} | {f"y{k}" for k in range(1, d)}
        if d == 2:
            allowed.add("y")
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(f"disallowed syntax in {src!r}", "load_system")
            if isinstance(node, ast.Name) and node.id not in allowed:
                raise ExpressionError(f"unknown name {node.id!r} in {src!r}", "load_system")
            if isinstance(node, ast.Call) and not (
                isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS
            ):
                raise ExpressionError(f"disallowed call in {src!r}", "load_system")
        self.code = compile(tree, "<coefficient>", "eval")
        names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        self.constant = not (names & ({"t", "xd", "y"} | {f"y{k}" for k in range(1, d)}))
        self.params = dict(params)

    def __call__(self, env: dict) -> float:
        scope = {**_ALLOWED_FUNCS, **_ALLOWED_CONSTS, **self.params, **env}
        return float(eval(self.code, {"__builtins__": {}}, scope))

    def evaluate(self, env: dict, size: int) -> np.ndarray:
        scope = {**_ALLOWED_FUNCS, **_ALLOWED_CONSTS, **self.params, **env}
        return np.broadcast_to(np.asarray(eval(self.code, {"__builtins__": {}}, scope), float), (size,))


class _MatrixProvider:
    """Matrix-valued function built from per-entry expressions."""

    def __init__(self, entries, params, d):
        self.shape = (len(entries), len(entries[0]))
        self.exprs = [[_Expr(str(v), params, d) if isinstance(v, str) else float(v)
                       for v in row] for row in entries]
        self.d = d
        self.constant = all(not isinstance(e, _Expr) or e.constant
                            for row in self.exprs for e in row)

    def __call__(self, t, y, x_d=0.0) -> np.ndarray:
        env = {"t": t, "xd": x_d}
        for k, v in enumerate(np.atleast_1d(y), start=1):
            env[f"y{k}"] = v
        if self.d == 2:
            env["y"] = env.get("y1", 0.0)
        out = np.empty(self.shape)
        for i, row in enumerate(self.exprs):
            for j, e in enumerate(row):
                out[i, j] = e(env) if isinstance(e, _Expr) else e
        return out

    def batch(self, t, y, x_d) -> np.ndarray:
        """Vectorized evaluation; ``y`` has shape ``(N, d-1)``."""
        N = len(t)
        env = {"t": t, "xd": x_d}
        for k in range(y.shape[1]):
            env[f"y{k + 1}"] = y[:, k]
        if self.d == 2:
            env["y"] = env.get("y1", np.zeros(N))
        out = np.empty((N,) + self.shape)
        for i, row in enumerate(self.exprs):
            for j, e in enumerate(row):
                out[:, i, j] = e.evaluate(env, N) if isinstance(e, _Expr) else e
        return out


class _Constant:
    def __init__(self, m):
        self.m = np.array(m, dtype=float)
        self.m.setflags(write=False)
        self.constant = True

    def __call__(self, *args, **kw):
        return self.m

    def batch(self, t, y, x_d) -> np.ndarray:
        return np.broadcast_to(self.m, (len(t),) + self.m.shape)


# --------------------------------------------------------------------------
# the problem


@dataclass(frozen=True)
class HyperbolicSystem:
    """Linear hyperbolic problem on the half space ``x_d > 0``.

    Parameters
    ----------
    A : sequence of callables
        ``A[j](t, y, x_d)`` returns the real ``n x n`` coefficient of
        ``D_{j+1}``; the last one is the normal coefficient ``A_d``.
    B : callable
        ``B(t, y)`` returns the real ``p x n`` boundary matrix.
    box : optional
        Bounding box ``[(lo, hi), ...]`` for ``(t, y_1.., x_d)``;
        coefficients are frozen outside it.
    """

    d: int
    n: int
    p: int
    A: tuple
    B: Callable
    coeff_kind: str = "constant"
    name: str = ""
    params: dict = field(default_factory=dict)
    box: Optional[tuple] = None
    chart: Optional[dict] = None

    @classmethod
    def constant(cls, A: Sequence, B, name: str = "", **kw) -> "HyperbolicSystem":
        A = tuple(_Constant(a) for a in A)
        Bm = np.atleast_2d(np.array(B, dtype=float))
        n = A[0].m.shape[0]
        return cls(d=len(A), n=n, p=Bm.shape[0], A=A, B=_Constant(Bm),
                   coeff_kind="constant", name=name, **kw)

    # coefficient access -------------------------------------------------
    def _clip(self, t, y, x_d):
        if self.box is None:
            return t, np.atleast_1d(np.asarray(y, float)), x_d
        pt = np.concatenate([[t], np.atleast_1d(y), [x_d]]).astype(float)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        pt = np.clip(pt, lo, hi)
        return pt[0], pt[1:-1], pt[-1]

    def coefficients(self, t=0.0, y=None, x_d=0.0) -> list:
        """Return ``[A_1, ..., A_d]`` at ``(t, y, x_d)``."""
        if y is None:
            y = np.zeros(self.d - 1)
        t, y, x_d = self._clip(t, y, x_d)
        return [np.asarray(a(t, y, x_d), dtype=float) for a in self.A]

    def coefficients_batch(self, t, y, x_d) -> list:
        """Stacked coefficients at arrays ``t (N,)``, ``y (N, d-1)``, ``x_d (N,)``."""
        t = np.asarray(t, float)
        y = np.asarray(y, float).reshape(len(t), self.d - 1)
        x_d = np.asarray(x_d, float)
        if self.box is not None:
            lo = [b[0] for b in self.box]
            hi = [b[1] for b in self.box]
            t = np.clip(t, lo[0], hi[0])
            y = np.clip(y, lo[1:-1], hi[1:-1])
            x_d = np.clip(x_d, lo[-1], hi[-1])
        if all(hasattr(a, "batch") for a in self.A):
            return [a.batch(t, y, x_d) for a in self.A]
        return [np.array([a(t[i], y[i], x_d[i]) for i in range(len(t))]) for a in self.A]

    def boundary(self, t=0.0, y=None) -> np.ndarray:
        if y is None:
            y = np.zeros(self.d - 1)
        t, y, _ = self._clip(t, y, 0.0)
        return np.atleast_2d(np.asarray(self.B(t, y), dtype=float))

    def with_boundary(self, B) -> "HyperbolicSystem":
        Bm = np.atleast_2d(np.array(B, dtype=float))
        return HyperbolicSystem(self.d, self.n, Bm.shape[0], self.A, _Constant(Bm),
                                self.coeff_kind, self.name, self.params, self.box, self.chart)


# --------------------------------------------------------------------------
# symbol evaluation


def _inv_normal(Ad: np.ndarray, operation: str) -> np.ndarray:
    s = np.linalg.svd(Ad, compute_uv=False)
    if s[-1] <= config.get("system.singular_rcond") * s[0]:
        raise SingularBoundaryMatrix(
            f"A_d is numerically singular (rcond={s[-1] / s[0]:.3e})", operation)
    return np.linalg.inv(Ad)


def reduced_symbol(sys: HyperbolicSystem, X: BasePoint) -> np.ndarray:
    """Reduced symbol ``a(X) = A_d^{-1}((tau - i gamma) I + sum eta_j A_j)``.

    Raises
    ------
    SingularBoundaryMatrix
        If ``A_d`` has reciprocal condition number below the threshold.
    """
    A = sys.coefficients(X.t, X.y, X.x_d)
    Adi = _inv_normal(A[-1], "reduced_symbol")
    m = (X.tau - 1j * X.gamma) * np.eye(sys.n, dtype=complex)
    for eta_j, Aj in zip(X.eta, A[:-1]):
        m = m + eta_j * Aj
    return Adi @ m


def reduced_symbol_batch(sys: HyperbolicSystem, t, y, x_d, tau, eta, gamma) -> np.ndarray:
    """Stacked reduced symbols, shape ``(N, n, n)``; ``eta`` has shape ``(N, d-1)``."""
    A = sys.coefficients_batch(t, y, x_d)
    Adi = np.linalg.inv(A[-1])
    tau = np.asarray(tau, float)
    eta = np.asarray(eta, float).reshape(len(tau), sys.d - 1)
    m = (tau - 1j * np.asarray(gamma, float))[:, None, None] * np.eye(sys.n)
    for k in range(sys.d - 1):
        m = m + eta[:, k, None, None] * A[k]
    return Adi @ m


def characteristic_polynomial(sys: HyperbolicSystem, X: BasePoint, xi_d: float) -> complex:
    """``det(xi_d I + a(X))``."""
    a = reduced_symbol(sys, X)
    return complex(np.linalg.det(xi_d * np.eye(sys.n) + a))


def _fd_step(v: float) -> float:
    return config.get("system.fd_rel_step") * max(1.0, abs(v))


def symbol_partials(sys: HyperbolicSystem, X: BasePoint, normal: bool = True) -> dict:
    """Partial derivatives of ``a`` at ``X``.

    Frequency derivatives are exact (``a`` is linear in ``zeta``); space-time
    derivatives use central differences.  Keys: ``"tau"``, ``"gamma"``,
    ``("eta", k)``, ``"t"``, ``("y", k)``, ``"x_d"``.
    """
    A = sys.coefficients(X.t, X.y, X.x_d)
    Adi = _inv_normal(A[-1], "symbol_partials")
    X = _unchecked_point(X.t, X.y, X.x_d, X.freq)
    out = {"tau": Adi.astype(complex), "gamma": -1j * Adi}
    for k in range(sys.d - 1):
        out[("eta", k)] = (Adi @ A[k]).astype(complex)
    if sys.coeff_kind == "constant":
        z = np.zeros((sys.n, sys.n), dtype=complex)
        out["t"] = z
        out["x_d"] = z
        for k in range(sys.d - 1):
            out[("y", k)] = z
        return out
    h = _fd_step(X.t)
    out["t"] = (reduced_symbol(sys, _unchecked_point(X.t + h, X.y, X.x_d, X.freq))
                - reduced_symbol(sys, _unchecked_point(X.t - h, X.y, X.x_d, X.freq))) / (2 * h)
    for k in range(sys.d - 1):
        y = np.array(X.y)
        h = _fd_step(y[k])
        yp, ym = y.copy(), y.copy()
        yp[k] += h
        ym[k] -= h
        out[("y", k)] = (reduced_symbol(sys, _unchecked_point(X.t, yp, X.x_d, X.freq))
                         - reduced_symbol(sys, _unchecked_point(X.t, ym, X.x_d, X.freq))) / (2 * h)
    if not normal:
        return out
    h = _fd_step(X.x_d)
    # x_d may sit on the boundary; coefficient providers are smooth across it
    Xp = _unchecked_point(X.t, X.y, X.x_d + h, X.freq)
    Xm = _unchecked_point(X.t, X.y, X.x_d - h, X.freq)
    out["x_d"] = (reduced_symbol(sys, Xp) - reduced_symbol(sys, Xm)) / (2 * h)
    return out


def _unchecked_point(t, y, x_d, freq) -> BasePoint:
    """BasePoint without the ``x_d >= 0`` check (for difference stencils)."""
    obj = object.__new__(BasePoint)
    object.__setattr__(obj, "t", float(t))
    object.__setattr__(obj, "y", tuple(float(v) for v in np.atleast_1d(y)))
    object.__setattr__(obj, "x_d", float(x_d))
    object.__setattr__(obj, "freq", freq)
    return obj


# --------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    """Per-point outcome of the structural assumption checks."""

    points: list
    normal_invertible: list
    boundary_rank: list
    positive_count: list
    hyperbolic: list
    multiplicities: list
    constant_multiplicity: bool

    @property
    def all_pass(self) -> bool:
        return (all(self.normal_invertible) and all(self.boundary_rank)
                and all(self.positive_count) and all(self.hyperbolic)
                and self.constant_multiplicity)

    def as_dict(self) -> dict:
        return {
            "all_pass": self.all_pass,
            "constant_multiplicity": self.constant_multiplicity,
            "points": [
                {
                    "t": X.t, "y": list(X.y), "x_d": X.x_d,
                    "normal_invertible": bool(a), "boundary_rank": bool(b),
                    "positive_count": bool(c), "hyperbolic": bool(h),
                    "multiplicities": list(m),
                }
                for X, a, b, c, h, m in zip(self.points, self.normal_invertible,
                                            self.boundary_rank, self.positive_count,
                                            self.hyperbolic, self.multiplicities)
            ],
        }


def _direction_grid(d: int, n_dirs: int) -> np.ndarray:
    """Deterministic directions on S^{d-1}."""
    if d == 2:
        th = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n_dirs, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _multiplicity_pattern(evals: np.ndarray, tol: float) -> tuple:
    ev = np.sort(evals.real)
    groups = [1]
    for a, b in zip(ev[:-1], ev[1:]):
        if b - a <= tol:
            groups[-1] += 1
        else:
            groups.append(1)
    return tuple(groups)


def check_assumptions(sys: HyperbolicSystem, sample_points: Sequence[BasePoint],
                      n_dirs: int = 100) -> AssumptionReport:
    """Check invertibility of ``A_d``, rank of ``B``, the boundary count ``p``
    and hyperbolicity with constant multiplicities at each sample point.

    Failures are recorded in the report, never raised.
    """
    if len(sample_points) == 0:
        raise ValueError("sample_points must be nonempty")
    dirs = _direction_grid(sys.d, n_dirs)
    rcond = config.get("system.singular_rcond")
    rtol = config.get("system.rank_tol")
    ctol = config.get("spectral.cluster_tol")
    inv, rank, pos, hyp, mult = [], [], [], [], []
    for X in sample_points:
        A = sys.coefficients(X.t, X.y, X.x_d)
        s = np.linalg.svd(A[-1], compute_uv=False)
        inv.append(bool(s[-1] > rcond * s[0]))
        B = sys.boundary(X.t, X.y)
        sb = np.linalg.svd(B, compute_uv=False)
        rank.append(bool(B.shape[0] == sys.p and sb[0] > 0
                         and np.sum(sb > rtol * sb[0]) == sys.p))
        ev_d = np.linalg.eigvals(A[-1])
        pos.append(bool(np.sum(ev_d.real > 0) == sys.p))
        ok = True
        patterns = set()
        for xi in dirs:
            M = sum(x * a for x, a in zip(xi, A))
            w, V = np.linalg.eig(M)
            scale = max(1.0, np.abs(w).max())
            if np.abs(w.imag).max() > ctol * scale:
                ok = False
                continue
            pat = _multiplicity_pattern(w, ctol * scale)
            # semisimplicity: eigenvector matrix must have full rank
            sv = np.linalg.svd(V, compute_uv=False)
            if sv[-1] < 1e-6 * sv[0]:
                ok = False
            patterns.add(pat)
        hyp.append(ok)
        mult.append(sorted(patterns)[0] if len(patterns) == 1 else tuple())
    const = len({m for m in mult}) == 1 and mult[0] != tuple()
    return AssumptionReport(list(sample_points), inv, rank, pos, hyp, mult, const)


# --------------------------------------------------------------------------
# file format


def system_from_dict(data: dict, param_overrides: Optional[dict] = None,
                     name: str = "") -> HyperbolicSystem:
    """Build a :class:`HyperbolicSystem` from the JSON schema.

    Keys: ``n``, ``d``, ``p``, ``matrices`` (``d`` nested ``n x n`` lists of
    numbers or expression strings), ``boundary`` (``p x n``), optional
    ``params``, ``box`` and ``chart``.
    """
    for key in ("n", "d", "p", "matrices", "boundary"):
        if key not in data:
            raise ExpressionError(f"missing key {key!r}", "load_system")
    n, d, p = int(data["n"]), int(data["d"]), int(data["p"])
    params = {k: float(v) for k, v in data.get("params", {}).items()}
    if param_overrides:
        params.update({k: float(v) for k, v in param_overrides.items()})
    mats = data["matrices"]
    if len(mats) != d:
        raise ExpressionError(f"expected {d} matrices, got {len(mats)}", "load_system")
    A = []
    for m in mats:
        if len(m) != n or any(len(r) != n for r in m):
            raise ExpressionError("coefficient matrix has wrong shape", "load_system")
        A.append(_MatrixProvider(m, params, d))
    Bd = data["boundary"]
    if len(Bd) != p or any(len(r) != n for r in Bd):
        raise ExpressionError("boundary matrix has wrong shape", "load_system")
    Bp = _MatrixProvider(Bd, params, d)
    constant = all(a.constant for a in A) and Bp.constant
    if constant:
        A = [_Constant(a(0.0, np.zeros(d - 1), 0.0)) for a in A]
        Bp = _Constant(Bp(0.0, np.zeros(d - 1)))
    box = data.get("box")
    if box is not None:
        box = tuple((float(lo), float(hi)) for lo, hi in box)
    return HyperbolicSystem(d=d, n=n, p=p, A=tuple(A), B=Bp,
                            coeff_kind="constant" if constant else "variable",
                            name=name or data.get("name", ""), params=params,
                            box=box, chart=data.get("chart"))


def load_system(path, param_overrides: Optional[dict] = None) -> HyperbolicSystem:
    """Read a system definition file.

    Raises
    ------
    json.JSONDecodeError
        For malformed JSON (position available on the exception).
    ExpressionError
        For schema or expression problems.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    data = json.loads(text)
    return system_from_dict(data, param_overrides, name=str(path))
