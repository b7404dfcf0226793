"""Command-line entry point ``hypwr``.

Usage::

    hypwr COMMAND SYSTEM [--theta X] [--seed N] [--jobs N] [--out DIR]
    hypwr --config run.json

``COMMAND`` is one of check, classify, wr, symmetrize, transport, estimate.
``SYSTEM`` is a path to a system file or the name of a bundled fixture
(``s1``, ``s1_wr``, ``s1v``, ``s2``).

Exit status: 0 success, 1 assumption failure, 2 I/O or parse error.
Domain errors are printed to stderr as JSON.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import config
from .errors import HypWRError

log = logging.getLogger("hypwr")

COMMANDS = ("check", "classify", "wr", "symmetrize", "transport", "estimate")
FIXTURES = ("s1", "s1_wr", "s1v", "s2")


class _Usage(Exception):
    """Bad invocation or unreadable input (exit 2)."""


@dataclass
class RunConfig:
    system_path: str
    command: str
    sphere_resolution: int = 64
    gamma_ladder: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "."
    params: dict = field(default_factory=dict)
    jobs: int = 1

    def validate(self):
        if self.command not in COMMANDS:
            raise _Usage(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if int(self.sphere_resolution) < 8:
            raise _Usage("sphere_resolution must be at least 8")
        lad = [float(g) for g in self.gamma_ladder]
        if any(b <= a for a, b in zip(lad[:-1], lad[1:])) or (lad and lad[0] < config.get("estimator.gamma0")):
            raise _Usage("gamma_ladder must be strictly increasing and >= gamma0")
        if int(self.jobs) < 1:
            raise _Usage("--jobs must be positive")


# --------------------------------------------------------------------------
# helpers


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Usage(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise _Usage(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load(cfg: RunConfig):
    from .fixtures import fixture_path
    from .system_model import system_from_dict

    p = Path(cfg.system_path)
    if not p.exists():
        name = p.stem if p.suffix == ".json" else str(p)
        if name in FIXTURES and p.parent == Path("."):
            p = Path(str(fixture_path(name)))
        else:
            raise _Usage(f"cannot read {cfg.system_path}: no such file")
    data = _read_json(p)
    return system_from_dict(data, cfg.params or None, name=p.stem)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 else '-'}{abs(v.imag)!r}j"
    return str(v)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if hasattr(o, "value") and hasattr(o, "name"):
        return o.value
    return o


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _ordered_map(jobs: int):
    if jobs <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=jobs)
    return pool.map, pool


def _boundary_points(sys, resolution: int):
    from .lopatinskii import sphere_paths
    from .system_model import BasePoint

    pts = []
    for phi, e in sphere_paths(sys.d, resolution):
        for ph in phi[:-1] if sys.d == 2 else phi:
            pts.append((float(ph), BasePoint.at(math.cos(ph), tuple(math.sin(ph) * e), 0.0)))
    return pts


def _sample_points(sys, resolution: int):
    """Assumption-check sample: boundary origin plus box corners and centre."""
    from .system_model import BasePoint, Frequency

    pts = [BasePoint(0.0, (0.0,) * (sys.d - 1), 0.0, Frequency(1.0, (0.0,) * (sys.d - 1), 0.0))]
    if sys.box is not None and sys.coeff_kind != "constant":
        lo = [b[0] for b in sys.box]
        hi = [b[1] for b in sys.box]
        for w in np.linspace(0.0, 1.0, 5):
            v = [l + w * (h - l) for l, h in zip(lo, hi)]
            pts.append(BasePoint(v[0], tuple(v[1:-1]), max(v[-1], 0.0), pts[0].freq))
    return pts


# --------------------------------------------------------------------------
# commands


def _cmd_check(sys, cfg, out: Path) -> int:
    from .system_model import check_assumptions

    rep = check_assumptions(sys, _sample_points(sys, cfg.sphere_resolution))
    _write_json(out / "assumptions.json", rep.as_dict())
    print(json.dumps({"all_pass": rep.all_pass}))
    return 0 if rep.all_pass else 1


def _cmd_classify(sys, cfg, out: Path, map_fn) -> int:
    from .spectral import classify_point, kappa_signs

    pts = _boundary_points(sys, cfg.sphere_resolution)

    def row(item):
        phi, X = item
        c = classify_point(sys, X)
        kap = ""
        if c.value == "Hyperbolic":
            kap = " ".join(f"{int(k):+d}" for k in kappa_signs(sys, X))
        return [phi, X.tau, *X.freq.eta, c.value, kap]

    rows = list(map_fn(row, pts))
    eta_cols = [f"eta{k + 1}" for k in range(sys.d - 1)]
    _write_csv(out / "classification.csv", ["phi", "tau", *eta_cols, "class", "kappa"], rows)
    return 0


def _cmd_wr(sys, cfg, out: Path) -> int:
    from .lopatinskii import check_wr_membership

    rep = check_wr_membership(sys, max(cfg.sphere_resolution, 360))
    d = rep.as_dict()
    d["fixtures"] = [r.as_fixture() for r in rep.roots]
    _write_json(out / "wr_report.json", d)
    from .lopatinskii import delta_sweep

    rows = [[tau, *eta, g, dl.real, dl.imag, abs(dl), cls]
            for tau, eta, g, dl, cls in delta_sweep(sys, cfg.sphere_resolution)]
    eta_cols = [f"eta{k + 1}" for k in range(sys.d - 1)]
    _write_csv(out / "delta_sweep.csv",
               ["tau", *eta_cols, "gamma", "re_delta", "im_delta", "abs_delta", "class"], rows)
    print(json.dumps({"wr": rep.wr, "uniform_lc": rep.uniform_lc, "weak_lc": rep.weak_lc}))
    return 0


def _cmd_symmetrize(sys, cfg, out: Path) -> int:
    from .symmetrizer import symmetrizer_suite

    res = symmetrizer_suite(sys, trials=1000, seed=cfg.seed)
    d = res["report"].as_dict()
    d.update(passed=res["report"].passed, rho=res["rho"], krylov_max=res["krylov_max"],
             n_points=res["n_points"])
    _write_json(out / "condition_report.json", d)
    print(json.dumps({"passed": res["report"].passed, "rho": res["rho"]}))
    return 0


def _cmd_transport(sys, cfg, out: Path, map_fn) -> int:
    from .lopatinskii import find_critical_set
    from .transport import Chart, FlowState, hamiltonian_flow, transport_residual

    chart = Chart.from_dict(sys.chart) if sys.chart else None
    x_end = chart.box[-1][1] if chart else 1.0
    roots = find_critical_set(sys)
    starts = [r.base_point for r in roots]
    if not starts:
        from .system_model import BasePoint
        starts = [BasePoint.at(1.0, (0.0,) * (sys.d - 1), 0.0)]
    xs = np.linspace(0.0, x_end, 11)

    def flow(X):
        return hamiltonian_flow(sys, 0, FlowState.from_point(X), x_end, h=0.01, at=xs, control=True)

    trajs = list(map_fn(flow, starts))
    from .transport import transport_delta

    def dvals(tr):
        out = []
        for i in range(len(tr.x_d)):
            X = tr.state(i).to_point()
            out.append(transport_delta(sys, None, X, h=0.01, mu_start=tr.mu[i]).value)
        return out

    deltas = list(map_fn(dvals, trajs))
    rows = []
    for i, (tr, dl) in enumerate(zip(trajs, deltas)):
        for x, z, v in zip(tr.x_d, tr.states, dl):
            rows.append([i, x, *z, tr.gamma, v.real, v.imag, tr.error_estimate])
    m = sys.d - 1
    head = ["trajectory", "x_d", "t", *[f"y{k + 1}" for k in range(m)], "tau",
            *[f"eta{k + 1}" for k in range(m)], "gamma", "re_delta", "im_delta", "error_estimate"]
    _write_csv(out / "trajectories.csv", head, rows)
    res_rows = []
    for i, tr in enumerate(trajs):
        X = tr.state(len(tr.x_d) // 2).to_point()
        for H in (0.04, 0.02, 0.01):
            res_rows.append([i, X.x_d, H, transport_residual(sys, 0, X, H)])
    _write_csv(out / "residuals.csv", ["trajectory", "x_d", "H", "residual"], res_rows)
    return 0


def _estimate_points(sys, cfg):
    from .estimator import approach_sequence
    from .lopatinskii import find_critical_set
    from .system_model import BasePoint

    pts = []
    for r in find_critical_set(sys):
        pts.extend(approach_sequence(sys, r))
    n_dir = max(8, cfg.sphere_resolution // 8)
    for k in range(n_dir):
        ph = 2 * math.pi * (k + 0.5) / n_dir
        for g in cfg.gamma_ladder:
            # boundary part of length 4 above each gamma rung
            s = 4.0
            e = (1.0,) + (0.0,) * (sys.d - 2)
            pts.append(BasePoint.at(s * math.cos(ph), tuple(s * math.sin(ph) * v for v in e), g))
    return pts


def _cmd_estimate(sys, cfg, out: Path, map_fn) -> int:
    from .errors import CriticalFrequency
    from .estimator import SWEEP_COLUMNS, frequency_sweep

    pts = _estimate_points(sys, cfg)

    def safe(args):
        from .estimator import _sweep_row
        try:
            return _sweep_row(args)
        except (CriticalFrequency, HypWRError) as exc:
            log.info("skipped frequency: %s", exc)
            return None

    rows = frequency_sweep(sys, pts, n_data=32, seed=cfg.seed, map_fn=lambda f, a: map_fn(safe, a))
    rows = [r for r in rows if r is not None]
    m = sys.d - 1
    head = ["tau", *[f"eta{k + 1}" for k in range(m)], *SWEEP_COLUMNS[2:]]
    _write_csv(out / "sweep.csv", head,
               [[r["tau"], *r["eta"], *[r[c] for c in SWEEP_COLUMNS[2:]]] for r in rows])
    _plot(out / "sweep.svg", rows)
    return 0


def _plot(path: Path, rows):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    dt = np.array([r["abs_delta_tilde"] for r in rows])
    on = np.array([r["sharp_filtered"] for r in rows])
    off = np.array([r["sharp_unfiltered"] for r in rows])
    order = np.argsort(dt)
    ax.loglog(dt[order], off[order], "o-", label="unfiltered")
    ax.loglog(dt[order], on[order], "s-", label="filtered")
    ax.set_xlabel("|Dt|")
    ax.set_ylabel("sharp constant")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --------------------------------------------------------------------------
# entry


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypwr", description="WR-class analysis of hyperbolic boundary problems")
    p.add_argument("command", nargs="?", help="|".join(COMMANDS))
    p.add_argument("system", nargs="?", help="system file or fixture name")
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--command", dest="command_flag", help="command (overrides the positional one)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--theta", type=float, default=None, help="boundary angle for the s1 family")
    return p


def _build_config(ns) -> RunConfig:
    base = {}
    if ns.config:
        base = _read_json(ns.config)
        if not isinstance(base, dict):
            raise _Usage(f"{ns.config}: expected a JSON object")
    grid = base.get("grid", {})
    command = ns.command_flag or ns.command or base.get("command")
    system = ns.system or base.get("system_path")
    if ns.command and ns.system is None and (ns.command_flag or ns.command not in COMMANDS):
        # a single positional is the system when the command comes from elsewhere
        command, system = ns.command_flag or base.get("command"), ns.command
    if command is None or system is None:
        raise _Usage("a command and a system file are required")
    cfg = RunConfig(
        system_path=str(system),
        command=str(command),
        sphere_resolution=int(grid.get("sphere_resolution", 64)),
        gamma_ladder=list(grid.get("gamma_ladder", [1.0, 2.0, 4.0, 8.0])),
        seed=int(ns.seed if ns.seed is not None else base.get("seed", 0)),
        tolerances=dict(base.get("tolerances", {})),
        output_dir=str(ns.out or base.get("output_dir", ".")),
        params=dict(base.get("params", {})),
        jobs=int(ns.jobs if ns.jobs is not None else base.get("jobs", 1)),
    )
    if ns.theta is not None:
        cfg.params["theta"] = ns.theta
    return cfg


def _diagnostic(exc: Exception) -> dict:
    if isinstance(exc, HypWRError):
        return exc.as_dict()
    return {"error": type(exc).__name__, "message": str(exc), "module": "cli", "operation": "run"}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status."""
    cfg.validate()
    try:
        config.set_global(cfg.tolerances)
    except (KeyError, TypeError, ValueError) as exc:
        raise _Usage(f"bad tolerance override: {exc}") from None
    sysm = _load(cfg)
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Usage(f"cannot create {out}: {exc.strerror}") from None
    if cfg.command == "check":
        return _cmd_check(sysm, cfg, out)
    from .system_model import check_assumptions

    rep = check_assumptions(sysm, _sample_points(sysm, cfg.sphere_resolution))
    if not rep.all_pass:
        print(json.dumps({"error": "AssumptionFailure", "module": "system_model",
                          "operation": "check_assumptions", "report": _jsonable(rep.as_dict())}),
              file=_sys.stderr)
        return 1
    map_fn, pool = _ordered_map(cfg.jobs)
    try:
        if cfg.command == "classify":
            return _cmd_classify(sysm, cfg, out, map_fn)
        if cfg.command == "wr":
            return _cmd_wr(sysm, cfg, out)
        if cfg.command == "symmetrize":
            return _cmd_symmetrize(sysm, cfg, out)
        if cfg.command == "transport":
            return _cmd_transport(sysm, cfg, out, map_fn)
        return _cmd_estimate(sysm, cfg, out, map_fn)
    finally:
        if pool is not None:
            pool.shutdown()


def main(argv=None) -> int:
    level = os.environ.get("HYPWR_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=_sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ns = _parser().parse_args(argv)
    try:
        cfg = _build_config(ns)
        return run(cfg)
    except _Usage as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc), "module": "cli",
                          "operation": "run"}), file=_sys.stderr)
        return 2
    except (HypWRError, ValueError) as exc:
        from .errors import ExpressionError

        print(json.dumps(_diagnostic(exc)), file=_sys.stderr)
        if isinstance(exc, ExpressionError):
            return 2
        return 1


if __name__ == "__main__":  # pragma: no cover
    _sys.exit(main())
