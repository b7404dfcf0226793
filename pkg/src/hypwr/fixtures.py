"""Shipped example systems and the boundary-angle scan behind ``s1_wr``."""
from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .system_model import HyperbolicSystem, load_system, system_from_dict

__all__ = ["fixture_path", "load_fixture", "s1", "s1_boundary_scan", "THETA_STAR"]

#: boundary angle of the WR fixture (chosen by :func:`s1_boundary_scan`)
THETA_STAR = 1.1780972450961724


def fixture_path(name: str):
    return resources.files("hypwr") / "data" / f"{name}.json"


def load_fixture(name: str, **params) -> HyperbolicSystem:
    with fixture_path(name).open(encoding="utf-8") as fh:
        data = json.load(fh)
    return system_from_dict(data, params or None, name=name)


def s1(theta: float) -> HyperbolicSystem:
    """The two-by-two fixture with boundary row ``(cos theta, sin theta)``."""
    return load_fixture("s1", theta=theta)


def s1_boundary_scan(thetas, resolution: int = 360) -> list:
    """WR membership of the ``s1`` family over boundary angles.

    Returns a list of ``(theta, WRReport)``.
    """
    from .lopatinskii import check_wr_membership

    return [(float(th), check_wr_membership(s1(th), resolution)) for th in thetas]


def wr_interval_center(thetas, resolution: int = 360) -> float:
    """Midpoint of the longest run of WR angles in ``thetas``."""
    flags = [rep.wr for _, rep in s1_boundary_scan(thetas, resolution)]
    best, cur, start, best_rng = 0, 0, 0, (0, 0)
    for i, f in enumerate(flags + [False]):
        if f:
            if cur == 0:
                start = i
            cur += 1
        else:
            if cur > best:
                best, best_rng = cur, (start, i - 1)
            cur = 0
    if best == 0:
        raise ValueError("no WR angle in scan")
    th = np.asarray(thetas, float)
    return 0.5 * (th[best_rng[0]] + th[best_rng[1]])
