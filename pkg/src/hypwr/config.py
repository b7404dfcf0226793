"""Numerical tolerances with flat dotted override keys.

Every threshold used by the toolkit lives in :data:`DEFAULTS`.  Library
functions read the active value through :func:`get`; callers (the CLI in
particular) install overrides with :func:`overrides` before computing.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Any, Iterator, Mapping

DEFAULTS: dict[str, Any] = {
    # system_model
    "system.singular_rcond": 1e-12,
    "system.fd_rel_step": 1e-5,
    "system.rank_tol": 1e-10,
    # spectral
    "spectral.cluster_tol": 1e-8,
    "spectral.real_tol": 1e-8,
    "spectral.gap_tol": 1e-12,
    "spectral.projector_cond_max": 1e8,
    "spectral.limit_kmin": 6,
    "spectral.limit_kmax": 14,
    "spectral.kappa_imag_tol": 1e-6,
    "spectral.zero_kappa": 1e-8,
    "spectral.real_type_tol": 1e-8,
    "spectral.jordan_split": 1e-4,
    "spectral.jordan_parallel": 1e-8,
    # lopatinskii
    "lopatinskii.root_tol": 1e-10,
    "lopatinskii.weak_tol": 1e-8,
    "lopatinskii.dtau_min": 1e-6,
    "lopatinskii.dtau_step": 1e-6,
    "lopatinskii.tau_bracket": 3.0,
    "lopatinskii.tau_cells": 64,
    "lopatinskii.lhopital_cut": 1e-6,
    "lopatinskii.zero_delta_tilde": 1e-10,
    "lopatinskii.glancing_margin": 1e-3,
    # symmetrizer
    "symmetrizer.krylov_tol": 1e-10,
    "symmetrizer.degeneracy_tol": 1e-8,
    "symmetrizer.hermitian_tol": 1e-12,
    # transport
    "transport.rk4_tol": 1e-10,
    "transport.max_halvings": 12,
    "transport.basis_cond_max": 1e8,
    "transport.component_tol": 1e-10,
    "transport.cluster_sep": 1e-6,
    # estimator
    "estimator.critical_tol": 1e-12,
    "estimator.grid_points": 2048,
    "estimator.xmax_factor": 20.0,
    "estimator.gamma0": 1.0,
    # general
    "seed": 0,
}

_local = threading.local()


def _stack() -> list[dict[str, Any]]:
    st = getattr(_local, "stack", None)
    if st is None:
        st = []
        _local.stack = st
    return st


_global_overrides: dict[str, Any] = {}


def get(key: str) -> Any:
    """Return the active value of tolerance ``key``."""
    for layer in reversed(_stack()):
        if key in layer:
            return layer[key]
    if key in _global_overrides:
        return _global_overrides[key]
    return DEFAULTS[key]


def _validate(mapping: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in mapping.items():
        if k not in DEFAULTS:
            raise KeyError(f"unknown tolerance key {k!r}")
        out[k] = type(DEFAULTS[k])(v)
    return out


def set_global(mapping: Mapping[str, Any]) -> None:
    """Install process-wide overrides (visible from worker threads)."""
    _global_overrides.clear()
    _global_overrides.update(_validate(mapping))


@contextlib.contextmanager
def overrides(mapping: Mapping[str, Any]) -> Iterator[None]:
    """Temporarily override tolerances in the current thread."""
    st = _stack()
    st.append(_validate(mapping))
    try:
        yield
    finally:
        st.pop()
