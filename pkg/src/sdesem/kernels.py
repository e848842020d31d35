"""Backend selection and the safe wrapper around the scan kernel.

The compiled extension is preferred when importable; otherwise the NumPy
reference takes over. Both accept identical inputs and must produce panels
agreeing within 1e-12 on shared draws.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalBlowup, ShapeError, ValidationError

from . import _scan_py

try:
    from . import _scan  # type: ignore[attr-defined]

    BACKEND = "compiled"
    _default = _scan
except ImportError:  # extension not built
    _scan = None
    BACKEND = "python"
    _default = _scan_py

BLOWUP_LIMIT = 1e12


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _scan is not None else ("python",)


def get_backend(name: str):
    """Raw kernel module by name ('compiled' | 'python')."""
    if name == "python":
        return _scan_py
    if name == "compiled":
        if _scan is None:
            raise ValidationError("compiled kernel requested but not built")
        return _scan
    raise ValidationError(f"unknown backend {name!r}")


def affine_scan(
    phi: np.ndarray,
    w: np.ndarray,
    x0: np.ndarray,
    thin: int = 1,
    blow: float = BLOWUP_LIMIT,
    backend: str | None = None,
    label: str = "process",
) -> np.ndarray:
    """Iterate x_{i+1} = w_i + phi x_i, returning every thin-th state.

    w has one row per step; its row count must be a multiple of thin. The
    result has w.shape[0]//thin + 1 rows, the first being x0.
    """
    phi = np.ascontiguousarray(phi, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    d = x0.shape[0]
    if phi.shape != (d, d):
        raise ShapeError(f"phi must be ({d},{d}), got {phi.shape}")
    if w.ndim != 2 or w.shape[1] != d:
        raise ShapeError(f"w must be (steps,{d}), got {w.shape}")
    if thin < 1:
        raise ValidationError("thin must be >= 1")
    steps = w.shape[0]
    if steps % thin != 0:
        raise ShapeError(f"{steps} steps not divisible by thin={thin}")
    out = np.empty((steps // thin + 1, d))
    mod = _default if backend is None else get_backend(backend)
    bad = mod.affine_scan(phi, w, x0, thin, float(blow), out)
    if bad >= 0:
        raise NumericalBlowup(
            f"{label} exceeded |x| <= {blow:g} at step {bad} of {steps}"
        )
    return out
