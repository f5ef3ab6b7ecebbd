"""Closed-form pressure and flow-rate surrogates for flexible EHD pumps.

Both take min-max normalized features ``x1..x5`` in ``[0, 1]`` (channel
height, electrode overlap, voltage, electrode gap, apex angle) and return
maximum pressure in Pa and maximum flow rate in ml/min respectively.
"""
from __future__ import annotations

import warnings

import numpy as np


def pressure_formula(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4, x5 = np.moveaxis(x, -1, 0)
    inner = (
        -0.01 * (1 - 0.8 * x2) ** 3
        + 4.3 * (1 - 0.75 * x4) ** 4
        - 0.06 * np.exp(3.03 * x1)
        + 3.18 * np.tanh(0.18 * x3 - 0.55)
        + 2.43 * np.exp(-2.57 * x5)
    )
    return 12.46 * np.exp(inner) - 1.87


def flow_formula(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3, x4, x5 = np.moveaxis(x, -1, 0)
    inner = (
        22.4 * (0.9 - x4) ** 4
        - 3.33 * np.sin(6.2 * x3 - 2.35)
        + 0.08
        - 2.11 * np.exp(-1.72 * x5)
        + 2.13 * np.exp(-0.24 * x2)
        - 0.89 * np.exp(-1.4 * x1)
    )
    return 1.7 - 1.59 * np.tanh(inner)


_FORMULAS = {"Y1": pressure_formula, "Y2": flow_formula}


def eval_paper_formula(which: str, x):
    """Evaluate ``"Y1"`` (pressure) or ``"Y2"`` (flow rate) at normalized ``x``.

    Accepts a 5-vector or an ``(n, 5)`` array. Inputs outside the unit box
    are still evaluated, with a warning.
    """
    try:
        fn = _FORMULAS[which]
    except KeyError:
        raise ValueError(f"unknown formula {which!r}; expected 'Y1' or 'Y2'") from None
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 5:
        raise ValueError(f"expected 5 features, got shape {x.shape}")
    if np.any(x < 0) or np.any(x > 1):
        warnings.warn("formula input outside the normalized unit box", RuntimeWarning, stacklevel=2)
    out = fn(x)
    return float(out) if out.ndim == 0 else out
