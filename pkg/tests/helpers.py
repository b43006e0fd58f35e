"""Shared test oracles: central finite differences and error measures."""

from __future__ import annotations

import numpy as np


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. the array x.

    f must read x by reference (it is perturbed in place).  ``coords``
    restricts the check to a subset of flat indices; unchecked entries
    come back as NaN so callers compare only what was computed.
    """
    flat = x.reshape(-1)
    g = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(x.shape)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a - n| / max(|a|, |n|, floor), skipping NaN (unchecked) slots."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    mask = ~np.isnan(n)
    if not mask.any():
        raise ValueError("no coordinates checked")
    a, n = a[mask], n[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())
