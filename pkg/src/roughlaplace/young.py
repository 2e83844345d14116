"""Young integration on a common grid.

The definitional left-point Riemann sum is the primary quadrature; callers
are responsible for the regularity budget 1/p + 1/q > 1.  The returned error
indicator compares the left sum with the sum on the midpoint-refined grid
(midpoint values by linear interpolation).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import SampledPath

__all__ = ["YoungResult", "young_integral"]


@dataclass
class YoungResult:
    value: np.ndarray
    error_estimate: float


def _contract(k: np.ndarray, dl: np.ndarray) -> np.ndarray:
    """Stepwise product k_i * dl_i for the supported integrand shapes."""
    if k.ndim == 3:  # matrix-valued integrand: (steps, m, d) @ (steps, d)
        return np.einsum("iab,ib->ia", k, dl)
    if k.shape[1] == 1:  # scalar integrand scales the increment
        return k * dl
    if k.shape[1] == dl.shape[1]:  # vector against vector: inner product
        return np.einsum("ia,ia->i", k, dl)[:, None]
    raise ValueError(
        f"cannot pair integrand of dim {k.shape[1]} with integrator of dim {dl.shape[1]}"
    )


def _left_sum(k_vals: np.ndarray, l_vals: np.ndarray) -> np.ndarray:
    dl = np.diff(l_vals, axis=0)
    return _contract(k_vals[:-1], dl).sum(axis=0)


def _refine_mid(vals: np.ndarray) -> np.ndarray:
    mid = 0.5 * (vals[:-1] + vals[1:])
    out = np.empty((2 * vals.shape[0] - 1,) + vals.shape[1:])
    out[0::2] = vals
    out[1::2] = mid
    return out


def young_integral(
    integrand,
    integrator: SampledPath,
    s: float = 0.0,
    t: float = 1.0,
) -> YoungResult:
    """Left-point Young integral of ``integrand`` against ``integrator`` on [s,t].

    ``integrand`` is a SampledPath (scalar, vector, or matrix valued via a
    values array of shape (N, m, d)) on the same grid as ``integrator``;
    ``s`` and ``t`` must be grid points.  Matrix integrands contract against
    the integrator increments; a vector integrand of matching dimension is
    paired by the inner product; a scalar integrand scales the increments.
    """
    if isinstance(integrand, SampledPath):
        if not integrand.same_grid(integrator):
            raise ValueError("integrand and integrator live on different grids")
        k_vals = integrand.values
    else:
        k_vals = np.asarray(integrand, dtype=float)
        if k_vals.shape[0] != len(integrator.grid):
            raise ValueError("integrand samples do not match the integrator grid")
    if t < s:
        raise ValueError("need s <= t")
    i0 = integrator.grid.index_of(s)
    i1 = integrator.grid.index_of(t)
    ks = k_vals[i0 : i1 + 1]
    ls = integrator.values[i0 : i1 + 1]
    if i0 == i1:
        zero = _contract(k_vals[:1], np.zeros((1, integrator.dim))).sum(axis=0)
        return YoungResult(value=np.atleast_1d(np.squeeze(zero)), error_estimate=0.0)
    coarse = _left_sum(ks, ls)
    fine = _left_sum(_refine_mid(ks), _refine_mid(ls))
    err = float(np.max(np.abs(coarse - fine)))
    return YoungResult(value=np.atleast_1d(np.squeeze(coarse)), error_estimate=err)
