"""Finite-difference stencils on uniform grids.

Central second-order differences in the interior and one-sided second-order
differences at the two ends of every axis.  Madelung variables (log rho,
Phi) are not periodic functions even on periodic grids, so no wrap-around is
used here; periodicity is the business of the spectral propagator.

Every stencil accepts a ``stride`` k: derivatives are taken with spacing k*h.
Comparing stride 1 and stride 2 gives a Richardson estimate of the
truncation error (error(h) ~ |D_h - D_2h| / 3 for second-order schemes).
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ShapeError
from .system import DENSITY_FLOOR, ConfigGrid


def _take(f: np.ndarray, axis: int, sl) -> np.ndarray:
    idx = [slice(None)] * f.ndim
    idx[axis] = sl
    return f[tuple(idx)]


def d1(f: np.ndarray, h: float, axis: int = 0, stride: int = 1) -> np.ndarray:
    """First derivative along ``axis``."""
    k = stride
    n = f.shape[axis]
    if n < 2 * k + 1:
        raise ShapeError(f"axis too short ({n}) for stride {k}")
    out = np.empty_like(f, dtype=np.result_type(f, float))
    hk = k * h
    _take(out, axis, slice(k, n - k))[...] = (
        _take(f, axis, slice(2 * k, None)) - _take(f, axis, slice(None, n - 2 * k))
    ) / (2 * hk)
    for j in range(k):
        lo = (-3 * _take(f, axis, j) + 4 * _take(f, axis, j + k) - _take(f, axis, j + 2 * k)) / (2 * hk)
        i = n - 1 - j
        hi = (3 * _take(f, axis, i) - 4 * _take(f, axis, i - k) + _take(f, axis, i - 2 * k)) / (2 * hk)
        _take(out, axis, slice(j, j + 1))[...] = np.expand_dims(lo, axis)
        _take(out, axis, slice(i, i + 1))[...] = np.expand_dims(hi, axis)
    return out


def d2(f: np.ndarray, h: float, axis: int = 0, stride: int = 1) -> np.ndarray:
    """Second derivative along ``axis``."""
    k = stride
    n = f.shape[axis]
    if n < 3 * k + 1:
        raise ShapeError(f"axis too short ({n}) for stride {k}")
    out = np.empty_like(f, dtype=np.result_type(f, float))
    hk2 = (k * h) ** 2
    _take(out, axis, slice(k, n - k))[...] = (
        _take(f, axis, slice(2 * k, None))
        - 2 * _take(f, axis, slice(k, n - k))
        + _take(f, axis, slice(None, n - 2 * k))
    ) / hk2
    for j in range(k):
        lo = (2 * _take(f, axis, j) - 5 * _take(f, axis, j + k)
              + 4 * _take(f, axis, j + 2 * k) - _take(f, axis, j + 3 * k)) / hk2
        i = n - 1 - j
        hi = (2 * _take(f, axis, i) - 5 * _take(f, axis, i - k)
              + 4 * _take(f, axis, i - 2 * k) - _take(f, axis, i - 3 * k)) / hk2
        _take(out, axis, slice(j, j + 1))[...] = np.expand_dims(lo, axis)
        _take(out, axis, slice(i, i + 1))[...] = np.expand_dims(hi, axis)
    return out


def gradient(f: np.ndarray, grid: ConfigGrid, stride: int = 1) -> np.ndarray:
    """Stack of partial derivatives, shape (ndim, *grid.shape)."""
    return np.stack([d1(f, h, a, stride) for a, h in enumerate(grid.spacing)])


def weighted_laplacian(f: np.ndarray, grid: ConfigGrid, weights, stride: int = 1) -> np.ndarray:
    """sum_A w_A d^2 f / dx_A^2 for a diagonal weight (e.g. inverse masses)."""
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    for a, h in enumerate(grid.spacing):
        out += weights[a] * d2(f, h, a, stride)
    return out


def log_density(rho: np.ndarray, floor: float = DENSITY_FLOOR) -> tuple[np.ndarray, int]:
    """log(rho) with nodes below ``floor`` clamped; returns (log rho, n_clamped)."""
    rho = np.asarray(rho, dtype=float)
    low = rho < floor
    return np.log(np.where(low, floor, rho)), int(np.count_nonzero(low))


def interior_mask(shape: tuple[int, ...], width: int) -> np.ndarray:
    """True on nodes at least ``width`` nodes away from every edge."""
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(width, n - width) for n in shape)] = True
    return mask


def shifted(f: np.ndarray, grid: ConfigGrid, displacement: np.ndarray) -> np.ndarray:
    """Values of f at node + displacement (coordinate units).

    The shift is applied one axis at a time: integer-node moves are exact
    slices, fractional ones use not-a-knot cubic splines (exact for cubics
    up to the edge).  Nodes whose shifted point leaves the grid get NaN.
    """
    disp = np.asarray(displacement, dtype=float) / np.asarray(grid.spacing)
    out = np.array(f, dtype=np.result_type(f, float))
    inside = np.ones(f.shape, dtype=bool)
    for a, (s, n) in enumerate(zip(disp, f.shape)):
        if s == 0:
            continue
        nodes = np.arange(n, dtype=float)
        shape = [1] * f.ndim
        shape[a] = n
        inside &= ((nodes + s >= -1e-12) & (nodes + s <= n - 1 + 1e-12)).reshape(shape)
        step = np.rint(s)
        if abs(s - step) <= 1e-12:
            out = np.roll(out, -int(step), axis=a)
        else:
            out = CubicSpline(nodes, out, axis=a)(nodes + s)
    out[~inside] = np.nan
    return out


def directional_d1(f: np.ndarray, grid: ConfigGrid, direction, stride: int = 1) -> np.ndarray:
    """Central difference of f along ``direction`` (not normalized).

    Returns the directional derivative sum_A w_A df/dx_A; the step is
    ``stride`` grid spacings along the axis of largest |w_A| h_A scale.
    NaN where the stencil leaves the grid.
    """
    w = np.asarray(direction, dtype=float)
    h = np.asarray(grid.spacing)
    # step s such that the largest per-axis move is exactly `stride` nodes
    s = stride * np.min(h[w != 0] / np.abs(w[w != 0]))
    fwd = shifted(f, grid, s * w)
    bwd = shifted(f, grid, -s * w)
    return (fwd - bwd) / (2 * s)


def richardson_d1_error(f: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Node-wise truncation estimate of :func:`d1`."""
    return np.abs(d1(f, h, axis, 1) - d1(f, h, axis, 2)) / 3.0


def richardson_d2_error(f: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Node-wise truncation estimate of :func:`d2`."""
    return np.abs(d2(f, h, axis, 1) - d2(f, h, axis, 2)) / 3.0
