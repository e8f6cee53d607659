"""Curvature from volume fractions with averaged local height functions.

Heights are column sums over seven cells centred on the target row.  When
the three columns along the dominant normal direction are all valid, the
curvature comes from second-order finite differences.  Otherwise valid
heights from both directions are turned into interface points and a
parabola is fitted to them in the frame of the Youngs normal.

Sign convention: a liquid disk of radius R gives kappa = +1/R, matching the
parabolic cuts in :mod:`ppic2d.geom2d`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .reconstruct import PURE_EPS, _wrap

__all__ = [
    "N_H",
    "HeightSample",
    "CurvatureField",
    "averaged_heights",
    "lhf_curvature",
    "ghf_curvature",
    "ghf_field",
]

N_H = 3
MIN_FIT_POINTS = 4

MODE_INVALID = 0
MODE_LHF = 1
MODE_MIXED = 2
MODE_NEIGHBOR = 3


@dataclass(frozen=True)
class HeightSample:
    """Averaged height along ``axis`` (0 = x, 1 = y) measured from the centre row.

    ``orientation`` is +1 when liquid lies towards decreasing coordinate.
    """

    value: float
    valid: bool
    axis: int
    orientation: int


@dataclass
class CurvatureField:
    kappa: np.ndarray
    valid: np.ndarray
    mode: np.ndarray


@njit(cache=True)
def _column(alpha, i, j, k, axis, orient, nx, ny, px, py, h):
    """Height of column offset k from cell (i, j) along ``axis``; returns (H, valid)."""
    tot = 0.0
    valid = True
    prev = 2.0
    for step in range(2 * N_H + 1):
        # walk from the liquid end to the gas end
        m = -orient * (N_H - step)
        if axis == 1:
            a = alpha[_wrap(i + k, nx, px), _wrap(j + m, ny, py)]
        else:
            a = alpha[_wrap(i + m, nx, px), _wrap(j + k, ny, py)]
        tot += a
        if step == 0 and a < 1.0 - PURE_EPS:
            valid = False
        if step == 2 * N_H and a > PURE_EPS:
            valid = False
        if a > prev + PURE_EPS:
            valid = False
        prev = a
    return orient * (h * tot - (N_H + 0.5) * h), valid


@njit(cache=True)
def _youngs_field(alpha, i, j, nx, ny, px, py, hx, hy):
    gx = 0.0
    gy = 0.0
    for d in range(-1, 2):
        wgt = 2.0 if d == 0 else 1.0
        gx += wgt * (alpha[_wrap(i + 1, nx, px), _wrap(j + d, ny, py)]
                     - alpha[_wrap(i - 1, nx, px), _wrap(j + d, ny, py)])
        gy += wgt * (alpha[_wrap(i + d, nx, px), _wrap(j + 1, ny, py)]
                     - alpha[_wrap(i + d, nx, px), _wrap(j - 1, ny, py)])
    gx /= 8.0 * hx
    gy /= 8.0 * hy
    nrm = math.hypot(gx, gy)
    if nrm == 0.0:
        return 0.0, 1.0
    return -gx / nrm, -gy / nrm


@njit(cache=True)
def _lhf(hm, h0, hp, spacing):
    d1 = (hp - hm) / (2.0 * spacing)
    d2 = (hp - 2.0 * h0 + hm) / (spacing * spacing)
    return d2 / (1.0 + d1 * d1) ** 1.5


@njit(cache=True)
def _ghf_cell(alpha, i, j, nx, ny, px, py, hx, hy):
    """Returns (kappa, mode)."""
    ex, ey = _youngs_field(alpha, i, j, nx, ny, px, py, hx, hy)
    # primary direction first, then the other one
    first = 1 if abs(ey) >= abs(ex) else 0
    H = np.empty(3)
    for attempt in range(2):
        axis = first if attempt == 0 else 1 - first
        comp = ey if axis == 1 else ex
        if attempt == 1 and comp == 0.0:
            break
        orient = 1 if comp >= 0.0 else -1
        ok = True
        for k in range(3):
            if axis == 1:
                H[k], v = _column(alpha, i, j, k - 1, 1, orient, nx, ny, px, py, hy)
            else:
                H[k], v = _column(alpha, i, j, k - 1, 0, orient, nx, ny, px, py, hx)
            ok = ok and v
        if ok:
            spacing = hx if axis == 1 else hy
            return -orient * _lhf(H[0], H[1], H[2], spacing), MODE_LHF
    # mixed directions: interface points from every valid height
    ptx = np.empty(6)
    pty = np.empty(6)
    npt = 0
    hmin = min(hx, hy)
    for ax in range(2):
        comp = ey if ax == 1 else ex
        if comp == 0.0:
            continue
        o = 1 if comp > 0.0 else -1
        for k in range(3):
            if ax == 1:
                val, v = _column(alpha, i, j, k - 1, 1, o, nx, ny, px, py, hy)
                qx = (k - 1) * hx
                qy = val
            else:
                val, v = _column(alpha, i, j, k - 1, 0, o, nx, ny, px, py, hx)
                qx = val
                qy = (k - 1) * hy
            if not v:
                continue
            dup = False
            for m in range(npt):
                if math.hypot(ptx[m] - qx, pty[m] - qy) < 0.5 * hmin:
                    dup = True
                    break
            if not dup:
                ptx[npt] = qx
                pty[npt] = qy
                npt += 1
    if npt < MIN_FIT_POINTS:
        return 0.0, MODE_INVALID
    tx = -ey
    ty = ex
    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    tmin = 1e300
    tmax = -1e300
    for m in range(npt):
        t = (tx * ptx[m] + ty * pty[m]) / hmin
        nn = (ex * ptx[m] + ey * pty[m]) / hmin
        tmin = min(tmin, t)
        tmax = max(tmax, t)
        row0 = 1.0
        row1 = t
        row2 = t * t
        A[0, 0] += row0 * row0
        A[0, 1] += row0 * row1
        A[0, 2] += row0 * row2
        A[1, 1] += row1 * row1
        A[1, 2] += row1 * row2
        A[2, 2] += row2 * row2
        rhs[0] += row0 * nn
        rhs[1] += row1 * nn
        rhs[2] += row2 * nn
    if tmax - tmin < 1.5:
        return 0.0, MODE_INVALID
    A[1, 0] = A[0, 1]
    A[2, 0] = A[0, 2]
    A[2, 1] = A[1, 2]
    det = (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
           - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
           + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))
    if abs(det) < 1e-12:
        return 0.0, MODE_INVALID
    coef = np.linalg.solve(A, rhs)
    b = coef[1]
    c = coef[2] / hmin
    return -2.0 * c / (1.0 + b * b) ** 1.5, MODE_MIXED


@njit(cache=True)
def _neighbor_mean(kappa, mode, i, j, nx, ny, px, py):
    tot = 0.0
    cnt = 0
    for di in range(-1, 2):
        for dj in range(-1, 2):
            if di == 0 and dj == 0:
                continue
            ii = _wrap(i + di, nx, px)
            jj = _wrap(j + dj, ny, py)
            if mode[ii, jj] == MODE_LHF or mode[ii, jj] == MODE_MIXED:
                tot += kappa[ii, jj]
                cnt += 1
    if cnt == 0:
        return 0.0, MODE_INVALID
    return tot / cnt, MODE_NEIGHBOR


@njit(cache=True)
def _ghf_all(alpha, hx, hy, px, py, kappa, mode):
    nx, ny = alpha.shape
    for i in range(nx):
        for j in range(ny):
            a = alpha[i, j]
            if a <= PURE_EPS or a >= 1.0 - PURE_EPS:
                kappa[i, j] = 0.0
                mode[i, j] = MODE_INVALID
                continue
            k, md = _ghf_cell(alpha, i, j, nx, ny, px, py, hx, hy)
            kappa[i, j] = k
            mode[i, j] = md
    # last resort: mean of neighbouring height-function estimates
    for i in range(nx):
        for j in range(ny):
            a = alpha[i, j]
            if mode[i, j] == MODE_INVALID and a > PURE_EPS and a < 1.0 - PURE_EPS:
                kappa[i, j], mode[i, j] = _neighbor_mean(kappa, mode, i, j, nx, ny, px, py)


# ---------------------------------------------------------------------------
# public API


def _direction(direction) -> tuple[int, int]:
    if isinstance(direction, str):
        table = {"+y": (1, 1), "-y": (1, -1), "+x": (0, 1), "-x": (0, -1)}
        if direction not in table:
            raise ValueError("direction must be one of +x, -x, +y, -y")
        return table[direction]
    axis, orient = direction
    if axis not in (0, 1) or orient not in (1, -1):
        raise ValueError("direction must be (axis in {0, 1}, orientation in {+1, -1})")
    return int(axis), int(orient)


def averaged_heights(block: np.ndarray, direction, h: float) -> list[HeightSample]:
    """Heights of the three columns of a 7 x 3 block.

    ``block[m, k]`` is the fraction at step m (0..6, increasing coordinate
    along the height axis) in column k.  ``direction`` is "+y" for liquid
    below, "-y" for liquid above (and likewise for x), or (axis, orientation).
    Heights are measured from the centre of the middle row, along the axis.
    """
    axis, orient = _direction(direction)
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (2 * N_H + 1, 3):
        raise ValueError("block must have shape (7, 3)")
    # reuse the grid kernel on a 3 x 7 (or 7 x 3) field
    field = block.T.copy() if axis == 1 else block.copy()
    out = []
    for k in range(3):
        if axis == 1:
            H, v = _column(field, 1, N_H, k - 1, 1, orient, 3, 2 * N_H + 1, False, False, h)
        else:
            H, v = _column(field, N_H, 1, k - 1, 0, orient, 2 * N_H + 1, 3, False, False, h)
        out.append(HeightSample(float(H), bool(v), axis, orient))
    return out


def lhf_curvature(heights: list[HeightSample], h: float) -> float:
    """H'' (1 + H'^2)^(-3/2) from three heights spaced ``h`` apart.

    This is the curvature in the height-function frame; :func:`ghf_curvature`
    maps it to the cut convention.
    """
    if len(heights) != 3 or not all(s.valid for s in heights):
        raise ValueError("lhf_curvature needs three valid heights")
    return float(_lhf(heights[0].value, heights[1].value, heights[2].value, h))


def ghf_field(alpha: np.ndarray, hx: float, hy: float,
              periodic: tuple[bool, bool] = (False, False)) -> CurvatureField:
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    kappa = np.zeros(alpha.shape)
    mode = np.zeros(alpha.shape, dtype=np.int64)
    _ghf_all(alpha, float(hx), float(hy), bool(periodic[0]), bool(periodic[1]), kappa, mode)
    return CurvatureField(kappa, mode != MODE_INVALID, mode)


def ghf_curvature(alpha: np.ndarray, index: tuple[int, int], hx: float, hy: float | None = None,
                  periodic: tuple[bool, bool] = (False, False)) -> tuple[float, bool]:
    """Curvature of interface cell ``index``; returns (kappa, valid)."""
    hy = hx if hy is None else hy
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    nx, ny = alpha.shape
    i, j = int(index[0]), int(index[1])
    px, py = bool(periodic[0]), bool(periodic[1])
    k, md = _ghf_cell(alpha, i, j, nx, ny, px, py, float(hx), float(hy))
    if md == MODE_INVALID:
        # neighbours only, evaluated on demand
        kap = np.zeros((nx, ny))
        mode = np.zeros((nx, ny), dtype=np.int64)
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ii = int(_wrap(i + di, nx, px))
                jj = int(_wrap(j + dj, ny, py))
                a = alpha[ii, jj]
                if PURE_EPS < a < 1.0 - PURE_EPS:
                    kap[ii, jj], mode[ii, jj] = _ghf_cell(alpha, ii, jj, nx, ny, px, py, float(hx), float(hy))
        k, md = _neighbor_mean(kap, mode, i, j, nx, ny, px, py)
    return float(k), md != MODE_INVALID
