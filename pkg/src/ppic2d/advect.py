"""Lagrangian-remap advection of volume fractions and liquid first moments.

Each cell's preimage is the quadrilateral through its four corners traced
backward over one step with Heun's method.  The new liquid volume is the
volume of the reconstructed liquid inside that quadrilateral, collected from
the 3x3 block of cells it can overlap under the CFL restriction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .curvature import ghf_field
from .fields import Grid
from .geom2d import Moments2, Polygon, _clip_box, _clip_local, _poly_moments
from .reconstruct import PURE_EPS, Method, ReconstructionField, _wrap, reconstruct_field

__all__ = [
    "AdvectionState",
    "StepReport",
    "CFLViolation",
    "trace_point_backward",
    "trace_point_forward",
    "build_preimage",
    "remap_fraction",
    "remap_moments",
    "advect_centroid",
    "reconstruct_state",
    "advance",
]


class CFLViolation(RuntimeError):
    """A preimage left the 3x3 block of its cell or folded over."""


@dataclass
class AdvectionState:
    """Fractions, absolute liquid first moments (MOF family) and time."""

    alpha: np.ndarray
    m1: np.ndarray | None = None
    t: float = 0.0
    clamped: float = 0.0

    def copy(self) -> "AdvectionState":
        return AdvectionState(self.alpha.copy(), None if self.m1 is None else self.m1.copy(),
                              self.t, self.clamped)


@dataclass
class StepReport:
    recon: ReconstructionField
    clamped: float
    volume_residual: float
    cfl_violations: int = 0
    nonconvex: int = 0
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tracing


def trace_point_backward(x, velocity, t: float, delta: float):
    """Heun step of dx/dt = u from t + delta back to t.

    ``x`` is a pair of coordinate arrays (or scalars); returns the same shape.
    """
    px = np.asarray(x[0], dtype=np.float64)
    py = np.asarray(x[1], dtype=np.float64)
    u1, v1 = velocity(t + delta, px, py)
    qx = px - delta * u1
    qy = py - delta * v1
    u2, v2 = velocity(t, qx, qy)
    return px - 0.5 * delta * (u1 + u2), py - 0.5 * delta * (v1 + v2)


def trace_point_forward(x, velocity, t: float, delta: float):
    """Heun step of dx/dt = u from t to t + delta."""
    px = np.asarray(x[0], dtype=np.float64)
    py = np.asarray(x[1], dtype=np.float64)
    u1, v1 = velocity(t, px, py)
    qx = px + delta * u1
    qy = py + delta * v1
    u2, v2 = velocity(t + delta, qx, qy)
    return px + 0.5 * delta * (u1 + u2), py + 0.5 * delta * (v1 + v2)


def _traced_corners(grid: Grid, velocity, t: float, delta: float):
    X, Y = grid.corners()
    return trace_point_backward((X, Y), velocity, t, delta)


def build_preimage(index: tuple[int, int], grid: Grid, velocity, t: float, delta: float) -> Polygon:
    """Backward-traced corners of cell ``index`` joined by straight edges."""
    i, j = index
    x0, y0 = grid.origin[0] + i * grid.hx, grid.origin[1] + j * grid.hy
    cx = np.array([x0, x0 + grid.hx, x0 + grid.hx, x0])
    cy = np.array([y0, y0, y0 + grid.hy, y0 + grid.hy])
    px, py = trace_point_backward((cx, cy), velocity, t, delta)
    v = np.column_stack([px, py])
    cross = []
    for k in range(4):
        a, b, c = v[k], v[(k + 1) % 4], v[(k + 2) % 4]
        cross.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    if min(cross) <= 0.0:
        raise CFLViolation(f"preimage of cell {index} is not convex")
    return Polygon(v)


# ---------------------------------------------------------------------------
# remap kernel


@njit(cache=True)
def _neighbor_cut(theta, kappa, phi, ii, jj, i_raw, j_raw, nx, ny, px, py):
    """Cut of a neighbour, reflected when it is a mirrored ghost cell."""
    th = theta[ii, jj]
    fx = (not px) and (i_raw < 0 or i_raw >= nx)
    fy = (not py) and (j_raw < 0 or j_raw >= ny)
    if fx and fy:
        th = th + math.pi
    elif fx:
        th = math.pi - th
    elif fy:
        th = -th
    return math.cos(th), math.sin(th), kappa[ii, jj], phi[ii, jj]


@njit(cache=True)
def _remap_cell(i, j, alpha, theta, kappa, phi, mixed, CX, CY, hx, hy, px, py,
                xs, ys, bx, by, tx, ty, S, out):
    """out = (m0, mx, my, preimage area, cfl flag, convex flag); moments relative to the cell centre."""
    nx, ny = alpha.shape
    xc = (i + 0.5) * hx
    yc = (j + 0.5) * hy
    xs[0] = CX[i, j] - xc
    ys[0] = CY[i, j] - yc
    xs[1] = CX[i + 1, j] - xc
    ys[1] = CY[i + 1, j] - yc
    xs[2] = CX[i + 1, j + 1] - xc
    ys[2] = CY[i + 1, j + 1] - yc
    xs[3] = CX[i, j + 1] - xc
    ys[3] = CY[i, j + 1] - yc
    pa, pmx, pmy = _poly_moments(xs, ys, 4)
    out[3] = pa
    out[4] = 0.0
    out[5] = 0.0
    for k in range(4):
        # corners may sit on the block edge (courant 1)
        if abs(xs[k]) > 1.5 * hx * (1.0 + 1e-9) or abs(ys[k]) > 1.5 * hy * (1.0 + 1e-9):
            out[4] = 1.0
        k1 = (k + 1) % 4
        k2 = (k + 2) % 4
        cr = (xs[k1] - xs[k]) * (ys[k2] - ys[k1]) - (ys[k1] - ys[k]) * (xs[k2] - xs[k1])
        if cr <= 0.0:
            out[5] = 1.0
    full = True
    empty = True
    for di in range(-1, 2):
        for dj in range(-1, 2):
            a = alpha[_wrap(i + di, nx, px), _wrap(j + dj, ny, py)]
            if a > PURE_EPS:
                empty = False
            if a < 1.0 - PURE_EPS:
                full = False
    if empty:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    if full:
        out[0] = pa
        out[1] = pmx
        out[2] = pmy
        return
    m0 = 0.0
    mx = 0.0
    my = 0.0
    for di in range(-1, 2):
        for dj in range(-1, 2):
            ir = i + di
            jr = j + dj
            ii = _wrap(ir, nx, px)
            jj = _wrap(jr, ny, py)
            a = alpha[ii, jj]
            if a <= PURE_EPS:
                continue
            n = _clip_box(xs, ys, 4, di * hx - 0.5 * hx, di * hx + 0.5 * hx,
                          dj * hy - 0.5 * hy, dj * hy + 0.5 * hy, bx, by, tx, ty)
            if n == 0:
                continue
            if a >= 1.0 - PURE_EPS or not mixed[ii, jj]:
                b0, b1, b2 = _poly_moments(bx, by, n)
                m0 += b0
                mx += b1
                my += b2
                continue
            sx = di * hx
            sy = dj * hy
            for k in range(n):
                bx[k] -= sx
                by[k] -= sy
            c, s, kap, ph = _neighbor_cut(theta, kappa, phi, ii, jj, ir, jr, nx, ny, px, py)
            b0, b1, b2 = _clip_local(bx, by, n, c, s, kap, ph, S)
            m0 += b0
            mx += b1 + sx * b0
            my += b2 + sy * b0
    out[0] = m0
    out[1] = mx
    out[2] = my


@njit(cache=True)
def _remap_all(alpha, theta, kappa, phi, mixed, CX, CY, hx, hy, px, py, m0o, m1o, areao, flags):
    """CX, CY are traced corners relative to the grid origin."""
    nx, ny = alpha.shape
    xs = np.empty(4)
    ys = np.empty(4)
    bx = np.empty(16)
    by = np.empty(16)
    tx = np.empty(16)
    ty = np.empty(16)
    S = np.zeros(6)
    out = np.zeros(6)
    for i in range(nx):
        for j in range(ny):
            _remap_cell(i, j, alpha, theta, kappa, phi, mixed, CX, CY, hx, hy, px, py,
                        xs, ys, bx, by, tx, ty, S, out)
            m0o[i, j] = out[0]
            m1o[i, j, 0] = out[1]
            m1o[i, j, 1] = out[2]
            areao[i, j] = out[3]
            if out[4] != 0.0:
                flags[0] += 1
            if out[5] != 0.0:
                flags[1] += 1


def _remap(grid: Grid, alpha, recon: ReconstructionField, CX, CY):
    """Liquid volume, first moment (relative to cell centres) and area of every preimage."""
    nx, ny = grid.nx, grid.ny
    m0 = np.zeros((nx, ny))
    m1 = np.zeros((nx, ny, 2))
    area = np.zeros((nx, ny))
    flags = np.zeros(2, dtype=np.int64)
    _remap_all(np.ascontiguousarray(alpha, dtype=np.float64), recon.theta, recon.kappa, recon.phi,
               recon.mixed, np.ascontiguousarray(CX - grid.origin[0]),
               np.ascontiguousarray(CY - grid.origin[1]), float(grid.hx), float(grid.hy),
               bool(grid.periodic[0]), bool(grid.periodic[1]), m0, m1, area, flags)
    return m0, m1, area, int(flags[0]), int(flags[1])


def _single_cell_remap(preimage: Polygon, index, grid: Grid, alpha, recon: ReconstructionField):
    i, j = index
    v = preimage.vertices
    if len(v) != 4:
        raise ValueError("preimage must have four vertices")
    # embed the four corners in a corner array for the kernel
    CX = np.zeros((grid.nx + 1, grid.ny + 1))
    CY = np.zeros((grid.nx + 1, grid.ny + 1))
    CX[i, j], CY[i, j] = v[0] - grid.origin
    CX[i + 1, j], CY[i + 1, j] = v[1] - grid.origin
    CX[i + 1, j + 1], CY[i + 1, j + 1] = v[2] - grid.origin
    CX[i, j + 1], CY[i, j + 1] = v[3] - grid.origin
    out = np.zeros(6)
    _remap_cell(i, j, np.ascontiguousarray(alpha, dtype=np.float64), recon.theta, recon.kappa,
                recon.phi, recon.mixed, CX, CY, float(grid.hx), float(grid.hy),
                bool(grid.periodic[0]), bool(grid.periodic[1]),
                np.empty(4), np.empty(4), np.empty(16), np.empty(16), np.empty(16), np.empty(16),
                np.zeros(6), out)
    if out[4] != 0.0:
        raise CFLViolation(f"preimage of cell {index} leaves its 3x3 block")
    xc, yc = grid.cell_center(i, j)
    return Moments2(out[0], (out[1] + xc * out[0], out[2] + yc * out[0])), out[3]


def remap_moments(preimage: Polygon, index: tuple[int, int], grid: Grid, alpha: np.ndarray,
                  recon: ReconstructionField) -> Moments2:
    """Moments of preimage ∩ reconstructed liquid, gathered over the 3x3 block of ``index``.

    The preimage vertices must be given in the order lower-left, lower-right,
    upper-right, upper-left of the cell they came from.
    """
    return _single_cell_remap(preimage, index, grid, alpha, recon)[0]


def remap_fraction(preimage: Polygon, index: tuple[int, int], grid: Grid, alpha: np.ndarray,
                   recon: ReconstructionField) -> float:
    """New volume fraction of cell ``index``: liquid volume over preimage area, clamped to [0, 1]."""
    mom, area = _single_cell_remap(preimage, index, grid, alpha, recon)
    return float(min(max(mom.m0 / area, 0.0), 1.0)) if area > 0.0 else 0.0


def advect_centroid(moments: Moments2, velocity, t: float, delta: float, new_m0: float):
    """Reference first moment after moving the liquid centroid forward with Heun.

    Returns None when the cell empties.
    """
    if new_m0 <= 0.0 or moments.m0 <= 0.0:
        return None
    cx, cy = moments.m1[0] / moments.m0, moments.m1[1] / moments.m0
    nx, ny = trace_point_forward((cx, cy), velocity, t, delta)
    return (float(nx) * new_m0, float(ny) * new_m0)


# ---------------------------------------------------------------------------
# time step


def reconstruct_state(state: AdvectionState, method: Method | str, grid: Grid,
                      tolerance: str = "tight", length_scale: float = 1.0):
    """Reconstruct every mixed cell; returns (recon, curvature field or None)."""
    method = Method.parse(method) if isinstance(method, str) else Method(method)
    curv = None
    kappa = kvalid = None
    if method.uses_given_curvature or method == Method.PROST:
        curv = ghf_field(state.alpha, grid.hx, grid.hy, grid.periodic)
        kappa, kvalid = curv.kappa, curv.valid
    recon = reconstruct_field(method, state.alpha, grid.hx, grid.hy, grid.periodic,
                              m1=state.m1 if method.uses_moments else None,
                              kappa=kappa, kappa_valid=kvalid, length_scale=length_scale,
                              tolerance=tolerance, origin=grid.origin)
    return recon, curv


def volume_residual(grid: Grid, alpha: np.ndarray, recon: ReconstructionField) -> float:
    """max |m0(reconstruction) - alpha * cellArea| / cellArea over reconstructed cells."""
    from .fields import reconstructed_moments

    m0, _ = reconstructed_moments(grid, alpha, recon)
    if not np.any(recon.mixed):
        return 0.0
    return float(np.max(np.abs(m0[recon.mixed] - alpha[recon.mixed] * grid.cell_area)) / grid.cell_area)


def advance(state: AdvectionState, method: Method | str, velocity, delta: float, grid: Grid,
            tolerance: str = "tight", length_scale: float = 1.0,
            recon: ReconstructionField | None = None) -> tuple[AdvectionState, StepReport]:
    """One remap step from state.t to state.t + delta.

    Raises CFLViolation when a preimage leaves the 3x3 block of its cell or
    is not convex.  ``recon`` may carry a reconstruction of ``state`` that
    was already computed.
    """
    method = Method.parse(method) if isinstance(method, str) else Method(method)
    if method.uses_moments and state.m1 is None:
        raise ValueError(f"{method.name} needs first moments in the state")
    if recon is None:
        recon, _ = reconstruct_state(state, method, grid, tolerance, length_scale)
    resid = volume_residual(grid, state.alpha, recon)
    CX, CY = _traced_corners(grid, velocity, state.t, delta)
    m0, m1rel, parea, ncfl, nconv = _remap(grid, state.alpha, recon, CX, CY)
    if ncfl or nconv:
        raise CFLViolation(f"{ncfl} preimages leave their 3x3 block, {nconv} are not convex")
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(parea > 0.0, m0 / parea, 0.0)
    alpha = np.clip(raw, 0.0, 1.0)
    clamped = float(np.sum(np.abs(raw - alpha).ravel()) * grid.cell_area)
    new_m1 = None
    if method.uses_moments:
        Xc, Yc = grid.centers()
        new_m1 = np.zeros_like(m1rel)
        live = (m0 > 0.0) & (alpha > 0.0)
        cx = Xc[live] + m1rel[live, 0] / m0[live]
        cy = Yc[live] + m1rel[live, 1] / m0[live]
        fx, fy = trace_point_forward((cx, cy), velocity, state.t, delta)
        newm0 = alpha[live] * grid.cell_area
        new_m1[live, 0] = fx * newm0
        new_m1[live, 1] = fy * newm0
    new = AdvectionState(alpha, new_m1, state.t + delta, state.clamped + clamped)
    report = StepReport(recon, clamped, resid, ncfl, nconv,
                        {"evaluations": recon.mean_evaluations, "brent": recon.mean_brent,
                         "failed": recon.n_failed})
    return new, report
