"""Grids, analytic shapes and velocities, exact moments and error norms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geom2d import Polygon, _clip_local, _poly_moments
from .reconstruct import PURE_EPS

__all__ = [
    "Grid",
    "Circle",
    "Flower",
    "HalfPlane",
    "VortexVelocity",
    "UniformVelocity",
    "StaggeredVelocity",
    "init_moments_exact",
    "vortex_velocity",
    "cfl_timestep",
    "reconstructed_moments",
    "symmdiff_per_cell",
    "ErrorReport",
    "error_norms",
]

DEFAULT_TOL = 1e-12
MAX_DEPTH = 24


@dataclass(frozen=True)
class Grid:
    """Uniform rectilinear grid; cell (i, j) is origin + [i hx, (i+1) hx] x [j hy, (j+1) hy]."""

    origin: tuple[float, float]
    nx: int
    ny: int
    hx: float
    hy: float
    periodic: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")
        if not (self.hx > 0.0 and self.hy > 0.0):
            raise ValueError("cell sizes must be positive")

    @classmethod
    def square(cls, n: int, lo: float = 0.0, hi: float = 1.0, periodic: bool = False) -> "Grid":
        h = (hi - lo) / n
        return cls((lo, lo), n, n, h, h, (periodic, periodic))

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.nx * self.hx, y0 + self.ny * self.hy

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + (i + 0.5) * self.hx, self.origin[1] + (j + 0.5) * self.hy)

    def cell_box(self, i: int, j: int) -> Polygon:
        x0 = self.origin[0] + i * self.hx
        y0 = self.origin[1] + j * self.hy
        return Polygon.box(x0, y0, x0 + self.hx, y0 + self.hy)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.hx
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def corners(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + np.arange(self.nx + 1) * self.hx
        y = self.origin[1] + np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")


# ---------------------------------------------------------------------------
# shapes

SHAPE_CIRCLE = 0
SHAPE_FLOWER = 1
SHAPE_HALFPLANE = 2


class _Shape:
    kind: int
    params: np.ndarray

    def level(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.vectorize(lambda a, b: _shape_q(self.kind, self.params, a, b), otypes=[float])(x, y)
        if not np.all(np.isfinite(out)):
            raise ValueError("non-finite level-set value")
        return out

    def exact_curvature(self) -> float | None:
        return None


@dataclass(frozen=True)
class Circle(_Shape):
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")

    @property
    def kind(self) -> int:
        return SHAPE_CIRCLE

    @property
    def params(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1], self.radius], dtype=np.float64)

    def area(self) -> float:
        return math.pi * self.radius ** 2

    def exact_curvature(self) -> float:
        return 1.0 / self.radius


@dataclass(frozen=True)
class Flower(_Shape):
    """r <= R (1 + amplitude sin(phase + petals * angle)) about ``center``."""

    center: tuple[float, float] = (0.01, 0.03)
    radius: float = 0.3
    amplitude: float = 0.1
    petals: int = 5
    phase: float = 0.1

    def __post_init__(self):
        if not self.radius > 0.0 or not 0.0 <= self.amplitude < 1.0:
            raise ValueError("flower needs R > 0 and 0 <= amplitude < 1")

    @property
    def kind(self) -> int:
        return SHAPE_FLOWER

    @property
    def params(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1], self.radius, self.amplitude,
                         float(self.petals), self.phase], dtype=np.float64)

    def area(self) -> float:
        return math.pi * self.radius ** 2 * (1.0 + 0.5 * self.amplitude ** 2)


@dataclass(frozen=True)
class HalfPlane(_Shape):
    """Liquid where (cos theta, sin theta) . (x - anchor) <= offset."""

    theta: float
    offset: float = 0.0
    anchor: tuple[float, float] = (0.0, 0.0)

    @property
    def kind(self) -> int:
        return SHAPE_HALFPLANE

    @property
    def params(self) -> np.ndarray:
        return np.array([self.anchor[0], self.anchor[1], math.cos(self.theta), math.sin(self.theta),
                         self.offset], dtype=np.float64)

    def exact_curvature(self) -> float:
        return 0.0


@njit(cache=True)
def _shape_q(kind, prm, x, y):
    if kind == SHAPE_CIRCLE:
        return math.hypot(x - prm[0], y - prm[1]) - prm[2]
    if kind == SHAPE_FLOWER:
        dx = x - prm[0]
        dy = y - prm[1]
        return math.hypot(dx, dy) - prm[2] * (1.0 + prm[3] * math.sin(prm[5] + prm[4] * math.atan2(dy, dx)))
    return prm[2] * (x - prm[0]) + prm[3] * (y - prm[1]) - prm[4]


@njit(cache=True)
def _box_pure(kind, prm, bx0, by0, bx1, by1):
    """+1 when the box is certainly liquid, -1 certainly gas, 0 otherwise."""
    cx = 0.5 * (bx0 + bx1)
    cy = 0.5 * (by0 + by1)
    rb = 0.5 * math.hypot(bx1 - bx0, by1 - by0)
    qc = _shape_q(kind, prm, cx, cy)
    if kind == SHAPE_FLOWER:
        # radial range of the box against the annulus holding the boundary
        nxp = min(max(prm[0], bx0), bx1)
        nyp = min(max(prm[1], by0), by1)
        rmin = math.hypot(nxp - prm[0], nyp - prm[1])
        fx = bx0 if abs(bx0 - prm[0]) > abs(bx1 - prm[0]) else bx1
        fy = by0 if abs(by0 - prm[1]) > abs(by1 - prm[1]) else by1
        rmax = math.hypot(fx - prm[0], fy - prm[1])
        if rmax < prm[2] * (1.0 - prm[3]):
            return 1
        if rmin > prm[2] * (1.0 + prm[3]):
            return -1
        if rmin <= 0.0:
            return 0
        lip = math.sqrt(1.0 + (prm[2] * prm[3] * prm[4] / rmin) ** 2)
    else:
        lip = 1.0
    if qc > lip * rb:
        return -1
    if qc < -lip * rb:
        return 1
    return 0


@njit(cache=True)
def _osculating(kind, prm, x, y):
    """Boundary point on the ray through (x, y) with outward normal and curvature."""
    if kind == SHAPE_HALFPLANE:
        d = prm[2] * (x - prm[0]) + prm[3] * (y - prm[1]) - prm[4]
        return x - d * prm[2], y - d * prm[3], prm[2], prm[3], 0.0
    dx = x - prm[0]
    dy = y - prm[1]
    t = math.atan2(dy, dx)
    ct = math.cos(t)
    st = math.sin(t)
    if kind == SHAPE_CIRCLE:
        R = prm[2]
        return prm[0] + R * ct, prm[1] + R * st, ct, st, 1.0 / R
    R = prm[2]
    A = prm[3]
    P = prm[4]
    arg = prm[5] + P * t
    rho = R * (1.0 + A * math.sin(arg))
    d1 = R * A * P * math.cos(arg)
    d2 = -R * A * P * P * math.sin(arg)
    tx = d1 * ct - rho * st
    ty = d1 * st + rho * ct
    tn = math.hypot(tx, ty)
    kap = (rho * rho + 2.0 * d1 * d1 - rho * d2) / (rho * rho + d1 * d1) ** 1.5
    return prm[0] + rho * ct, prm[1] + rho * st, ty / tn, -tx / tn, kap


@njit(cache=True)
def _box_estimate(kind, prm, bx0, by0, bx1, by1, xc, yc, xs, ys, S):
    """Moments of box ∩ liquid, relative to (xc, yc), cut by the osculating parabola.

    The fourth value bounds the area error: the largest level-set value on
    the parabola over the box's tangential extent times that extent.  The
    shapes have |grad q| >= 1, so |q| bounds the normal gap.
    """
    px, py, ex, ey, kap = _osculating(kind, prm, 0.5 * (bx0 + bx1), 0.5 * (by0 + by1))
    xs[0] = bx0 - px
    ys[0] = by0 - py
    xs[1] = bx1 - px
    ys[1] = by0 - py
    xs[2] = bx1 - px
    ys[2] = by1 - py
    xs[3] = bx0 - px
    ys[3] = by1 - py
    W = 0.0
    for k in range(4):
        W = max(W, abs(ex * ys[k] - ey * xs[k]))
    gap = 0.0
    for f in (-1.0, -0.5, 0.5, 1.0):
        w = f * W
        u = -0.5 * kap * w * w
        gap = max(gap, abs(_shape_q(kind, prm, px + u * ex - w * ey, py + u * ey + w * ex)))
    m0, mx, my = _clip_local(xs, ys, 4, ex, ey, kap, 0.0, S)
    return m0, mx + (px - xc) * m0, my + (py - yc) * m0, 2.0 * W * gap


@njit(cache=True)
def _pure_moments(sign, bx0, by0, bx1, by1, xc, yc):
    if sign < 0:
        return 0.0, 0.0, 0.0
    a = (bx1 - bx0) * (by1 - by0)
    return a, a * (0.5 * (bx0 + bx1) - xc), a * (0.5 * (by0 + by1) - yc)


@njit(cache=True)
def _init_cell(kind, prm, x0, y0, hx, hy, tol, max_depth, stack):
    """Moments of the liquid in one cell, first moment relative to the cell centre.

    Depth-first quadtree: a box is accepted when it is provably pure or when
    the error bound of its parabolic cut fits its share of the budget.
    """
    xc = x0 + 0.5 * hx
    yc = y0 + 0.5 * hy
    xs = np.empty(16)
    ys = np.empty(16)
    S = np.zeros(6)
    area = hx * hy
    m0 = 0.0
    mx = 0.0
    my = 0.0
    stack[0, 0] = x0
    stack[0, 1] = y0
    stack[0, 2] = 0.0
    top = 1
    while top > 0:
        top -= 1
        bx0 = stack[top, 0]
        by0 = stack[top, 1]
        lev = int(stack[top, 2])
        sx = hx * 0.5 ** lev
        sy = hy * 0.5 ** lev
        p = _box_pure(kind, prm, bx0, by0, bx0 + sx, by0 + sy)
        if p != 0:
            a0, a1, a2 = _pure_moments(p, bx0, by0, bx0 + sx, by0 + sy, xc, yc)
        else:
            a0, a1, a2, bound = _box_estimate(kind, prm, bx0, by0, bx0 + sx, by0 + sy, xc, yc, xs, ys, S)
            if bound > tol * area * 0.5 ** lev and lev < max_depth:
                for q in range(4):
                    stack[top, 0] = bx0 + (q % 2) * 0.5 * sx
                    stack[top, 1] = by0 + (q // 2) * 0.5 * sy
                    stack[top, 2] = lev + 1
                    top += 1
                continue
        m0 += a0
        mx += a1
        my += a2
    return m0, mx, my


@njit(cache=True)
def _init_all(kind, prm, ox, oy, nx, ny, hx, hy, tol, max_depth, alpha, m1):
    stack = np.empty((3 * max_depth + 8, 3))
    area = hx * hy
    for i in range(nx):
        for j in range(ny):
            x0 = ox + i * hx
            y0 = oy + j * hy
            m0, mx, my = _init_cell(kind, prm, x0, y0, hx, hy, tol, max_depth, stack)
            a = m0 / area
            alpha[i, j] = min(max(a, 0.0), 1.0)
            m1[i, j, 0] = mx + (x0 + 0.5 * hx) * m0
            m1[i, j, 1] = my + (y0 + 0.5 * hy) * m0


def init_moments_exact(shape: _Shape, grid: Grid, tol: float = DEFAULT_TOL,
                       max_depth: int = MAX_DEPTH) -> tuple[np.ndarray, np.ndarray]:
    """Volume fractions and absolute liquid first moments of ``shape`` on ``grid``.

    Cells are subdivided as a quadtree.  Boxes proven pure by a Lipschitz
    bound are exact; the rest are cut by the osculating parabola of the
    boundary point on the ray through the box centre, and a box is refined
    until its children agree with it to ``tol * cellArea`` scaled by the box
    size.
    """
    if not tol >= 1e-13:
        raise ValueError("tol must be at least 1e-13")
    prm = shape.params
    if not np.all(np.isfinite(prm)):
        raise ValueError("non-finite shape parameters")
    alpha = np.zeros((grid.nx, grid.ny))
    m1 = np.zeros((grid.nx, grid.ny, 2))
    _init_all(shape.kind, prm, float(grid.origin[0]), float(grid.origin[1]), grid.nx, grid.ny,
              float(grid.hx), float(grid.hy), float(tol), int(max_depth), alpha, m1)
    return alpha, m1


# ---------------------------------------------------------------------------
# velocities


def vortex_velocity(t: float, x, y, period: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Velocity of the reversing vortex; the perpendicular gradient of its stream function."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ct = math.cos(math.pi * t / period)
    u = -ct * np.sin(np.pi * x) ** 2 * np.sin(2.0 * np.pi * y)
    v = -ct * np.sin(2.0 * np.pi * x) * np.cos(np.pi * y) ** 2
    return u, v


@dataclass(frozen=True)
class VortexVelocity:
    period: float = 1.0

    def __call__(self, t, x, y):
        return vortex_velocity(t, x, y, self.period)


@dataclass(frozen=True)
class UniformVelocity:
    u: float
    v: float = 0.0

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return np.full(np.broadcast(x, y).shape, float(self.u)), np.full(np.broadcast(x, y).shape, float(self.v))


class StaggeredVelocity:
    """Samples another provider on a staggered grid and interpolates.

    u lives on x-faces, v on y-faces; values are bilinear in space and linear
    in time between samples at ``start + k * interval``.  Periodic axes wrap,
    otherwise positions are clamped to the face grid.
    """

    def __init__(self, base, grid: Grid, interval: float, start: float = 0.0):
        if not interval > 0.0:
            raise ValueError("sample interval must be positive")
        self.base = base
        self.grid = grid
        self.interval = float(interval)
        self.start = float(start)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _faces(self, k: int):
        if k not in self._cache:
            g = self.grid
            t = self.start + k * self.interval
            xu = g.origin[0] + np.arange(g.nx + 1) * g.hx
            yu = g.origin[1] + (np.arange(g.ny) + 0.5) * g.hy
            XU, YU = np.meshgrid(xu, yu, indexing="ij")
            xv = g.origin[0] + (np.arange(g.nx) + 0.5) * g.hx
            yv = g.origin[1] + np.arange(g.ny + 1) * g.hy
            XV, YV = np.meshgrid(xv, yv, indexing="ij")
            u = self.base(t, XU, YU)[0]
            v = self.base(t, XV, YV)[1]
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[k] = (u, v)
        return self._cache[k]

    @staticmethod
    def _bilinear(f, fx, fy, periodic):
        nx, ny = f.shape
        ix = np.floor(fx).astype(np.int64)
        iy = np.floor(fy).astype(np.int64)
        tx = fx - ix
        ty = fy - iy

        def idx(i, n, per):
            return np.mod(i, n) if per else np.clip(i, 0, n - 1)

        i0 = idx(ix, nx, periodic[0])
        i1 = idx(ix + 1, nx, periodic[0])
        j0 = idx(iy, ny, periodic[1])
        j1 = idx(iy + 1, ny, periodic[1])
        return ((1 - tx) * (1 - ty) * f[i0, j0] + tx * (1 - ty) * f[i1, j0]
                + (1 - tx) * ty * f[i0, j1] + tx * ty * f[i1, j1])

    def __call__(self, t, x, y):
        g = self.grid
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        r = (t - self.start) / self.interval
        k = int(math.floor(r + 1e-12))
        s = r - k
        per = g.periodic
        fxu = (x - g.origin[0]) / g.hx
        fyu = (y - g.origin[1]) / g.hy - 0.5
        fxv = (x - g.origin[0]) / g.hx - 0.5
        fyv = (y - g.origin[1]) / g.hy
        out = []
        for kk in (k, k + 1):
            u, v = self._faces(kk)
            # periodic x-faces hold a duplicated last column; drop it for wrapping
            uu = u[:-1] if per[0] else u
            vv = v[:, :-1] if per[1] else v
            out.append((self._bilinear(uu, fxu, fyu, per), self._bilinear(vv, fxv, fyv, per)))
        return ((1 - s) * out[0][0] + s * out[1][0], (1 - s) * out[0][1] + s * out[1][1])


def cfl_timestep(grid: Grid, velocity, t: float, courant: float = 1.0,
                 cap: float | None = None) -> float:
    """courant * min(hx, hy) / U_max with U_max sampled at the grid corners."""
    if not 0.0 < courant <= 1.0:
        raise ValueError("courant must lie in (0, 1]")
    X, Y = grid.corners()
    u, v = velocity(t, X, Y)
    umax = float(np.max(np.hypot(u, v)))
    if umax == 0.0:
        if cap is None:
            raise ValueError("velocity vanishes everywhere and no cap was given")
        return float(cap)
    dt = courant * min(grid.hx, grid.hy) / umax
    return dt if cap is None else min(dt, float(cap))


# ---------------------------------------------------------------------------
# error norms


@njit(cache=True)
def _recon_moments(alpha, theta, kappa, phi, mixed, ox, oy, hx, hy, m0o, m1o):
    nx, ny = alpha.shape
    xs = np.empty(4)
    ys = np.empty(4)
    S = np.zeros(6)
    area = hx * hy
    for i in range(nx):
        for j in range(ny):
            xc = ox + (i + 0.5) * hx
            yc = oy + (j + 0.5) * hy
            if mixed[i, j]:
                xs[0] = -0.5 * hx
                ys[0] = -0.5 * hy
                xs[1] = 0.5 * hx
                ys[1] = -0.5 * hy
                xs[2] = 0.5 * hx
                ys[2] = 0.5 * hy
                xs[3] = -0.5 * hx
                ys[3] = 0.5 * hy
                m0, mx, my = _clip_local(xs, ys, 4, math.cos(theta[i, j]), math.sin(theta[i, j]),
                                         kappa[i, j], phi[i, j], S)
            elif alpha[i, j] >= 1.0 - PURE_EPS:
                m0, mx, my = area, 0.0, 0.0
            else:
                m0, mx, my = 0.0, 0.0, 0.0
            m0o[i, j] = m0
            m1o[i, j, 0] = mx + xc * m0
            m1o[i, j, 1] = my + yc * m0


def reconstructed_moments(grid: Grid, alpha: np.ndarray, recon) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the reconstructed liquid in each cell (absolute first moments)."""
    m0 = np.zeros((grid.nx, grid.ny))
    m1 = np.zeros((grid.nx, grid.ny, 2))
    _recon_moments(np.ascontiguousarray(alpha, dtype=np.float64), recon.theta, recon.kappa, recon.phi,
                   recon.mixed, float(grid.origin[0]), float(grid.origin[1]), float(grid.hx),
                   float(grid.hy), m0, m1)
    return m0, m1


_GK_X = np.array([0.991455371120812639, 0.949107912342758525, 0.864864423359769073,
                  0.741531185599394440, 0.586087235467691130, 0.405845151377397167,
                  0.207784955007898468, 0.0])
_GK_WK = np.array([0.022935322010529225, 0.063092092629978553, 0.104790010322250184,
                   0.140653259715525919, 0.169004726639267903, 0.190350578064785410,
                   0.204432940075298892, 0.209482141084727828])
_GK_WG = np.array([0.129484966168869693, 0.279705391489276668, 0.381830050505118945,
                   0.417959183673469388])


@njit(cache=True)
def _line_root(kind, prm, x0, y0, ex, ey, ua, qa, ub, qb):
    """Root of the shape level set on the segment u in [ua, ub] (Illinois method)."""
    fa = qa
    fb = qb
    side = 0
    for _ in range(200):
        if ub - ua <= 1e-16 * (abs(ua) + abs(ub)) + 1e-300:
            break
        um = (ua * fb - ub * fa) / (fb - fa)
        if not (ua < um < ub):
            um = 0.5 * (ua + ub)
        fm = _shape_q(kind, prm, x0 + um * ex, y0 + um * ey)
        if fm == 0.0:
            return um
        if (fm > 0.0) == (fa > 0.0):
            ua = um
            fa = fm
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            ub = um
            fb = fm
            if side == 1:
                fa *= 0.5
            side = 1
    return 0.5 * (ua + ub)


@njit(cache=True)
def _line_symmdiff(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, w, brk):
    """Length of (reconstructed △ exact) on the cell along the normal line at tangential offset w."""
    # line: (xc, yc) + u (c, s) + w (-s, c)
    x0 = xc - w * s
    y0 = yc + w * c
    lo = -1e300
    hi = 1e300
    # slab clip against the cell
    for ax in range(2):
        d = c if ax == 0 else s
        p0 = (x0 - xc) if ax == 0 else (y0 - yc)
        half = 0.5 * (hx if ax == 0 else hy)
        if abs(d) < 1e-300:
            if abs(p0) > half:
                return 0.0
            continue
        t1 = (-half - p0) / d
        t2 = (half - p0) / d
        if t1 > t2:
            t1, t2 = t2, t1
        lo = max(lo, t1)
        hi = min(hi, t2)
    if hi <= lo:
        return 0.0
    thr = phi - 0.5 * kappa * w * w
    nb = 0
    brk[nb] = lo
    nb += 1
    K = 8
    ua = lo
    qa = _shape_q(kind, prm, x0 + ua * c, y0 + ua * s)
    for k in range(1, K + 1):
        ub = lo + (hi - lo) * k / K
        qb = _shape_q(kind, prm, x0 + ub * c, y0 + ub * s)
        if (qa <= 0.0) != (qb <= 0.0):
            brk[nb] = _line_root(kind, prm, x0, y0, c, s, ua, qa, ub, qb)
            nb += 1
        ua = ub
        qa = qb
    if lo < thr < hi:
        brk[nb] = thr
        nb += 1
    brk[nb] = hi
    nb += 1
    # insertion sort, tiny arrays
    for a in range(1, nb):
        v = brk[a]
        b = a - 1
        while b >= 0 and brk[b] > v:
            brk[b + 1] = brk[b]
            b -= 1
        brk[b + 1] = v
    tot = 0.0
    for a in range(nb - 1):
        ua = brk[a]
        ub = brk[a + 1]
        if ub <= ua:
            continue
        um = 0.5 * (ua + ub)
        ina = um <= thr
        inb = _shape_q(kind, prm, x0 + um * c, y0 + um * s) <= 0.0
        if ina != inb:
            tot += ub - ua
    return tot


@njit(cache=True)
def _gk(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, a, b, brk):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    fc = _line_symmdiff(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, mid, brk)
    rk = _GK_WK[7] * fc
    rg = _GK_WG[3] * fc
    for k in range(7):
        dx = half * _GK_X[k]
        f1 = _line_symmdiff(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, mid - dx, brk)
        f2 = _line_symmdiff(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, mid + dx, brk)
        rk += _GK_WK[k] * (f1 + f2)
        if k % 2 == 1:
            rg += _GK_WG[k // 2] * (f1 + f2)
    return rk * half, abs(rk - rg) * half


@njit(cache=True)
def _cell_symmdiff(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, tol):
    """Area of the symmetric difference inside one cell, by adaptive Gauss-Kronrod in w."""
    brk = np.empty(16)
    ws = np.empty(4)
    k = 0
    for sx in (-0.5, 0.5):
        for sy in (-0.5, 0.5):
            ws[k] = -s * sx * hx + c * sy * hy
            k += 1
    ws.sort()
    stack = np.empty((256, 3))
    total = 0.0
    wlen = ws[3] - ws[0]
    if wlen <= 0.0:
        return 0.0
    for seg in range(3):
        a = ws[seg]
        b = ws[seg + 1]
        if b - a <= 0.0:
            continue
        # near-kink intervals below 1e-9 of the span carry O(width^2) error
        val, _ = _gk(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, a, b, brk)
        top = 0
        stack[0, 0] = a
        stack[0, 1] = b
        stack[0, 2] = val
        top = 1
        budget = 4000
        while top > 0:
            top -= 1
            budget -= 1
            a0 = stack[top, 0]
            b0 = stack[top, 1]
            v0 = stack[top, 2]
            m = 0.5 * (a0 + b0)
            vl, el = _gk(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, a0, m, brk)
            vr, er = _gk(kind, prm, xc, yc, hx, hy, c, s, kappa, phi, m, b0, brk)
            if (abs(vl + vr - v0) <= tol * (b0 - a0) / wlen and el + er <= tol * (b0 - a0) / wlen) \
                    or (b0 - a0) <= 1e-9 * wlen or top >= 254 or budget <= 0:
                total += vl + vr
                continue
            stack[top, 0] = a0
            stack[top, 1] = m
            stack[top, 2] = vl
            stack[top + 1, 0] = m
            stack[top + 1, 1] = b0
            stack[top + 1, 2] = vr
            top += 2
    return total


@njit(cache=True)
def _symmdiff_all(kind, prm, alpha, theta, kappa, phi, mixed, m0_exact, rm0, ox, oy, hx, hy, tol, out):
    nx, ny = alpha.shape
    area = hx * hy
    for i in range(nx):
        for j in range(ny):
            xc = ox + (i + 0.5) * hx
            yc = oy + (j + 0.5) * hy
            ex = m0_exact[i, j]
            p = _box_pure(kind, prm, xc - 0.5 * hx, yc - 0.5 * hy, xc + 0.5 * hx, yc + 0.5 * hy)
            if mixed[i, j]:
                if p == 1:
                    out[i, j] = area - rm0[i, j]
                elif p == -1:
                    out[i, j] = rm0[i, j]
                else:
                    out[i, j] = _cell_symmdiff(kind, prm, xc, yc, hx, hy, math.cos(theta[i, j]),
                                               math.sin(theta[i, j]), kappa[i, j], phi[i, j], tol * area)
            elif alpha[i, j] >= 1.0 - PURE_EPS:
                out[i, j] = area - ex
            else:
                out[i, j] = ex


def symmdiff_per_cell(grid: Grid, alpha: np.ndarray, recon, shape: _Shape,
                      exact_alpha: np.ndarray, tol: float = 1e-13,
                      recon_m0: np.ndarray | None = None) -> np.ndarray:
    """Area of (reconstructed liquid) △ (exact liquid) in every cell."""
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    if recon_m0 is None:
        recon_m0, _ = reconstructed_moments(grid, alpha, recon)
    per_cell = np.zeros((grid.nx, grid.ny))
    _symmdiff_all(shape.kind, shape.params, alpha, recon.theta, recon.kappa, recon.phi, recon.mixed,
                  np.ascontiguousarray(exact_alpha * grid.cell_area), recon_m0,
                  float(grid.origin[0]), float(grid.origin[1]),
                  float(grid.hx), float(grid.hy), float(tol), per_cell)
    return per_cell


@dataclass
class ErrorReport:
    symm_diff: float
    frac_linf: float
    m1_linf: float
    kappa_linf: float
    n_kappa: int = 0

    def as_row(self) -> tuple[float, float, float, float]:
        return self.symm_diff, self.frac_linf, self.m1_linf, self.kappa_linf


def error_norms(grid: Grid, alpha: np.ndarray, recon, shape: _Shape,
                exact: tuple[np.ndarray, np.ndarray] | None = None,
                kappa: np.ndarray | None = None, kappa_valid: np.ndarray | None = None,
                tol: float = 1e-13) -> ErrorReport:
    """Errors of a reconstructed state against an exact shape.

    The symmetric difference is integrated per cell along lines normal to
    the reconstructed interface, where both regions are exactly located.
    The first-moment error compares moments of the reconstructed liquid
    with the exact cell moments.  Curvature errors are taken over interface
    cells where ``kappa_valid`` holds and the shape has constant curvature.
    """
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    if exact is None:
        exact = init_moments_exact(shape, grid)
    ea, em1 = exact
    area = grid.cell_area
    rm0, rm1 = reconstructed_moments(grid, alpha, recon)
    per_cell = symmdiff_per_cell(grid, alpha, recon, shape, ea, tol, rm0)
    # fixed-order reductions
    symm = float(np.sum(per_cell.ravel()))
    frac = float(np.max(np.abs(alpha - ea)))
    m1 = float(np.max(np.hypot(rm1[..., 0] - em1[..., 0], rm1[..., 1] - em1[..., 1])))
    kinf = float("nan")
    nk = 0
    kex = shape.exact_curvature()
    if kappa is not None and kex is not None:
        interface = (alpha > PURE_EPS) & (alpha < 1.0 - PURE_EPS)
        valid = interface if kappa_valid is None else interface & kappa_valid
        nk = int(np.count_nonzero(valid))
        if nk:
            kinf = float(np.max(np.abs(np.asarray(kappa)[valid] - kex)))
    return ErrorReport(symm, frac, m1, kinf, nk)
