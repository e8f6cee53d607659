"""Exact area and first moments of polygons and of polygon/parabola intersections.

The liquid side of an interface is described by the level set

    q(x) = eta . (x - a) - phi + kappa/2 * (tau . (x - a))**2

with eta = (cos theta, sin theta), tau = (-sin theta, cos theta) and anchor a.
Liquid is {q <= 0}; kappa > 0 means the liquid region is convex.

The heavy lifting happens in numba kernels that work on vertex arrays.  The
cut is evaluated relative to its anchor, while polygon areas are summed in
the caller's own coordinates, so a small polygon far from the anchor keeps
its digits.  The public functions wrap the kernels with small value types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numba import njit

__all__ = [
    "Point2",
    "Polygon",
    "InterfaceCut",
    "Moments2",
    "polygon_moments",
    "clip_halfplane",
    "edge_parabola_roots",
    "clip_parabola_moments",
    "region_membership",
    "symmetric_difference_area",
]

LINEAR_RATIO = 1e-12
TRISECT_COLLAPSE = 1e-14

_GL_X = (-math.sqrt(0.6), 0.0, math.sqrt(0.6))
_GL_W = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)


# ---------------------------------------------------------------------------
# value types


class Point2(NamedTuple):
    x: float
    y: float


class Moments2(NamedTuple):
    """Area ``m0`` and area-weighted position integral ``m1``."""

    m0: float
    m1: tuple[float, float]

    @property
    def centroid(self) -> Point2 | None:
        if self.m0 <= 0.0:
            return None
        return Point2(self.m1[0] / self.m0, self.m1[1] / self.m0)


EMPTY_MOMENTS = Moments2(0.0, (0.0, 0.0))


class Polygon:
    """Counterclockwise vertex loop.

    Consecutive duplicates (closer than 1e-14 of the bounding-box diagonal)
    are dropped.  A clockwise loop is rejected; fewer than three vertices
    gives the empty polygon.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices: Sequence[Sequence[float]] | np.ndarray):
        v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(v).all():
            raise ValueError("polygon vertices must be finite")
        v = _drop_duplicates(v)
        if len(v) >= 3:
            area = _shoelace(v)
            if area < 0.0:
                raise ValueError("polygon must be counterclockwise")
            if area == 0.0:
                v = v[:0]
        else:
            v = v[:0]
        self.vertices = v

    @classmethod
    def box(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "Polygon":
        return cls([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])

    @classmethod
    def empty(cls) -> "Polygon":
        return cls(np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"Polygon({self.vertices.tolist()!r})"

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3

    @property
    def area(self) -> float:
        return 0.0 if self.is_empty else _shoelace(self.vertices)

    def is_convex(self) -> bool:
        if self.is_empty:
            return True
        return _is_convex(self.vertices)

    def transformed(self, angle: float = 0.0, shift: tuple[float, float] = (0.0, 0.0)) -> "Polygon":
        """Rotate about the origin by ``angle`` then translate by ``shift``."""
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return Polygon(self.vertices @ rot.T + np.asarray(shift))


@njit(cache=True)
def _shoelace(v):
    n = v.shape[0]
    rx = 0.0
    ry = 0.0
    for k in range(n):
        rx += v[k, 0]
        ry += v[k, 1]
    rx /= n
    ry /= n
    acc = 0.0
    for k in range(n):
        l = (k + 1) % n
        acc += (v[k, 0] - rx) * (v[l, 1] - ry) - (v[l, 0] - rx) * (v[k, 1] - ry)
    return 0.5 * acc


@njit(cache=True)
def _drop_duplicates(v):
    n = v.shape[0]
    if n < 2:
        return v
    dx = v[:, 0].max() - v[:, 0].min()
    dy = v[:, 1].max() - v[:, 1].min()
    tol = 1e-14 * math.hypot(dx, dy)
    keep = np.empty(n, dtype=np.int64)
    m = 0
    for k in range(n):
        if m > 0 and math.hypot(v[k, 0] - v[keep[m - 1], 0], v[k, 1] - v[keep[m - 1], 1]) <= tol:
            continue
        keep[m] = k
        m += 1
    while m > 1 and math.hypot(v[keep[0], 0] - v[keep[m - 1], 0], v[keep[0], 1] - v[keep[m - 1], 1]) <= tol:
        m -= 1
    out = np.empty((m, 2))
    for k in range(m):
        out[k, 0] = v[keep[k], 0]
        out[k, 1] = v[keep[k], 1]
    return out


@njit(cache=True)
def _is_convex(v):
    n = v.shape[0]
    scale = 0.0
    for k in range(n):
        l = (k + 1) % n
        scale = max(scale, (v[l, 0] - v[k, 0]) ** 2 + (v[l, 1] - v[k, 1]) ** 2)
    for k in range(n):
        l = (k + 1) % n
        m = (k + 2) % n
        ax = v[l, 0] - v[k, 0]
        ay = v[l, 1] - v[k, 1]
        bx = v[m, 0] - v[l, 0]
        by = v[m, 1] - v[l, 1]
        if ax * by - ay * bx < -1e-12 * scale:
            return False
    return True


@dataclass(frozen=True)
class InterfaceCut:
    """One cell's interface: anchor, normal angle, curvature and shift."""

    anchor: Point2
    theta: float
    kappa: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "anchor", Point2(float(self.anchor[0]), float(self.anchor[1])))

    @property
    def normal(self) -> tuple[float, float]:
        return (math.cos(self.theta), math.sin(self.theta))

    @property
    def tangent(self) -> tuple[float, float]:
        return (-math.sin(self.theta), math.cos(self.theta))

    def level(self, x: float, y: float) -> float:
        return _q_local(x - self.anchor.x, y - self.anchor.y, math.cos(self.theta),
                        math.sin(self.theta), self.kappa, self.phi)

    def negated(self) -> "InterfaceCut":
        """The cut whose liquid side is the gas side of this one (q -> -q)."""
        return InterfaceCut(self.anchor, self.theta + math.pi, -self.kappa, -self.phi)

    def transformed(self, angle: float = 0.0, shift: tuple[float, float] = (0.0, 0.0)) -> "InterfaceCut":
        c, s = math.cos(angle), math.sin(angle)
        ax, ay = self.anchor
        return InterfaceCut(Point2(c * ax - s * ay + shift[0], s * ax + c * ay + shift[1]),
                            self.theta + angle, self.kappa, self.phi)


# ---------------------------------------------------------------------------
# kernels (local coordinates, relative to the cut anchor)


@njit(cache=True)
def _q_local(x, y, c, s, kappa, phi):
    u = c * x + s * y
    w = c * y - s * x
    return u - phi + 0.5 * kappa * w * w


@njit(cache=True)
def _poly_moments(xs, ys, n):
    """Shoelace moments accumulated about the vertex mean."""
    if n < 3:
        return 0.0, 0.0, 0.0
    rx = 0.0
    ry = 0.0
    for k in range(n):
        rx += xs[k]
        ry += ys[k]
    rx /= n
    ry /= n
    a2 = 0.0
    sx = 0.0
    sy = 0.0
    for k in range(n):
        k1 = k + 1 if k + 1 < n else 0
        x0 = xs[k] - rx
        y0 = ys[k] - ry
        x1 = xs[k1] - rx
        y1 = ys[k1] - ry
        cr = x0 * y1 - x1 * y0
        a2 += cr
        sx += (x0 + x1) * cr
        sy += (y0 + y1) * cr
    m0 = 0.5 * a2
    return m0, sx / 6.0 + rx * m0, sy / 6.0 + ry * m0


@njit(cache=True)
def _quadratic_roots(a, b, c, out):
    """Real roots in [0, 1] of a t^2 + b t + c, ascending; returns the count."""
    cnt = 0
    if a == 0.0 or abs(a) < LINEAR_RATIO * abs(b):
        if b == 0.0:
            return 0
        t = -c / b
        if 0.0 <= t <= 1.0:
            out[0] = t
            cnt = 1
        return cnt
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        # tangency lost to rounding
        if disc < -8.0 * 2.220446049250313e-16 * (b * b + 4.0 * abs(a * c)):
            return 0
        disc = 0.0
    if disc == 0.0:
        r1 = -b / (2.0 * a)
        r2 = r1
    else:
        qq = -0.5 * (b + math.copysign(math.sqrt(disc), b))
        r1 = qq / a
        r2 = c / qq if qq != 0.0 else r1
    if r2 < r1:
        r1, r2 = r2, r1
    if 0.0 <= r1 <= 1.0:
        out[cnt] = r1
        cnt += 1
    if 0.0 <= r2 <= 1.0 and (cnt == 0 or r2 - r1 > TRISECT_COLLAPSE):
        out[cnt] = r2
        cnt += 1
    return cnt


@njit(cache=True)
def _crossing(a, qa, qb):
    """First root in [0, 1] of a t^2 + (qb - qa - a) t + qa, for qa <= 0 < qb."""
    b = qb - qa - a
    if a == 0.0 or abs(a) < LINEAR_RATIO * abs(b):
        t = -qa / b
    else:
        disc = b * b - 4.0 * a * qa
        if disc < 0.0:
            disc = 0.0
        qq = -0.5 * (b + math.copysign(math.sqrt(disc), b))
        r1 = qq / a
        r2 = qa / qq if qq != 0.0 else r1
        lo = min(r1, r2)
        hi = max(r1, r2)
        if lo >= -1e-12:
            t = lo
        elif hi <= 1.0 + 1e-12:
            t = hi
        else:
            t = qa / (qa - qb)
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return t


@njit(cache=True)
def _chord_correction(ua, wa, ub, wb, kappa, phi):
    """Signed moments between a chord and the parabola over w in [wa, wb].

    Returns (area, u-moment, w-moment) in the (eta, tau) frame.
    """
    dw = wb - wa
    if dw == 0.0:
        return 0.0, 0.0, 0.0
    ra = phi - 0.5 * kappa * wa * wa - ua
    rb = phi - 0.5 * kappa * wb * wb - ub
    mid = 0.5 * (wa + wb)
    half = 0.5 * dw
    c0 = 0.0
    cu = 0.0
    cw = 0.0
    for g in range(3):
        w = mid + half * _GL_X[g]
        wt = half * _GL_W[g]
        lam = (w - wa) / dw
        d = -0.5 * kappa * (w - wa) * (w - wb) + ra * (1.0 - lam) + rb * lam
        uc = ua + (ub - ua) * lam
        uarc = uc + d
        c0 += wt * d
        cu += wt * d * 0.5 * (uarc + uc)
        cw += wt * d * w
    return c0, cu, cw


@njit(cache=True)
def _clip_core(xs, ys, n, ox, oy, c, s, kappa, phi, S):
    """Moments of poly ∩ {q <= 0} for kappa <= 0 (gas side convex).

    Vertices are given relative to an arbitrary origin; (ox, oy) is the cut
    anchor in that frame.  The polygonal part is accumulated from the given
    coordinates, so a polygon far from the anchor loses no digits to the
    shift.  S[k] receives the signed sums of int tau^k over the interface
    pieces.
    """
    for k in range(6):
        S[k] = 0.0
    if n < 3:
        return 0.0, 0.0, 0.0
    qv = np.empty(n)
    nliq = 0
    for k in range(n):
        qv[k] = _q_local(xs[k] - ox, ys[k] - oy, c, s, kappa, phi)
        if qv[k] <= 0.0:
            nliq += 1
    if nliq == 0:
        return 0.0, 0.0, 0.0
    cap = 3 * n + 2
    px = np.empty(cap)
    py = np.empty(cap)
    ex = np.zeros(cap, dtype=np.bool_)
    m = 0
    for k in range(n):
        k1 = k + 1 if k + 1 < n else 0
        xa = xs[k]
        ya = ys[k]
        xb = xs[k1]
        yb = ys[k1]
        qa = qv[k]
        qb = qv[k1]
        dx = xb - xa
        dy = yb - ya
        dwt = c * dy - s * dx
        a2 = 0.5 * kappa * dwt * dwt
        if qa <= 0.0:
            px[m] = xa
            py[m] = ya
            m += 1
            if qb > 0.0:
                t = _crossing(a2, qa, qb)
                px[m] = xa + t * dx
                py[m] = ya + t * dy
                ex[m] = True
                m += 1
            elif a2 < 0.0:
                b2 = qb - qa - a2
                tstar = -b2 / (2.0 * a2)
                if 0.0 < tstar < 1.0 and qa - b2 * b2 / (4.0 * a2) > 0.0:
                    disc = b2 * b2 - 4.0 * a2 * qa
                    if disc > 0.0:
                        qq = -0.5 * (b2 + math.copysign(math.sqrt(disc), b2))
                        r1 = qq / a2
                        r2 = qa / qq if qq != 0.0 else r1
                        t1 = min(r1, r2)
                        t2 = max(r1, r2)
                        t1 = min(max(t1, 0.0), 1.0)
                        t2 = min(max(t2, 0.0), 1.0)
                        if t2 - t1 > TRISECT_COLLAPSE:
                            px[m] = xa + t1 * dx
                            py[m] = ya + t1 * dy
                            ex[m] = True
                            m += 1
                            px[m] = xa + t2 * dx
                            py[m] = ya + t2 * dy
                            m += 1
        elif qb <= 0.0:
            t = _crossing(a2, qb, qa)
            px[m] = xb - t * dx
            py[m] = yb - t * dy
            m += 1
    m0, mx, my = _poly_moments(px, py, m)
    c0 = 0.0
    cu = 0.0
    cw = 0.0
    for k in range(m):
        if not ex[k]:
            continue
        k1 = k + 1 if k + 1 < m else 0
        xa = px[k] - ox
        ya = py[k] - oy
        xb = px[k1] - ox
        yb = py[k1] - oy
        ua = c * xa + s * ya
        wa = c * ya - s * xa
        ub = c * xb + s * yb
        wb = c * yb - s * xb
        d0, du, dw_ = _chord_correction(ua, wa, ub, wb, kappa, phi)
        c0 += d0
        cu += du
        cw += dw_
        pa = 1.0
        pb = 1.0
        for j in range(6):
            pa *= wa
            pb *= wb
            S[j] += (pb - pa) / (j + 1)
    m0 += c0
    mx += c * cu - s * cw + ox * c0
    my += s * cu + c * cw + oy * c0
    return m0, mx, my


@njit(cache=True)
def _clip_frame(xs, ys, n, ox, oy, c, s, kappa, phi, S):
    """Moments of poly ∩ {q <= 0} for any curvature, plus interface integrals."""
    if kappa > 0.0:
        m0p, mxp, myp = _poly_moments(xs, ys, n)
        m0c, mxc, myc = _clip_core(xs, ys, n, ox, oy, -c, -s, -kappa, -phi, S)
        S[1] = -S[1]
        S[3] = -S[3]
        S[5] = -S[5]
        return m0p - m0c, mxp - mxc, myp - myc
    return _clip_core(xs, ys, n, ox, oy, c, s, kappa, phi, S)


@njit(cache=True)
def _clip_local(xs, ys, n, c, s, kappa, phi, S):
    """As _clip_frame with the vertices already relative to the anchor."""
    return _clip_frame(xs, ys, n, 0.0, 0.0, c, s, kappa, phi, S)


@njit(cache=True)
def _clip_axis(xs, ys, n, axis, bound, keep_below, ox, oy):
    """Sutherland-Hodgman against one axis-aligned line; returns vertex count."""
    m = 0
    if n == 0:
        return 0
    for k in range(n):
        k1 = k + 1 if k + 1 < n else 0
        va = xs[k] if axis == 0 else ys[k]
        vb = xs[k1] if axis == 0 else ys[k1]
        da = va - bound if keep_below else bound - va
        db = vb - bound if keep_below else bound - vb
        if da <= 0.0:
            ox[m] = xs[k]
            oy[m] = ys[k]
            m += 1
            if db > 0.0:
                t = da / (da - db)
                ox[m] = xs[k] + t * (xs[k1] - xs[k])
                oy[m] = ys[k] + t * (ys[k1] - ys[k])
                if axis == 0:
                    ox[m] = bound
                else:
                    oy[m] = bound
                m += 1
        elif db <= 0.0:
            t = da / (da - db)
            ox[m] = xs[k] + t * (xs[k1] - xs[k])
            oy[m] = ys[k] + t * (ys[k1] - ys[k])
            if axis == 0:
                ox[m] = bound
            else:
                oy[m] = bound
            m += 1
    if m < 3:
        return 0
    return m


@njit(cache=True)
def _clip_box(xs, ys, n, xmin, xmax, ymin, ymax, ox, oy, tx, ty):
    """poly ∩ box into (ox, oy); tx, ty are scratch of the same size."""
    m = _clip_axis(xs, ys, n, 0, xmax, True, tx, ty)
    m = _clip_axis(tx, ty, m, 0, xmin, False, ox, oy)
    m = _clip_axis(ox, oy, m, 1, ymax, True, tx, ty)
    m = _clip_axis(tx, ty, m, 1, ymin, False, ox, oy)
    return m


@njit(cache=True)
def _clip_halfplane(xs, ys, n, ax, ay, c, s, phi, ox, oy):
    """Straight clip; vertices in any frame, (ax, ay) the anchor in that frame."""
    m = 0
    if n < 3:
        return 0
    for k in range(n):
        k1 = k + 1 if k + 1 < n else 0
        qa = c * (xs[k] - ax) + s * (ys[k] - ay) - phi
        qb = c * (xs[k1] - ax) + s * (ys[k1] - ay) - phi
        if qa <= 0.0:
            ox[m] = xs[k]
            oy[m] = ys[k]
            m += 1
            if qb > 0.0:
                t = qa / (qa - qb)
                ox[m] = xs[k] + t * (xs[k1] - xs[k])
                oy[m] = ys[k] + t * (ys[k1] - ys[k])
                m += 1
        elif qb <= 0.0:
            t = qb / (qb - qa)
            ox[m] = xs[k1] + t * (xs[k] - xs[k1])
            oy[m] = ys[k1] + t * (ys[k] - ys[k1])
            m += 1
    if m < 3:
        return 0
    return m


# ---------------------------------------------------------------------------
# public API


def _local_arrays(poly: Polygon, anchor: Point2) -> tuple[np.ndarray, np.ndarray]:
    v = poly.vertices
    return (np.ascontiguousarray(v[:, 0] - anchor[0]),
            np.ascontiguousarray(v[:, 1] - anchor[1]))


def polygon_moments(poly: Polygon) -> Moments2:
    if poly.is_empty:
        return EMPTY_MOMENTS
    v = poly.vertices
    m0, mx, my = _poly_moments(np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]), len(v))
    return Moments2(m0, (mx, my))


def _require_convex(poly: Polygon) -> None:
    if not poly.is_convex():
        raise ValueError("clipping requires a convex polygon")


def clip_halfplane(poly: Polygon, cut: InterfaceCut) -> Polygon:
    """poly ∩ {q <= 0} for a straight cut (kappa is ignored if zero, rejected otherwise)."""
    if cut.kappa != 0.0:
        raise ValueError("clip_halfplane needs a cut with kappa = 0")
    if poly.is_empty:
        return Polygon.empty()
    _require_convex(poly)
    v = poly.vertices
    n = len(v)
    ox = np.empty(2 * n + 2)
    oy = np.empty(2 * n + 2)
    m = _clip_halfplane(np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]), n, cut.anchor.x,
                        cut.anchor.y, math.cos(cut.theta), math.sin(cut.theta), cut.phi, ox, oy)
    if m == 0:
        return Polygon.empty()
    return Polygon(np.column_stack([ox[:m], oy[:m]]))


def edge_parabola_roots(p0: Point2, p1: Point2, cut: InterfaceCut) -> list[float]:
    """Roots t in [0, 1] of q(t*p0 + (1 - t)*p1) = 0, ascending, tangency reported once."""
    if cut.kappa > 0.0:
        raise ValueError("edge_parabola_roots expects kappa <= 0; negate the cut first")
    c, s = math.cos(cut.theta), math.sin(cut.theta)
    x1, y1 = p1[0] - cut.anchor.x, p1[1] - cut.anchor.y
    dx, dy = p0[0] - p1[0], p0[1] - p1[1]
    u1 = c * x1 + s * y1
    w1 = c * y1 - s * x1
    du = c * dx + s * dy
    dw = c * dy - s * dx
    a = 0.5 * cut.kappa * dw * dw
    b = du + cut.kappa * w1 * dw
    cc = u1 - cut.phi + 0.5 * cut.kappa * w1 * w1
    out = np.empty(2)
    cnt = _quadratic_roots(a, b, cc, out)
    return [float(t) for t in out[:cnt]]


def clip_parabola_moments(poly: Polygon, cut: InterfaceCut) -> Moments2:
    """Exact m0 and m1 of poly ∩ {q <= 0} for a convex polygon."""
    if poly.is_empty:
        return EMPTY_MOMENTS
    _require_convex(poly)
    v = poly.vertices
    S = np.empty(6)
    m0, mx, my = _clip_frame(np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]), len(v),
                             cut.anchor.x, cut.anchor.y, math.cos(cut.theta), math.sin(cut.theta),
                             cut.kappa, cut.phi, S)
    return Moments2(m0, (mx, my))


def interface_integrals(poly: Polygon, cut: InterfaceCut) -> np.ndarray:
    """Sums of int tau^k dtau (k = 0..5) over the interface pieces inside poly."""
    S = np.zeros(6)
    if poly.is_empty:
        return S
    _require_convex(poly)
    xs, ys = _local_arrays(poly, cut.anchor)
    _clip_local(xs, ys, len(xs), math.cos(cut.theta), math.sin(cut.theta), cut.kappa, cut.phi, S)
    return S


def region_membership(cut: InterfaceCut, x: Point2) -> bool:
    return cut.level(x[0], x[1]) <= 0.0


Membership = Callable[[float, float], bool]


def symmetric_difference_area(region_a: Membership, region_b: Membership,
                              window: tuple[float, float, float, float], depth: int) -> float:
    """Adaptive quadtree estimate of the area of A △ B inside ``window``.

    ``window`` is (xmin, ymin, xmax, ymax).  A box is refined while the two
    memberships disagree at one of its sample points (corners and center) or
    while either membership changes across them.  Boxes at the final depth
    contribute the disagreeing fraction of their samples.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    x0, y0, x1, y1 = window
    cache: dict[tuple[float, float], tuple[bool, bool]] = {}

    def sample(x: float, y: float) -> tuple[bool, bool]:
        key = (x, y)
        r = cache.get(key)
        if r is None:
            r = (bool(region_a(x, y)), bool(region_b(x, y)))
            cache[key] = r
        return r

    total = 0.0
    stack = [(x0, y0, x1, y1, 0)]
    while stack:
        xa, ya, xb, yb, lev = stack.pop()
        xm, ym = 0.5 * (xa + xb), 0.5 * (ya + yb)
        pts = [sample(xa, ya), sample(xb, ya), sample(xb, yb), sample(xa, yb), sample(xm, ym)]
        diff = sum(a != b for a, b in pts)
        uniform = len({a for a, _ in pts}) == 1 and len({b for _, b in pts}) == 1
        area = (xb - xa) * (yb - ya)
        if diff == 0 and uniform:
            continue
        if diff == len(pts) and uniform:
            total += area
            continue
        if lev + 1 >= depth:
            total += area * diff / len(pts)
            continue
        stack.extend([(xa, ya, xm, ym, lev + 1), (xm, ya, xb, ym, lev + 1),
                      (xm, ym, xb, yb, lev + 1), (xa, ym, xm, yb, lev + 1)])
    return total
