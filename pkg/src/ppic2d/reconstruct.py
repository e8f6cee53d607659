"""Per-cell interface reconstruction by cost-function minimisation.

Every trial cut is volume-enforced: for a normal angle theta and curvature
kappa the shift phi is chosen so the liquid area in the centre cell equals
the stored one.  Costs and their exact derivatives are evaluated from the
interface integrals returned by the clipping kernel.

All kernels work in coordinates relative to the centre of the reconstructed
cell, so a stencil translated by whole cells gives identical cut parameters.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geom2d import (
    InterfaceCut,
    Point2,
    Polygon,
    _clip_local,
    _poly_moments,
    symmetric_difference_area,
)

__all__ = [
    "Method",
    "CellStencil",
    "Reconstruction",
    "ReconstructionField",
    "PURE_EPS",
    "KAPPA_H_MAX",
    "initial_bracket",
    "shift_for_volume",
    "cost_lvira",
    "cost_mof",
    "cost_symmdiff",
    "grad_cost_mof",
    "grad_cost_lvira",
    "moment_derivative",
    "constrained_cost",
    "elvira_candidates",
    "youngs_normal",
    "reconstruct_cell",
    "reconstruct_field",
]

PURE_EPS = 1e-10
KAPPA_H_MAX = 4.0
MAX_ITER = 100
LBFGS_MEMORY = 5
STEP_TOL = 1e-11
BRENT_FTOL = 1e-13

# status codes
ST_CONVERGED = 0
ST_MAXITER = 1
ST_FAILED = 2
ST_DEGENERATE = 3


class Method(enum.IntEnum):
    LVIRA = 0
    ELVIRA = 1
    MOF = 2
    PLVIRA = 3
    PMOF = 4
    PROST = 5

    @property
    def uses_moments(self) -> bool:
        return self in (Method.MOF, Method.PMOF)

    @property
    def uses_given_curvature(self) -> bool:
        return self in (Method.PLVIRA, Method.PMOF)

    @property
    def parabolic(self) -> bool:
        return self in (Method.PLVIRA, Method.PMOF, Method.PROST)

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown method {name!r}; expected one of "
                             f"{', '.join(m.name for m in cls)}") from None


# layout of the packed problem vector handed to the kernels
_P_METHOD, _P_HX, _P_HY, _P_H = 0, 1, 2, 3
_P_ALPHA = 4  # nine entries, index (di + 1) * 3 + (dj + 1)
_P_M1X, _P_M1Y, _P_KAPPA, _P_L, _P_TARGET, _P_GTOL = 13, 14, 15, 16, 17, 18
_P_SIZE = 19

# counters: objective evaluations, Brent g evaluations, shift solves
_C_EVALS, _C_BRENT, _C_SHIFTS = 0, 1, 2


@dataclass
class CellStencil:
    """Data needed to reconstruct one cell.

    ``alpha[di + 1, dj + 1]`` is the fraction of the cell offset by (di, dj).
    ``m1_ref`` is the absolute reference first moment (MOF family) and
    ``kappa`` the supplied curvature (PLVIRA, PMOF; initial guess for PROST).
    """

    alpha: np.ndarray
    hx: float
    hy: float
    center: Point2 = Point2(0.0, 0.0)
    m1_ref: tuple[float, float] | None = None
    kappa: float | None = None
    length_scale: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(3, 3)
        self.center = Point2(float(self.center[0]), float(self.center[1]))
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("cell sizes must be positive")
        if np.any(self.alpha < -1e-12) or np.any(self.alpha > 1.0 + 1e-12):
            raise ValueError("volume fractions must lie in [0, 1]")
        self.alpha = np.clip(self.alpha, 0.0, 1.0)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def box(self) -> Polygon:
        cx, cy = self.center
        return Polygon.box(cx - self.hx / 2, cy - self.hy / 2, cx + self.hx / 2, cy + self.hy / 2)

    def neighbor_box(self, di: int, dj: int) -> Polygon:
        cx, cy = self.center[0] + di * self.hx, self.center[1] + dj * self.hy
        return Polygon.box(cx - self.hx / 2, cy - self.hy / 2, cx + self.hx / 2, cy + self.hy / 2)


@dataclass(frozen=True)
class Reconstruction:
    cut: InterfaceCut
    cost_value: float
    evaluations: int
    iterations: int = 0
    status: int = ST_CONVERGED
    brent_evaluations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == ST_CONVERGED


@dataclass
class ReconstructionField:
    """Cuts for every cell of a grid.  ``mixed`` marks reconstructed cells."""

    theta: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray
    mixed: np.ndarray
    status: np.ndarray
    evaluations: np.ndarray
    brent: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shifts: int = 0

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.mixed & (self.status == ST_FAILED)))

    @property
    def mean_evaluations(self) -> float:
        n = np.count_nonzero(self.mixed)
        return float(self.evaluations[self.mixed].sum() / n) if n else 0.0

    @property
    def mean_brent(self) -> float:
        return float(self.brent.sum() / self.shifts) if self.shifts else 0.0


# ---------------------------------------------------------------------------
# volume enforcement


@njit(cache=True)
def _box(hx, hy, di, dj, xs, ys):
    cx = di * hx
    cy = dj * hy
    xs[0] = cx - 0.5 * hx
    ys[0] = cy - 0.5 * hy
    xs[1] = cx + 0.5 * hx
    ys[1] = cy - 0.5 * hy
    xs[2] = cx + 0.5 * hx
    ys[2] = cy + 0.5 * hy
    xs[3] = cx - 0.5 * hx
    ys[3] = cy + 0.5 * hy


@njit(cache=True)
def _linear_shift(c, s, hx, hy, target):
    """Exact shift of a straight cut through an hx x hy box centred at the origin."""
    pa = abs(c) * hx
    pb = abs(s) * hy
    lo = min(pa, pb)
    hi = max(pa, pb)
    f = target / (hx * hy)
    if f <= 0.0:
        return -0.5 * (pa + pb)
    if f >= 1.0:
        return 0.5 * (pa + pb)
    if lo <= 1e-300 * hi:
        return f * hi - 0.5 * hi
    r = lo / (2.0 * hi)
    if f <= r:
        d = math.sqrt(2.0 * f * lo * hi)
    elif f <= 1.0 - r:
        d = f * hi + 0.5 * lo
    else:
        d = lo + hi - math.sqrt(2.0 * (1.0 - f) * lo * hi)
    return d - 0.5 * (pa + pb)


@njit(cache=True)
def _bracket_ends(c, s, kappa, hx, hy):
    """Shifts that make the cell empty (lower) and full (upper)."""
    pe = 0.5 * (hx * abs(c) + hy * abs(s))
    pt = 0.5 * (hx * abs(s) + hy * abs(c))
    bend = 0.5 * kappa * pt * pt
    return min(0.0, bend) - pe, max(0.0, bend) + pe


@njit(cache=True)
def _g(c, s, kappa, phi, hx, hy, target, xs, ys, S):
    m0, mx, my = _clip_local(xs, ys, 4, c, s, kappa, phi, S)
    return m0 - target


@njit(cache=True)
def _brent(c, s, kappa, hx, hy, target, xa, xb, fa, fb, xs, ys, S, counters):
    """Brent's root finder on g(phi) = m0(cell ∩ l(q)) - target."""
    ftol = BRENT_FTOL * hx * hy
    xtol = 1e-16 * max(hx, hy)
    rtol = 4.0 * 2.220446049250313e-16
    xpre = xa
    xcur = xb
    fpre = fa
    fcur = fb
    xblk = 0.0
    fblk = 0.0
    spre = 0.0
    scur = 0.0
    if fpre == 0.0:
        return xpre, True
    if fcur == 0.0:
        return xcur, True
    if fpre * fcur > 0.0:
        return xcur, False
    for _ in range(200):
        if fpre * fcur < 0.0:
            xblk = xpre
            fblk = fpre
            spre = xcur - xpre
            scur = spre
        if abs(fblk) < abs(fcur):
            xpre = xcur
            xcur = xblk
            xblk = xpre
            fpre = fcur
            fcur = fblk
            fblk = fpre
        delta = 0.5 * (xtol + rtol * abs(xcur))
        sbis = 0.5 * (xblk - xcur)
        if fcur == 0.0 or abs(fcur) <= ftol or abs(sbis) < delta:
            return xcur, True
        if abs(spre) > delta and abs(fcur) < abs(fpre):
            if xpre == xblk:
                stry = -fcur * (xcur - xpre) / (fcur - fpre)
            else:
                dpre = (fpre - fcur) / (xpre - xcur)
                dblk = (fblk - fcur) / (xblk - xcur)
                stry = -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            if 2.0 * abs(stry) < min(abs(spre), 3.0 * abs(sbis) - delta):
                spre = scur
                scur = stry
            else:
                spre = sbis
                scur = sbis
        else:
            spre = sbis
            scur = sbis
        xpre = xcur
        fpre = fcur
        if abs(scur) > delta:
            xcur += scur
        elif sbis > 0.0:
            xcur += delta
        else:
            xcur -= delta
        fcur = _g(c, s, kappa, xcur, hx, hy, target, xs, ys, S)
        counters[_C_BRENT] += 1
    return xcur, True


@njit(cache=True)
def _shift(c, s, kappa, hx, hy, target, counters):
    """Volume-enforcing shift; returns (phi, ok)."""
    counters[_C_SHIFTS] += 1
    area = hx * hy
    lo, hi = _bracket_ends(c, s, kappa, hx, hy)
    if target <= 0.0:
        return lo, True
    if target >= area:
        return hi, True
    phi1 = _linear_shift(c, s, hx, hy, target)
    if kappa == 0.0:
        return phi1, True
    xs = np.empty(4)
    ys = np.empty(4)
    _box(hx, hy, 0, 0, xs, ys)
    S = np.empty(6)
    g1 = _g(c, s, kappa, phi1, hx, hy, target, xs, ys, S)
    counters[_C_BRENT] += 1
    if abs(g1) <= BRENT_FTOL * area:
        return phi1, True
    # g is increasing in phi with slope equal to the interface length S[0]
    if g1 > 0.0:
        a, fa, b, fb = lo, -target, phi1, g1
    else:
        a, fa, b, fb = phi1, g1, hi, area - target
    if S[0] > 0.0:
        pn = phi1 - g1 / S[0]
        if a < pn < b:
            gn = _g(c, s, kappa, pn, hx, hy, target, xs, ys, S)
            counters[_C_BRENT] += 1
            if abs(gn) <= BRENT_FTOL * area:
                return pn, True
            if gn > 0.0:
                if g1 > 0.0:
                    b, fb = pn, gn
                else:
                    b, fb = pn, gn
            else:
                if g1 > 0.0:
                    a, fa = pn, gn
                else:
                    a, fa = pn, gn
    return _brent(c, s, kappa, hx, hy, target, a, b, fa, fb, xs, ys, S, counters)


# ---------------------------------------------------------------------------
# costs and exact derivatives


@njit(cache=True)
def _dphi(kappa, phi, Sc):
    """d(phi)/d(theta) and d(phi)/d(kappa) from the centre-cell interface integrals."""
    if Sc[0] <= 0.0:
        return 0.0, 0.0, False
    dth = -((phi * kappa - 1.0) * Sc[1] - 0.5 * kappa * kappa * Sc[3]) / Sc[0]
    dk = 0.5 * Sc[2] / Sc[0]
    return dth, dk, True


@njit(cache=True)
def _cost_at(P, c, s, kappa, phi, nvar, grad, gn):
    """Cost at a volume-enforced cut; fills gradient and Gauss-Newton diagonal.

    Variables are theta and (when nvar == 2) kappa * h.  Returns (cost, ok).
    """
    method = int(P[_P_METHOD])
    hx = P[_P_HX]
    hy = P[_P_HY]
    h = P[_P_H]
    xs = np.empty(4)
    ys = np.empty(4)
    Sc = np.empty(6)
    S = np.empty(6)
    _box(hx, hy, 0, 0, xs, ys)
    m0c, mxc, myc = _clip_local(xs, ys, 4, c, s, kappa, phi, Sc)
    dth, dk, ok = _dphi(kappa, phi, Sc)
    for k in range(nvar):
        grad[k] = 0.0
        gn[k] = 0.0
    if method == 2 or method == 4:
        rx = (mxc - P[_P_M1X]) / (h * h * h)
        ry = (myc - P[_P_M1Y]) / (h * h * h)
        cost = rx * rx + ry * ry
        if ok:
            A = (dth * phi * Sc[0] - phi * Sc[1] - 0.5 * dth * kappa * Sc[2] + 0.5 * kappa * Sc[3]
                 + kappa * phi * phi * Sc[1] - kappa * kappa * phi * Sc[3]
                 + 0.25 * kappa * kappa * kappa * Sc[5])
            B = dth * Sc[1] - Sc[2] + kappa * phi * Sc[2] - 0.5 * kappa * kappa * Sc[4]
            jx = (c * A - s * B) / (h * h * h)
            jy = (s * A + c * B) / (h * h * h)
            grad[0] = 2.0 * (rx * jx + ry * jy)
            gn[0] = 2.0 * (jx * jx + jy * jy)
        return cost, ok
    area = hx * hy
    cost = 0.0
    for di in range(-1, 2):
        for dj in range(-1, 2):
            if di == 0 and dj == 0:
                continue
            _box(hx, hy, di, dj, xs, ys)
            m0, mx, my = _clip_local(xs, ys, 4, c, s, kappa, phi, S)
            a = P[_P_ALPHA + (di + 1) * 3 + (dj + 1)]
            r = (a * area - m0) / area
            cost += area * r * r
            if ok:
                dm = dth * S[0] + (kappa * phi - 1.0) * S[1] - 0.5 * kappa * kappa * S[3]
                j0 = -dm / area
                grad[0] += 2.0 * area * r * j0
                gn[0] += 2.0 * area * j0 * j0
                if nvar == 2:
                    dmk = (dk * S[0] - 0.5 * S[2]) / h
                    j1 = -dmk / area
                    grad[1] += 2.0 * area * r * j1
                    gn[1] += 2.0 * area * j1 * j1
    inv = 1.0 / (h * h)
    for k in range(nvar):
        grad[k] *= inv
        gn[k] *= inv
    return cost * inv, ok


@njit(cache=True)
def _objective(P, x, nvar, grad, gn, counters, phi_out):
    """Volume-constrained cost at x = (theta[, kappa*h])."""
    counters[_C_EVALS] += 1
    c = math.cos(x[0])
    s = math.sin(x[0])
    if nvar == 2:
        kappa = x[1] / P[_P_H]
    else:
        kappa = P[_P_KAPPA]
    phi, ok = _shift(c, s, kappa, P[_P_HX], P[_P_HY], P[_P_TARGET], counters)
    phi_out[0] = phi
    if not ok:
        for k in range(nvar):
            grad[k] = 0.0
            gn[k] = 0.0
        return np.inf
    f, ok2 = _cost_at(P, c, s, kappa, phi, nvar, grad, gn)
    return f


# ---------------------------------------------------------------------------
# quasi-Newton minimiser


@njit(cache=True)
def _dot(a, b, n):
    r = 0.0
    for k in range(n):
        r += a[k] * b[k]
    return r


@njit(cache=True)
def _cubic_min(a, fa, da, b, fb, db):
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    lo = min(a, b)
    hi = max(a, b)
    if rad >= 0.0:
        d2 = math.copysign(math.sqrt(rad), b - a)
        den = db - da + 2.0 * d2
        if den != 0.0:
            t = b - (b - a) * (db + d2 - d1) / den
            margin = 0.1 * (hi - lo)
            if lo + margin <= t <= hi - margin:
                return t
    return 0.5 * (a + b)


@njit(cache=True)
def _line_search(P, x, f0, g0, d, nvar, amax, a1, xn, gn_out, counters, phi_out, gnd):
    """Strong-Wolfe line search; returns (alpha, f) with xn, gn_out at the step."""
    c1 = 1e-4
    c2 = 0.9
    dphi0 = _dot(g0, d, nvar)
    xt = np.empty(nvar)
    gt = np.empty(nvar)
    xlo = np.empty(nvar)
    glo = np.empty(nvar)
    philo = np.empty(1)
    phit = np.empty(1)
    a_prev = 0.0
    f_prev = f0
    d_prev = dphi0
    for k in range(nvar):
        xlo[k] = x[k]
        glo[k] = g0[k]
    philo[0] = phi_out[0]
    a = min(a1, amax)
    lo_a = 0.0
    lo_f = f0
    lo_d = dphi0
    hi_a = 0.0
    hi_f = 0.0
    hi_d = 0.0
    zoom = False
    for it in range(25):
        for k in range(nvar):
            xt[k] = x[k] + a * d[k]
        ft = _objective(P, xt, nvar, gt, gnd, counters, phit)
        dt = _dot(gt, d, nvar)
        if not np.isfinite(ft):
            a = 0.5 * (a_prev + a)
            continue
        if ft > f0 + c1 * a * dphi0 or (it > 0 and ft >= f_prev):
            lo_a, lo_f, lo_d = a_prev, f_prev, d_prev
            hi_a, hi_f, hi_d = a, ft, dt
            zoom = True
            break
        if abs(dt) <= -c2 * dphi0:
            for k in range(nvar):
                xn[k] = xt[k]
                gn_out[k] = gt[k]
            phi_out[0] = phit[0]
            return a, ft
        # remember the best acceptable point so far
        for k in range(nvar):
            xlo[k] = xt[k]
            glo[k] = gt[k]
        philo[0] = phit[0]
        if dt >= 0.0:
            lo_a, lo_f, lo_d = a, ft, dt
            hi_a, hi_f, hi_d = a_prev, f_prev, d_prev
            zoom = True
            break
        if a >= amax:
            for k in range(nvar):
                xn[k] = xt[k]
                gn_out[k] = gt[k]
            phi_out[0] = phit[0]
            return a, ft
        a_prev, f_prev, d_prev = a, ft, dt
        a = min(2.0 * a, amax)
    if zoom:
        # xlo/glo hold the point at lo_a whenever lo_a > 0
        if lo_a == 0.0:
            for k in range(nvar):
                xlo[k] = x[k]
                glo[k] = g0[k]
        dmax = 0.0
        for k in range(nvar):
            dmax = max(dmax, abs(d[k]))
        for it in range(30):
            if abs(hi_a - lo_a) <= 1e-14 * max(abs(lo_a), abs(hi_a)) or abs(hi_a - lo_a) * dmax <= 1e-15:
                break
            a = _cubic_min(lo_a, lo_f, lo_d, hi_a, hi_f, hi_d)
            for k in range(nvar):
                xt[k] = x[k] + a * d[k]
            ft = _objective(P, xt, nvar, gt, gnd, counters, phit)
            dt = _dot(gt, d, nvar)
            if not np.isfinite(ft):
                hi_a, hi_f, hi_d = a, np.inf, 0.0
                continue
            if ft > f0 + c1 * a * dphi0 or ft >= lo_f:
                hi_a, hi_f, hi_d = a, ft, dt
            else:
                if abs(dt) <= -c2 * dphi0:
                    for k in range(nvar):
                        xn[k] = xt[k]
                        gn_out[k] = gt[k]
                    phi_out[0] = phit[0]
                    return a, ft
                if dt * (hi_a - lo_a) >= 0.0:
                    hi_a, hi_f, hi_d = lo_a, lo_f, lo_d
                lo_a, lo_f, lo_d = a, ft, dt
                for k in range(nvar):
                    xlo[k] = xt[k]
                    glo[k] = gt[k]
                philo[0] = phit[0]
    if lo_a > 0.0 and lo_f < f0:
        for k in range(nvar):
            xn[k] = xlo[k]
            gn_out[k] = glo[k]
        phi_out[0] = philo[0]
        return lo_a, lo_f
    return 0.0, f0


@njit(cache=True)
def _minimize(P, x0, nvar, counters, xbest, phibest):
    """L-BFGS with strong-Wolfe line search; returns (f, iterations, status)."""
    m = LBFGS_MEMORY
    gtol = P[_P_GTOL]
    h = P[_P_H]
    x = x0.copy()
    g = np.empty(nvar)
    gnd = np.empty(nvar)
    phi = np.empty(1)
    f = _objective(P, x, nvar, g, gnd, counters, phi)
    for k in range(nvar):
        xbest[k] = x[k]
    phibest[0] = phi[0]
    if not np.isfinite(f):
        return f, 0, ST_FAILED
    Sm = np.zeros((m, nvar))
    Ym = np.zeros((m, nvar))
    rho = np.zeros(m)
    al = np.zeros(m)
    nmem = 0
    head = 0
    d = np.empty(nvar)
    q = np.empty(nvar)
    xn = np.empty(nvar)
    gn = np.empty(nvar)
    h0 = np.empty(nvar)
    for k in range(nvar):
        h0[k] = 1.0 / gnd[k] if gnd[k] > 0.0 else 1.0
    status = ST_MAXITER
    it = 0
    while it < MAX_ITER:
        gnorm = 0.0
        for k in range(nvar):
            gnorm = max(gnorm, abs(g[k]))
        if gnorm == 0.0 or (gtol > 0.0 and gnorm < gtol):
            status = ST_CONVERGED
            break
        # two-loop recursion
        for k in range(nvar):
            q[k] = g[k]
        for j in range(nmem):
            idx = (head - 1 - j) % m
            al[idx] = rho[idx] * _dot(Sm[idx], q, nvar)
            for k in range(nvar):
                q[k] -= al[idx] * Ym[idx, k]
        if nmem > 0:
            last = (head - 1) % m
            gam = _dot(Sm[last], Ym[last], nvar) / _dot(Ym[last], Ym[last], nvar)
            for k in range(nvar):
                q[k] *= gam
        else:
            for k in range(nvar):
                q[k] *= h0[k]
        for j in range(nmem - 1, -1, -1):
            idx = (head - 1 - j) % m
            b = rho[idx] * _dot(Ym[idx], q, nvar)
            for k in range(nvar):
                q[k] += Sm[idx, k] * (al[idx] - b)
        for k in range(nvar):
            d[k] = -q[k]
        if _dot(g, d, nvar) >= 0.0:
            for k in range(nvar):
                d[k] = -g[k] * h0[k]
            nmem = 0
        # keep |kappa h| within the clamp and the first angle step moderate
        amax = 1e300
        if nvar == 2 and d[1] != 0.0:
            bound = KAPPA_H_MAX if d[1] > 0.0 else -KAPPA_H_MAX
            amax = max((bound - x[1]) / d[1], 0.0)
        a1 = 1.0
        if abs(d[0]) > 0.5:
            a1 = 0.5 / abs(d[0])
        if amax <= 0.0:
            status = ST_CONVERGED
            break
        dmax = 0.0
        for k in range(nvar):
            dmax = max(dmax, abs(d[k]))
        if dmax * min(a1, amax) <= STEP_TOL:
            # the quasi-Newton step predicts we are already within tolerance
            status = ST_CONVERGED
            break
        a, fn = _line_search(P, x, f, g, d, nvar, amax, a1, xn, gn, counters, phi, gnd)
        it += 1
        if a == 0.0:
            # no decrease possible: the iterate sits at the numerical floor
            status = ST_CONVERGED
            break
        step = 0.0
        for k in range(nvar):
            Sm[head, k] = xn[k] - x[k]
            Ym[head, k] = gn[k] - g[k]
            step = max(step, abs(Sm[head, k]))
        sy = _dot(Sm[head], Ym[head], nvar)
        if sy > 1e-300:
            rho[head] = 1.0 / sy
            head = (head + 1) % m
            nmem = min(nmem + 1, m)
        for k in range(nvar):
            x[k] = xn[k]
            g[k] = gn[k]
        f = fn
        for k in range(nvar):
            xbest[k] = x[k]
        phibest[0] = phi[0]
        if step <= STEP_TOL:
            status = ST_CONVERGED
            break
    return f, it, status


# ---------------------------------------------------------------------------
# methods


@njit(cache=True)
def _youngs(P):
    hx = P[_P_HX]
    hy = P[_P_HY]
    a = P[_P_ALPHA:_P_ALPHA + 9]
    # a[(di + 1) * 3 + (dj + 1)]
    gx = ((a[6] + 2.0 * a[7] + a[8]) - (a[0] + 2.0 * a[1] + a[2])) / (8.0 * hx)
    gy = ((a[2] + 2.0 * a[5] + a[8]) - (a[0] + 2.0 * a[3] + a[6])) / (8.0 * hy)
    if gx == 0.0 and gy == 0.0:
        return 0.5 * math.pi
    return math.atan2(-gy, -gx)


@njit(cache=True)
def _elvira_thetas(P, out):
    hx = P[_P_HX]
    hy = P[_P_HY]
    a = P[_P_ALPHA:_P_ALPHA + 9]
    t0 = _youngs(P)
    sy = 1.0 if math.sin(t0) >= 0.0 else -1.0
    sx = 1.0 if math.cos(t0) >= 0.0 else -1.0
    # column sums (interface as y(x)) and row sums (interface as x(y))
    col = np.empty(3)
    row = np.empty(3)
    for i in range(3):
        col[i] = (a[i * 3] + a[i * 3 + 1] + a[i * 3 + 2]) * hy
        row[i] = (a[i] + a[3 + i] + a[6 + i]) * hx
    slopes = np.empty(3)
    slopes[0] = (col[1] - col[0]) / hx
    slopes[1] = (col[2] - col[0]) / (2.0 * hx)
    slopes[2] = (col[2] - col[1]) / hx
    for k in range(3):
        # liquid below (sy > 0): y = b + H(x), gas above; liquid above: y = b - H(x)
        m = sy * slopes[k]
        out[k] = math.atan2(sy, -sy * m)
    slopes[0] = (row[1] - row[0]) / hy
    slopes[1] = (row[2] - row[0]) / (2.0 * hy)
    slopes[2] = (row[2] - row[1]) / hy
    for k in range(3):
        m = sx * slopes[k]
        out[3 + k] = math.atan2(-sx * m, sx)


@njit(cache=True)
def _reconstruct_packed(P, kappa0, counters, res):
    """Reconstruct one cell.  res = (theta, kappa, phi, cost, iterations, status)."""
    method = int(P[_P_METHOD])
    h = P[_P_H]
    grad = np.empty(2)
    gnd = np.empty(2)
    phi = np.empty(1)
    if method == 1:
        thetas = np.empty(6)
        _elvira_thetas(P, thetas)
        best = np.inf
        bt = thetas[0]
        bp = 0.0
        x = np.empty(1)
        for k in range(6):
            x[0] = thetas[k]
            f = _objective(P, x, 1, grad, gnd, counters, phi)
            if f < best:
                best = f
                bt = thetas[k]
                bp = phi[0]
        res[0] = bt
        res[1] = 0.0
        res[2] = bp
        res[3] = best
        res[4] = 0
        res[5] = ST_CONVERGED if np.isfinite(best) else ST_FAILED
        return
    theta0 = _youngs(P)
    if method == 5:
        nvar = 2
        x0 = np.empty(2)
        x0[0] = theta0
        k0 = kappa0 * h if np.isfinite(kappa0) else 0.0
        x0[1] = min(max(k0, -KAPPA_H_MAX), KAPPA_H_MAX)
    else:
        nvar = 1
        x0 = np.empty(1)
        x0[0] = theta0
    xb = np.empty(nvar)
    f, it, status = _minimize(P, x0, nvar, counters, xb, phi)
    if not np.isfinite(f):
        # fall back to the initial guess
        for k in range(nvar):
            xb[k] = x0[k]
        f = _objective(P, xb, nvar, grad, gnd, counters, phi)
        status = ST_FAILED
    res[0] = xb[0]
    res[1] = xb[1] / h if nvar == 2 else P[_P_KAPPA]
    res[2] = phi[0]
    res[3] = math.sqrt(f) if (method == 2 or method == 4) and f >= 0.0 else f
    res[4] = it
    res[5] = status


# ---------------------------------------------------------------------------
# packing helpers


def _pack(method: Method, stencil: CellStencil, tolerance: str = "tight") -> tuple[np.ndarray, float]:
    P = np.zeros(_P_SIZE)
    P[_P_METHOD] = int(method)
    P[_P_HX] = stencil.hx
    P[_P_HY] = stencil.hy
    P[_P_H] = stencil.h
    P[_P_ALPHA:_P_ALPHA + 9] = stencil.alpha.reshape(-1)
    P[_P_TARGET] = stencil.alpha[1, 1] * stencil.cell_area
    P[_P_L] = stencil.length_scale
    if tolerance == "paper":
        P[_P_GTOL] = min(1e-2, (stencil.h / stencil.length_scale) ** 2)
    elif tolerance != "tight":
        raise ValueError("tolerance must be 'tight' or 'paper'")
    if method.uses_moments:
        if stencil.m1_ref is None:
            raise ValueError(f"{method.name} needs a reference first moment")
        P[_P_M1X] = stencil.m1_ref[0] - stencil.center[0] * P[_P_TARGET]
        P[_P_M1Y] = stencil.m1_ref[1] - stencil.center[1] * P[_P_TARGET]
    kappa0 = np.nan
    if method.uses_given_curvature:
        P[_P_KAPPA] = 0.0 if stencil.kappa is None or not np.isfinite(stencil.kappa) else stencil.kappa
    elif method == Method.PROST and stencil.kappa is not None:
        kappa0 = float(stencil.kappa)
    return P, kappa0


def _pack_for_cut(cut: InterfaceCut, stencil: CellStencil, method: Method) -> np.ndarray:
    P, _ = _pack(method, stencil)
    P[_P_KAPPA] = cut.kappa
    return P


def _local_phi(cut: InterfaceCut, stencil: CellStencil) -> tuple[float, float, float]:
    """Re-express the cut about the stencil centre (same level set)."""
    c, s = math.cos(cut.theta), math.sin(cut.theta)
    dx = stencil.center[0] - cut.anchor[0]
    dy = stencil.center[1] - cut.anchor[1]
    if cut.kappa != 0.0 and (dx != 0.0 or dy != 0.0):
        raise ValueError("curved cuts must be anchored at the stencil centre")
    return c, s, cut.phi - (c * dx + s * dy)


# ---------------------------------------------------------------------------
# public operations


def initial_bracket(theta: float, kappa: float, cell: tuple[float, float], target_m0: float) -> tuple[float, float]:
    """Bracket for the shift of an hx x hy cell (shifts relative to the cell centre)."""
    hx, hy = cell
    c, s = math.cos(theta), math.sin(theta)
    phi1 = float(_linear_shift(c, s, hx, hy, target_m0))
    if kappa == 0.0:
        return phi1, phi1
    pe = 0.5 * (hx * abs(c) + hy * abs(s))
    pt = 0.5 * (hx * abs(s) + hy * abs(c))
    if kappa < 0.0:
        return 0.5 * kappa * pt * pt - pe, phi1
    return phi1, 0.5 * kappa * pt * pt + pe


def shift_for_volume(theta: float, kappa: float, cell: tuple[float, float], target_m0: float,
                     counters: np.ndarray | None = None) -> float:
    """Shift phi (relative to the cell centre) giving liquid area ``target_m0``."""
    hx, hy = cell
    if not 0.0 <= target_m0 <= hx * hy * (1 + 1e-15):
        raise ValueError("target area outside [0, cell area]")
    cnt = np.zeros(3, dtype=np.int64) if counters is None else counters
    phi, ok = _shift(math.cos(theta), math.sin(theta), float(kappa), float(hx), float(hy),
                     float(target_m0), cnt)
    if not ok:
        raise ArithmeticError("shift bracket does not contain a root")
    return float(phi)


def _cost_and_grad(cut: InterfaceCut, stencil: CellStencil, method: Method, nvar: int):
    P = _pack_for_cut(cut, stencil, method)
    c, s, phi = _local_phi(cut, stencil)
    grad = np.zeros(2)
    gn = np.zeros(2)
    f, ok = _cost_at(P, c, s, cut.kappa, phi, nvar, grad, gn)
    return f, grad[:nvar], ok


def cost_lvira(cut: InterfaceCut, stencil: CellStencil) -> float:
    """h^-2 sum over the eight neighbours of M0(c')(alpha' - M0(c' ∩ l)/M0(c'))^2."""
    return float(_cost_and_grad(cut, stencil, Method.LVIRA, 1)[0])


def cost_mof(cut: InterfaceCut, stencil: CellStencil) -> float:
    """|M1* - M1(c ∩ l)| / h^3."""
    if stencil.m1_ref is None:
        raise ValueError("cost_mof needs a reference first moment")
    return math.sqrt(_cost_and_grad(cut, stencil, Method.MOF, 1)[0])


def cost_symmdiff(cut: InterfaceCut, exact_region, stencil: CellStencil, depth: int = 12) -> float:
    """Area of (c ∩ l(q)) △ (c ∩ exact) over the cell area (diagnostic only)."""
    cx, cy = stencil.center
    win = (cx - stencil.hx / 2, cy - stencil.hy / 2, cx + stencil.hx / 2, cy + stencil.hy / 2)
    inside = lambda x, y: cut.level(x, y) <= 0.0
    return symmetric_difference_area(inside, exact_region, win, depth) / stencil.cell_area


def grad_cost_mof(cut: InterfaceCut, stencil: CellStencil) -> tuple[float, bool]:
    """d(cost_mof)/d(theta) under the volume constraint; returns (value, ok)."""
    if stencil.m1_ref is None:
        raise ValueError("grad_cost_mof needs a reference first moment")
    f, g, ok = _cost_and_grad(cut, stencil, Method.MOF, 1)
    if not ok or f == 0.0:
        return 0.0, ok
    return float(g[0] / (2.0 * math.sqrt(f))), ok


def grad_cost_lvira(cut: InterfaceCut, stencil: CellStencil, with_kappa: bool = True) -> tuple[np.ndarray, bool]:
    """(d/dtheta, d/d(kappa h)) of cost_lvira under the volume constraint."""
    f, g, ok = _cost_and_grad(cut, stencil, Method.LVIRA, 2 if with_kappa else 1)
    return g.copy(), ok


def moment_derivative(cut: InterfaceCut, stencil: CellStencil) -> tuple[float, float]:
    """d M1(c ∩ l)/d theta of the centre cell under the volume constraint."""
    P = _pack_for_cut(cut, stencil, Method.LVIRA)
    c, s, phi = _local_phi(cut, stencil)
    xs, ys = np.empty(4), np.empty(4)
    _box(stencil.hx, stencil.hy, 0, 0, xs, ys)
    Sc = np.empty(6)
    _clip_local(xs, ys, 4, c, s, cut.kappa, phi, Sc)
    dth, _, ok = _dphi(cut.kappa, phi, Sc)
    k = cut.kappa
    A = (dth * phi * Sc[0] - phi * Sc[1] - 0.5 * dth * k * Sc[2] + 0.5 * k * Sc[3]
         + k * phi * phi * Sc[1] - k * k * phi * Sc[3] + 0.25 * k ** 3 * Sc[5])
    B = dth * Sc[1] - Sc[2] + k * phi * Sc[2] - 0.5 * k * k * Sc[4]
    return (c * A - s * B, s * A + c * B)


def constrained_cost(method: Method, stencil: CellStencil, theta: float, kappa: float | None = None) -> float:
    """Cost of the volume-enforced cut with the given angle (and curvature).

    MOF-family values are the unsquared |M1* - M1| / h^3.
    """
    P, _ = _pack(method, stencil)
    cnt = np.zeros(3, dtype=np.int64)
    grad, gn, phi = np.zeros(2), np.zeros(2), np.zeros(1)
    if kappa is None:
        x = np.array([theta])
        nvar = 1
    else:
        P[_P_KAPPA] = kappa
        x = np.array([theta])
        nvar = 1
    f = _objective(P, x, nvar, grad, gn, cnt, phi)
    return math.sqrt(f) if method.uses_moments else float(f)


def youngs_normal(stencil: CellStencil) -> float:
    P, _ = _pack(Method.LVIRA, stencil)
    return float(_youngs(P))


def elvira_candidates(stencil: CellStencil) -> list[InterfaceCut]:
    P, _ = _pack(Method.ELVIRA, stencil)
    thetas = np.empty(6)
    _elvira_thetas(P, thetas)
    target = P[_P_TARGET]
    out = []
    for t in thetas:
        phi = _linear_shift(math.cos(t), math.sin(t), stencil.hx, stencil.hy, target)
        out.append(InterfaceCut(stencil.center, float(t), 0.0, float(phi)))
    return out


def reconstruct_cell(method: Method | str, stencil: CellStencil, tolerance: str = "tight") -> Reconstruction:
    method = Method.parse(method) if isinstance(method, str) else Method(method)
    a = stencil.alpha[1, 1]
    if not 0.0 < a < 1.0:
        raise ValueError("the centre cell must be mixed")
    P, kappa0 = _pack(method, stencil, tolerance)
    cnt = np.zeros(3, dtype=np.int64)
    res = np.zeros(6)
    _reconstruct_packed(P, kappa0, cnt, res)
    cut = InterfaceCut(stencil.center, float(res[0]), float(res[1]), float(res[2]))
    return Reconstruction(cut, float(res[3]), int(cnt[_C_EVALS]), int(res[4]), int(res[5]),
                          int(cnt[_C_BRENT]))


# ---------------------------------------------------------------------------
# whole-grid reconstruction


@njit(cache=True)
def _wrap(i, n, periodic):
    if periodic:
        return i % n
    if i < 0:
        return -1 - i
    if i >= n:
        return 2 * n - 1 - i
    return i


@njit(cache=True)
def _reconstruct_all(method, alpha, m1, kappa, kvalid, ox, oy, hx, hy, px, py, L, gtol_paper,
                     theta_o, kappa_o, phi_o, mixed_o, status_o, evals_o, brent_o):
    nx, ny = alpha.shape
    P = np.zeros(_P_SIZE)
    P[_P_METHOD] = method
    P[_P_HX] = hx
    P[_P_HY] = hy
    h = max(hx, hy)
    P[_P_H] = h
    P[_P_L] = L
    if gtol_paper:
        P[_P_GTOL] = min(1e-2, (h / L) ** 2)
    area = hx * hy
    cnt = np.zeros(3, dtype=np.int64)
    res = np.zeros(6)
    shifts = 0
    for i in range(nx):
        for j in range(ny):
            a = alpha[i, j]
            if a <= PURE_EPS or a >= 1.0 - PURE_EPS:
                mixed_o[i, j] = False
                continue
            mixed_o[i, j] = True
            for di in range(-1, 2):
                ii = _wrap(i + di, nx, px)
                for dj in range(-1, 2):
                    jj = _wrap(j + dj, ny, py)
                    P[_P_ALPHA + (di + 1) * 3 + (dj + 1)] = alpha[ii, jj]
            P[_P_TARGET] = a * area
            xc = ox + (i + 0.5) * hx
            yc = oy + (j + 0.5) * hy
            if method == 2 or method == 4:
                P[_P_M1X] = m1[i, j, 0] - xc * P[_P_TARGET]
                P[_P_M1Y] = m1[i, j, 1] - yc * P[_P_TARGET]
            k0 = np.nan
            if method == 3 or method == 4:
                kk = kappa[i, j] if kvalid[i, j] else 0.0
                P[_P_KAPPA] = min(max(kk, -KAPPA_H_MAX / h), KAPPA_H_MAX / h)
            else:
                P[_P_KAPPA] = 0.0
                if method == 5 and kvalid[i, j]:
                    k0 = kappa[i, j]
            cnt[0] = 0
            cnt[1] = 0
            cnt[2] = 0
            _reconstruct_packed(P, k0, cnt, res)
            theta_o[i, j] = res[0]
            kappa_o[i, j] = res[1]
            phi_o[i, j] = res[2]
            status_o[i, j] = int(res[5])
            evals_o[i, j] = cnt[0]
            brent_o[i, j] = cnt[1]
            shifts += cnt[2]
    return shifts


def reconstruct_field(method: Method | str, alpha: np.ndarray, hx: float, hy: float,
                      periodic: tuple[bool, bool] = (False, False), m1: np.ndarray | None = None,
                      kappa: np.ndarray | None = None, kappa_valid: np.ndarray | None = None,
                      length_scale: float = 1.0, tolerance: str = "tight",
                      origin: tuple[float, float] = (0.0, 0.0)) -> ReconstructionField:
    """Reconstruct every mixed cell of a fraction field.

    ``m1`` holds absolute liquid first moments; cell (i, j) is centred at
    origin + ((i + 1/2) hx, (j + 1/2) hy) and anchors its cut there.
    """
    method = Method.parse(method) if isinstance(method, str) else Method(method)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    nx, ny = alpha.shape
    if method.uses_moments and m1 is None:
        raise ValueError(f"{method.name} needs first moments")
    m1a = np.zeros((nx, ny, 2)) if m1 is None else np.ascontiguousarray(m1, dtype=np.float64)
    if kappa is None:
        kap = np.zeros((nx, ny))
        kv = np.zeros((nx, ny), dtype=np.bool_)
    else:
        kap = np.ascontiguousarray(kappa, dtype=np.float64)
        kv = np.isfinite(kap) if kappa_valid is None else np.ascontiguousarray(kappa_valid, dtype=np.bool_)
    out = ReconstructionField(np.zeros((nx, ny)), np.zeros((nx, ny)), np.zeros((nx, ny)),
                              np.zeros((nx, ny), dtype=np.bool_), np.zeros((nx, ny), dtype=np.int64),
                              np.zeros((nx, ny), dtype=np.int64), np.zeros((nx, ny), dtype=np.int64))
    if tolerance not in ("tight", "paper"):
        raise ValueError("tolerance must be 'tight' or 'paper'")
    out.shifts = int(_reconstruct_all(int(method), alpha, m1a, kap, kv, float(origin[0]), float(origin[1]),
                                      float(hx), float(hy),
                                      bool(periodic[0]), bool(periodic[1]), float(length_scale),
                                      tolerance == "paper", out.theta, out.kappa, out.phi, out.mixed,
                                      out.status, out.evaluations, out.brent))
    return out
