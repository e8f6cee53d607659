"""Convergence experiments, CSV tables and order fitting."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .advect import AdvectionState, CFLViolation, advance, reconstruct_state, volume_residual
from .curvature import ghf_field
from .fields import (Circle, Flower, Grid, HalfPlane, StaggeredVelocity, VortexVelocity,
                     cfl_timestep, error_norms, init_moments_exact, reconstructed_moments,
                     symmdiff_per_cell)
from .reconstruct import Method, reconstruct_field

EXPERIMENTS = ("recon-convergence", "vortex-reverse", "curvature-static", "geometry-selftest")
CSV_HEADER = ("N", "h", "symm_diff", "frac_linf", "m1_linf", "kappa_linf", "wall_time_s", "cost_evals_mean")

# a cell counts as floored when its error is below this multiple of eps * scale
FLOOR_FACTOR = 100.0
# fraction of reconstructions allowed to fail before a run is declared failed
MAX_FAIL_FRACTION = 0.01
# volume residual tolerance, relative to the cell area
VOLUME_TOL = 1e-12


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    method: Method | str = Method.MOF
    resolutions: tuple[int, ...] = (32, 64, 128, 256)
    period: float = 1.0
    courant: float = 1.0
    out: str | None = None
    seed: int = 0
    long: bool = False
    velocity: str = "analytic"
    timing: bool = True
    tolerance: str = "tight"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        if isinstance(self.method, str):
            try:
                self.method = Method.parse(self.method)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        res = tuple(int(n) for n in self.resolutions)
        if not res or any(n < 4 for n in res):
            raise ConfigError("resolutions must be integers >= 4")
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ConfigError("resolutions must be strictly ascending")
        self.resolutions = res
        if not (0.0 < self.courant <= 1.0):
            raise ConfigError("courant must lie in (0, 1]")
        if not (self.period > 0.0 and math.isfinite(self.period)):
            raise ConfigError("period must be positive")
        if self.velocity not in ("analytic", "staggered"):
            raise ConfigError("velocity must be 'analytic' or 'staggered'")
        if self.tolerance not in ("tight", "paper"):
            raise ConfigError("tolerance must be 'tight' or 'paper'")


@dataclass
class ConvergenceRow:
    N: int
    h: float
    symm_diff: float
    frac_linf: float
    m1_linf: float
    kappa_linf: float
    wall_time_s: float
    cost_evals_mean: float

    def __post_init__(self):
        for name in ("symm_diff", "frac_linf", "m1_linf", "kappa_linf"):
            v = getattr(self, name)
            # nan marks a quantity that is undefined for the experiment
            if not math.isnan(v) and v < 0.0:
                raise ValueError(f"{name} must be non-negative, got {v}")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in dc_fields(self))


@dataclass
class RunStats:
    """Bookkeeping collected over every reconstruction of a run."""

    reconstructions: int = 0
    failed: int = 0
    max_volume_residual: float = 0.0
    brent_total: float = 0.0
    shifts: int = 0
    steps: int = 0
    clamped: float = 0.0

    def add(self, recon, residual: float):
        n = int(np.count_nonzero(recon.mixed))
        self.reconstructions += n
        self.failed += recon.n_failed
        self.max_volume_residual = max(self.max_volume_residual, residual)
        self.brent_total += float(recon.brent.sum())
        self.shifts += recon.shifts

    @property
    def mean_brent(self) -> float:
        return self.brent_total / self.shifts if self.shifts else 0.0

    @property
    def fail_fraction(self) -> float:
        return self.failed / self.reconstructions if self.reconstructions else 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[ConvergenceRow]
    stats: dict[int, RunStats] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    def slopes(self) -> dict[str, float | None]:
        return fit_order(self.rows)

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_to_csv(rows: list[ConvergenceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r.as_tuple()])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ConvergenceRow]:
    rd = csv.reader(io.StringIO(text))
    header = tuple(next(rd))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for rec in rd:
        if not rec:
            continue
        out.append(ConvergenceRow(int(rec[0]), *(float(v) for v in rec[1:])))
    return out


def write_csv(rows: list[ConvergenceRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


# ---------------------------------------------------------------------------
# order fitting


def _floor_scale(column: str, h: float) -> float:
    # natural magnitude of each quantity on a cell of size h
    return {"symm_diff": h, "frac_linf": 1.0, "m1_linf": h ** 3, "kappa_linf": 1.0}[column]


def fit_order(rows: list[ConvergenceRow], columns=("symm_diff", "frac_linf", "m1_linf", "kappa_linf"),
              floor_factor: float = FLOOR_FACTOR) -> dict[str, float | None]:
    """Least-squares slope of log(error) against log(h) for each column.

    Rows with error below floor_factor * eps * scale(h) are dropped as
    floored; a column with fewer than two usable rows gets None.
    """
    if len(rows) < 3:
        raise ValueError("fit_order needs at least three rows")
    eps = np.finfo(float).eps
    out: dict[str, float | None] = {}
    for col in columns:
        xs, ys = [], []
        for r in rows:
            e = getattr(r, col)
            if not (math.isfinite(e) and e > 0.0):
                continue
            if e < floor_factor * eps * _floor_scale(col, r.h):
                continue
            xs.append(math.log(r.h))
            ys.append(math.log(e))
        if len(xs) < 2:
            out[col] = None
            continue
        x = np.array(xs)
        y = np.array(ys)
        xm = x.mean()
        out[col] = float(np.sum((x - xm) * (y - y.mean())) / np.sum((x - xm) ** 2))
    return out


# ---------------------------------------------------------------------------
# experiments


def _clock(cfg: ExperimentConfig) -> float:
    return time.perf_counter() if cfg.timing else 0.0


def _given_curvature(method: Method, alpha: np.ndarray, grid: Grid):
    if method.uses_given_curvature or method == Method.PROST:
        cf = ghf_field(alpha, grid.hx, grid.hy, grid.periodic)
        return cf.kappa, cf.valid
    return None, None


def _check_stats(stats: RunStats, n: int, messages: list[str]) -> None:
    if stats.fail_fraction > MAX_FAIL_FRACTION:
        raise NumericalFailure(f"N={n}: {stats.failed} of {stats.reconstructions} reconstructions failed")
    if stats.failed:
        messages.append(f"N={n}: {stats.failed} reconstructions did not converge")
    if stats.max_volume_residual > VOLUME_TOL:
        messages.append(f"N={n}: volume residual {stats.max_volume_residual:.3e} exceeds {VOLUME_TOL:g}")


FLOWER = Flower()


def run_recon_convergence(cfg: ExperimentConfig) -> ExperimentResult:
    """Reconstruct the exactly initialized flower at each resolution."""
    method = Method(cfg.method)
    res = ExperimentResult(cfg, [])
    for n in cfg.resolutions:
        grid = Grid.square(n, -0.5, 0.5)
        alpha, m1 = init_moments_exact(FLOWER, grid)
        t0 = _clock(cfg)
        kappa, kvalid = _given_curvature(method, alpha, grid)
        recon = reconstruct_field(method, alpha, grid.hx, grid.hy, grid.periodic,
                                  m1=m1 if method.uses_moments else None, kappa=kappa,
                                  kappa_valid=kvalid, tolerance=cfg.tolerance, origin=grid.origin)
        wall = _clock(cfg) - t0
        stats = RunStats()
        stats.add(recon, volume_residual(grid, alpha, recon))
        _check_stats(stats, n, res.messages)
        rep = error_norms(grid, alpha, recon, FLOWER, exact=(alpha, m1))
        res.rows.append(ConvergenceRow(n, grid.h, rep.symm_diff, rep.frac_linf, rep.m1_linf,
                                       float("nan"), wall, recon.mean_evaluations))
        res.stats[n] = stats
    return res


VORTEX_CIRCLE = Circle((0.5, 0.75), 0.15)


def _vortex_grid(n: int) -> Grid:
    # the stream function is periodic on the unit square and its normal
    # velocity on y = 0, 1 is nonzero, so both axes wrap
    return Grid.square(n, 0.0, 1.0, periodic=True)


def reference_step(grid: Grid, velocity, T: float, courant: float, samples: int = 64) -> float:
    """CFL step for the largest corner speed seen at ``samples + 1`` times in [0, T]."""
    return min(cfl_timestep(grid, velocity, k * T / samples, courant, cap=T) for k in range(samples + 1))


def _next_step(grid: Grid, velocity, t: float, T: float, courant: float, cap: float) -> float:
    remaining = T - t
    # a step sized by the instantaneous speed alone grows without bound as the
    # vortex slows down, and the time error of that step does not shrink with h
    dt = min(cfl_timestep(grid, velocity, t, courant, cap=remaining), remaining, cap)
    # the speed can grow during the step; shrink until the end speed agrees
    for _ in range(50):
        d2 = cfl_timestep(grid, velocity, min(t + dt, T), courant, cap=dt)
        if d2 >= dt:
            break
        dt = d2
    if T - (t + dt) < 1e-12 * T:
        dt = remaining
    return dt


def simulate_vortex(cfg: ExperimentConfig, n: int, stats: RunStats | None = None):
    """Advance the circle through the reversing vortex to t = T.

    Returns (grid, initial exact moments, final state, mean cost evaluations).
    """
    method = Method(cfg.method)
    grid = _vortex_grid(n)
    alpha0, m10 = init_moments_exact(VORTEX_CIRCLE, grid)
    base = VortexVelocity(cfg.period)
    T = cfg.period
    state = AdvectionState(alpha0.copy(), m10.copy() if method.uses_moments else None, 0.0)
    evals = []
    stats = stats if stats is not None else RunStats()
    cap = reference_step(grid, base, T, cfg.courant)
    while state.t < T:
        dt = _next_step(grid, base, state.t, T, cfg.courant, cap)
        vel = StaggeredVelocity(base, grid, dt, start=state.t) if cfg.velocity == "staggered" else base
        state, rep = advance(state, method, vel, dt, grid, tolerance=cfg.tolerance)
        if state.t > T or T - state.t < 1e-14 * T:
            state.t = T
        stats.add(rep.recon, rep.volume_residual)
        stats.steps += 1
        evals.append(rep.recon.mean_evaluations)
    stats.clamped = state.clamped
    return grid, (alpha0, m10), state, (float(np.mean(evals)) if evals else 0.0)


def run_vortex_reverse(cfg: ExperimentConfig) -> ExperimentResult:
    """Reversible vortex; errors of the state at t = T against the initial circle."""
    method = Method(cfg.method)
    res = ExperimentResult(cfg, [])
    for n in cfg.resolutions:
        stats = RunStats()
        t0 = _clock(cfg)
        grid, exact, state, evals = simulate_vortex(cfg, n, stats)
        wall = _clock(cfg) - t0
        recon, _ = reconstruct_state(state, method, grid, cfg.tolerance)
        stats.add(recon, volume_residual(grid, state.alpha, recon))
        _check_stats(stats, n, res.messages)
        if method == Method.PROST:
            # PROST carries its own curvature
            kappa, kvalid = recon.kappa, recon.mixed
        else:
            cf = ghf_field(state.alpha, grid.hx, grid.hy, grid.periodic)
            kappa, kvalid = cf.kappa, cf.valid
        rep = error_norms(grid, state.alpha, recon, VORTEX_CIRCLE, exact=exact, kappa=kappa, kappa_valid=kvalid)
        res.rows.append(ConvergenceRow(n, grid.h, rep.symm_diff, rep.frac_linf, rep.m1_linf,
                                       rep.kappa_linf, wall, evals))
        res.stats[n] = stats
    return res


STATIC_RADIUS = 0.25
STATIC_CENTER = (0.5 + 1.0 / 97.0, 0.5 + 1.0 / 61.0)


def run_curvature_static(cfg: ExperimentConfig) -> ExperimentResult:
    """GHF curvature of an exactly initialized circle; N counts cells per radius."""
    res = ExperimentResult(cfg, [])
    shape = Circle(STATIC_CENTER, STATIC_RADIUS)
    for n in cfg.resolutions:
        cells = int(round(n / STATIC_RADIUS))
        grid = Grid.square(cells, 0.0, 1.0)
        alpha, m1 = init_moments_exact(shape, grid)
        t0 = _clock(cfg)
        cf = ghf_field(alpha, grid.hx, grid.hy, grid.periodic)
        wall = _clock(cfg) - t0
        interface = (alpha > 1e-10) & (alpha < 1.0 - 1e-10)
        if not np.any(cf.valid & interface):
            raise NumericalFailure(f"N={n}: no valid curvature")
        err = float(np.max(np.abs(cf.kappa[cf.valid & interface] - shape.exact_curvature())))
        missing = int(np.count_nonzero(interface & ~cf.valid))
        if missing:
            res.messages.append(f"N={n}: {missing} interface cells without a valid curvature")
        res.rows.append(ConvergenceRow(n, grid.h, 0.0, 0.0, 0.0, err, wall, 0.0))
    return res


def run_geometry_selftest(cfg: ExperimentConfig, lines: int = 100) -> ExperimentResult:
    """Random straight interfaces reconstructed with cfg.method on N x N grids.

    symm_diff is the largest per-cell symmetric difference relative to h^2
    over cells away from the boundary, which must vanish for a
    line-preserving method.  frac_linf is the largest volume residual.
    """
    method = Method(cfg.method)
    rng = np.random.default_rng(cfg.seed)
    res = ExperimentResult(cfg, [])
    for n in cfg.resolutions:
        grid = Grid.square(n, 0.0, 1.0)
        worst = m1e = 0.0
        evals = []
        stats = RunStats()
        t0 = _clock(cfg)
        for _ in range(lines):
            theta = rng.uniform(-math.pi, math.pi)
            anchor = tuple(rng.uniform(0.3, 0.7, 2))
            shape = HalfPlane(theta, 0.0, anchor)
            alpha, m1 = init_moments_exact(shape, grid)
            kappa = np.zeros_like(alpha) if method.uses_given_curvature else None
            kvalid = np.ones(alpha.shape, dtype=bool) if method.uses_given_curvature else None
            recon = reconstruct_field(method, alpha, grid.hx, grid.hy, grid.periodic,
                                      m1=m1 if method.uses_moments else None, kappa=kappa,
                                      kappa_valid=kvalid, tolerance=cfg.tolerance, origin=grid.origin)
            stats.add(recon, volume_residual(grid, alpha, recon))
            per = symmdiff_per_cell(grid, alpha, recon, shape, alpha)
            _, rm1 = reconstructed_moments(grid, alpha, recon)
            # only cells whose 3x3 block lies inside the domain see the true line
            worst = max(worst, float(np.max(per[1:-1, 1:-1])) / grid.h ** 2)
            m1e = max(m1e, float(np.max(np.hypot(*(rm1 - m1)[1:-1, 1:-1].transpose(2, 0, 1)))))
            evals.append(recon.mean_evaluations)
        wall = _clock(cfg) - t0
        _check_stats(stats, n, res.messages)
        res.rows.append(ConvergenceRow(n, grid.h, worst, stats.max_volume_residual, m1e, float("nan"), wall, float(np.mean(evals))))
        res.stats[n] = stats
    return res


RUNNERS = {
    "recon-convergence": run_recon_convergence,
    "vortex-reverse": run_vortex_reverse,
    "curvature-static": run_curvature_static,
    "geometry-selftest": run_geometry_selftest,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    try:
        return RUNNERS[cfg.experiment](cfg)
    except CFLViolation as exc:
        raise NumericalFailure(f"CFL violation: {exc}") from exc


# ---------------------------------------------------------------------------
# expected orders used by --check


EXPECTED_SLOPES: dict[tuple[str, Method], dict[str, tuple[float, float]]] = {
    ("recon-convergence", Method.MOF): {"symm_diff": (1.6, 2.4), "m1_linf": (4.5, 5.5)},
    ("recon-convergence", Method.LVIRA): {"symm_diff": (1.6, 2.4)},
    ("recon-convergence", Method.PMOF): {"symm_diff": (2.6, 3.4)},
    ("recon-convergence", Method.PLVIRA): {"symm_diff": (2.6, 3.4)},
    ("recon-convergence", Method.PROST): {"symm_diff": (2.6, 3.4)},
    ("vortex-reverse", Method.ELVIRA): {"frac_linf": (0.6, 1.4), "kappa_linf": (-math.inf, 0.3)},
    ("vortex-reverse", Method.LVIRA): {"kappa_linf": (-math.inf, 0.3)},
    ("vortex-reverse", Method.MOF): {"frac_linf": (0.6, 1.4), "kappa_linf": (-math.inf, 0.3)},
    ("vortex-reverse", Method.PLVIRA): {"frac_linf": (1.6, 2.4), "kappa_linf": (1.4, 2.6)},
    ("vortex-reverse", Method.PMOF): {"frac_linf": (1.6, 2.4), "kappa_linf": (0.5, 1.5)},
    ("vortex-reverse", Method.PROST): {"frac_linf": (1.6, 2.4), "kappa_linf": (1.4, 2.6)},
}


def check_slopes(result: ExperimentResult) -> list[str]:
    """Messages for every fitted slope outside its expected band."""
    cfg = result.config
    if cfg.experiment == "curvature-static":
        bands = {"kappa_linf": (1.8, math.inf)}
    elif cfg.experiment == "geometry-selftest":
        bad = [f"N={r.N}: symm_diff/h^2 = {r.symm_diff:.3e}" for r in result.rows if r.symm_diff > 1e-10]
        return bad
    else:
        bands = EXPECTED_SLOPES.get((cfg.experiment, Method(cfg.method)), {})
    if not bands:
        return []
    if len(result.rows) < 3:
        return ["--check needs at least three resolutions"]
    slopes = result.slopes()
    out = []
    for col, (lo, hi) in bands.items():
        s = slopes.get(col)
        if s is None or not (lo <= s <= hi):
            out.append(f"{col} slope {s} outside [{lo}, {hi}]")
    return out
