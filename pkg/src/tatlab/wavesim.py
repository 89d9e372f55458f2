"""Finite-difference forward solver for p_tt = c^2(x) lap p on a truncated plane.

The scheme is the standard second-order leapfrog

    p^{n+1} = 2 p^n - p^{n-1} + dt^2 c^2 lap_h p^n,

started with p^1 = p^0 + 1/2 dt^2 c^2 lap_h p^0 (zero initial velocity) and
stabilized by dt <= cfl * h / c_max with cfl <= 1/sqrt(2).  Free space is
emulated by a sponge layer: inside the absorbing frame the update becomes

    (1 + sigma dt) p^{n+1} = 2 p^n - (1 - sigma dt) p^{n-1} + dt^2 c^2 lap_h p^n,

i.e. a damping term 2 sigma p_t with a polynomial ramp that vanishes strictly
inside the physical region.  A periodic mode (no sponge, wrapped Laplacian)
supports comparison against the exact constant-coefficient propagator.

The trace on the observation arc is sampled by bilinear interpolation at
every solver step; no temporal resampling is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, CFLError, ValidationError
from .medium import Disc, GridField, Scenario, SpeedField, eval_speed

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

CFL_LIMIT = 1.0 / np.sqrt(2.0)
SUPPORT_TOL = 1e-12


# ---------------------------------------------------------------------------
# data carriers
# ---------------------------------------------------------------------------

@dataclass
class SpongeLayer:
    """Absorbing frame: ``width`` cells, damping sigma_max * depth^exponent.

    ``sigma_max=None`` picks kappa * c_max / (width * h) with kappa = 4,
    which keeps round-trip reflections below the tested energy budget.
    """

    width: int = 32
    sigma_max: Optional[float] = None
    exponent: float = 3.0

    def __post_init__(self):
        if self.width < 0:
            raise ValidationError(f"sponge width must be >= 0, got {self.width}")
        if self.exponent <= 0:
            raise ValidationError(f"sponge exponent must be positive, got {self.exponent}")

    def sigma_array(self, nx: int, ny: int, h: float, c_max: float) -> np.ndarray:
        if self.width == 0:
            return np.zeros((nx, ny))
        sig_max = self.sigma_max
        if sig_max is None:
            sig_max = 4.0 * c_max / (self.width * h)
        ix = np.arange(nx)
        iy = np.arange(ny)
        bx = np.minimum(ix, nx - 1 - ix)
        by = np.minimum(iy, ny - 1 - iy)
        depth_x = np.clip((self.width - bx) / self.width, 0.0, 1.0)
        depth_y = np.clip((self.width - by) / self.width, 0.0, 1.0)
        depth = np.maximum(depth_x[:, None], depth_y[None, :])
        return sig_max * depth**self.exponent


@dataclass
class WaveState:
    """Two consecutive pressure layers of the leapfrog scheme."""

    p_curr: GridField
    p_prev: GridField
    t: float
    dt: float

    def __post_init__(self):
        a, b = self.p_curr, self.p_prev
        if (a.nx, a.ny, a.h, a.origin) != (b.nx, b.ny, b.h, b.origin):
            raise ValidationError("pressure layers must share grid geometry")
        if self.dt <= 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")


@dataclass
class TraceRecord:
    """Sampled boundary data g(y_i, t_n) on the arc, one column per step."""

    values: np.ndarray       # (n_s, n_t)
    arc_points: np.ndarray   # (n_s, 2)
    arc_weights: np.ndarray  # (n_s,) quadrature weights, sum = arc length
    dt: float
    t_obs: float

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.arc_points):
            raise ValidationError("trace shape must be (n_s, n_t)")
        if (self.values.shape[1] - 1) * self.dt < self.t_obs - 1e-9 * self.t_obs:
            raise ValidationError("trace samples must cover [0, t_obs]")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("trace values must be finite")

    @property
    def n_s(self) -> int:
        return self.values.shape[0]

    @property
    def n_t(self) -> int:
        return self.values.shape[1]

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t)

    def time_weights(self) -> np.ndarray:
        w = np.full(self.n_t, self.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def l2_norm(self) -> float:
        """Quadrature approximation of the L2(Gamma) norm."""
        wt = self.time_weights()
        return float(np.sqrt(np.einsum("s,st,t->", self.arc_weights, self.values**2, wt)))

    def scaled(self, factor: float) -> "TraceRecord":
        return TraceRecord(self.values * factor, self.arc_points, self.arc_weights, self.dt, self.t_obs)


@dataclass
class SimulationResult:
    trace: TraceRecord
    snapshots: list
    dt: float
    n_steps: int
    state: WaveState
    energy_times: Optional[np.ndarray] = None
    energy_values: Optional[np.ndarray] = None
    u_field: Optional[GridField] = None


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _step_numba(pn, pc, pp, r2, am, ap):  # pragma: no cover - exercised via simulate
        nx, ny = pc.shape
        for i in prange(1, nx - 1):
            for j in range(1, ny - 1):
                lap = pc[i - 1, j] + pc[i + 1, j] + pc[i, j - 1] + pc[i, j + 1] - 4.0 * pc[i, j]
                pn[i, j] = (2.0 * pc[i, j] - am[i, j] * pp[i, j] + r2[i, j] * lap) / ap[i, j]


def _step_numpy(pn, pc, pp, r2, am, ap):
    lap = (
        pc[:-2, 1:-1] + pc[2:, 1:-1] + pc[1:-1, :-2] + pc[1:-1, 2:] - 4.0 * pc[1:-1, 1:-1]
    )
    pn[1:-1, 1:-1] = (
        2.0 * pc[1:-1, 1:-1]
        - am[1:-1, 1:-1] * pp[1:-1, 1:-1]
        + r2[1:-1, 1:-1] * lap
    ) / ap[1:-1, 1:-1]


def _laplacian_periodic(p):
    return (
        np.roll(p, 1, axis=0) + np.roll(p, -1, axis=0)
        + np.roll(p, 1, axis=1) + np.roll(p, -1, axis=1)
        - 4.0 * p
    )


def _laplacian_dirichlet(p):
    out = np.zeros_like(p)
    out[1:-1, 1:-1] = (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1]
    )
    return out


def bilinear_sampler(grid: GridField, pts: np.ndarray):
    """Precompute gather indices/weights for repeated interpolation at ``pts``."""
    fx = (pts[:, 0] - grid.origin[0]) / grid.h
    fy = (pts[:, 1] - grid.origin[1]) / grid.h
    if np.any(fx < 0) or np.any(fx > grid.nx - 1) or np.any(fy < 0) or np.any(fy > grid.ny - 1):
        raise ValidationError("sample points fall outside the grid")
    ix = np.minimum(fx.astype(int), grid.nx - 2)
    iy = np.minimum(fy.astype(int), grid.ny - 2)
    tx = fx - ix
    ty = fy - iy
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
    return ix, iy, w


def sample_bilinear(p: np.ndarray, sampler) -> np.ndarray:
    ix, iy, w = sampler
    return (
        w[0] * p[ix, iy] + w[1] * p[ix + 1, iy] + w[2] * p[ix, iy + 1] + w[3] * p[ix + 1, iy + 1]
    )


def scatter_bilinear(values: np.ndarray, sampler, shape) -> np.ndarray:
    """Transpose of :func:`sample_bilinear`: spread point values onto the grid."""
    ix, iy, w = sampler
    out = np.zeros(shape)
    np.add.at(out, (ix, iy), w[0] * values)
    np.add.at(out, (ix + 1, iy), w[1] * values)
    np.add.at(out, (ix, iy + 1), w[2] * values)
    np.add.at(out, (ix + 1, iy + 1), w[3] * values)
    return out


# ---------------------------------------------------------------------------
# solver setup shared with the reconstruction module
# ---------------------------------------------------------------------------

def resolve_time_step(t_obs: float, h: float, c_max: float, cfl: float, dt: Optional[float]):
    """Pick dt dividing t_obs evenly under the CFL bound; returns (dt, n_steps)."""
    if dt is not None:
        if dt > CFL_LIMIT * h / c_max * (1 + 1e-12):
            raise CFLError(f"dt = {dt:g} violates dt <= h/(c_max*sqrt(2)) = {CFL_LIMIT*h/c_max:g}")
        n_steps = int(np.ceil(t_obs / dt - 1e-9))
        return t_obs / n_steps, n_steps
    if not (0 < cfl <= CFL_LIMIT + 1e-12):
        raise CFLError(f"cfl must lie in (0, 1/sqrt(2)], got {cfl}")
    dt0 = cfl * h / c_max
    n_steps = int(np.ceil(t_obs / dt0 - 1e-9))
    return t_obs / n_steps, n_steps


def _check_support(f: GridField, omega: Disc):
    x, y = f.meshgrid()
    outside = ~omega.contains(np.stack([x, y], axis=-1))
    peak = np.max(np.abs(f.values))
    if peak == 0.0:
        return
    if np.max(np.abs(f.values[outside]), initial=0.0) > SUPPORT_TOL * peak:
        raise ValidationError("initial data must be supported in the closure of omega")


def _check_grid_covers(f: GridField, scenario: Scenario):
    g = f.rect
    r = scenario.domain_rect
    tol = 1e-9 * max(r.width, r.height)
    if g.xmin > r.xmin + tol or g.xmax < r.xmax - tol or g.ymin > r.ymin + tol or g.ymax < r.ymax - tol:
        raise ValidationError("grid must cover the scenario domain rectangle")


@dataclass
class _StencilPlan:
    r2: np.ndarray
    am: np.ndarray
    ap: np.ndarray
    dt: float
    n_steps: int
    periodic: bool

    def first_step(self, p0: np.ndarray) -> np.ndarray:
        if self.periodic:
            return p0 + 0.5 * self.r2 * _laplacian_periodic(p0)
        p1 = p0.copy()
        p1[1:-1, 1:-1] += 0.5 * self.r2[1:-1, 1:-1] * (
            p0[:-2, 1:-1] + p0[2:, 1:-1] + p0[1:-1, :-2] + p0[1:-1, 2:] - 4.0 * p0[1:-1, 1:-1]
        )
        return p1

    def step(self, pn: np.ndarray, pc: np.ndarray, pp: np.ndarray):
        if self.periodic:
            pn[:] = 2.0 * pc - pp + self.r2 * _laplacian_periodic(pc)
        elif _HAVE_NUMBA:
            _step_numba(pn, pc, pp, self.r2, self.am, self.ap)
        else:
            _step_numpy(pn, pc, pp, self.r2, self.am, self.ap)


def build_stencil_plan(
    field: SpeedField,
    grid: GridField,
    t_obs: float,
    sponge: Optional[SpongeLayer],
    cfl: float = 0.5,
    dt: Optional[float] = None,
    periodic: bool = False,
) -> _StencilPlan:
    x, y = grid.meshgrid()
    c = eval_speed(field, np.stack([x, y], axis=-1))
    dt, n_steps = resolve_time_step(t_obs, grid.h, field.c_max, cfl, dt)
    r2 = (dt / grid.h) ** 2 * c**2
    if periodic:
        if sponge is not None and sponge.width > 0:
            raise ValidationError("periodic mode requires the sponge to be disabled")
        sigma = np.zeros_like(r2)
    else:
        sponge = sponge if sponge is not None else SpongeLayer()
        sigma = sponge.sigma_array(grid.nx, grid.ny, grid.h, field.c_max)
    am = 1.0 - sigma * dt
    ap = 1.0 + sigma * dt
    return _StencilPlan(r2=r2, am=am, ap=ap, dt=dt, n_steps=n_steps, periodic=periodic)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def simulate(
    field: SpeedField,
    f: GridField,
    scenario: Scenario,
    sponge: Optional[SpongeLayer] = None,
    snapshots_every: int = 0,
    *,
    cfl: float = 0.5,
    dt: Optional[float] = None,
    periodic: bool = False,
    track_energy_every: int = 0,
) -> SimulationResult:
    """Propagate initial pressure ``f`` and record the trace on the arc.

    Every solver step appends one trace column; ``snapshots_every`` > 0 also
    stores (t, pressure) pairs at that step cadence plus the final step.
    ``track_energy_every`` > 0 accumulates u(t) = int_0^t p and records the
    energy functional at that cadence.
    """
    if not periodic:
        # a periodic grid is the torus itself; its last row wraps to the first
        _check_grid_covers(f, scenario)
    _check_support(f, scenario.omega)
    plan = build_stencil_plan(field, f, scenario.t_obs, sponge, cfl=cfl, dt=dt, periodic=periodic)

    arc_pts, arc_w = scenario.arc_sample()
    sampler = bilinear_sampler(f, arc_pts)
    n_steps = plan.n_steps
    trace = np.empty((len(arc_pts), n_steps + 1))

    pp = f.values.copy()
    pc = plan.first_step(pp)
    pn = np.empty_like(pp)
    trace[:, 0] = sample_bilinear(pp, sampler)
    trace[:, 1] = sample_bilinear(pc, sampler)

    snapshots = []
    if snapshots_every > 0:
        snapshots.append((0.0, f.like(pp.copy())))

    track = track_energy_every > 0
    if track:
        x, ygrid = f.meshgrid()
        c_grid = eval_speed(field, np.stack([x, ygrid], axis=-1))
        u = np.zeros_like(pp)
        u += 0.5 * plan.dt * (pp + pc)
        e_times = [0.0]
        e_vals = [_energy_arrays(pp, c_grid, np.zeros_like(pp), np.zeros_like(pp), f.h)]

    for n in range(1, n_steps):
        plan.step(pn, pc, pp)
        pp, pc, pn = pc, pn, pp
        trace[:, n + 1] = sample_bilinear(pc, sampler)
        t_now = (n + 1) * plan.dt
        if track:
            u += 0.5 * plan.dt * (pp + pc)  # trapezoid increment for the new step
            if (n + 1) % track_energy_every == 0:
                ux, uy = np.gradient(u, f.h, edge_order=2)
                e_times.append(t_now)
                e_vals.append(_energy_arrays(pc, c_grid, ux, uy, f.h))
        if snapshots_every > 0 and (n + 1) % snapshots_every == 0:
            snapshots.append((t_now, f.like(pc.copy())))
        if (n + 1) % 64 == 0 and not np.all(np.isfinite(pc)):
            raise BlowUpError(n + 1)

    if not np.all(np.isfinite(pc)):
        raise BlowUpError(n_steps)
    if snapshots_every > 0 and snapshots[-1][0] < scenario.t_obs:
        snapshots.append((n_steps * plan.dt, f.like(pc.copy())))

    record = TraceRecord(trace, arc_pts, arc_w, plan.dt, scenario.t_obs)
    state = WaveState(f.like(pc.copy()), f.like(pp.copy()), n_steps * plan.dt, plan.dt)
    result = SimulationResult(record, snapshots, plan.dt, n_steps, state)
    if track:
        result.energy_times = np.asarray(e_times)
        result.energy_values = np.asarray(e_vals)
        result.u_field = f.like(u)
    return result


def forward_trace(plan: _StencilPlan, f_values: np.ndarray, sampler) -> np.ndarray:
    """Lean forward solve returning only the (n_s, n_steps + 1) trace array.

    Used for repeated solves (operator columns, iterative reconstruction)
    where snapshots and diagnostics are not needed.
    """
    n_s = len(sampler[0])
    trace = np.empty((n_s, plan.n_steps + 1))
    pp = f_values.copy()
    pc = plan.first_step(pp)
    pn = np.empty_like(pp)
    trace[:, 0] = sample_bilinear(pp, sampler)
    trace[:, 1] = sample_bilinear(pc, sampler)
    for n in range(1, plan.n_steps):
        plan.step(pn, pc, pp)
        pp, pc, pn = pc, pn, pp
        trace[:, n + 1] = sample_bilinear(pc, sampler)
        if (n + 1) % 256 == 0 and not np.all(np.isfinite(pc)):
            raise BlowUpError(n + 1)
    if not np.all(np.isfinite(trace)):
        raise BlowUpError(plan.n_steps)
    return trace


def _energy_arrays(p, c, ux, uy, h) -> float:
    return float(h * h * np.sum((p / c) ** 2 + ux**2 + uy**2))


def energy(state: WaveState, field: SpeedField, u_grad: tuple[GridField, GridField]) -> float:
    """Energy functional ||p/c||^2 + ||grad u||^2 of the accumulated integral u."""
    g = state.p_curr
    x, y = g.meshgrid()
    c = eval_speed(field, np.stack([x, y], axis=-1))
    return _energy_arrays(g.values, c, u_grad[0].values, u_grad[1].values, g.h)


def spectral_oracle(f: GridField, c_const: float, t: float) -> GridField:
    """Exact periodic constant-speed propagator via the discrete Fourier transform."""
    if c_const <= 0:
        raise ValidationError(f"speed must be positive, got {c_const}")
    kx = 2 * np.pi * np.fft.fftfreq(f.nx, d=f.h)
    ky = 2 * np.pi * np.fft.fftfreq(f.ny, d=f.h)
    kk = np.sqrt(kx[:, None] ** 2 + ky[None, :] ** 2)
    phat = np.fft.fft2(f.values) * np.cos(c_const * kk * t)
    return f.like(np.real(np.fft.ifft2(phat)))
