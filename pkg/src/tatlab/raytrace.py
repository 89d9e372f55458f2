"""Geometric ray tracing for the variable-speed wave equation.

Rays are x-projections of the bicharacteristic flow

    dx/ds  = -c^2(x) xi        dxi/ds  = 1/2 grad(c^2)(x) |xi|^2
    dt/ds  = tau               dtau/ds = 0

integrated with the classical 4th-order Runge-Kutta one-step method.  The
quantity c(x)|xi| is an exact invariant of the flow and is used to monitor
integration error.  The "plus" branch starts with xi(0) = -xi0 and therefore
moves along +xi0; the "minus" branch mirrors it.

Visibility of a point/direction pair is decided by whether either branch
enters the open tube of half-width ``v_margin`` around the observation arc
before the time horizon.  Every verdict records the horizon ``t_max`` it was
computed with: a finite trace can only certify invisibility up to that time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateDirectionError, ValidationError
from .medium import Arc, Rect, Scenario, SpeedField, eval_speed, grad_c2

BRANCHES = ("plus", "minus")

# batch ray status codes
_ACTIVE, _HIT, _ESCAPED, _TIME = 0, 1, 2, 3


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray
    t: float
    tau: float
    s: float


@dataclass
class RayPath:
    """Stored bicharacteristic projection with a termination verdict."""

    branch: str
    s: np.ndarray          # flow parameter, shape (n,)
    t: np.ndarray          # time, strictly increasing
    xs: np.ndarray         # positions, shape (n, 2)
    xis: np.ndarray        # covectors, shape (n, 2)
    tau: float
    verdict: str           # hit_v | escaped_domain | time_exhausted | step_limit
    t_hit: Optional[float] = None

    @property
    def points(self) -> list[PhasePoint]:
        return [
            PhasePoint(self.xs[i].copy(), self.xis[i].copy(), float(self.t[i]), self.tau, float(self.s[i]))
            for i in range(len(self.s))
        ]

    def hamiltonian_drift(self, field: SpeedField) -> float:
        """Max relative drift of the conserved quantity c(x)|xi| along the path."""
        c = eval_speed(field, self.xs)
        h = c * np.hypot(self.xis[:, 0], self.xis[:, 1])
        return float(np.max(np.abs(h - self.tau)) / self.tau)

    def csv_rows(self):
        """Rows "s,t,x,y,xi_x,xi_y" for export."""
        for i in range(len(self.s)):
            yield (self.s[i], self.t[i], self.xs[i, 0], self.xs[i, 1], self.xis[i, 0], self.xis[i, 1])


@dataclass(frozen=True)
class VisibilityVerdict:
    visible: bool
    t_hit: Optional[float]
    which_branch: Optional[str]
    t_max: float

    def __post_init__(self):
        if self.visible != (self.t_hit is not None):
            raise ValidationError("visible verdict must carry t_hit and only then")


def _rhs(field: SpeedField, x: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = eval_speed(field, x)
    c2 = c * c
    g = grad_c2(field, x)
    xi2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    return -c2[..., None] * xi, 0.5 * g * xi2[..., None]


def _rk4_step(field: SpeedField, x: np.ndarray, xi: np.ndarray, ds: float):
    k1x, k1xi = _rhs(field, x, xi)
    k2x, k2xi = _rhs(field, x + 0.5 * ds * k1x, xi + 0.5 * ds * k1xi)
    k3x, k3xi = _rhs(field, x + 0.5 * ds * k2x, xi + 0.5 * ds * k2xi)
    k4x, k4xi = _rhs(field, x + ds * k3x, xi + ds * k3xi)
    x_new = x + (ds / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    xi_new = xi + (ds / 6.0) * (k1xi + 2 * k2xi + 2 * k3xi + k4xi)
    return x_new, xi_new


def _initial_covector(field: SpeedField, x0: np.ndarray, xi0: np.ndarray, branch: str, normalize: bool):
    norm = float(np.hypot(xi0[0], xi0[1]))
    if norm == 0.0:
        raise DegenerateDirectionError("initial covector must be nonzero")
    if branch not in BRANCHES:
        raise ValidationError(f"branch must be one of {BRANCHES}, got {branch!r}")
    c0 = float(eval_speed(field, x0))
    if normalize:
        xi_init = xi0 / (norm * c0)  # |xi| = 1/c(x0) so tau = 1 and t = s
    else:
        xi_init = xi0.astype(float)
    tau = c0 * float(np.hypot(xi_init[0], xi_init[1]))
    sign = -1.0 if branch == "plus" else 1.0
    return sign * xi_init, tau


def trace_bicharacteristic(
    field: SpeedField,
    x0,
    xi0,
    branch: str,
    t_max: float,
    ds: float,
    rect: Rect,
    step_limit: Optional[int] = None,
    normalize: bool = True,
) -> RayPath:
    """Integrate one bicharacteristic and store every step.

    Terminates at the first of: t exceeding ``t_max``, the position leaving
    ``rect``, or ``step_limit`` steps.  By default the covector is rescaled
    so tau = 1 (then t coincides with the flow parameter); pass
    ``normalize=False`` to keep the raw magnitude.
    """
    if ds <= 0 or t_max <= 0:
        raise ValidationError("need ds > 0 and t_max > 0")
    x0 = np.asarray(x0, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    xi, tau = _initial_covector(field, x0, xi0, branch, normalize)
    x = x0.copy()

    max_steps = step_limit if step_limit is not None else int(np.ceil(t_max / (tau * ds))) + 1
    xs = [x.copy()]
    xis = [xi.copy()]
    n = 0
    verdict = "step_limit"
    while n < max_steps:
        if n * ds * tau >= t_max:
            verdict = "time_exhausted"
            break
        x, xi = _rk4_step(field, x, xi, ds)
        n += 1
        xs.append(x.copy())
        xis.append(xi.copy())
        if not bool(rect.contains(x)):
            verdict = "escaped_domain"
            break
    else:
        verdict = "step_limit"

    s = ds * np.arange(n + 1)
    return RayPath(
        branch=branch,
        s=s,
        t=tau * s,
        xs=np.asarray(xs),
        xis=np.asarray(xis),
        tau=tau,
        verdict=verdict,
    )


# ---------------------------------------------------------------------------
# batched tracing for visibility scans
# ---------------------------------------------------------------------------

def _refine_hit_time(arc: Arc, v_margin: float, x_prev, x_new, t_prev, t_new, n_iter=30):
    """Bisect along the step chord for the first tube-entry time."""
    lo = np.zeros(len(x_prev))
    hi = np.ones(len(x_prev))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        pts = x_prev + mid[:, None] * (x_new - x_prev)
        inside = arc.distance(pts) < v_margin
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return t_prev + hi * (t_new - t_prev)


def _trace_batch(
    field: SpeedField,
    x0: np.ndarray,
    dirs: np.ndarray,
    branch_signs: np.ndarray,
    t_max: float,
    ds: float,
    rect: Rect,
    arc: Optional[Arc] = None,
    v_margin: float = 0.0,
):
    """Trace many rays at once (tau normalized to 1, so t = s).

    Parameters are per-ray arrays: starts (B, 2), unit directions (B, 2) and
    branch signs (+1 for the plus branch).  Returns status codes, hit times
    and the minimum arc distance seen along each ray.
    """
    n = len(x0)
    c0 = eval_speed(field, x0)
    xi = -branch_signs[:, None] * dirs / c0[:, None]  # xi(0) = -sign * dir/c0
    x = x0.astype(float).copy()

    status = np.full(n, _ACTIVE, dtype=np.int8)
    t_hit = np.full(n, np.nan)
    min_dist = np.full(n, np.inf)
    if arc is not None:
        d = arc.distance(x)
        min_dist = d.copy()
        inside0 = d < v_margin
        status[inside0] = _HIT
        t_hit[inside0] = 0.0

    idx = np.nonzero(status == _ACTIVE)[0]
    xa = x[idx]
    xia = xi[idx]
    n_steps = int(np.ceil(t_max / ds))
    t = 0.0
    for _ in range(n_steps):
        if len(idx) == 0:
            break
        x_new, xi_new = _rk4_step(field, xa, xia, ds)
        t_new = t + ds
        if arc is not None:
            d = arc.distance(x_new)
            np.minimum.at(min_dist, idx, d)
            hit = d < v_margin
            if np.any(hit):
                hit_rows = np.nonzero(hit)[0]
                times = _refine_hit_time(
                    arc, v_margin, xa[hit_rows], x_new[hit_rows], t, t_new
                )
                status[idx[hit_rows]] = _HIT
                t_hit[idx[hit_rows]] = times
        escaped = ~rect.contains(x_new) & (status[idx] == _ACTIVE)
        status[idx[escaped]] = _ESCAPED
        keep = status[idx] == _ACTIVE
        if not np.all(keep):
            idx = idx[keep]
            xa = x_new[keep]
            xia = xi_new[keep]
        else:
            xa = x_new
            xia = xi_new
        t = t_new
    status[status == _ACTIVE] = _TIME
    return status, t_hit, min_dist


def is_visible(
    scenario: Scenario,
    field: SpeedField,
    x,
    xi,
    t_max: float,
    ds: float,
) -> VisibilityVerdict:
    """Decide whether either branch of the ray through (x, xi) meets the tube V."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    norm = float(np.hypot(xi[0], xi[1]))
    if norm == 0.0:
        raise DegenerateDirectionError("direction must be nonzero")
    u = xi / norm
    starts = np.stack([x, x])
    dirs = np.stack([u, u])
    signs = np.array([1.0, -1.0])
    status, t_hit, _ = _trace_batch(
        field, starts, dirs, signs, t_max, ds, scenario.domain_rect,
        arc=scenario.arc, v_margin=scenario.v_margin,
    )
    hits = status == _HIT
    if not np.any(hits):
        return VisibilityVerdict(False, None, None, t_max)
    which = int(np.nanargmin(np.where(hits, t_hit, np.inf)))
    return VisibilityVerdict(True, float(t_hit[which]), BRANCHES[which], t_max)


def _sunflower_disc(n: int, cx: float, cy: float, radius: float) -> np.ndarray:
    """Deterministic well-spread sample of a disc (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    r = radius * np.sqrt(i / n)
    theta = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=-1)


def half_circle_directions(n_dir: int) -> np.ndarray:
    """Uniform angular grid on [0, pi); xi and -xi generate the same ray."""
    if n_dir < 1:
        raise ValidationError(f"need n_dir >= 1, got {n_dir}")
    theta = np.pi * np.arange(n_dir) / n_dir
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


@dataclass
class VisibilityMap:
    positions: np.ndarray    # (P, 2)
    directions: np.ndarray   # (D, 2)
    visible: np.ndarray      # (P, D) bool
    fractions: np.ndarray    # (P,)
    t_max: float


def _scan_visibility(scenario, field, positions, directions, t_max, ds):
    """Status grid (P, D) of joint plus/minus visibility for a point lattice."""
    p = len(positions)
    d = len(directions)
    starts = np.repeat(positions, d * 2, axis=0)
    dirs = np.tile(np.repeat(directions, 2, axis=0), (p, 1))
    signs = np.tile(np.array([1.0, -1.0]), p * d)
    status, _, min_dist = _trace_batch(
        field, starts, dirs, signs, t_max, ds, scenario.domain_rect,
        arc=scenario.arc, v_margin=scenario.v_margin,
    )
    hit = (status == _HIT).reshape(p, d, 2).any(axis=2)
    clearance = min_dist.reshape(p, d, 2).min(axis=2) - scenario.v_margin
    return hit, clearance


def visibility_map(
    scenario: Scenario,
    field: SpeedField,
    n_pos: int,
    n_dir: int,
    t_max: float,
    ds: float,
) -> VisibilityMap:
    """Sample omega x directions and mark each pair visible or not."""
    if n_pos < 1:
        raise ValidationError(f"need n_pos >= 1, got {n_pos}")
    positions = _sunflower_disc(n_pos, scenario.omega.cx, scenario.omega.cy, scenario.omega.radius * 0.95)
    directions = half_circle_directions(n_dir)
    hit, _ = _scan_visibility(scenario, field, positions, directions, t_max, ds)
    return VisibilityMap(positions, directions, hit, hit.mean(axis=1), t_max)


@dataclass
class InvisibleDirectionResult:
    direction: Optional[np.ndarray]
    angle: Optional[float]
    clearance: Optional[float]
    n_dir: int
    t_max: float


def find_invisible_direction(
    scenario: Scenario,
    field: SpeedField,
    n_u_samples: int,
    n_dir: int,
    t_max: float,
    ds: float,
) -> InvisibleDirectionResult:
    """Search the angular grid for a direction invisible from all of U.

    A candidate qualifies when no sampled point of ``u_region`` sees the tube
    along either ray branch within ``t_max``.  Among qualifying candidates
    the one with the largest tube clearance is returned (first index wins
    ties).  Returns a result with ``direction=None`` when none qualifies.
    """
    u = scenario.u_region
    positions = _sunflower_disc(n_u_samples, u.cx, u.cy, u.radius)
    directions = half_circle_directions(n_dir)
    hit, clearance = _scan_visibility(scenario, field, positions, directions, t_max, ds)
    all_invisible = ~hit.any(axis=0)          # (D,)
    if not np.any(all_invisible):
        return InvisibleDirectionResult(None, None, None, n_dir, t_max)
    worst_clearance = clearance.min(axis=0)   # min over U samples
    score = np.where(all_invisible, worst_clearance, -np.inf)
    j = int(np.argmax(score))
    theta = np.pi * j / n_dir
    return InvisibleDirectionResult(directions[j], float(theta), float(worst_clearance[j]), n_dir, t_max)
