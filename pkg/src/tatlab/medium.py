"""Sound-speed fields and scenario geometry.

The acoustic medium is a smooth positive speed c(x) on the plane with global
bounds 0 < c_min <= c(x) <= c_max.  Five families are provided:

- ``constant``            c = c0
- ``linear_gradient``     c = a + b*y (analytic circular rays, used as an
                          integrator oracle); bounds are taken over the
                          rectangle on which the field will be evaluated
- ``gaussian_waveguide``  c(r) = 1 - a*exp(-(r - r0)^2 / sigma^2), a low-speed
                          annular channel that traps tangential rays
- ``radial_bump``         c(r) = 1 + a*exp(-r^2 / sigma^2), a smooth
                          non-trapping perturbation
- ``gridded``             bilinear interpolation of a sampled field

A `Scenario` bundles the geometry every experiment needs: the computational
rectangle, the region of interest (a disc), the observation arc with its
sampling, the open tube of half-width ``v_margin`` around the arc, a source
disc inside the region of interest, and the observation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, OutOfDomainError, ValidationError

_BOUNDS_SLACK = 1e-9

SPEED_KINDS = ("constant", "linear_gradient", "gaussian_waveguide", "radial_bump", "gridded")


# ---------------------------------------------------------------------------
# basic geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [xmin, xmax] x [ymin, ymax]."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValidationError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Vectorized membership test; positive margin shrinks the rectangle."""
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return (
            (x >= self.xmin + margin)
            & (x <= self.xmax - margin)
            & (y >= self.ymin + margin)
            & (y <= self.ymax - margin)
        )


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError(f"disc radius must be positive, got {self.radius}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def contains(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d2 = (pts[..., 0] - self.cx) ** 2 + (pts[..., 1] - self.cy) ** 2
        r = self.radius - margin
        return d2 <= r * r


@dataclass(frozen=True)
class Arc:
    """Circular arc; angles in radians, a span of 2*pi means a full circle."""

    cx: float
    cy: float
    radius: float
    angle_start: float
    angle_end: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValidationError(f"arc radius must be positive, got {self.radius}")
        if not (self.angle_end > self.angle_start):
            raise ValidationError("arc needs angle_end > angle_start")
        if self.angle_end - self.angle_start > 2 * np.pi + 1e-12:
            raise ValidationError("arc span exceeds a full circle")

    @property
    def span(self) -> float:
        return self.angle_end - self.angle_start

    @property
    def is_full_circle(self) -> bool:
        return abs(self.span - 2 * np.pi) <= 1e-12

    def sample(self, n_s: int) -> tuple[np.ndarray, np.ndarray]:
        """Uniform angular sampling: points (n_s, 2) and quadrature weights.

        A full circle is sampled periodically (no duplicated endpoint, equal
        weights); an open arc includes both endpoints with trapezoid weights.
        Weights sum to the arc length.
        """
        if n_s < 2:
            raise ValidationError(f"need n_s >= 2 arc samples, got {n_s}")
        if self.is_full_circle:
            theta = self.angle_start + self.span * np.arange(n_s) / n_s
            w = np.full(n_s, self.radius * self.span / n_s)
        else:
            theta = np.linspace(self.angle_start, self.angle_end, n_s)
            dtheta = self.span / (n_s - 1)
            w = np.full(n_s, self.radius * dtheta)
            w[0] *= 0.5
            w[-1] *= 0.5
        pts = np.stack(
            [self.cx + self.radius * np.cos(theta), self.cy + self.radius * np.sin(theta)],
            axis=-1,
        )
        return pts, w

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to the arc (vectorized)."""
        pts = np.asarray(pts, dtype=float)
        dx = pts[..., 0] - self.cx
        dy = pts[..., 1] - self.cy
        r = np.hypot(dx, dy)
        if self.is_full_circle:
            return np.abs(r - self.radius)
        ang = np.arctan2(dy, dx)
        rel = np.mod(ang - self.angle_start, 2 * np.pi)
        on_arc = rel <= self.span
        d0 = np.hypot(
            pts[..., 0] - (self.cx + self.radius * np.cos(self.angle_start)),
            pts[..., 1] - (self.cy + self.radius * np.sin(self.angle_start)),
        )
        d1 = np.hypot(
            pts[..., 0] - (self.cx + self.radius * np.cos(self.angle_end)),
            pts[..., 1] - (self.cy + self.radius * np.sin(self.angle_end)),
        )
        return np.where(on_arc, np.abs(r - self.radius), np.minimum(d0, d1))


# ---------------------------------------------------------------------------
# gridded data carrier
# ---------------------------------------------------------------------------

@dataclass
class GridField:
    """Uniformly sampled scalar field: values[i, j] = f(origin + (i*h, j*h)).

    Axis 0 runs along x, axis 1 along y; ``values`` has shape (nx, ny).
    """

    nx: int
    ny: int
    h: float
    origin: tuple[float, float]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.h <= 0:
            raise ValidationError(f"grid spacing must be positive, got {self.h}")
        if self.values.shape != (self.nx, self.ny):
            raise ValidationError(
                f"values shape {self.values.shape} != (nx, ny) = ({self.nx}, {self.ny})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid values must be finite")

    @classmethod
    def zeros(cls, nx: int, ny: int, h: float, origin: tuple[float, float]) -> "GridField":
        return cls(nx, ny, h, origin, np.zeros((nx, ny)))

    @classmethod
    def from_rect(cls, rect: Rect, nx: int, ny: int) -> "GridField":
        """Zero field whose nodes cover `rect` exactly (requires square cells)."""
        hx = rect.width / (nx - 1)
        hy = rect.height / (ny - 1)
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ValidationError(
                f"non-square cells: hx={hx:.6g}, hy={hy:.6g}; adjust nx/ny"
            )
        return cls.zeros(nx, ny, hx, (rect.xmin, rect.ymin))

    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def y_coords(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_coords(), self.y_coords(), indexing="ij")

    @property
    def rect(self) -> Rect:
        return Rect(
            self.origin[0],
            self.origin[0] + self.h * (self.nx - 1),
            self.origin[1],
            self.origin[1] + self.h * (self.ny - 1),
        )

    def l2_norm(self) -> float:
        """Discrete L2 norm with cell quadrature h^2."""
        return float(self.h * np.sqrt(np.sum(self.values**2)))

    def like(self, values: np.ndarray) -> "GridField":
        return GridField(self.nx, self.ny, self.h, self.origin, values)

    def copy(self) -> "GridField":
        return self.like(self.values.copy())


# ---------------------------------------------------------------------------
# speed fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedField:
    """Immutable sound-speed field with analytic gradient of c^2.

    ``params`` is interpreted per kind; use the factory functions below
    rather than constructing directly.
    """

    kind: str
    params: tuple[float, ...]
    c_min: float
    c_max: float
    grid: Optional[GridField] = None

    def __post_init__(self):
        if self.kind not in SPEED_KINDS:
            raise ValidationError(f"unknown speed kind {self.kind!r}")
        if not (0 < self.c_min <= self.c_max):
            raise ValidationError(
                f"speed bounds must satisfy 0 < c_min <= c_max, got [{self.c_min}, {self.c_max}]"
            )


def constant_speed(c: float = 1.0) -> SpeedField:
    if c <= 0:
        raise ValidationError(f"constant speed must be positive, got {c}")
    return SpeedField("constant", (c,), c, c)


def linear_gradient_speed(a: float, b: float, rect: Rect) -> SpeedField:
    """c(x, y) = a + b*y; bounds taken over `rect`, which must keep c positive."""
    lo = min(a + b * rect.ymin, a + b * rect.ymax)
    hi = max(a + b * rect.ymin, a + b * rect.ymax)
    if lo <= 0:
        raise ValidationError(f"linear speed not positive on rectangle (min {lo:.6g})")
    return SpeedField("linear_gradient", (a, b), lo, hi)


def gaussian_waveguide_speed(amplitude: float = 0.3, r0: float = 1.0, sigma: float = 0.1) -> SpeedField:
    """Low-speed circular channel c(r) = 1 - amplitude*exp(-(r - r0)^2/sigma^2)."""
    if not (0 < amplitude < 1):
        raise ValidationError(f"waveguide amplitude must be in (0, 1), got {amplitude}")
    if r0 <= 0 or sigma <= 0:
        raise ValidationError("waveguide needs r0 > 0 and sigma > 0")
    return SpeedField("gaussian_waveguide", (amplitude, r0, sigma), 1.0 - amplitude, 1.0)


def radial_bump_speed(amplitude: float = 0.3, sigma: float = 0.5) -> SpeedField:
    """High-speed bump at the origin: c(r) = 1 + amplitude*exp(-r^2/sigma^2)."""
    if amplitude <= 0 or sigma <= 0:
        raise ValidationError("radial bump needs positive amplitude and sigma")
    return SpeedField("radial_bump", (amplitude, sigma), 1.0, 1.0 + amplitude)


def gridded_speed(grid: GridField) -> SpeedField:
    vmin = float(grid.values.min())
    vmax = float(grid.values.max())
    if vmin <= 0:
        raise ValidationError(f"gridded speed must be positive everywhere (min {vmin:.6g})")
    return SpeedField("gridded", (), vmin, vmax, grid=grid)


def _bilinear(grid: GridField, pts: np.ndarray, arr: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    fx = (pts[..., 0] - grid.origin[0]) / grid.h
    fy = (pts[..., 1] - grid.origin[1]) / grid.h
    eps = 1e-9
    if np.any(fx < -eps) or np.any(fx > grid.nx - 1 + eps) or np.any(fy < -eps) or np.any(fy > grid.ny - 1 + eps):
        raise OutOfDomainError("point outside gridded speed support")
    fx = np.clip(fx, 0.0, grid.nx - 1 - 1e-12)
    fy = np.clip(fy, 0.0, grid.ny - 1 - 1e-12)
    ix = fx.astype(int)
    iy = fy.astype(int)
    tx = fx - ix
    ty = fy - iy
    return (
        arr[ix, iy] * (1 - tx) * (1 - ty)
        + arr[ix + 1, iy] * tx * (1 - ty)
        + arr[ix, iy + 1] * (1 - tx) * ty
        + arr[ix + 1, iy + 1] * tx * ty
    )


def eval_speed(f: SpeedField, x) -> np.ndarray:
    """Evaluate c at points of shape (..., 2); returns shape (...)."""
    x = np.asarray(x, dtype=float)
    if f.kind == "constant":
        c = np.full(x.shape[:-1], f.params[0])
    elif f.kind == "linear_gradient":
        a, b = f.params
        c = a + b * x[..., 1]
    elif f.kind == "gaussian_waveguide":
        a, r0, sig = f.params
        r = np.hypot(x[..., 0], x[..., 1])
        c = 1.0 - a * np.exp(-((r - r0) ** 2) / sig**2)
    elif f.kind == "radial_bump":
        a, sig = f.params
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        c = 1.0 + a * np.exp(-r2 / sig**2)
    else:  # gridded
        c = _bilinear(f.grid, x, f.grid.values)
    cmin = float(np.min(c)) if c.size else f.c_min
    cmax = float(np.max(c)) if c.size else f.c_max
    if cmin < f.c_min - _BOUNDS_SLACK or cmax > f.c_max + _BOUNDS_SLACK:
        raise ValidationError(
            f"speed left its declared bounds [{f.c_min}, {f.c_max}]: got [{cmin}, {cmax}]"
        )
    return c


def grad_c2(f: SpeedField, x) -> np.ndarray:
    """Gradient of c^2 at points of shape (..., 2); returns shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    if f.kind == "constant":
        return np.zeros(x.shape)
    if f.kind == "linear_gradient":
        a, b = f.params
        g = np.zeros(x.shape)
        g[..., 1] = 2.0 * b * (a + b * x[..., 1])
        return g
    if f.kind == "gaussian_waveguide":
        a, r0, sig = f.params
        r = np.hypot(x[..., 0], x[..., 1])
        bump = np.exp(-((r - r0) ** 2) / sig**2)
        c = 1.0 - a * bump
        # dc/dr = 2a(r - r0)/sigma^2 * bump; unit radial direction x/r
        dc_dr = 2.0 * a * (r - r0) / sig**2 * bump
        scale = np.where(r > 1e-300, 2.0 * c * dc_dr / np.maximum(r, 1e-300), 0.0)
        return scale[..., None] * x
    if f.kind == "radial_bump":
        a, sig = f.params
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        bump = np.exp(-r2 / sig**2)
        c = 1.0 + a * bump
        # dc2/dx = 2c * a * bump * (-2x/sigma^2)
        scale = -4.0 * c * a * bump / sig**2
        return scale[..., None] * x
    # gridded: central differences of sampled c^2, interpolated bilinearly
    grid = f.grid
    c2 = grid.values**2
    gx = np.zeros_like(c2)
    gy = np.zeros_like(c2)
    gx[1:-1, :] = (c2[2:, :] - c2[:-2, :]) / (2 * grid.h)
    gx[0, :] = (c2[1, :] - c2[0, :]) / grid.h
    gx[-1, :] = (c2[-1, :] - c2[-2, :]) / grid.h
    gy[:, 1:-1] = (c2[:, 2:] - c2[:, :-2]) / (2 * grid.h)
    gy[:, 0] = (c2[:, 1] - c2[:, 0]) / grid.h
    gy[:, -1] = (c2[:, -1] - c2[:, -2]) / grid.h
    out = np.empty(x.shape)
    out[..., 0] = _bilinear(grid, x, gx)
    out[..., 1] = _bilinear(grid, x, gy)
    return out


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Geometry and timing of one observation experiment.

    Attributes
    ----------
    domain_rect : Rect
        Computational rectangle (the truncated plane).
    omega : Disc
        Region of interest; initial data live in its closure.
    arc : Arc
        Observation curve S.
    n_s : int
        Number of arc sample points.
    v_margin : float
        Half-width of the open tube V around the arc.
    u_region : Disc
        Source disc inside omega used by the invisible-direction search.
    t_obs : float
        Observation time T.
    n_t : int
        Requested minimum number of trace time samples (the solver records
        at its own step and always satisfies this minimum).
    """

    domain_rect: Rect
    omega: Disc
    arc: Arc
    n_s: int
    v_margin: float
    u_region: Disc
    t_obs: float
    n_t: int

    def __post_init__(self):
        r = self.domain_rect
        om = self.omega
        if not (
            om.cx - om.radius > r.xmin
            and om.cx + om.radius < r.xmax
            and om.cy - om.radius > r.ymin
            and om.cy + om.radius < r.ymax
        ):
            raise ValidationError("omega closure must lie in the domain interior")
        du = np.hypot(self.u_region.cx - om.cx, self.u_region.cy - om.cy)
        if du + self.u_region.radius > om.radius + 1e-12:
            raise ValidationError("u_region must lie inside omega")
        pts, _ = self.arc.sample(max(self.n_s, 64))
        if not bool(np.all(self.domain_rect.contains(pts, margin=1e-12))):
            raise ValidationError("observation arc must lie in the domain interior")
        if self.t_obs <= 0:
            raise ValidationError(f"t_obs must be positive, got {self.t_obs}")
        if self.n_s < 2:
            raise ValidationError(f"n_s must be >= 2, got {self.n_s}")
        if self.n_t < 2:
            raise ValidationError(f"n_t must be >= 2, got {self.n_t}")
        if self.v_margin <= 0:
            raise ValidationError(f"v_margin must be positive, got {self.v_margin}")

    def arc_sample(self) -> tuple[np.ndarray, np.ndarray]:
        return self.arc.sample(self.n_s)

    def in_tube(self, pts: np.ndarray) -> np.ndarray:
        """Membership in the open tube V around the arc."""
        return self.arc.distance(pts) < self.v_margin


_SCENARIO_KEYS = {
    "domain_xmin": float,
    "domain_xmax": float,
    "domain_ymin": float,
    "domain_ymax": float,
    "omega_cx": float,
    "omega_cy": float,
    "omega_radius": float,
    "arc_cx": float,
    "arc_cy": float,
    "arc_radius": float,
    "arc_deg_start": float,
    "arc_deg_end": float,
    "n_s": int,
    "v_margin": float,
    "u_cx": float,
    "u_cy": float,
    "u_radius": float,
    "t_obs": float,
    "n_t": int,
}


def build_scenario(config: dict) -> Scenario:
    """Build a Scenario from a flat key/value mapping (the [scenario] section)."""
    vals = {}
    for key, cast in _SCENARIO_KEYS.items():
        if key not in config:
            raise ConfigError(f"scenario.{key}")
        try:
            vals[key] = cast(config[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario.{key}: {exc}") from exc
    for key in config:
        if key not in _SCENARIO_KEYS:
            raise ConfigError(f"unknown key scenario.{key}")
    return Scenario(
        domain_rect=Rect(vals["domain_xmin"], vals["domain_xmax"], vals["domain_ymin"], vals["domain_ymax"]),
        omega=Disc(vals["omega_cx"], vals["omega_cy"], vals["omega_radius"]),
        arc=Arc(
            vals["arc_cx"],
            vals["arc_cy"],
            vals["arc_radius"],
            np.deg2rad(vals["arc_deg_start"]),
            np.deg2rad(vals["arc_deg_end"]),
        ),
        n_s=vals["n_s"],
        v_margin=vals["v_margin"],
        u_region=Disc(vals["u_cx"], vals["u_cy"], vals["u_radius"]),
        t_obs=vals["t_obs"],
        n_t=vals["n_t"],
    )


_MEDIUM_KINDS = {
    "constant": ("c",),
    "linear_gradient": ("a", "b"),
    "gaussian_waveguide": ("amplitude", "r0", "sigma"),
    "radial_bump": ("amplitude", "sigma"),
    "gridded": ("grid_path",),
}


def build_speed_field(config: dict, rect: Rect) -> SpeedField:
    """Build a SpeedField from the [medium] section (rect for linear bounds)."""
    if "kind" not in config:
        raise ConfigError("medium.kind")
    kind = str(config["kind"])
    if kind not in _MEDIUM_KINDS:
        raise ConfigError(f"medium.kind: unknown kind {kind!r}")
    allowed = set(_MEDIUM_KINDS[kind]) | {"kind"}
    for key in config:
        if key not in allowed:
            raise ConfigError(f"unknown key medium.{key}")
    for key in _MEDIUM_KINDS[kind]:
        if key not in config:
            raise ConfigError(f"medium.{key}")
    if kind == "constant":
        return constant_speed(float(config["c"]))
    if kind == "linear_gradient":
        return linear_gradient_speed(float(config["a"]), float(config["b"]), rect)
    if kind == "gaussian_waveguide":
        return gaussian_waveguide_speed(
            float(config["amplitude"]), float(config["r0"]), float(config["sigma"])
        )
    if kind == "radial_bump":
        return radial_bump_speed(float(config["amplitude"]), float(config["sigma"]))
    from .gridio import read_grid

    return gridded_speed(read_grid(str(config["grid_path"])))
