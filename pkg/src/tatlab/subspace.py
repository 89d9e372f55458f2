"""Product-function families f(x) = f0(x') h(x_n) and Fourier Sobolev norms.

The profiles are built from the standard smooth bump

    B(x) = exp(-1 / (1 - x^2))   for |x| < 1,   0 otherwise,

so every family member is infinitely smooth with compact support.  The
oscillating factor h_k(x) = B(x / eps) cos(k pi x / eps) concentrates its
spectrum near frequency k pi / eps; assembled products therefore carry their
high-frequency content in a narrow double cone around the chosen orientation,
which is the computable stand-in for a one-directional wavefront set.

Sobolev norms are computed with discrete Fourier weights <w>^s on a
zero-padded extension of the samples; compact support makes the implied
periodization benign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedOrderError, ValidationError
from .medium import Disc, GridField


@dataclass(frozen=True)
class BumpProfile:
    """Smooth compactly supported bump on [center - radius, center + radius]."""

    center: float
    radius: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = (x - self.center) / self.radius
        out = np.zeros_like(y)
        inside = np.abs(y) < 1.0
        yi = y[inside]
        out[inside] = np.exp(-1.0 / (1.0 - yi * yi))
        return out


@dataclass(frozen=True)
class OscillatorProfile:
    """Bump-windowed cosine h_k(x) = B(x/eps) cos(k pi x / eps), support [-eps, eps]."""

    k: int
    epsilon: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        window = BumpProfile(0.0, self.epsilon)(x)
        return window * np.cos(self.k * np.pi * x / self.epsilon)


def make_bump(center: float, radius: float) -> BumpProfile:
    if radius <= 0:
        raise ValidationError(f"bump radius must be positive, got {radius}")
    return BumpProfile(center, radius)


def make_oscillator(k: int, epsilon: float) -> OscillatorProfile:
    if k < 0:
        raise ValidationError(f"oscillation index must be >= 0, got {k}")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    return OscillatorProfile(int(k), epsilon)


@dataclass(frozen=True)
class ProductFunction:
    """Parameters of one family member; ``orientation`` is the oscillation axis."""

    f0_center: float
    f0_radius: float
    epsilon: float
    k: int
    orientation: tuple[float, float]

    def f0(self) -> BumpProfile:
        return make_bump(self.f0_center, self.f0_radius)

    def h(self) -> OscillatorProfile:
        return make_oscillator(self.k, self.epsilon)


def _unit(orientation) -> np.ndarray:
    w = np.asarray(orientation, dtype=float)
    n = float(np.hypot(w[0], w[1]))
    if n == 0:
        raise ValidationError("orientation must be nonzero")
    return w / n


def assemble_product(
    f0,
    h,
    orientation,
    grid: GridField,
    center,
    u_region: Disc | None = None,
    f0_radius: float | None = None,
    epsilon: float | None = None,
) -> GridField:
    """Sample f0(x') h(x_n) on the grid, x_n along ``orientation`` through ``center``.

    When ``u_region`` is given together with the support extents, the rotated
    support rectangle is checked to fit inside it.
    """
    w = _unit(orientation)
    wperp = np.array([-w[1], w[0]])
    center = np.asarray(center, dtype=float)
    if u_region is not None:
        if f0_radius is None or epsilon is None:
            raise ValidationError("support check needs f0_radius and epsilon")
        corners = []
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                corners.append(center + sx * f0_radius * wperp + sy * epsilon * w)
        if not bool(np.all(u_region.contains(np.asarray(corners)))):
            raise ValidationError("product support escapes the U disc")
    x, y = grid.meshgrid()
    dx = x - center[0]
    dy = y - center[1]
    x_par = dx * w[0] + dy * w[1]
    x_perp = dx * wperp[0] + dy * wperp[1]
    return grid.like(f0(x_perp) * h(x_par))


def build_product(pf: ProductFunction, grid: GridField, center, u_region: Disc | None = None) -> GridField:
    return assemble_product(
        pf.f0(), pf.h(), pf.orientation, grid, center,
        u_region=u_region, f0_radius=pf.f0_radius, epsilon=pf.epsilon,
    )


# ---------------------------------------------------------------------------
# Sobolev norms via Fourier weights
# ---------------------------------------------------------------------------

def sobolev_norm(samples: np.ndarray, s: float, spacing, pad: int = 4) -> float:
    """H^s norm of uniformly sampled data (1D or 2D) via Fourier weights.

    Zero-pads by ``pad`` along every axis before transforming; the weight of
    mode w is (1 + |w|^2)^(s/2).  With s = 0 this reduces to the L2 norm of
    the sample quadrature.
    """
    if s < 0:
        raise UnsupportedOrderError(f"Sobolev order must be >= 0, got {s}")
    if pad < 1:
        raise ValidationError(f"pad factor must be >= 1, got {pad}")
    a = np.asarray(samples, dtype=float)
    if a.ndim == 1:
        dx = float(spacing)
        n = pad * a.shape[0]
        ahat = np.fft.fft(a, n=n)
        w2 = (2 * np.pi * np.fft.fftfreq(n, d=dx)) ** 2
        total = np.sum((1.0 + w2) ** s * np.abs(ahat) ** 2) * dx / n
        return float(np.sqrt(total))
    if a.ndim == 2:
        try:
            dx, dy = (float(spacing[0]), float(spacing[1]))
        except TypeError:
            dx = dy = float(spacing)
        nx, ny = pad * a.shape[0], pad * a.shape[1]
        ahat = np.fft.fft2(a, s=(nx, ny))
        wx2 = (2 * np.pi * np.fft.fftfreq(nx, d=dx)) ** 2
        wy2 = (2 * np.pi * np.fft.fftfreq(ny, d=dy)) ** 2
        weight = (1.0 + wx2[:, None] + wy2[None, :]) ** s
        total = np.sum(weight * np.abs(ahat) ** 2) * dx * dy / (nx * ny)
        return float(np.sqrt(total))
    raise ValidationError("samples must be a 1D or 2D array")


def profile_samples(profile, halfwidth: float, n: int) -> tuple[np.ndarray, float]:
    """Sample a profile on a symmetric uniform grid; returns (values, spacing)."""
    x = np.linspace(-halfwidth, halfwidth, n)
    return profile(x), float(x[1] - x[0])
