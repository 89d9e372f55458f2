"""Spectral diagnostics of the discretized forward map.

Three instruments live here:

- a dense matrix assembly of the trace operator (columns = traces of
  L2-normalized basis functions with quadrature weights folded in, so matrix
  2-norms approximate L2 norms on the observation cylinder) together with its
  singular values;
- s-numbers of Sobolev embeddings, computed from the generalized eigenvalue
  problem between the two inner-product Gram matrices on explicit bases
  (sine modes on an interval, Fourier modes on a torus), used both as decay
  oracles and inside the stability probe;
- the instability experiment: trace-norm ratios r_k of an oscillating
  product family, their decay fits, and the exponent comparison
  [s_j(i2)]^(1-mu) vs C [s_j(i1)]^mu whose sign flip at large j is the
  finite-scale signature of the absent stability estimate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    ConditioningError,
    InsufficientDataError,
    UndefinedRatioError,
    UnsupportedOrderError,
    ValidationError,
)
from .medium import Disc, GridField, Scenario, SpeedField
from .subspace import ProductFunction, build_product, sobolev_norm
from .wavesim import (
    SpongeLayer,
    TraceRecord,
    bilinear_sampler,
    build_stencil_plan,
    forward_trace,
    simulate,
)


# ---------------------------------------------------------------------------
# forward matrix and singular values
# ---------------------------------------------------------------------------

@dataclass
class ForwardMatrix:
    """Discretized trace operator; entries carry the Gamma quadrature weights."""

    entries: np.ndarray     # (n_s * n_t, n_basis)
    basis_descriptor: str
    n_s: int
    n_t: int
    scenario_descriptor: str = ""
    field_descriptor: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.entries)):
            raise ValidationError("forward matrix entries must be finite")


def _weighted_column(trace: np.ndarray, arc_w: np.ndarray, dt: float) -> np.ndarray:
    n_t = trace.shape[1]
    wt = np.full(n_t, dt)
    wt[0] *= 0.5
    wt[-1] *= 0.5
    return (trace * np.sqrt(arc_w)[:, None] * np.sqrt(wt)[None, :]).ravel()


def _assemble_chunk(args):
    scenario, fld, grids, sponge, cfl = args
    plan = build_stencil_plan(fld, grids[0], scenario.t_obs, sponge, cfl=cfl)
    arc_pts, arc_w = scenario.arc_sample()
    sampler = bilinear_sampler(grids[0], arc_pts)
    return [_weighted_column(forward_trace(plan, g.values, sampler), arc_w, plan.dt) for g in grids]


def assemble_forward_matrix(
    scenario: Scenario,
    fld: SpeedField,
    basis: Sequence[GridField],
    sponge: Optional[SpongeLayer] = None,
    cfl: float = 0.5,
    workers: int = 1,
    basis_descriptor: str = "user basis",
) -> ForwardMatrix:
    """Simulate every basis function and stack the weighted traces as columns."""
    if len(basis) == 0:
        raise ValidationError("basis must be non-empty")
    for j, b in enumerate(basis):
        if abs(b.l2_norm() - 1.0) > 1e-8:
            raise ValidationError(f"basis column {j} is not L2-normalized (norm {b.l2_norm():.6g})")
        x, y = b.meshgrid()
        outside = ~scenario.omega.contains(np.stack([x, y], axis=-1))
        if np.max(np.abs(b.values[outside]), initial=0.0) > 1e-12:
            raise ValidationError(f"basis column {j} is not supported in omega")

    if workers > 1:
        chunks = [list(basis[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_assemble_chunk, [(scenario, fld, ch, sponge, cfl) for ch in chunks if ch]))
        cols: list[Optional[np.ndarray]] = [None] * len(basis)
        for i, chunk_cols in enumerate(results):
            for j, col in enumerate(chunk_cols):
                cols[i + j * workers] = col
    else:
        cols = _assemble_chunk((scenario, fld, list(basis), sponge, cfl))

    arc_pts, _ = scenario.arc_sample()
    entries = np.stack(cols, axis=1)
    n_t = entries.shape[0] // len(arc_pts)
    return ForwardMatrix(
        entries=entries,
        basis_descriptor=basis_descriptor,
        n_s=len(arc_pts),
        n_t=n_t,
        scenario_descriptor=f"arc[{np.rad2deg(scenario.arc.angle_start):.0f},{np.rad2deg(scenario.arc.angle_end):.0f}]deg r={scenario.arc.radius:g} T={scenario.t_obs:g}",
        field_descriptor=fld.kind,
    )


def singular_values(matrix) -> np.ndarray:
    """Descending singular values; entries below 1e-14 * sigma_1 are zeroed."""
    entries = matrix.entries if isinstance(matrix, ForwardMatrix) else np.asarray(matrix, dtype=float)
    if entries.size == 0:
        raise ValidationError("cannot take singular values of an empty matrix")
    sig = np.linalg.svd(entries, compute_uv=False)
    if sig.size and sig[0] > 0:
        sig = np.where(sig < 1e-14 * sig[0], 0.0, sig)
    return sig


# ---------------------------------------------------------------------------
# embedding s-numbers
# ---------------------------------------------------------------------------

def _interval_grams(s: int, epsilon: float, n_modes: int):
    """Quadrature Gram matrices of the sine basis in L2 and H^s_0(-eps, eps)."""
    nodes, weights = np.polynomial.legendre.leggauss(max(4 * n_modes, 64))
    x = epsilon * nodes  # map [-1, 1] -> [-eps, eps]
    w = epsilon * weights
    j = np.arange(1, n_modes + 1)
    a = j * np.pi / (2 * epsilon)           # sqrt of Dirichlet eigenvalues
    phase = np.outer(a, x + epsilon)        # (n_modes, n_quad)
    g_l2 = np.sin(phase) * np.sqrt(w)
    gram_l2 = g_l2 @ g_l2.T
    gram_hs = gram_l2.copy()
    for m in range(1, s + 1):
        deriv = (a[:, None] ** m) * np.sin(phase + m * np.pi / 2.0) * np.sqrt(w)
        gram_hs += math.comb(s, m) * (deriv @ deriv.T)
    return gram_l2, gram_hs


def interval_snumbers_closed_form(s: float, epsilon: float, n_modes: int) -> np.ndarray:
    """Sine-basis diagonalization: s_j = (1 + (j pi / (2 eps))^2)^(-s/2)."""
    j = np.arange(1, n_modes + 1)
    return (1.0 + (j * np.pi / (2 * epsilon)) ** 2) ** (-s / 2.0)


def _torus_lattice_weights(side, n_modes: int) -> np.ndarray:
    """Sorted ascending values of 1 + |omega|^2 over the frequency lattice."""
    try:
        lx, ly = float(side[0]), float(side[1])
    except (TypeError, IndexError):
        lx = ly = float(side)
    m = int(np.ceil(np.sqrt(n_modes / np.pi))) + 2
    mm = np.arange(-m, m + 1)
    wx = (2 * np.pi * mm / lx) ** 2
    wy = (2 * np.pi * mm / ly) ** 2
    vals = np.sort((1.0 + wx[:, None] + wy[None, :]).ravel())
    if len(vals) < n_modes:
        raise ValidationError("torus lattice too small for requested n_modes")
    return vals[:n_modes]


def _pencil_snumbers(gram_target: np.ndarray, gram_source: np.ndarray) -> np.ndarray:
    """Generalized eigenproblem between Grams; s_j = sqrt of sorted eigenvalues."""
    try:
        eigvals = scipy.linalg.eigh(gram_target, gram_source, eigvals_only=True)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError(f"Gram pencil not positive definite: {exc}") from exc
    if np.any(eigvals <= 0):
        raise ConditioningError("Gram pencil produced non-positive eigenvalues")
    return np.sqrt(np.sort(eigvals)[::-1])


def embedding_snumbers(
    kind: str,
    *,
    s: Optional[float] = None,
    s1: Optional[float] = None,
    s2: Optional[float] = None,
    epsilon: Optional[float] = None,
    side=None,
    n_modes: int = 64,
) -> np.ndarray:
    """s-numbers of a natural Sobolev embedding, descending.

    ``interval_Hs0_to_L2``: H^s_0(-eps, eps) -> L2(-eps, eps) on the first
    ``n_modes`` sine modes; the Gram matrices are built by Gauss-Legendre
    quadrature (integer s) or from the Dirichlet spectral weights (real s).

    ``torus_Hs1_to_Hs2``: H^s1 -> H^s2 on a rectangular torus with the given
    side(s); the Fourier basis is orthogonal in both inner products, so the
    Grams are diagonal with weights (1 + |omega|^2)^s.
    """
    if n_modes < 16:
        raise ValidationError(f"need n_modes >= 16, got {n_modes}")
    if kind == "interval_Hs0_to_L2":
        if s is None or epsilon is None:
            raise ValidationError("interval embedding needs s and epsilon")
        if s < 0:
            raise UnsupportedOrderError(f"Sobolev order must be >= 0, got {s}")
        if float(s).is_integer():
            gram_l2, gram_hs = _interval_grams(int(s), epsilon, n_modes)
        else:
            j = np.arange(1, n_modes + 1)
            lam = (j * np.pi / (2 * epsilon)) ** 2
            gram_l2 = np.diag(np.full(n_modes, epsilon))
            gram_hs = np.diag(epsilon * (1.0 + lam) ** s)
        return _pencil_snumbers(gram_l2, gram_hs)
    if kind == "torus_Hs1_to_Hs2":
        if s1 is None or s2 is None or side is None:
            raise ValidationError("torus embedding needs s1, s2 and side")
        if s1 <= s2:
            raise ValidationError("torus embedding needs s1 > s2")
        w = _torus_lattice_weights(side, n_modes)
        gram_src = np.diag(w**s1)
        gram_tgt = np.diag(w**s2)
        return _pencil_snumbers(gram_tgt, gram_src)
    raise ValidationError(f"unknown embedding kind {kind!r}")


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    power_exponent: float
    power_r2: float
    exp_rate: float
    exp_r2: float
    aic_power: float
    aic_exp: float
    preference: str  # power | exponential | inconclusive
    n_used: int


def _linfit(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    rss = float(np.sum(resid**2))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return slope, rss, r2


def fit_decay(values, j_min: int = 8, indices=None) -> DecayFit:
    """Power-law and exponential fits of a decaying positive sequence.

    ``indices`` defaults to 1-based ranks; entries with index < ``j_min`` or
    at/below the numerical-zero floor (1e-14 of the maximum) are excluded.
    Model preference follows the lower AIC with a 2-unit margin.
    """
    v = np.asarray(values, dtype=float)
    idx = np.arange(1, len(v) + 1) if indices is None else np.asarray(indices, dtype=float)
    if len(idx) != len(v):
        raise ValidationError("indices must match values in length")
    floor = 1e-14 * np.max(v) if v.size else 0.0
    keep = (idx >= j_min) & (v > floor)
    if np.count_nonzero(keep) < 8:
        raise InsufficientDataError(
            f"need >= 8 usable values past j_min={j_min}, got {np.count_nonzero(keep)}"
        )
    j = idx[keep]
    logv = np.log(v[keep])
    n = len(j)
    slope_p, rss_p, r2_p = _linfit(np.log(j), logv)
    slope_e, rss_e, r2_e = _linfit(j, logv)
    aic_p = n * np.log(max(rss_p, 1e-300) / n) + 4.0
    aic_e = n * np.log(max(rss_e, 1e-300) / n) + 4.0
    if aic_e + 2.0 < aic_p:
        pref = "exponential"
    elif aic_p + 2.0 < aic_e:
        pref = "power"
    else:
        pref = "inconclusive"
    return DecayFit(
        power_exponent=-slope_p,
        power_r2=r2_p,
        exp_rate=-slope_e,
        exp_r2=r2_e,
        aic_power=float(aic_p),
        aic_exp=float(aic_e),
        preference=pref,
        n_used=n,
    )


# ---------------------------------------------------------------------------
# trace Sobolev norms
# ---------------------------------------------------------------------------

def _cosine_taper(n: int, frac: float) -> np.ndarray:
    w = np.ones(n)
    m = int(round(frac * n))
    if m >= 2:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / m))
        w[:m] *= ramp
        w[-m:] *= ramp[::-1]
    return w


def trace_sobolev_norm(
    trace: TraceRecord,
    s: float,
    taper_frac: float = 0.1,
    pad: int = 2,
    arc_is_closed: bool = False,
) -> float:
    """H^s norm of the trace on the (arclength x time) rectangle.

    A fixed cosine taper over the first and last 10% of samples is applied
    along time (and along arclength for an open arc) so the padded Fourier
    transform sees smoothly vanishing data; a closed observation circle is
    already periodic in arclength and is not tapered there.
    """
    g = trace.values * _cosine_taper(trace.n_t, taper_frac)[None, :]
    if not arc_is_closed:
        g = g * _cosine_taper(trace.n_s, taper_frac)[:, None]
    d_arc = float(np.median(trace.arc_weights))
    return sobolev_norm(g, s, (d_arc, trace.dt), pad=pad)


# ---------------------------------------------------------------------------
# instability experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductFamily:
    """Picklable generator of the oscillating product family on a fixed grid."""

    f0_center: float
    f0_radius: float
    epsilon: float
    orientation: tuple[float, float]
    center: tuple[float, float]

    def member(self, k: int) -> ProductFunction:
        return ProductFunction(self.f0_center, self.f0_radius, self.epsilon, k, self.orientation)

    def __call__(self, k: int, grid: GridField, u_region: Optional[Disc] = None) -> GridField:
        return build_product(self.member(k), grid, np.asarray(self.center), u_region)


@dataclass
class InstabilityCurve:
    ks: np.ndarray
    ratios: np.ndarray          # r_k = ||T f_k|| / ||f_k||
    f_l2: np.ndarray
    trace_l2: np.ndarray
    hs_norms: dict              # s -> array over k of ||T f_k||_{H^s(Gamma)}
    label: str = ""

    def fit(self, j_min: int = 10) -> DecayFit:
        return fit_decay(self.ratios, j_min=j_min, indices=self.ks)


def _instability_chunk(args):
    scenarios, fld, family, ks, s_list, grid, sponge, cfl = args
    plan = build_stencil_plan(fld, grid, scenarios[0].t_obs, sponge, cfl=cfl)
    samples = [sc.arc_sample() for sc in scenarios]
    all_pts = np.concatenate([pts for pts, _ in samples])
    sampler = bilinear_sampler(grid, all_pts)
    offsets = np.cumsum([0] + [len(pts) for pts, _ in samples])
    rows = []
    for k in ks:
        f_k = family(int(k), grid, scenarios[0].u_region)
        f_norm = f_k.l2_norm()
        if f_norm == 0.0:
            raise UndefinedRatioError(f"family member k={k} vanishes identically")
        big_trace = forward_trace(plan, f_k.values, sampler)
        per_scenario = []
        for i, sc in enumerate(scenarios):
            pts_i, w_i = samples[i]
            rec = TraceRecord(
                big_trace[offsets[i]:offsets[i + 1]], pts_i, w_i, plan.dt, sc.t_obs
            )
            t_l2 = rec.l2_norm()
            hs = {
                s: trace_sobolev_norm(rec, s, arc_is_closed=sc.arc.is_full_circle)
                for s in s_list
            }
            per_scenario.append((t_l2, hs))
        rows.append((int(k), f_norm, per_scenario))
    return rows


def instability_curves(
    scenarios: Sequence[Scenario],
    fld: SpeedField,
    family: ProductFamily,
    ks: Sequence[int],
    s_list: Sequence[float] = (1.0, 2.0),
    grid: Optional[GridField] = None,
    sponge: Optional[SpongeLayer] = None,
    cfl: float = 0.5,
    workers: int = 1,
    labels: Optional[Sequence[str]] = None,
) -> list[InstabilityCurve]:
    """Trace-norm ratios r_k of the product family for several observation arcs.

    All scenarios must share the domain rectangle and observation time; each
    wave solve records every arc at once, so adding a control scenario is
    free.  Returns one curve per scenario, in order.
    """
    if grid is None:
        raise ValidationError("instability_curves needs an explicit grid")
    base = scenarios[0]
    for sc in scenarios[1:]:
        if sc.domain_rect != base.domain_rect or abs(sc.t_obs - base.t_obs) > 1e-12:
            raise ValidationError("scenarios must share domain_rect and t_obs")
    ks = np.asarray(sorted(int(k) for k in ks))
    if workers > 1:
        chunks = [ks[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(
                ex.map(
                    _instability_chunk,
                    [(list(scenarios), fld, family, ch, tuple(s_list), grid, sponge, cfl) for ch in chunks if len(ch)],
                )
            )
        rows = sorted([r for part in parts for r in part], key=lambda r: r[0])
    else:
        rows = _instability_chunk((list(scenarios), fld, family, ks, tuple(s_list), grid, sponge, cfl))

    curves = []
    for i, sc in enumerate(scenarios):
        f_l2 = np.array([r[1] for r in rows])
        t_l2 = np.array([r[2][i][0] for r in rows])
        hs = {s: np.array([r[2][i][1][s] for r in rows]) for s in s_list}
        label = labels[i] if labels else f"scenario{i}"
        curves.append(
            InstabilityCurve(
                ks=np.array([r[0] for r in rows]),
                ratios=t_l2 / f_l2,
                f_l2=f_l2,
                trace_l2=t_l2,
                hs_norms=hs,
                label=label,
            )
        )
    return curves


def instability_curve(
    scenario: Scenario,
    fld: SpeedField,
    family: ProductFamily,
    ks: Sequence[int],
    s_list: Sequence[float] = (1.0, 2.0),
    **kwargs,
) -> InstabilityCurve:
    return instability_curves([scenario], fld, family, ks, s_list, **kwargs)[0]


# ---------------------------------------------------------------------------
# stability exponent probe
# ---------------------------------------------------------------------------

@dataclass
class HolderProbe:
    mu_values: tuple
    s0: float
    s1: float
    s_high: float
    calibration_j: int
    margins: dict            # mu -> array over j of s2^(1-mu) - C * s1^mu
    constants: dict          # mu -> calibrated C
    turns_positive: dict     # mu -> bool

    def all_positive_tail(self) -> bool:
        return all(self.turns_positive.values())


def holder_probe(
    mu_values: Sequence[float] = (0.25, 0.5, 0.75, 1.0),
    s0: float = 0.0,
    s1: float = 1.0,
    s_high: float = 8.0,
    epsilon: float = 0.3,
    gamma_side=(2.0, 2.0),
    n_modes: int = 96,
    calibration_j: int = 8,
) -> HolderProbe:
    """Compare the two embedding decays that a stability exponent mu must balance.

    For each mu the constant C is calibrated as the smallest value making
    [s_j(i2)]^(1-mu) <= C [s_j(i1)]^mu hold on j <= calibration_j; the probe
    then reports whether the margin [s_j(i2)]^(1-mu) - C [s_j(i1)]^mu becomes
    and stays positive at large j, i.e. whether the calibrated inequality
    fails in the tail.
    """
    s_i2 = embedding_snumbers("interval_Hs0_to_L2", s=s1, epsilon=epsilon, n_modes=n_modes)
    s_i1 = embedding_snumbers("torus_Hs1_to_Hs2", s1=s_high, s2=s0, side=gamma_side, n_modes=n_modes)
    n = min(len(s_i1), len(s_i2))
    s_i1, s_i2 = s_i1[:n], s_i2[:n]
    margins, constants, verdicts = {}, {}, {}
    for mu in mu_values:
        lhs = s_i2 ** (1.0 - mu)
        rhs = s_i1**mu
        c = float(np.max(lhs[:calibration_j] / rhs[:calibration_j]))
        margin = lhs - c * rhs
        tail = margin[3 * n // 4:]
        margins[mu] = margin
        constants[mu] = c
        verdicts[mu] = bool(np.all(tail > 0))
    return HolderProbe(
        mu_values=tuple(mu_values),
        s0=s0,
        s1=s1,
        s_high=s_high,
        calibration_j=calibration_j,
        margins=margins,
        constants=constants,
        turns_positive=verdicts,
    )


# ---------------------------------------------------------------------------
# report container
# ---------------------------------------------------------------------------

@dataclass
class SpectrumReport:
    sigmas: np.ndarray
    fit: Optional[DecayFit]
    probe: Optional[HolderProbe] = None


def build_report(sigmas: np.ndarray, j_min: int = 8, probe: Optional[HolderProbe] = None) -> SpectrumReport:
    try:
        fit = fit_decay(sigmas, j_min=j_min)
    except InsufficientDataError:
        fit = None
    return SpectrumReport(sigmas=np.asarray(sigmas), fit=fit, probe=probe)
