"""Fringe fitting, visibility and the classical bunching-bound test."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    FitError,
    InsufficientSpan,
    InvariantViolation,
    MissingDelaySample,
    MissingZeroDelay,
    NonConvergence,
)
from .geometry import ExperimentGeometry, default_geometry, fringe_period
from .montecarlo import ScanResult
from .wave import CorrelationMap

PARAM_NAMES = ("background", "amplitude", "period", "phase_center")
MIN_POINTS = 8
REL_TOL = 1e-8
MAX_ITER = 500


@dataclass(frozen=True)
class FitResult:
    """Fit of C(x) = B + A [1 - cos(2 pi (x - x0) / period)].

    ``phase_center`` is the fitted minimum lying closest to the middle of
    the scanned range. When the period was held fixed or could not be
    identified its uncertainty is NaN.
    """

    background: float
    amplitude: float
    period: float
    phase_center: float
    uncertainties: dict
    chi_square: float
    dof: int
    visibility: float
    period_identifiable: bool = True
    iterations: int = 0
    note: str = ""
    covariance: tuple = ()

    def __post_init__(self):
        if not self.period > 0:
            raise InvariantViolation(f"period must be > 0, got {self.period!r}")
        if not self.chi_square >= 0:
            raise InvariantViolation(f"chi_square must be >= 0, got {self.chi_square!r}")
        if not 0.0 <= self.visibility <= 1.0:
            raise InvariantViolation(f"visibility must lie in [0, 1], got {self.visibility!r}")

    def se(self, name: str) -> float:
        return self.uncertainties[name]

    def minimum_near(self, target: float):
        """The fitted minimum closest to ``target`` and its standard error.

        The phase centre is only defined modulo the period; shifting it by
        n periods adds n^2 var(period) - 2n cov(period, x0) to its variance.
        """
        n = round((target - self.phase_center) / self.period)
        pos = self.phase_center + n * self.period
        if n == 0 or not self.covariance:
            return pos, self.uncertainties["phase_center"]
        cov = np.array(self.covariance, dtype=float)
        var = cov[3, 3] + n * n * cov[2, 2] + 2 * n * cov[2, 3]
        return pos, math.sqrt(var) if var >= 0 else math.nan

    def maxima(self, lo: float, hi: float) -> np.ndarray:
        """Positions of model maxima inside [lo, hi]."""
        first = self.phase_center + 0.5 * self.period
        n_lo = math.ceil((lo - first) / self.period)
        n_hi = math.floor((hi - first) / self.period)
        return first + self.period * np.arange(n_lo, n_hi + 1)

    def to_text(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def fringe_model(x, background, amplitude, period, phase_center):
    x = np.asarray(x, dtype=float)
    return background + amplitude * (1.0 - np.cos(2.0 * np.pi * (x - phase_center) / period))


def visibility(fit: FitResult) -> float:
    """A / (A + B), clipped to [0, 1]."""
    total = fit.amplitude + fit.background
    if fit.amplitude <= 0 or total <= 0:
        return 0.0
    return float(min(max(fit.amplitude / total, 0.0), 1.0))


def _visibility_of(b: float, a: float) -> float:
    total = a + b
    if a <= 0 or total <= 0:
        return 0.0
    return float(min(max(a / total, 0.0), 1.0))


def _model_and_jacobian(p, x, fix_period, period):
    b, a = p[0], p[1]
    lam = period if fix_period else p[2]
    x0 = p[-1]
    theta = 2.0 * np.pi * (x - x0) / lam
    c, s = np.cos(theta), np.sin(theta)
    model = b + a * (1.0 - c)
    cols = [np.ones_like(x), 1.0 - c]
    if not fix_period:
        cols.append(-a * s * theta / lam)
    cols.append(-a * s * 2.0 * np.pi / lam)
    return model, np.column_stack(cols)


def fit_fringe_data(x, y, weights=None, period_guess: float = 1.0, fix_period: bool = False,
                    centre: float | None = None) -> FitResult:
    """Weighted Levenberg-Marquardt fit of the fringe model to (x, y).

    ``weights`` are inverse variances (uniform when None). The start point
    is B = min y, A = (max - min) / 2, period = ``period_guess``,
    x0 = argmin y. Iteration stops once a step changes every parameter by
    less than 1e-8 relative. Standard errors come from the inverse of
    J^T W J, without rescaling by chi^2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not (x.shape == y.shape == w.shape) or x.ndim != 1:
        raise ValueError("x, y and weights must be 1-D arrays of equal length")
    if len(x) < MIN_POINTS:
        raise InsufficientSpan(f"need at least {MIN_POINTS} points, got {len(x)}")
    span = float(np.ptp(x))
    if span < period_guess * (1 - 1e-12):
        raise InsufficientSpan(f"scan span {span!r} is shorter than one period {period_guess!r}")
    if centre is None:
        centre = 0.5 * (x.min() + x.max())

    if np.ptp(y) == 0:
        se_b = 1.0 / math.sqrt(w.sum()) if w.sum() > 0 else math.nan
        return FitResult(
            background=float(y[0]), amplitude=0.0, period=float(period_guess),
            phase_center=float(centre),
            uncertainties={"background": se_b, "amplitude": math.nan,
                           "period": math.nan, "phase_center": math.nan},
            chi_square=0.0, dof=len(x) - (3 if fix_period else 4), visibility=0.0,
            period_identifiable=False, note="constant data: zero amplitude, unidentifiable period")

    # dimensionless working units keep the normal equations well conditioned
    xs_scale = period_guess
    ys_scale = float(np.max(np.abs(y)))
    xs = x / xs_scale
    ys = y / ys_scale
    ws = w * ys_scale ** 2
    sqrt_w = np.sqrt(ws)
    lam_fixed = 1.0

    p = [ys.min(), 0.5 * np.ptp(ys)]
    if not fix_period:
        p.append(1.0)
    p.append(xs[np.argmin(ys)])
    p = np.array(p)
    floors = np.array([1e-12, 1e-12] + ([1e-12] if not fix_period else []) + [1.0])

    def residuals(params):
        model, jac = _model_and_jacobian(params, xs, fix_period, lam_fixed)
        return sqrt_w * (ys - model), sqrt_w[:, None] * jac

    r, jac = residuals(p)
    chi2 = float(r @ r)
    jtj = jac.T @ jac
    # Nielsen's damping update driven by the gain ratio
    damping = 1e-3 * float(np.max(np.diag(jtj)))
    growth = 2.0
    converged = False
    for iteration in range(1, MAX_ITER + 1):
        grad = jac.T @ r
        lhs = jtj + damping * np.diag(np.diag(jtj))
        try:
            step = np.linalg.solve(lhs, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(lhs, grad, rcond=None)[0]
        small_step = np.all(np.abs(step) <= REL_TOL * np.maximum(np.abs(p), floors))
        trial = p + step
        r_trial, jac_trial = residuals(trial)
        chi2_trial = float(r_trial @ r_trial)
        predicted = chi2 - float(np.sum((r - jac @ step) ** 2))
        gain = (chi2 - chi2_trial) / predicted if predicted > 0 else -1.0
        if gain > 0:
            p, r, jac, chi2 = trial, r_trial, jac_trial, chi2_trial
            jtj = jac.T @ jac
            damping *= max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
            growth = 2.0
        else:
            damping *= growth
            growth *= 2.0
        if small_step or not np.isfinite(damping) or damping > 1e30:
            converged = bool(small_step)
            break
    if not converged:
        raise NonConvergence(f"fringe fit did not converge in {MAX_ITER} iterations")

    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
        identifiable = bool(np.all(np.isfinite(cov)))
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
        identifiable = False

    # back to physical units, then to the canonical representation
    if fix_period:
        p = np.array([p[0], p[1], lam_fixed, p[2]])
        full = np.zeros((4, 4))
        idx = [0, 1, 3]
        full[np.ix_(idx, idx)] = cov
        cov = full
    unit = np.diag([ys_scale, ys_scale, xs_scale, xs_scale])
    p = unit @ p
    cov = unit @ cov @ unit

    b, a, lam, x0 = p
    transform = np.eye(4)
    if lam < 0:
        lam = -lam
        transform = np.diag([1.0, 1.0, -1.0, 1.0]) @ transform
    if a < 0:
        b, a, x0 = b + 2.0 * a, -a, x0 + 0.5 * lam
        transform = np.array([[1.0, 2.0, 0, 0], [0, -1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0.5, 1.0]]) @ transform
    n_shift = round((x0 - centre) / lam)
    x0 -= n_shift * lam
    transform = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, -n_shift, 1.0]]) @ transform
    cov = transform @ cov @ transform.T
    se = np.sqrt(np.abs(np.diag(cov)))
    if fix_period:
        se[2] = math.nan
        cov[2, :] = cov[:, 2] = math.nan

    dof = len(x) - (3 if fix_period else 4)
    return FitResult(
        background=float(b), amplitude=float(a), period=float(lam), phase_center=float(x0),
        uncertainties={name: float(v) for name, v in zip(PARAM_NAMES, se)},
        chi_square=float(chi2), dof=dof, visibility=_visibility_of(b, a),
        period_identifiable=identifiable and not fix_period, iterations=iteration,
        note="" if identifiable else "singular normal matrix: some parameters unidentifiable",
        covariance=tuple(tuple(float(v) for v in row) for row in cov))


def scan_weights(counts) -> np.ndarray:
    """Poisson inverse-variance weights, 1 / max(count, 1)."""
    return 1.0 / np.maximum(np.asarray(counts, dtype=float), 1.0)


def fit_fringe(scan: ScanResult, g: ExperimentGeometry, fix_period: bool = False) -> FitResult:
    """Fit coincidences against the scanned detector coordinate."""
    return fit_fringe_data(scan.scanned, scan.coincidences, scan_weights(scan.coincidences),
                           period_guess=fringe_period(g), fix_period=fix_period)


# -------------------------------------------------------------- bound testing

@dataclass(frozen=True)
class ViolationReport:
    """Comparison of the zero-separation correlation with the largest one at nonzero separation.

    ``normalized`` marks map-based reports, where values are
    Gamma(x0, x) / sqrt(Gamma(x0, x0) Gamma(x, x)) so the classical bound
    reads value <= 1. Scan-based values are counts per dwell of the first scan.
    """

    gamma_zero: float
    gamma_zero_se: float
    gamma_delta_max: float
    gamma_delta_max_se: float
    delta_at_max: float
    significance: float
    violated: bool
    threshold: float
    normalized: bool = False
    source: str = ""
    notes: list = field(default_factory=list)

    def to_text(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _significance(diff: float, se0: float, se1: float) -> float:
    se = math.sqrt(se0 * se0 + se1 * se1)
    if se > 0 and math.isfinite(se):
        return diff / se
    if math.isinf(se):
        return 0.0
    if math.isnan(diff) or abs(diff) == 0:
        return 0.0
    return math.copysign(math.inf, diff)


def _report_from_map(gamma: CorrelationMap, threshold: float) -> ViolationReport:
    x = gamma.grid.points
    r = int(np.argmin(np.abs(x)))
    v = gamma.values
    diag = np.diag(v)
    denom = np.sqrt(v[r, r] * diag)
    row = v[r]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(denom > 0, row / denom, np.where(row > 0, np.inf, 0.0))
        # Cauchy-Schwarz is exact for the sample moments too; clip rounding above 1 when tied
        tied = np.isclose(row, denom, rtol=1e-12, atol=0.0) & (denom > 0)
        c = np.where(tied, 1.0, c)
        se = np.zeros_like(c) if gamma.stderr is None else np.where(
            denom > 0, gamma.stderr[r] / denom, 0.0)
    g0 = 1.0 if v[r, r] > 0 else 0.0
    mask = np.ones(len(x), dtype=bool)
    mask[r] = False
    j = int(np.flatnonzero(mask)[np.argmax(c[mask])])
    sig = _significance(float(c[j] - g0), 0.0, float(se[j]))
    return ViolationReport(g0, 0.0, float(c[j]), float(se[j]), float(x[j] - x[r]), sig,
                           bool(sig > threshold), threshold, normalized=True, source="map")


def _report_from_scans(scans, g: ExperimentGeometry, threshold: float) -> ViolationReport:
    t_ref = scans[0].dwell_time
    notes = []
    zero_counts = zero_time = 0.0
    best = None  # (rate, count, dwell, delta)
    for k, scan in enumerate(scans):
        delta = scan.x1 - scan.x2
        is_zero = np.abs(delta) <= 1e-12
        zero_counts += float(scan.coincidences[is_zero].sum())
        zero_time += scan.dwell_time * int(is_zero.sum())
        if np.all(is_zero):
            continue
        candidates = np.flatnonzero(~is_zero)
        try:
            fit = fit_fringe(scan, g)
            if fit.period_identifiable and fit.amplitude > 0:
                xs = scan.scanned
                picks = {int(np.argmin(np.abs(xs - m))) for m in fit.maxima(xs.min(), xs.max())}
                picks = sorted(i for i in picks if not is_zero[i])
                if picks:
                    candidates = np.array(picks)
        except FitError as exc:
            notes.append(f"scan {k}: fit failed ({exc}); using raw maximum")
        rates = scan.coincidences[candidates] / scan.dwell_time
        i = int(candidates[np.argmax(rates)])
        rate = scan.coincidences[i] / scan.dwell_time
        if best is None or rate > best[0]:
            best = (rate, float(scan.coincidences[i]), scan.dwell_time, float(delta[i]))
    if zero_time == 0:
        raise MissingZeroDelay("no row with x1 == x2 in the supplied scans")
    if best is None:
        raise MissingDelaySample("no row with x1 != x2 in the supplied scans")
    g0 = zero_counts / zero_time * t_ref
    g0_se = math.sqrt(zero_counts) / zero_time * t_ref
    gd = best[1] / best[2] * t_ref
    gd_se = math.sqrt(best[1]) / best[2] * t_ref
    sig = _significance(gd - g0, g0_se, gd_se)
    return ViolationReport(g0, g0_se, gd, gd_se, best[3], sig, bool(sig > threshold),
                           threshold, normalized=False, source="scan", notes=notes)


def schwarz_report(data, threshold: float = 3.0, g: ExperimentGeometry | None = None) -> ViolationReport:
    """Test Gamma(delta) <= Gamma(0) on counts or on a correlation map.

    Scans (one or a list): zero-separation rows from every scan are pooled;
    the off-zero value is the raw count at the bin nearest a maximum of each
    scan's fitted fringe (raw maximum if the fit fails), the largest one
    across scans. Errors are Poisson sqrt(N).

    Maps: the row through the grid point nearest x = 0 is normalized by the
    diagonal, Gamma(x0, x) / sqrt(Gamma(x0, x0) Gamma(x, x)), which any
    classical ensemble keeps <= 1 at every x.
    """
    if isinstance(data, CorrelationMap):
        return _report_from_map(data, threshold)
    scans = [data] if isinstance(data, ScanResult) else list(data)
    if not scans:
        raise MissingZeroDelay("no data supplied")
    return _report_from_scans(scans, g or default_geometry(), threshold)
