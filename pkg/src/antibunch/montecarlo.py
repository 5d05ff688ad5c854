"""Synthetic photon counting and classical stochastic-field ensembles.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence``,
which produces the same stream on every platform. The Poisson sampler below
uses only uniform and standard-normal draws, and always draws one of each per
count, so the stream position never depends on the rates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DataFormatError, InvariantViolation, PositionOutsideGrid
from .geometry import ExperimentGeometry, Grid1D
from .wave import ApertureFunction, CorrelationMap

SCAN_MODES = ("scan1_fix2", "scan2_fix1", "joint_equal", "scan1_fix2_offset")
ENSEMBLE_KINDS = ("coherent", "thermal", "phase_diffused")

# means at or above this use the rounded normal approximation
POISSON_NORMAL_THRESHOLD = 10.0


@dataclass(frozen=True)
class RateModel:
    peak_coincidence_rate: float
    singles_rate_1: float
    singles_rate_2: float
    accidental_window: float

    def __post_init__(self):
        for name in ("peak_coincidence_rate", "singles_rate_1", "singles_rate_2", "accidental_window"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvariantViolation(f"{name} must be finite and >= 0, got {v!r}")


def default_rate_model(g: ExperimentGeometry) -> RateModel:
    # ~500 coincidences at a fringe maximum in 1000 s; unequal detector efficiencies
    return RateModel(peak_coincidence_rate=0.5, singles_rate_1=1000.0,
                     singles_rate_2=900.0, accidental_window=g.coincidence_window)


@dataclass(frozen=True)
class ScanPlan:
    mode: str
    fixed_position: float
    positions: tuple
    dwell_time: float
    seed: int

    def __post_init__(self):
        if self.mode not in SCAN_MODES:
            raise InvariantViolation(f"unknown scan mode {self.mode!r}; expected one of {SCAN_MODES}")
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 1:
            raise InvariantViolation("a scan needs at least one position")
        steps = np.diff(pos)
        if len(pos) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            raise InvariantViolation("scan positions must be strictly monotone")
        if not (math.isfinite(self.dwell_time) and self.dwell_time > 0):
            raise InvariantViolation(f"dwell_time must be > 0, got {self.dwell_time!r}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvariantViolation(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def coordinates(self):
        """Detector positions (x1, x2) for every step of the scan."""
        p = np.array(self.positions)
        fixed = np.full_like(p, self.fixed_position)
        if self.mode == "scan2_fix1":
            return fixed, p
        if self.mode == "joint_equal":
            return p, p.copy()
        return p, fixed


def default_positions(half_range: float = 1.5e-3, step: float = 0.05e-3) -> tuple:
    n = int(round(half_range / step))
    return tuple(round(k * step, 12) for k in range(-n, n + 1))


FIGURE_PROTOCOLS = {
    "fig4": ("scan1_fix2", 0.0),
    "fig5": ("scan2_fix1", 0.0),
    "fig6": ("joint_equal", 0.0),
    "fig7": ("scan1_fix2_offset", -0.55e-3),
}


def figure_plan(name: str, seed: int, dwell_time: float = 1000.0) -> ScanPlan:
    mode, fixed = FIGURE_PROTOCOLS[name]
    return ScanPlan(mode, fixed, default_positions(), dwell_time, seed)


@dataclass(frozen=True, eq=False)
class ScanRates:
    x1: np.ndarray
    x2: np.ndarray
    singles1: np.ndarray
    singles2: np.ndarray
    coincidences: np.ndarray


def expected_rates(plan: ScanPlan, gamma: CorrelationMap, envelope, rm: RateModel) -> ScanRates:
    """Mean count rates [1/s] at every scan position.

    ``envelope`` maps positions to relative singles rates (for instance
    ``functools.partial(singles_envelope, g=g)``). Gamma is bilinearly
    interpolated and scaled so its maximum gives ``peak_coincidence_rate``;
    accidentals R1 * R2 * window are added on top.
    """
    x1, x2 = plan.coordinates()
    grid = gamma.grid
    lo, hi = grid.min, grid.max
    tol = 1e-9 * grid.step
    for name, xs in (("x1", x1), ("x2", x2)):
        bad = (xs < lo - tol) | (xs > hi + tol)
        if np.any(bad):
            raise PositionOutsideGrid(
                f"{name} = {xs[bad][0]!r} lies outside the map grid [{lo!r}, {hi!r}]")
    pts = grid.points
    interp = RegularGridInterpolator((pts, pts), gamma.values, method="linear")
    gmax = gamma.values.max()
    rel = interp(np.column_stack([np.clip(x1, lo, hi), np.clip(x2, lo, hi)]))
    rel = rel / gmax if gmax > 0 else np.zeros_like(rel)
    s1 = rm.singles_rate_1 * np.asarray(envelope(x1), dtype=float)
    s2 = rm.singles_rate_2 * np.asarray(envelope(x2), dtype=float)
    coinc = rm.peak_coincidence_rate * rel + s1 * s2 * rm.accidental_window
    return ScanRates(x1, x2, s1, s2, coinc)


def poisson_variates(mean, rng: np.random.Generator) -> np.ndarray:
    """Poisson counts with the given means.

    For every element, in C order, one uniform u and one standard normal n
    are drawn (u first, as a whole array). Means below 10 are inverted
    exactly: the count is the smallest k with CDF(k) >= u, accumulating the
    pmf by the recurrence p(k) = p(k-1) * mean / k. Means of 10 and above
    use floor(mean + sqrt(mean) * n + 1/2), clipped at zero.
    """
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise ValueError("Poisson means must be finite and nonnegative")
    u = rng.random(mean.shape)
    n = rng.standard_normal(mean.shape)

    out = np.zeros(mean.shape, dtype=np.int64)
    small = mean < POISSON_NORMAL_THRESHOLD
    if np.any(small):
        mu, us = mean[small], u[small]
        p = np.exp(-mu)
        cdf = p.copy()
        k = np.zeros(mu.shape, dtype=np.int64)
        # P(K > 80 | mean < 10) is below 1e-40
        for j in range(1, 81):
            below = us > cdf
            if not below.any():
                break
            k += below
            p = p * mu / j
            cdf = cdf + p
        out[small] = k
    big = ~small
    if np.any(big):
        mu = mean[big]
        out[big] = np.maximum(np.floor(mu + np.sqrt(mu) * n[big] + 0.5), 0).astype(np.int64)
    return out


@dataclass(frozen=True, eq=False)
class ScanResult:
    plan: ScanPlan
    x1: np.ndarray
    x2: np.ndarray
    singles1: np.ndarray
    singles2: np.ndarray
    coincidences: np.ndarray

    @property
    def dwell_time(self) -> float:
        return self.plan.dwell_time

    @property
    def scanned(self) -> np.ndarray:
        return self.x2 if self.plan.mode == "scan2_fix1" else self.x1

    def __len__(self):
        return len(self.x1)


def simulate_scan(plan: ScanPlan, rates: ScanRates) -> ScanResult:
    """Draw counts for every row; columns are (singles1, singles2, coincidences)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(plan.seed)))
    means = np.column_stack([rates.singles1, rates.singles2, rates.coincidences]) * plan.dwell_time
    counts = poisson_variates(means, rng)
    return ScanResult(plan, np.asarray(rates.x1, float), np.asarray(rates.x2, float),
                      counts[:, 0], counts[:, 1], counts[:, 2])


SCAN_HEADER = "x1,x2,singles1,singles2,coincidences"


def format_scan(scan: ScanResult) -> str:
    p = scan.plan
    lines = [f"# mode={p.mode} seed={p.seed} dwell_time={p.dwell_time!r} "
             f"fixed_position={p.fixed_position!r} rows={len(scan)}", SCAN_HEADER]
    for row in zip(scan.x1, scan.x2, scan.singles1, scan.singles2, scan.coincidences):
        lines.append(f"{float(row[0])!r},{float(row[1])!r},{int(row[2])},{int(row[3])},{int(row[4])}")
    return "\n".join(lines) + "\n"


def write_scan(path, scan: ScanResult):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_scan(scan))


def parse_scan(text: str, source: str = "<scan>") -> ScanResult:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataFormatError(f"{source}: missing comment line with the plan echo")
    meta = {}
    for token in lines[0][1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise DataFormatError(f"{source}:1: malformed token {token!r}")
        meta[key] = value
    try:
        mode = meta["mode"]
        seed = int(meta["seed"])
        dwell = float(meta["dwell_time"])
        fixed = float(meta["fixed_position"])
        expected_rows = int(meta["rows"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{source}:1: incomplete plan echo ({exc})") from exc
    if len(lines) < 2 or lines[1].strip() != SCAN_HEADER:
        raise DataFormatError(f"{source}:2: expected header {SCAN_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataFormatError(f"{source}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])))
        except ValueError as exc:
            raise DataFormatError(f"{source}:{lineno}: {exc}") from exc
    if len(rows) != expected_rows:
        raise DataFormatError(f"{source}: expected {expected_rows} data rows, found {len(rows)} "
                              "(truncated file?)")
    if not rows:
        raise DataFormatError(f"{source}: no data rows")
    cols = list(zip(*rows))
    x1, x2 = np.array(cols[0]), np.array(cols[1])
    counts = [np.array(c, dtype=np.int64) for c in cols[2:]]
    if any(np.any(c < 0) for c in counts):
        raise DataFormatError(f"{source}: negative counts")
    scanned = x2 if mode == "scan2_fix1" else x1
    try:
        plan = ScanPlan(mode, fixed, tuple(scanned), dwell, seed)
    except InvariantViolation as exc:
        raise DataFormatError(f"{source}: {exc}") from exc
    return ScanResult(plan, x1, x2, *counts)


def read_scan(path) -> ScanResult:
    with open(path, encoding="utf-8") as fh:
        return parse_scan(fh.read(), str(path))


# ------------------------------------------------------------ classical fields

@dataclass(frozen=True)
class ClassicalEnsembleSpec:
    kind: str
    samples: int
    seed: int
    mean_intensity: float = 1.0
    transverse_coherence_length: float | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise InvariantViolation(f"unknown ensemble kind {self.kind!r}; expected one of {ENSEMBLE_KINDS}")
        if isinstance(self.samples, bool) or int(self.samples) != self.samples or self.samples < 1:
            raise InvariantViolation(f"samples must be a positive integer, got {self.samples!r}")
        if not (math.isfinite(self.mean_intensity) and self.mean_intensity > 0):
            raise InvariantViolation(f"mean_intensity must be > 0, got {self.mean_intensity!r}")
        if self.kind == "thermal":
            lc = self.transverse_coherence_length
            if lc is None or not (math.isfinite(lc) and lc > 0):
                raise InvariantViolation(f"thermal ensemble needs a coherence length > 0, got {lc!r}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvariantViolation(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")


BLOCK_SIZE = 1024


def _one_photon_propagator(ap: ApertureFunction, g: ExperimentGeometry, out: Grid1D, keep):
    """Fresnel kernel from the open aperture samples to the detector grid, shape (nx, nkeep)."""
    k, z = g.wavenumber, g.slit_to_detector
    xi = ap.grid.points[keep]
    t = ap.amplitude[keep]
    x = out.points
    scale = ap.grid.step / math.sqrt(g.wavelength * z)
    return np.exp(1j * k * (x[:, None] - xi[None, :]) ** 2 / (2.0 * z)) * (t * scale)


def _thermal_basis(xi: np.ndarray, lc: float) -> np.ndarray:
    """Columns L with L L^H = exp(-(xi_i - xi_j)^2 / (2 lc^2)), truncated to significant modes."""
    cov = np.exp(-0.5 * ((xi[:, None] - xi[None, :]) / lc) ** 2)
    vals, vecs = np.linalg.eigh(cov)
    keep = vals > 1e-12 * vals[-1]
    return vecs[:, keep] * np.sqrt(vals[keep])


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(block,)))


def classical_gamma(spec: ClassicalEnsembleSpec, ap: ApertureFunction, g: ExperimentGeometry,
                    out: Grid1D, workers: int = 1) -> CorrelationMap:
    """Ensemble average of I(x1) I(x2) over random fields filling the aperture.

    coherent        uniform plane wave, deterministic
    thermal         circular complex Gaussian field with Gaussian correlation
                    exp(-dxi^2 / 2 lc^2)
    phase_diffused  each slit uniformly lit with an independent uniform phase

    Samples are processed in fixed blocks of ``BLOCK_SIZE``; block b draws
    from ``SeedSequence(seed, spawn_key=(b,))`` and block sums are reduced
    in block order, so the result does not depend on ``workers``.
    The map carries per-cell standard errors and the mean intensity profile.
    """
    keep = ap.amplitude != 0
    prop = _one_photon_propagator(ap, g, out, keep)
    amp = math.sqrt(spec.mean_intensity)
    nx = out.samples

    if spec.kind == "coherent":
        intensity = np.abs(prop.sum(axis=1) * amp) ** 2
        return CorrelationMap(out, np.outer(intensity, intensity), np.zeros((nx, nx)), intensity)

    if spec.kind == "thermal":
        basis = prop @ _thermal_basis(ap.grid.points[keep], spec.transverse_coherence_length) * amp

        def fields(rng, n):
            w = rng.standard_normal((n, basis.shape[1], 2))
            return ((w[..., 0] + 1j * w[..., 1]) / math.sqrt(2.0)) @ basis.T
    else:
        upper = ap.grid.points[keep] > 0
        e_up = prop[:, upper].sum(axis=1) * amp
        e_lo = prop[:, ~upper].sum(axis=1) * amp

        def fields(rng, n):
            theta = 2.0 * math.pi * rng.random((n, 2))
            return np.exp(1j * theta[:, :1]) * e_up + np.exp(1j * theta[:, 1:]) * e_lo

    n_total = int(spec.samples)
    nblocks = -(-n_total // BLOCK_SIZE)

    def block_sums(b):
        n = min(BLOCK_SIZE, n_total - b * BLOCK_SIZE)
        intensity = np.abs(fields(_block_rng(spec.seed, b), n)) ** 2
        sq = intensity * intensity
        return intensity.sum(axis=0), intensity.T @ intensity, sq.T @ sq

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block_sums, range(nblocks)))
    else:
        parts = [block_sums(b) for b in range(nblocks)]

    s1 = np.zeros(nx)
    s2 = np.zeros((nx, nx))
    s4 = np.zeros((nx, nx))
    for p1, p2, p4 in parts:
        s1 += p1
        s2 += p2
        s4 += p4
    mean_i = s1 / n_total
    gamma = s2 / n_total
    if n_total > 1:
        var = np.clip(s4 / n_total - gamma * gamma, 0.0, None) * n_total / (n_total - 1)
        stderr = np.sqrt(var / n_total)
    else:
        # a single stochastic realization carries no error estimate
        stderr = np.full((nx, nx), np.inf)
    return CorrelationMap(out, gamma, stderr, mean_i)
