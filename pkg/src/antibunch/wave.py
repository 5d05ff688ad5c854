"""Numerical two-photon diffraction through the birefringent double slit.

The pump is focused on the slit plane, so the pair leaves from mirror points
xi and -xi. Photon 1 goes to detector position x1 and photon 2 to x2; the
two exchange branches (photon 1 through the upper or lower slit) differ by
the waveplate phase. In the paraxial Fresnel regime the amplitude is

    Psi(x1, x2) = sum_j t(xi_j) t(-xi_j) B(xi_j) exp(ik[(x1 - xi_j)^2 + (x2 + xi_j)^2] / 2z) h

(midpoint rule, h the aperture step). Expanding the square gives
exp(ik(x1^2 + x2^2)/2z) times a sum that depends on x2 - x1 only, so on a
uniform detector grid the sum is evaluated once per index difference.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DataFormatError, GridError, GridTooCoarse, GridTooNarrow, InvariantViolation
from .geometry import ExperimentGeometry, Grid1D

DEFAULT_APERTURE_GRID = Grid1D(-0.8e-3, 0.8e-3, 2001)
DEFAULT_DETECTOR_GRID = Grid1D(-1.6e-3, 1.6e-3, 321)

# beyond this |x| / z the quadratic phase expansion is no longer trusted
PARAXIAL_LIMIT = 0.05


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ApertureFunction:
    grid: Grid1D
    amplitude: np.ndarray
    branch_phase: float

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=complex)
        if amp.shape != (self.grid.samples,):
            raise InvariantViolation("aperture amplitude must match the grid length")
        if np.any(np.abs(amp) > 1.0 + 1e-12):
            raise InvariantViolation("aperture transmission modulus exceeds 1")
        object.__setattr__(self, "amplitude", _frozen(amp))

    @property
    def support_measure(self) -> float:
        return float(np.abs(self.amplitude).sum() * self.grid.step)


@dataclass(frozen=True, eq=False)
class BiphotonAmplitude:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        n = self.grid.samples
        if v.shape != (n, n):
            raise InvariantViolation(f"amplitude must be {n}x{n}, got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True, eq=False)
class CorrelationMap:
    """Gamma(x1, x2) on grid x grid; rows are x1, columns x2.

    ``stderr`` carries Monte Carlo standard errors when the map is an
    ensemble estimate. ``intensity`` is the mean one-detector intensity
    profile, available for classical ensembles only.
    """

    grid: Grid1D
    values: np.ndarray
    stderr: np.ndarray | None = None
    intensity: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.samples
        v = np.asarray(self.values, dtype=float)
        if v.shape != (n, n):
            raise InvariantViolation(f"map must be {n}x{n}, got {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvariantViolation("correlation values must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(v))
        if self.stderr is not None:
            s = np.asarray(self.stderr, dtype=float)
            if s.shape != v.shape:
                raise InvariantViolation("stderr must have the same shape as values")
            if np.any(s < 0):
                raise InvariantViolation("stderr must be nonnegative")
            object.__setattr__(self, "stderr", _frozen(s))
        if self.intensity is not None:
            i = np.asarray(self.intensity, dtype=float)
            if i.shape != (n,):
                raise InvariantViolation("intensity profile must match the grid length")
            object.__setattr__(self, "intensity", _frozen(i))


def build_aperture(g: ExperimentGeometry, grid: Grid1D = DEFAULT_APERTURE_GRID) -> ApertureFunction:
    """Two clear slits of width a centred at +-d/2, opaque elsewhere.

    Each sample holds the fraction of its cell [xi - h/2, xi + h/2] that is
    open, so edges are antialiased and the open measure is exactly 2a.
    """
    a, d = g.slit_width, g.slit_separation
    h = grid.step
    if grid.min > -(d + a) or grid.max < d + a:
        raise GridTooNarrow(
            f"aperture grid [{grid.min!r}, {grid.max!r}] must cover +-(d + a) = +-{d + a!r}")
    if h > a / 20:
        raise GridTooCoarse(f"aperture step {h!r} exceeds slit_width / 20 = {a / 20!r}")
    xi = grid.points
    lo, hi = xi - 0.5 * h, xi + 0.5 * h
    t = np.zeros_like(xi)
    for centre in (0.5 * d, -0.5 * d):
        overlap = np.minimum(hi, centre + 0.5 * a) - np.maximum(lo, centre - 0.5 * a)
        t += np.clip(overlap, 0.0, None) / h
    return ApertureFunction(grid, np.minimum(t, 1.0).astype(complex), g.waveplate_phase)


def _check_detector_grid(g: ExperimentGeometry, out: Grid1D):
    extent = max(abs(out.min), abs(out.max))
    if extent > PARAXIAL_LIMIT * g.slit_to_detector:
        raise GridError(
            f"detector grid reaches |x| = {extent!r}, beyond the paraxial limit "
            f"{PARAXIAL_LIMIT} z = {PARAXIAL_LIMIT * g.slit_to_detector!r}")


def _branch_factor(xi: np.ndarray, phase: float) -> np.ndarray:
    # photon 1 through the upper slit: 1, through the lower slit: e^{i phase}
    return np.where(xi > 0, 1.0 + 0j, np.exp(1j * phase))


def propagate_biphoton(ap: ApertureFunction, g: ExperimentGeometry,
                       out: Grid1D = DEFAULT_DETECTOR_GRID) -> BiphotonAmplitude:
    """Two-photon amplitude on the detector plane, normalized to max |Psi|^2 = 1.

    For ``g.pump_correlation_width == 0`` the pair is emitted from exactly
    opposite points; otherwise the sum xi1 + xi2 is spread by a normalized
    Gaussian of that width and the double sum is evaluated.
    """
    grid = ap.grid
    if grid.min != -grid.max:
        raise GridError("aperture grid must be symmetric about the optical axis")
    _check_detector_grid(g, out)

    k, z = g.wavenumber, g.slit_to_detector
    h = grid.step
    xi = grid.points
    t = ap.amplitude
    x = out.points
    prefactor = np.exp(1j * k * x * x / (2.0 * z))

    if g.pump_correlation_width == 0.0:
        f = t * t[::-1] * _branch_factor(xi, ap.branch_phase) * np.exp(1j * k * xi * xi / z) * h
        keep = f != 0
        f, xs = f[keep], xi[keep]
        n = out.samples
        lags = np.arange(-(n - 1), n) * out.step
        # ordered reduction along xi for every lag: independent of thread scheduling
        s = (np.exp(1j * k * np.outer(lags, xs) / z) * f).sum(axis=1)
        idx = np.arange(n)
        values = prefactor[:, None] * prefactor[None, :] * s[(idx[None, :] - idx[:, None]) + n - 1]
    else:
        wp = g.pump_correlation_width
        if wp < 2.0 * h:
            raise GridTooCoarse(
                f"pump_correlation_width {wp!r} is below two aperture steps ({2 * h!r})")
        keep = t != 0
        ts, xs = t[keep], xi[keep]
        half_phase = np.exp(1j * k * xs * xs / (2.0 * z))
        f1 = ts * _branch_factor(xs, ap.branch_phase) * half_phase
        f2 = ts * half_phase
        ssum = xs[:, None] + xs[None, :]
        kernel = np.exp(-0.5 * (ssum / wp) ** 2) / (math.sqrt(2.0 * math.pi) * wp)
        m = f1[:, None] * kernel * f2[None, :] * h * h
        e = np.exp(-1j * k * np.outer(x, xs) / z)
        values = prefactor[:, None] * prefactor[None, :] * (e @ m @ e.T)

    peak = np.max(np.abs(values) ** 2)
    if peak > 0:
        values = values / math.sqrt(peak)
    return BiphotonAmplitude(out, values)


def gamma_from_amplitude(psi: BiphotonAmplitude) -> CorrelationMap:
    return CorrelationMap(psi.grid, np.abs(psi.values) ** 2)


def marginal_intensity(gamma: CorrelationMap) -> np.ndarray:
    """Singles profile at detector 1 with detector 2 summed over the grid.

    Only meaningful when the grid is wide enough that Gamma has decayed at
    its edges; on a truncated grid the row sums pick up edge structure.
    """
    return gamma.values.sum(axis=1) * gamma.grid.step


def _box_weights(width: float, step: float) -> np.ndarray:
    """Overlap of each grid cell with a centred box of the given width, in cells."""
    m = int(math.ceil(0.5 * width / step + 0.5))
    centres = np.arange(-m, m + 1) * step
    lo = np.maximum(centres - 0.5 * step, -0.5 * width)
    hi = np.minimum(centres + 0.5 * step, 0.5 * width)
    w = np.clip(hi - lo, 0.0, None) / step
    w = 0.5 * (w + w[::-1])
    return w[w > 1e-12]


def detector_convolve(gamma: CorrelationMap, g: ExperimentGeometry) -> CorrelationMap:
    """Average Gamma over the detector entrance slits (width dx in both x1 and x2).

    Near the grid edges the window is renormalized by the part that lies
    inside the grid. The result is rescaled to max 1.
    """
    step = gamma.grid.step
    width = g.detector_slit_width
    if step > width * (1.0 + 1e-12):
        raise GridTooCoarse(f"grid step {step!r} is wider than the detector slit {width!r}")
    w = _box_weights(width, step)

    def smooth(a, weights):
        a = convolve1d(a, weights, axis=0, mode="constant", cval=0.0)
        return convolve1d(a, weights, axis=1, mode="constant", cval=0.0)

    ones = np.ones_like(gamma.values)
    norm = smooth(ones, w)
    values = smooth(gamma.values, w) / norm
    stderr = None
    if gamma.stderr is not None:
        stderr = np.sqrt(smooth(gamma.stderr ** 2, w * w)) / norm
    peak = values.max()
    if peak > 0:
        values = values / peak
        if stderr is not None:
            stderr = stderr / peak
    return CorrelationMap(gamma.grid, np.clip(values, 0.0, None), stderr)


# ---------------------------------------------------------------- file format

def _fmt(v: float) -> str:
    return repr(float(v))


def _write_matrix(fh, grid: Grid1D, matrix: np.ndarray, comment: str):
    fh.write(f"# {comment}\n")
    x = grid.points
    fh.write(",".join(["x1/x2"] + [_fmt(v) for v in x]) + "\n")
    for xv, row in zip(x, matrix):
        fh.write(",".join([_fmt(xv)] + [_fmt(v) for v in row]) + "\n")


def stderr_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + "_stderr" + p.suffix)


def write_map(path, gamma: CorrelationMap, comment: str = "correlation_map"):
    """Write Gamma as CSV; a companion ``<stem>_stderr.csv`` holds the standard errors if any."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_matrix(fh, gamma.grid, gamma.values, comment)
    if gamma.stderr is not None:
        with open(stderr_path(path), "w", encoding="utf-8", newline="") as fh:
            _write_matrix(fh, gamma.grid, gamma.stderr, comment + " stderr")


def _read_matrix(text: str, source: str):
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if len(rows) < 3:
        raise DataFormatError(f"{source}: expected a header and at least two data rows")
    try:
        x2 = np.array([float(v) for v in rows[0][1:]])
        x1 = np.array([float(r[0]) for r in rows[1:]])
        body = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{source}: non-numeric or ragged entry ({exc})") from exc
    if body.shape != (len(x1), len(x2)) or len(x1) != len(x2) or not np.array_equal(x1, x2):
        raise DataFormatError(f"{source}: map must be square with matching row and column grids")
    grid = Grid1D(float(x1[0]), float(x1[-1]), len(x1))
    if not np.allclose(grid.points, x1, rtol=0, atol=1e-9 * grid.step):
        raise DataFormatError(f"{source}: grid is not uniform")
    return grid, body


def read_map(path) -> CorrelationMap:
    path = Path(path)
    grid, values = _read_matrix(path.read_text(encoding="utf-8"), str(path))
    stderr = None
    sp = stderr_path(path)
    if sp.exists():
        sgrid, stderr = _read_matrix(sp.read_text(encoding="utf-8"), str(sp))
        if sgrid != grid:
            raise DataFormatError(f"{sp}: grid differs from {path}")
    try:
        return CorrelationMap(grid, values, stderr)
    except InvariantViolation as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def is_map_file(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            return line.startswith("x1/x2,")
    return False
