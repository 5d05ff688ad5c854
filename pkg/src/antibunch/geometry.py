"""Experimental constants, discretization grids and configuration files.

All quantities are SI base units (metres, seconds, radians). The
configuration format is a flat JSON object whose keys are exactly the
``ExperimentGeometry`` field names::

    {
      "wavelength": 7.02e-07,
      "slit_width": 0.0002,
      ...
    }

Floats are written with ``repr`` so a dump/load round trip is bit exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import (
    ConfigInvariantError,
    ConfigParseError,
    InvariantViolation,
    MissingKeyError,
    UnknownKeyError,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ExperimentGeometry:
    wavelength: float
    slit_width: float
    slit_separation: float
    slit_to_detector: float
    detector_slit_width: float
    detector_slit_height: float
    coincidence_window: float
    waveplate_phase: float
    pump_correlation_width: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvariantViolation(f"{f.name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvariantViolation(f"{f.name} must be finite, got {value!r}")
        for name in ("wavelength", "slit_width", "slit_separation", "slit_to_detector",
                     "detector_slit_width", "detector_slit_height", "coincidence_window"):
            if getattr(self, name) <= 0:
                raise InvariantViolation(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.pump_correlation_width < 0:
            raise InvariantViolation(
                f"pump_correlation_width must be >= 0, got {self.pump_correlation_width!r}")
        if self.slit_separation <= self.slit_width:
            raise InvariantViolation(
                f"slit_separation ({self.slit_separation!r}) must exceed "
                f"slit_width ({self.slit_width!r}); the slits would overlap")
        if not 0.0 <= self.waveplate_phase < TWO_PI:
            raise InvariantViolation(
                f"waveplate_phase must lie in [0, 2*pi), got {self.waveplate_phase!r}")

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength

    def replace(self, **changes) -> "ExperimentGeometry":
        data = asdict(self)
        data.update(changes)
        return ExperimentGeometry(**data)


CONFIG_KEYS = tuple(f.name for f in fields(ExperimentGeometry))


@dataclass(frozen=True)
class Grid1D:
    """Uniform sampling of an interval, endpoints included.

    Points are generated symmetrically about the interval centre, so a grid
    with ``min == -max`` satisfies ``points[::-1] == -points`` exactly. The
    propagation code relies on that mirror property.
    """

    min: float
    max: float
    samples: int

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise InvariantViolation("grid bounds must be finite")
        if not self.min < self.max:
            raise InvariantViolation(f"grid needs min < max, got [{self.min!r}, {self.max!r}]")
        if isinstance(self.samples, bool) or int(self.samples) != self.samples or self.samples < 2:
            raise InvariantViolation(f"grid needs an integer samples >= 2, got {self.samples!r}")

    @property
    def step(self) -> float:
        return (self.max - self.min) / (self.samples - 1)

    @property
    def points(self) -> np.ndarray:
        n = int(self.samples)
        centre = 0.5 * (self.min + self.max)
        half = 0.5 * (self.max - self.min)
        offsets = (2.0 * np.arange(n) - (n - 1)) * (half / (n - 1))
        return centre + offsets

    def index_of(self, x: float, tol: float = 1e-9) -> int | None:
        """Index of the grid point within ``tol * step`` of ``x``, else None."""
        j = int(round((x - self.min) / self.step))
        if 0 <= j < self.samples and abs(self.points[j] - x) <= tol * self.step:
            return j
        return None


def default_geometry() -> ExperimentGeometry:
    """The published setup: 702 nm pairs, 0.20 mm slits on 0.40 mm centres, 70 cm to the detectors."""
    return ExperimentGeometry(
        wavelength=702e-9,
        slit_width=0.20e-3,
        slit_separation=0.40e-3,
        slit_to_detector=0.70,
        detector_slit_width=0.20e-3,
        detector_slit_height=3e-3,
        coincidence_window=10e-9,
        waveplate_phase=math.pi,
        pump_correlation_width=0.0,
    )


def fringe_period(g: ExperimentGeometry) -> float:
    """Period of the fourth-order fringe in detector separation, lambda * z / d."""
    return g.wavelength * g.slit_to_detector / g.slit_separation


def dump_config(g: ExperimentGeometry) -> str:
    lines = [f'  "{key}": {getattr(g, key)!r}' for key in CONFIG_KEYS]
    return "{\n" + ",\n".join(lines) + "\n}\n"


def _line_of_key(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def load_config(text: str, source: str | None = None) -> ExperimentGeometry:
    """Parse and validate a geometry document.

    Raises ConfigParseError, MissingKeyError, UnknownKeyError or
    ConfigInvariantError; each carries ``source`` and, where it can be
    located, the offending ``line``.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(exc.msg, source, exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigParseError("top level must be a key-value object", source, 1)

    for key in data:
        if key not in CONFIG_KEYS:
            raise UnknownKeyError(key, source, _line_of_key(text, key))
    for key in CONFIG_KEYS:
        if key not in data:
            raise MissingKeyError(key, source)

    try:
        return ExperimentGeometry(**data)
    except InvariantViolation as exc:
        msg = str(exc)
        line = None
        for key in CONFIG_KEYS:
            if msg.startswith(key):
                line = _line_of_key(text, key)
                break
        raise ConfigInvariantError(msg, source, line) from exc


def read_config(path) -> ExperimentGeometry:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read(), source=str(path))
