"""Closed-form far-field model.

Rates here are dimensionless: the coincidence pattern lives in [0, 2] with
unit mean over a period, the singles envelope peaks just below 1.
"""

from __future__ import annotations

import numpy as np

from .geometry import ExperimentGeometry, Grid1D, fringe_period


def coincidence_rate_ideal(x1, x2, g: ExperimentGeometry):
    """Point-detector coincidence pattern 1 - cos(2 pi d (x2 - x1) / (lambda z) + pi - phi).

    With the default phi = pi this is the antibunched pattern, zero whenever
    x1 == x2. phi = 0 gives the bunched control 1 + cos(...).
    Broadcasts over array inputs.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    arg = 2.0 * np.pi * (x2 - x1) / fringe_period(g) + (np.pi - g.waveplate_phase)
    out = 1.0 - np.cos(arg)
    return out if out.ndim else float(out)


def singles_envelope(x, g: ExperimentGeometry):
    """Relative singles rate: incoherent sum of the two single-slit Fraunhofer envelopes.

    Each slit contributes sinc^2(pi a sin(theta) / lambda), with theta the
    angle from that slit's centre to the detector. There is no cross term,
    hence nothing periodic in lambda z / d.
    """
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for centre in (0.5 * g.slit_separation, -0.5 * g.slit_separation):
        dx = x - centre
        sine = dx / np.hypot(dx, g.slit_to_detector)
        # np.sinc is the normalized sin(pi u) / (pi u)
        total = total + 0.5 * np.sinc(g.slit_width * sine / g.wavelength) ** 2
    return total if total.ndim else float(total)


def ideal_map(g: ExperimentGeometry, grid: Grid1D):
    """``coincidence_rate_ideal`` sampled on grid x grid, rows indexed by x1.

    Returned as a CorrelationMap (values in [0, 2], no stderr).
    """
    from .wave import CorrelationMap

    x = grid.points
    return CorrelationMap(grid, coincidence_rate_ideal(x[:, None], x[None, :], g))
