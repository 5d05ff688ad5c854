"""Transverse spatial antibunching of down-converted photon pairs.

Simulates two-photon diffraction through a birefringent double slit, turns
the resulting fourth-order correlation into synthetic coincidence scans, and
tests the scans against the classical bunching bound.
"""

from .analysis import FitResult, ViolationReport, fit_fringe, fit_fringe_data, schwarz_report, visibility
from .analytic import coincidence_rate_ideal, ideal_map, singles_envelope
from .geometry import ExperimentGeometry, Grid1D, default_geometry, dump_config, fringe_period, load_config
from .montecarlo import (
    ClassicalEnsembleSpec,
    RateModel,
    ScanPlan,
    ScanResult,
    classical_gamma,
    default_rate_model,
    expected_rates,
    figure_plan,
    simulate_scan,
)
from .wave import (
    ApertureFunction,
    BiphotonAmplitude,
    CorrelationMap,
    build_aperture,
    detector_convolve,
    gamma_from_amplitude,
    marginal_intensity,
    propagate_biphoton,
)

__version__ = "0.1.0"
