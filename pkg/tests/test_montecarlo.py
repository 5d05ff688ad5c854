import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from antibunch.analysis import fit_fringe_data, schwarz_report
from antibunch.analytic import singles_envelope
from antibunch.errors import DataFormatError, InvariantViolation, PositionOutsideGrid
from antibunch.geometry import Grid1D, fringe_period
from antibunch.montecarlo import (
    BLOCK_SIZE,
    ClassicalEnsembleSpec,
    RateModel,
    ScanPlan,
    classical_gamma,
    default_positions,
    default_rate_model,
    expected_rates,
    figure_plan,
    format_scan,
    parse_scan,
    poisson_variates,
    read_scan,
    simulate_scan,
    write_scan,
)
from antibunch.wave import DEFAULT_DETECTOR_GRID, CorrelationMap

from conftest import run_scan

X = DEFAULT_DETECTOR_GRID.points
CENTRAL = np.abs(X) <= 1.5e-3 + 1e-12
SMALL_GRID = Grid1D(-1e-3, 1e-3, 21)


def flat(v):
    return lambda x: np.full(np.shape(x), v, dtype=float)


def rng(seed=0):
    return np.random.default_rng(np.random.SeedSequence(seed))


# ---------------------------------------------------------------- rates

def test_accidental_rate_arithmetic():
    plan = ScanPlan("scan1_fix2", 0.0, (0.0, 1e-4), 1.0, 0)
    zero = CorrelationMap(SMALL_GRID, np.zeros((21, 21)))
    rm = RateModel(0.5, 1e4, 1e4, 10e-9)
    r = expected_rates(plan, zero, flat(1.0), rm)
    assert np.allclose(r.coincidences, 1.0, rtol=1e-12)


def test_zero_map_and_zero_singles_give_zero_rate():
    plan = ScanPlan("joint_equal", 0.0, (-5e-4, 0.0, 5e-4), 1.0, 0)
    r = expected_rates(plan, CorrelationMap(SMALL_GRID, np.zeros((21, 21))), flat(0.0),
                       RateModel(0.5, 1e3, 1e3, 1e-8))
    assert np.all(r.coincidences == 0) and np.all(r.singles1 == 0)


def test_peak_normalization(geom, gamma_conv):
    plan = figure_plan("fig4", 0)
    rm = RateModel(0.5, 0.0, 0.0, geom.coincidence_window)
    r = expected_rates(plan, gamma_conv, functools.partial(singles_envelope, g=geom), rm)
    i = int(np.argmax(r.coincidences))
    j = DEFAULT_DETECTOR_GRID.index_of(plan.positions[i])
    i0 = DEFAULT_DETECTOR_GRID.index_of(0.0)
    assert r.coincidences[i] == pytest.approx(0.5 * gamma_conv.values[j, i0] / gamma_conv.values.max(), rel=1e-12)
    assert r.coincidences.max() <= 0.5 + 1e-12


def test_singles_follow_envelope(geom, gamma_conv):
    plan = figure_plan("fig5", 0)
    rm = default_rate_model(geom)
    r = expected_rates(plan, gamma_conv, functools.partial(singles_envelope, g=geom), rm)
    assert np.allclose(r.singles2, rm.singles_rate_2 * singles_envelope(np.array(plan.positions), geom))
    assert np.allclose(r.singles1, rm.singles_rate_1 * singles_envelope(0.0, geom))


def test_position_outside_grid(gamma_conv):
    plan = ScanPlan("scan1_fix2", 0.0, (0.0, 2e-3), 1.0, 0)
    with pytest.raises(PositionOutsideGrid):
        expected_rates(plan, gamma_conv, flat(1.0), RateModel(1, 1, 1, 1e-8))


# ---------------------------------------------------------------- plans

@pytest.mark.parametrize("name, x1_fixed, x2_fixed", [
    ("fig4", None, 0.0), ("fig5", 0.0, None), ("fig7", None, -0.55e-3)])
def test_figure_plans(name, x1_fixed, x2_fixed):
    x1, x2 = figure_plan(name, 1).coordinates()
    if x1_fixed is not None:
        assert np.all(x1 == x1_fixed)
    if x2_fixed is not None:
        assert np.all(x2 == x2_fixed)


def test_joint_plan_diagonal():
    x1, x2 = figure_plan("fig6", 1).coordinates()
    assert np.array_equal(x1, x2)


def test_default_positions():
    pos = default_positions()
    assert len(pos) == 61 and pos[0] == -1.5e-3 and pos[-1] == 1.5e-3 and 0.0 in pos
    assert np.allclose(np.diff(pos), 0.05e-3, rtol=1e-9)


@pytest.mark.parametrize("kwargs", [
    {"mode": "diagonal"}, {"positions": (0.0, 0.0)}, {"positions": (0.0, 1e-4, 0.5e-4)},
    {"dwell_time": 0.0}, {"seed": -1}, {"seed": 2 ** 64}, {"positions": ()}])
def test_plan_invariants(kwargs):
    base = dict(mode="scan1_fix2", fixed_position=0.0, positions=(0.0, 1e-4), dwell_time=1.0, seed=0)
    base.update(kwargs)
    with pytest.raises(InvariantViolation):
        ScanPlan(**base)


def test_rate_model_invariants():
    with pytest.raises(InvariantViolation):
        RateModel(-1.0, 1.0, 1.0, 1e-8)


# ---------------------------------------------------------------- Poisson

def test_poisson_mean_and_variance_at_100():
    k = poisson_variates(np.full(10_000, 100.0), rng(3))
    assert abs(k.mean() - 100.0) <= 4 * math.sqrt(100.0 / 10_000)
    assert 0.9 <= k.var(ddof=1) / k.mean() <= 1.1


@pytest.mark.parametrize("mu", [0.3, 2.5, 9.9])
def test_poisson_small_mean_inversion(mu):
    k = poisson_variates(np.full(20_000, mu), rng(5))
    assert abs(k.mean() - mu) <= 4 * math.sqrt(mu / 20_000)
    assert 0.9 <= k.var(ddof=1) / k.mean() <= 1.1


def test_poisson_zero_mean_gives_zero():
    assert np.all(poisson_variates(np.zeros(100), rng()) == 0)


def test_poisson_rejects_bad_means():
    with pytest.raises(ValueError):
        poisson_variates(np.array([1.0, -1.0]), rng())
    with pytest.raises(ValueError):
        poisson_variates(np.array([np.nan]), rng())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1e5), min_size=1, max_size=50), st.integers(0, 2 ** 63))
def test_poisson_is_deterministic_nonnegative_integer(means, seed):
    a = poisson_variates(np.array(means), rng(seed))
    b = poisson_variates(np.array(means), rng(seed))
    assert a.dtype == np.int64
    assert np.all(a >= 0)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- scans

def test_scan_is_deterministic(geom, gamma_conv):
    a = run_scan(figure_plan("fig4", 7), gamma_conv, geom)
    b = run_scan(figure_plan("fig4", 7), gamma_conv, geom)
    c = run_scan(figure_plan("fig4", 8), gamma_conv, geom)
    assert format_scan(a) == format_scan(b)
    assert format_scan(a) != format_scan(c)


def test_zero_rate_rows_have_zero_counts():
    plan = ScanPlan("scan1_fix2", 0.0, (-1e-4, 0.0, 1e-4), 10.0, 0)
    zero = CorrelationMap(SMALL_GRID, np.zeros((21, 21)))
    scan = simulate_scan(plan, expected_rates(plan, zero, flat(0.0), RateModel(0.5, 1e3, 1e3, 1e-8)))
    assert np.all(scan.coincidences == 0) and np.all(scan.singles1 == 0)


def test_scan_shape_and_counts(geom, gamma_conv):
    scan = run_scan(figure_plan("fig5", 1), gamma_conv, geom)
    assert len(scan) == 61
    assert np.array_equal(scan.scanned, scan.x2)
    for col in (scan.singles1, scan.singles2, scan.coincidences):
        assert col.dtype == np.int64 and np.all(col >= 0)


def test_scan_file_round_trip(tmp_path, geom, gamma_conv):
    scan = run_scan(figure_plan("fig7", 2), gamma_conv, geom)
    path = tmp_path / "scan.csv"
    write_scan(path, scan)
    back = read_scan(path)
    assert back.plan == scan.plan
    for name in ("x1", "x2", "singles1", "singles2", "coincidences"):
        assert np.array_equal(getattr(back, name), getattr(scan, name))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# mode=scan1_fix2_offset seed=2 dwell_time=1000.0")
    assert lines[1] == "x1,x2,singles1,singles2,coincidences"


def test_identical_seeds_write_identical_bytes(tmp_path, geom, gamma_conv):
    for name in ("a.csv", "b.csv"):
        write_scan(tmp_path / name, run_scan(figure_plan("fig6", 11), gamma_conv, geom))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.fixture(scope="module")
def scan_text(geom, gamma_conv):
    return format_scan(run_scan(figure_plan("fig4", 1), gamma_conv, geom))


@pytest.mark.parametrize("damage", ["cut_mid_line", "cut_rows", "bad_header", "no_comment",
                                    "negative", "text_count", "no_seed"])
def test_parser_rejects_damage(scan_text, damage):
    lines = scan_text.splitlines()
    if damage == "cut_mid_line":
        text = scan_text[: len(scan_text) // 2]
    elif damage == "cut_rows":
        text = "\n".join(lines[:30]) + "\n"
    elif damage == "bad_header":
        text = "\n".join([lines[0], "a,b,c,d,e"] + lines[2:])
    elif damage == "no_comment":
        text = "\n".join(lines[1:])
    elif damage == "negative":
        text = "\n".join(lines[:5] + [lines[5].rsplit(",", 1)[0] + ",-3"] + lines[6:])
    elif damage == "text_count":
        text = "\n".join(lines[:5] + [lines[5].rsplit(",", 1)[0] + ",many"] + lines[6:])
    else:
        text = "\n".join([lines[0].replace("seed=1 ", "")] + lines[1:])
    with pytest.raises(DataFormatError):
        parse_scan(text)


def test_parser_error_carries_line(scan_text):
    lines = scan_text.splitlines()
    text = "\n".join(lines[:9] + ["1,2,3"] + lines[10:])
    with pytest.raises(DataFormatError, match=":10:"):
        parse_scan(text, "scan.csv")


# ---------------------------------------------------------------- classical fields

def test_coherent_factorizes(geom, aperture):
    m = classical_gamma(ClassicalEnsembleSpec("coherent", 1, 0), aperture, geom, DEFAULT_DETECTOR_GRID)
    assert np.array_equal(m.values, np.outer(m.intensity, m.intensity))
    assert np.all(m.stderr == 0)


@pytest.fixture(scope="module")
def thermal(geom, aperture):
    spec = ClassicalEnsembleSpec("thermal", 10_000, 1, transverse_coherence_length=0.2e-3)
    return classical_gamma(spec, aperture, geom, DEFAULT_DETECTOR_GRID)


def test_thermal_moment_theorem(thermal):
    ratio = np.diag(thermal.values)[CENTRAL] / thermal.intensity[CENTRAL] ** 2
    assert np.all(np.abs(ratio - 2.0) <= 0.1)


def test_thermal_stderr_shape(thermal):
    assert thermal.stderr.shape == thermal.values.shape
    assert np.all(thermal.stderr[CENTRAL][:, CENTRAL] > 0)


def test_result_does_not_depend_on_workers(geom, aperture):
    spec = ClassicalEnsembleSpec("thermal", 3 * BLOCK_SIZE + 17, 9, transverse_coherence_length=0.1e-3)
    one = classical_gamma(spec, aperture, geom, DEFAULT_DETECTOR_GRID, workers=1)
    four = classical_gamma(spec, aperture, geom, DEFAULT_DETECTOR_GRID, workers=4)
    assert np.array_equal(one.values, four.values)
    assert np.array_equal(one.stderr, four.stderr)


def test_single_sample_has_infinite_error(geom, aperture):
    m = classical_gamma(ClassicalEnsembleSpec("phase_diffused", 1, 0), aperture, geom, DEFAULT_DETECTOR_GRID)
    assert np.all(np.isinf(m.stderr))


@pytest.mark.parametrize("kind, lc", [("coherent", None), ("thermal", 0.2e-3), ("phase_diffused", None)])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_classical_bound_holds(geom, aperture, kind, lc, seed):
    spec = ClassicalEnsembleSpec(kind, 2000, seed, transverse_coherence_length=lc)
    m = classical_gamma(spec, aperture, geom, DEFAULT_DETECTOR_GRID)
    report = schwarz_report(m)
    assert not report.violated
    # raw centre row, without normalization: no excess beyond 3 combined errors
    i0 = DEFAULT_DETECTOR_GRID.index_of(0.0)
    row, se = m.values[i0], m.stderr[i0]
    excess = row[CENTRAL] - row[i0]
    assert np.all(excess <= 3 * np.hypot(se[CENTRAL], se[i0]) + 1e-12 * row[i0])


def test_phase_diffused_minimum_is_half_a_period_off(geom, aperture):
    # the classical harmonic pattern peaks where the quantum one vanishes
    m = classical_gamma(ClassicalEnsembleSpec("phase_diffused", 10_000, 1), aperture, geom,
                        DEFAULT_DETECTOR_GRID)
    i0 = DEFAULT_DETECTOR_GRID.index_of(0.0)
    c = m.values[i0] / np.sqrt(m.values[i0, i0] * np.diag(m.values))
    lam = fringe_period(geom)
    fit = fit_fringe_data(X[CENTRAL], c[CENTRAL], period_guess=lam)
    pos, _ = fit.minimum_near(0.0)
    assert abs(abs(pos) - lam / 2) < 0.05 * lam
    assert 0 < fit.visibility < 1


@pytest.mark.parametrize("kwargs", [
    {"kind": "squeezed"}, {"samples": 0}, {"kind": "thermal", "transverse_coherence_length": 0.0},
    {"kind": "thermal"}, {"mean_intensity": 0.0}, {"seed": -2}])
def test_ensemble_spec_invariants(kwargs):
    base = dict(kind="coherent", samples=10, seed=0)
    base.update(kwargs)
    with pytest.raises(InvariantViolation):
        ClassicalEnsembleSpec(**base)
