"""Command-line front end.

    antibunch scan --mode fig4 --seed 1 --dwell 1000 --out runs/
    antibunch fit runs/fig4_seed1.csv
    antibunch classical --kind thermal --samples 10000 --seed 1 --out runs/
    antibunch report runs/fig4_seed1.csv runs/fig6_seed1.csv

Exit status: 0 success, 1 usage or configuration error, 2 runtime or fit
error. ``report`` instead returns 0 when the classical bound is violated and
3 when it is not, so shell scripts can branch on the verdict.
"""

from __future__ import annotations

import argparse
import functools
import math
import re
import sys
from pathlib import Path

import numpy as np

from .analysis import fit_fringe, fringe_model, schwarz_report
from .analytic import singles_envelope
from .errors import AntibunchError, ConfigError, InvariantViolation
from .geometry import Grid1D, default_geometry, read_config
from .montecarlo import (
    ENSEMBLE_KINDS,
    FIGURE_PROTOCOLS,
    SCAN_MODES,
    ClassicalEnsembleSpec,
    ScanPlan,
    default_positions,
    default_rate_model,
    expected_rates,
    read_scan,
    simulate_scan,
    write_scan,
)
from .wave import (
    DEFAULT_DETECTOR_GRID,
    build_aperture,
    detector_convolve,
    gamma_from_amplitude,
    is_map_file,
    propagate_biphoton,
    read_map,
    write_map,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_NOT_VIOLATED = 3

DETECTOR_STEP = 1e-5
DEFAULT_COHERENCE_LENGTH = 0.2e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        # let values such as -2e-3 through as numbers rather than options
        self._negative_number_matcher = re.compile(r"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")

    # argparse exits with 2 on bad usage; 2 is reserved for runtime errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_geometry(args):
    if args.config is None:
        return default_geometry()
    try:
        return read_config(args.config)
    except OSError as exc:
        raise ConfigError(exc.strerror or str(exc), args.config) from exc


def _detector_grid(positions) -> Grid1D:
    """Default grid, widened in whole steps when a scan reaches past it."""
    reach = float(np.max(np.abs(positions)))
    if reach <= DEFAULT_DETECTOR_GRID.max - DEFAULT_DETECTOR_GRID.step:
        return DEFAULT_DETECTOR_GRID
    half = math.ceil(reach / DETECTOR_STEP) * DETECTOR_STEP + 0.1e-3
    return Grid1D(-half, half, int(round(2 * half / DETECTOR_STEP)) + 1)


# ------------------------------------------------------------------ plotting

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no timestamp keep the SVG output byte-stable
    plt.rcParams["svg.hashsalt"] = "antibunch"
    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def _plot_scan(scan, path):
    plt = _pyplot()
    x = scan.scanned * 1e3
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, scan.coincidences, "k.", ms=6, label="coincidences")
    ax.set_xlabel("scanned position [mm]")
    ax.set_ylabel(f"coincidences / {scan.dwell_time:g} s")
    ax2 = ax.twinx()
    ax2.plot(x, scan.singles1, "D", mfc="none", mec="tab:blue", ms=4, label="singles D1")
    ax2.plot(x, scan.singles2, "o", mfc="none", mec="tab:red", ms=4, label="singles D2")
    ax2.set_ylabel(f"singles / {scan.dwell_time:g} s")
    handles = ax.get_legend_handles_labels()[0] + ax2.get_legend_handles_labels()[0]
    ax.legend(handles, [h.get_label() for h in handles], loc="upper right", fontsize=8)
    ax.set_title(f"{scan.plan.mode}, fixed at {scan.plan.fixed_position * 1e3:g} mm")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _plot_fit(scan, fit, path):
    plt = _pyplot()
    x = scan.scanned
    fine = np.linspace(x.min(), x.max(), 601)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(x * 1e3, scan.coincidences, yerr=np.sqrt(np.maximum(scan.coincidences, 1)),
                fmt="k.", ms=5, lw=0.8, label="coincidences")
    ax.plot(fine * 1e3, fringe_model(fine, fit.background, fit.amplitude, fit.period,
                                     fit.phase_center), "tab:red", lw=1.2, label="fit")
    ax.set_xlabel("scanned position [mm]")
    ax.set_ylabel(f"coincidences / {scan.dwell_time:g} s")
    ax.set_title(f"period {fit.period * 1e3:.4f} mm, visibility {fit.visibility:.3f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


# ------------------------------------------------------------------ commands

def _scan_plan(args) -> tuple[str, ScanPlan]:
    custom_flags = [f for f, v in (("--protocol", args.protocol), ("--fixed", args.fixed),
                                   ("--range", args.range)) if v is not None]
    if args.mode != "custom":
        if custom_flags:
            raise UsageError(f"{', '.join(custom_flags)} only apply to --mode custom")
        mode, fixed = FIGURE_PROTOCOLS[args.mode]
        return args.mode, ScanPlan(mode, fixed, default_positions(), args.dwell, args.seed)
    if args.protocol is None:
        raise UsageError("--mode custom requires --protocol")
    lo, hi, step = args.range if args.range is not None else (-1.5e-3, 1.5e-3, 0.05e-3)
    if not (step > 0 and hi > lo):
        raise UsageError("--range needs LO < HI and STEP > 0")
    n = int(math.floor((hi - lo) / step + 1e-9))
    positions = tuple(round(lo + k * step, 12) for k in range(n + 1))
    fixed = 0.0 if args.fixed is None else args.fixed
    if args.protocol == "joint_equal" and args.fixed is not None:
        raise UsageError("--fixed has no meaning for the joint_equal protocol")
    return f"custom_{args.protocol}", ScanPlan(args.protocol, fixed, positions, args.dwell, args.seed)


def cmd_scan(args) -> int:
    g = _load_geometry(args)
    stem, plan = _scan_plan(args)
    x1, x2 = plan.coordinates()
    grid = _detector_grid(np.concatenate([x1, x2]))
    gamma = detector_convolve(gamma_from_amplitude(propagate_biphoton(build_aperture(g), g, grid)), g)
    rates = expected_rates(plan, gamma, functools.partial(singles_envelope, g=g), default_rate_model(g))
    scan = simulate_scan(plan, rates)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"{stem}_seed{args.seed}.csv"
    write_scan(data_path, scan)
    _plot_scan(scan, data_path.with_suffix(".svg"))
    print(f"wrote {data_path}")
    print(f"wrote {data_path.with_suffix('.svg')}")
    return EXIT_OK


def cmd_fit(args) -> int:
    g = _load_geometry(args)
    scan_path = Path(args.scan_file)
    scan = read_scan(scan_path)
    fit = fit_fringe(scan, g, fix_period=args.fix_period)

    out = Path(args.out) if args.out is not None else scan_path.parent
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"{scan_path.stem}_fit.json"
    report_path.write_text(fit.to_text(), encoding="utf-8")
    _plot_fit(scan, fit, out / f"{scan_path.stem}_fit.svg")

    for name in ("background", "amplitude", "period", "phase_center"):
        print(f"{name:>13} = {getattr(fit, name)!r} +- {fit.se(name)!r}")
    print(f"{'visibility':>13} = {fit.visibility!r}")
    print(f"{'chi2/dof':>13} = {fit.chi_square!r} / {fit.dof}")
    if not fit.period_identifiable:
        print("note: unidentifiable period (no fringe amplitude in the data)")
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_classical(args) -> int:
    from .montecarlo import classical_gamma

    g = _load_geometry(args)
    lc = args.coherence_length if args.kind == "thermal" else None
    spec = ClassicalEnsembleSpec(args.kind, args.samples, args.seed, transverse_coherence_length=lc)
    gamma = classical_gamma(spec, build_aperture(g), g, DEFAULT_DETECTOR_GRID, workers=args.workers)
    report = schwarz_report(gamma, threshold=args.threshold)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"classical_{args.kind}_seed{args.seed}"
    write_map(out / f"{stem}.csv", gamma, comment=f"classical {args.kind} samples={args.samples} seed={args.seed}")
    (out / f"{stem}_report.json").write_text(report.to_text(), encoding="utf-8")
    print(f"significance = {report.significance!r}")
    print(f"violated={str(report.violated).lower()}")
    print(f"wrote {out / (stem + '.csv')}")
    return EXIT_OK


def _report_row(label, r) -> str:
    return (f"{label:<32} {r.gamma_zero:>12.5g} {r.gamma_zero_se:>10.3g} {r.gamma_delta_max:>12.5g} "
            f"{r.gamma_delta_max_se:>10.3g} {r.significance:>9.3g}  {str(r.violated).lower()}")


def cmd_report(args) -> int:
    if not args.files:
        raise UsageError("report needs at least one scan or map file")
    g = _load_geometry(args)
    scans, reports = [], []
    for name in args.files:
        if is_map_file(name):
            reports.append((name, schwarz_report(read_map(name), threshold=args.threshold)))
        else:
            scans.append(read_scan(name))
    if scans:
        label = "+".join(Path(p).name for p in args.files if not is_map_file(p))
        reports.insert(0, (label, schwarz_report(scans, threshold=args.threshold, g=g)))

    print(f"{'source':<32} {'gamma_0':>12} {'se':>10} {'gamma_max':>12} {'se':>10} {'sigma':>9}  violated")
    for label, r in reports:
        print(_report_row(label, r))
        for note in r.notes:
            print(f"  note: {note}")
    violated = any(r.violated for _, r in reports)
    best = max(r.significance for _, r in reports)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        text = "[\n" + ",\n".join(r.to_text().rstrip("\n") for _, r in reports) + "\n]\n"
        (out / "report.json").write_text(text, encoding="utf-8")
    print(f"VERDICT violated={str(violated).lower()} significance={best!r} threshold={args.threshold!r}")
    return EXIT_OK if violated else EXIT_NOT_VIOLATED


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="geometry file (JSON); defaults to the published setup")

    p = _Parser(prog="antibunch", description="Simulate and analyse two-photon double-slit coincidence scans.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", parents=[common], help="simulate a seeded coincidence scan")
    s.add_argument("--mode", default="fig4", choices=sorted(FIGURE_PROTOCOLS) + ["custom"])
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--dwell", type=float, default=1000.0, help="dwell time per position [s]")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--protocol", choices=SCAN_MODES, help="scan protocol (custom mode)")
    s.add_argument("--fixed", type=float, help="fixed detector position [m] (custom mode)")
    s.add_argument("--range", type=float, nargs=3, metavar=("LO", "HI", "STEP"),
                   help="scanned positions [m] (custom mode)")
    s.set_defaults(func=cmd_scan)

    f = sub.add_parser("fit", parents=[common], help="fit a fringe to a scan file")
    f.add_argument("scan_file")
    f.add_argument("--out", help="output directory (default: next to the scan file)")
    f.add_argument("--fix-period", action="store_true", help="hold the period at lambda z / d")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("classical", parents=[common], help="classical-field correlation map and bound test")
    c.add_argument("--kind", required=True, choices=ENSEMBLE_KINDS)
    c.add_argument("--samples", type=int, default=10000)
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--coherence-length", type=float, default=DEFAULT_COHERENCE_LENGTH,
                   help="thermal transverse coherence length [m]")
    c.add_argument("--threshold", type=float, default=3.0)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_classical)

    r = sub.add_parser("report", parents=[common], help="Schwarz-bound verdict for scan and map files")
    r.add_argument("files", nargs="*")
    r.add_argument("--threshold", type=float, default=3.0)
    r.add_argument("--out", help="also write report.json here")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"antibunch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AntibunchError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
