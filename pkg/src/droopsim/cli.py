"""Command-line front end.

Subcommands: run, steady, calibrate, sweep, plot.  Set DROOPSIM_LOG to
debug or info for progress output.  Exit codes: 0 success, 1 usage
error, 2 simulation or solver abort, 3 I/O failure, 4 bad input data.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from droopsim.errors import (
    ConfigurationError,
    DegenerateNetworkError,
    DivergenceError,
    InfeasibleTargetError,
    InvalidParameterError,
    ScenarioParseError,
    SimulationAbort,
)
from droopsim.oracle import (
    calibrate_setpoints,
    stability_margin,
    steady_state_solve,
    sweep_parameter,
)
from droopsim.scenario import parse_scenario
from droopsim.simulator import (
    read_timeseries_csv,
    resolve_setpoints,
    run,
    summarize,
    write_timeseries_csv,
    write_waveform_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
EXIT_IO = 3
EXIT_BAD_DATA = 4

log = logging.getLogger("droopsim")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="droopsim",
                     description="Droop-controlled microgrid simulator")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_run = sub.add_parser("run", help="time-domain simulation of a scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("-o", "--output", default=None,
                       help="output CSV path (default: <scenario stem>.csv)")
    p_run.add_argument("--waveform", type=int, metavar="INV", default=None,
                       help="also write instantaneous three-phase voltages "
                            "of inverter INV to <output>.waveform.csv")
    p_run.add_argument("--steady-only", action="store_true",
                       help="skip time stepping, print oracle results only")

    p_steady = sub.add_parser("steady",
                              help="steady-state solve per load segment")
    p_steady.add_argument("scenario")

    p_cal = sub.add_parser("calibrate",
                           help="solve setpoint angles and amplitudes")
    p_cal.add_argument("scenario")

    p_sweep = sub.add_parser("sweep", help="steady-state parameter sweep")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True,
                         help="k_pdelta, k_qe, tau_s, or line_x_ohm")
    p_sweep.add_argument("--from", dest="lo", type=float, required=True)
    p_sweep.add_argument("--to", dest="hi", type=float, required=True)
    p_sweep.add_argument("--steps", type=int, required=True)
    p_sweep.add_argument("-o", "--output", default=None,
                         help="output CSV (default: <scenario stem>.sweep.csv)")

    p_plot = sub.add_parser("plot", help="render charts from a run CSV")
    p_plot.add_argument("csv")
    p_plot.add_argument("-d", "--outdir", default="plots")

    return parser


def _print_steady(sc, label=""):
    for seg_idx, (t_start, load) in enumerate(sc.schedule, start=1):
        ss = steady_state_solve(sc, load)
        report = stability_margin(sc, ss, load)
        print(f"segment {seg_idx}{label} (load from t = {t_start:g} s, "
              f"{load.p_rated_w:g} W / {load.q_rated_var:g} var):")
        for i in range(len(sc.inverters)):
            print(f"  inverter {i + 1}: P = {ss.p_out[i]:.3f} W, "
                  f"Q = {ss.q_out[i]:.3f} var, "
                  f"delta = {ss.deltas[i]:.6f} rad, "
                  f"E = {ss.e_refs[i]:.3f} V peak, "
                  f"loop gain = {report.loop_gains[i]:.4f}")
        print(f"  V_pcc = {ss.v_pcc.mag * math.sqrt(3.0):.3f} V LL, "
              f"converged in {ss.iterations} iterations, "
              f"stable = {report.stable}")


def cmd_run(args) -> int:
    sc = parse_scenario(args.scenario)
    sc = resolve_setpoints(sc)
    if sc.calibrate:
        for i, inv in enumerate(sc.inverters, start=1):
            log.info("calibrated inverter %d: delta0 = %.6f rad, "
                     "e0 = %.3f V", i, inv.setpoints.delta0,
                     inv.setpoints.e0)

    if args.steady_only:
        _print_steady(sc)
        return EXIT_OK

    out = args.output
    if out is None:
        stem = os.path.splitext(os.path.basename(args.scenario))[0]
        out = stem + ".csv"

    ts = run(sc, calibrated=True)
    write_timeseries_csv(ts, out)
    log.info("wrote %d rows to %s", len(ts.rows), out)
    print(f"wrote {out} ({len(ts.rows)} rows, {ts.n_inverters} inverters)")

    if args.waveform is not None:
        wf_path = os.path.splitext(out)[0] + ".waveform.csv"
        write_waveform_csv(ts, args.waveform, wf_path, sc.frequency,
                           phase_order=sc.phase_order)
        print(f"wrote {wf_path}")

    segments, v_min = summarize(ts, sc)
    for seg_idx, seg in enumerate(segments, start=1):
        p_str = ", ".join(f"{p:.1f}" for p in seg.final_p_w)
        print(f"segment {seg_idx} [{seg.t_start:g}, {seg.t_end:g}] s: "
              f"P = [{p_str}] W, V_pcc = {seg.final_v_pcc_ll:.2f} V, "
              f"settled {seg.settle_s:.3f} s after the event")
    print(f"minimum PCC voltage: {v_min:.2f} V line-to-line")
    return EXIT_OK


def cmd_steady(args) -> int:
    sc = parse_scenario(args.scenario)
    sc = resolve_setpoints(sc)
    _print_steady(sc)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    sc = parse_scenario(args.scenario)
    cal = calibrate_setpoints(sc)
    print("calibrated setpoints (paste into the inverter sections):")
    for i, (delta0, e0) in enumerate(cal, start=1):
        print(f"# [inverter.{i}]")
        print(f"delta0_rad = {delta0!r}")
        print(f"e0_v = {e0!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = parse_scenario(args.scenario)
    sc = resolve_setpoints(sc)
    points = sweep_parameter(sc, args.param, args.lo, args.hi, args.steps)

    out = args.output
    if out is None:
        stem = os.path.splitext(os.path.basename(args.scenario))[0]
        out = stem + ".sweep.csv"

    n = len(sc.inverters)
    header = [f"{args.param}_value", "converged", "loop_gain"]
    for i in range(1, n + 1):
        header += [f"p_out_w_{i}", f"q_out_var_{i}"]
    header.append("v_pcc_rms_ll_v")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for pt in points:
            row = [repr(pt.value), "1" if pt.converged else "0",
                   repr(pt.loop_gain)]
            for i in range(n):
                row += [repr(pt.p_out[i]), repr(pt.q_out[i])]
            row.append(repr(pt.v_pcc_ll))
            fh.write(",".join(row) + "\n")

    n_conv = sum(1 for pt in points if pt.converged)
    print(f"wrote {out}: {len(points)} points, {n_conv} converged")
    for pt in points:
        if not pt.converged:
            print(f"first divergence at {args.param} = {pt.value!r} "
                  f"(loop gain {pt.loop_gain:.3f})")
            break
    return EXIT_OK


def cmd_plot(args) -> int:
    from droopsim.plots import emit_plots

    ts = read_timeseries_csv(args.csv)
    written = emit_plots(ts, args.outdir)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "steady": cmd_steady,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    level = os.environ.get("DROOPSIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")

    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioParseError, ConfigurationError, InfeasibleTargetError,
            InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except (SimulationAbort, DivergenceError, DegenerateNetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
