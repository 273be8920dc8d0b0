"""Command-line entry point: ``hypertwin <verb> ...``.

Each invocation writes into its own run directory under the output root
(``--out``, else ``$HYPERTWIN_OUTPUT``, else ``./hypertwin-runs``) and appends
an entry to that directory's ``manifest.json``.

Exit codes: 0 success, 1 unexpected error, 2 usage or input error,
3 simulation divergence, 4 calibration or matching stopped above threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import matching, scenarios, sensitivity
from .engine import IntegrationConfig, SimulationDivergence, SimulationTrace, simulate
from .observables import BodyMetrics, OutputReport, compute_outputs, range_check
from .params import ParameterError, ParameterSet, VariantError
from .presets import DEFAULT_HR, healthy

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGENCE, EXIT_UNSUCCESSFUL = 0, 1, 2, 3, 4
OUTPUT_ENV = "HYPERTWIN_OUTPUT"
DEFAULT_ROOT = "hypertwin-runs"

log = logging.getLogger("hypertwin")


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover
        return "unknown"


# ----------------------------------------------------------------- run dirs
class Run:
    """Run directory bookkeeping: files written and the manifest entry."""

    def __init__(self, args, command: str):
        root = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_ROOT)
        name = args.run or f"{command}-{datetime.now(timezone.utc):%Y%m%dT%H%M%S%fZ}"
        self.dir = root / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.argv = list(args.argv)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.dir / name

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        self.outputs.append(name)
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write(name, json.dumps(doc, indent=2) + "\n")

    def add(self, path: Path) -> None:
        self.outputs.append(str(Path(path).relative_to(self.dir)))

    def close(self, status: int, extra: dict | None = None) -> None:
        mpath = self.path("manifest.json")
        entries = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else []
        entry = {"command": self.command, "argv": self.argv, "inputs": self.inputs,
                 "outputs": self.outputs, "exit_code": status,
                 "wall_time_s": round(time.perf_counter() - self.t0, 3),
                 "version": _version(),
                 "determinism": "no random sampling; Sobol points are unscrambled"}
        if extra:
            entry.update(extra)
        entries.append(entry)
        mpath.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- helpers
def _condition(text: str) -> str:
    for c in scenarios.CONDITIONS:
        if c.lower() == text.lower():
            return c
    raise UsageError(f"unknown condition {text!r}; choose from {', '.join(scenarios.CONDITIONS)}")


def _severity(text: str) -> str:
    for s in scenarios.SEVERITIES:
        if s.lower() == text.lower():
            return s
    raise UsageError(f"unknown severity {text!r}; choose from {', '.join(scenarios.SEVERITIES)}")


def _load_params(run: Run | None, path: str | None, variant: str, hr: float | None) -> ParameterSet:
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"parameter file not found: {path}")
        params = ParameterSet.load(p)
        if run is not None:
            run.inputs.append(str(p))
        if params.variant != variant:
            raise UsageError(f"{path} holds variant {params.variant}, expected {variant}")
    else:
        params = healthy(variant)
    if hr is not None:
        params = params.with_values({"HR": hr})
    return params


def _sim_cfg(args) -> IntegrationConfig:
    return IntegrationConfig(dt=args.dt, max_heartbeats=args.max_beats, convergence_tol=args.tol,
                             heartbeats_to_keep=args.keep)


def _body(args) -> BodyMetrics:
    return BodyMetrics(args.bsa)


def _report_doc(report: OutputReport, trace: SimulationTrace) -> dict:
    verdicts, all_in = range_check(report)
    return {"variant": report.variant, "bsa": report.bsa, "T_HB": trace.T_HB,
            "converged": trace.converged, "heartbeats": trace.n_beats,
            "outputs": report.to_dict(), "verdicts": verdicts, "all_in_range": all_in}


def _write_simulation(run: Run, params: ParameterSet, trace: SimulationTrace, body: BodyMetrics,
                      prefix: str = "") -> OutputReport:
    report = compute_outputs(trace, params, body)
    run.write(f"{prefix}params.toml", params.to_toml())
    run.write(f"{prefix}trace.csv", trace.to_csv())
    run.write_json(f"{prefix}report.json", _report_doc(report, trace))
    return report


def _int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out += list(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


# ----------------------------------------------------------------- commands
def cmd_simulate(args, run: Run) -> int:
    params = _load_params(run, args.params, args.variant, args.hr)
    trace = simulate(params, cfg=_sim_cfg(args))
    report = _write_simulation(run, params, trace, _body(args))
    _, all_in = range_check(report)
    print(f"{params.variant}: {len(report)} outputs, converged={trace.converged}, "
          f"all in healthy range={all_in}")
    if args.plots:
        from . import plots
        run.add(plots.pv_loops({params.variant: trace}, run.path("pv_loops.svg")))
        run.add(plots.time_series({params.variant: trace}, run.path("time_series.svg")))
    return EXIT_OK


def cmd_scenario(args, run: Run) -> int:
    base = _load_params(run, args.params, args.variant, args.hr)
    spec = scenarios.builtin(_condition(args.condition), _severity(args.severity))
    params = scenarios.apply(spec, base)
    run.write("scenario.toml", spec.to_toml())
    cfg, body = _sim_cfg(args), _body(args)
    base_trace = simulate(base, cfg=cfg)
    _write_simulation(run, base, base_trace, body, prefix="baseline_")
    trace = simulate(params, cfg=cfg)
    report = _write_simulation(run, params, trace, body)
    keys = ("SAP_max", "LV_SW", "RV_EF", "RV_IESV", "LV_IEDV", "RV_IEDV")
    print(spec.name, ", ".join(f"{k}={report[k]:.3g}" for k in keys))
    if args.plots:
        from . import plots
        traces = {"healthy": base_trace, spec.name: trace}
        run.add(plots.pv_loops(traces, run.path("pv_loops.svg")))
        run.add(plots.time_series(traces, run.path("time_series.svg")))
    return EXIT_OK


def cmd_sobol(args, run: Run) -> int:
    base = _load_params(run, args.params, args.variant, args.hr)
    cfg = _sim_cfg(args)
    design = sensitivity.saltelli_design(base, None, args.n)
    run.write("design.csv", design.to_csv())
    ev = sensitivity.ModelEvaluator(base, design.names, cfg, _body(args))
    Y = sensitivity.evaluate_design(design, ev, args.jobs)
    header = ",".join(("row",) + ev.outputs)
    lines = [header] + [",".join([str(i)] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])
                        for i, row in enumerate(Y)]
    run.write("values.csv", "\n".join(lines) + "\n")
    result = sensitivity.total_indices(design, Y, ev.outputs)
    run.write("indices.csv", result.to_csv())
    relevant = sensitivity.relevant_parameters(result, args.threshold)
    run.write_json("relevant.json", {"threshold": args.threshold, "parameters": relevant,
                                     "failed_rows": int(result.failed.sum()),
                                     "warnings": result.warnings})
    print(f"{design.n_rows} evaluations, {int(result.failed.sum())} failed; "
          f"{len(relevant)} of {design.n_params} parameters relevant at {args.threshold}")
    if args.plots:
        from . import plots
        run.add(plots.sobol_heatmap(result.parameters, result.outputs, result.S,
                                    run.path("sobol_heatmap.svg"), args.threshold))
    return EXIT_OK


def cmd_groups(args, run: Run) -> int:
    base = _load_params(run, args.params, args.variant, args.hr)
    runs = sensitivity.group_campaign(base, cfg=_sim_cfg(args), body=_body(args), jobs=args.jobs)
    run.write("indicators.csv", sensitivity.campaign_to_csv(runs))
    cells = sum(len(r.values) for r in runs)
    failed = [f"{r.group} rho={r.rho}: {r.error}" for r in runs if r.error]
    run.write_json("summary.json", {"runs": len(runs), "indicators": cells, "failed": failed})
    print(f"{len(runs)} runs, {cells} indicators, {len(failed)} failed runs")
    return EXIT_OK


def _free_list(text: str | None) -> list[str] | None:
    return [p.strip() for p in text.split(",") if p.strip()] if text else None


def cmd_calibrate(args, run: Run) -> int:
    if args.problem:
        p = Path(args.problem)
        if not p.is_file():
            raise UsageError(f"problem file not found: {args.problem}")
        run.inputs.append(str(p))
        problem = cal.CalibrationProblem.from_json(p.read_text(encoding="utf-8"))
    else:
        start = _load_params(run, args.params, "NC", args.hr)
        if args.targets:
            tp = Path(args.targets)
            if not tp.is_file():
                raise UsageError(f"targets file not found: {args.targets}")
            run.inputs.append(str(tp))
            targets = cal.TargetData.from_dict(json.loads(tp.read_text(encoding="utf-8")))
        else:
            targets = cal.scenario_targets(None, None, _body(args))
        free = _free_list(args.free) or cal.default_free_parameters()
        problem = cal.CalibrationProblem(tuple(free), start, targets, args.loss,
                                         threshold=args.threshold, body=_body(args),
                                         max_iter=args.max_iter)
    run.write("problem.json", problem.to_json() + "\n")
    result = cal.calibrate(problem)
    run.write("result.json", result.to_json() + "\n")
    run.write("params.toml", result.params.to_toml())
    print(f"loss {result.loss:.4g} after {result.iterations} iterations "
          f"({result.wall_time:.1f} s), success={result.success}")
    return EXIT_OK if result.success else EXIT_UNSUCCESSFUL


def cmd_lossstudy(args, run: Run) -> int:
    if args.cases == "all":
        cases = [(c, s) for c in scenarios.CONDITIONS for s in scenarios.SEVERITIES]
    else:
        cases = []
        for item in args.cases.split(","):
            c, _, s = item.partition(":")
            cases.append((_condition(c), _severity(s)))
    losses = _int_list(args.losses)
    rows = cal.loss_study(cases, losses, free=_free_list(args.free), max_iter=args.max_iter,
                          body=_body(args))
    run.write("study.csv", cal.study_to_csv(rows))
    fastest = {f"{c}-{s}": r for (c, s), r in cal.fastest_losses(rows).items()}
    run.write_json("fastest.json", fastest)
    print(f"{len(rows)} calibrations; fastest loss per case: {fastest}")
    if args.plots:
        from . import plots
        run.add(plots.loss_study_panels(rows, run.path("loss_study.svg")))
    return EXIT_OK


def cmd_match(args, run: Run) -> int:
    if args.reverse:
        reference = _load_params(run, args.reference, "C", args.hr)
        mutable = _load_params(run, args.mutable, "NC", args.hr)
    else:
        reference = _load_params(run, args.reference, "NC", args.hr)
        mutable = (_load_params(run, args.mutable, "C", args.hr) if args.mutable
                   else matching.shared_start(reference))
    tune = _free_list(args.tune)
    cfg = matching.MatchConfig(n=args.n, max_rounds=args.rounds, stop_at=args.stop,
                               parameters=tuple(tune) if tune else None)
    result = matching.match(reference, mutable, cfg, _sim_cfg(args))
    run.write("trajectory.csv", result.trajectory_csv())
    run.write("params.toml", result.params.to_toml())
    run.write_json("summary.json", {"initial_error": result.initial_error, "error": result.error,
                                    "simulations": result.simulations,
                                    "accepted_steps": len(result.accepted_errors),
                                    "crossed_acceptable_at": result.crossed_acceptable,
                                    "crossed_strict_at": result.crossed_strict})
    print(f"error {result.initial_error:.4g} -> {result.error:.4g} in {result.simulations} simulations")
    if args.plots:
        from . import plots
        errs = [result.initial_error] + result.accepted_errors
        run.add(plots.error_trajectory(errs, run.path("error_trajectory.svg")))
    return EXIT_OK if result.crossed_acceptable is not None else EXIT_UNSUCCESSFUL


def cmd_workflow(args, run: Run) -> int:
    if args.condition.lower() == "healthy":
        condition = severity = None
    else:
        if args.severity is None:
            raise UsageError("severity is required unless the condition is 'healthy'")
        condition, severity = _condition(args.condition), _severity(args.severity)
    start = _load_params(run, args.params, "NC", args.hr)
    targets, result = cal.workflow_0d(condition, severity, start, _free_list(args.free), args.loss,
                                      args.max_iter, _body(args))
    run.write_json("targets.json", targets.to_dict())
    run.write("result.json", result.to_json() + "\n")
    run.write("params.toml", result.params.to_toml())
    print(f"loss {result.loss:.4g}, success={result.success}")
    return EXIT_OK if result.success else EXIT_UNSUCCESSFUL


def cmd_report(args, run: Run) -> int:
    src = Path(args.run_dir)
    prefixes = [p.name[:-len("report.json")] for p in sorted(src.glob("*report.json"))]
    if not prefixes:
        raise UsageError(f"no report.json found in {src}")
    from . import plots
    traces = {}
    rows = ["run,output,value,verdict"]
    for prefix in prefixes:
        doc = json.loads((src / f"{prefix}report.json").read_text(encoding="utf-8"))
        run.inputs.append(str(src / f"{prefix}report.json"))
        label = prefix.rstrip("_") or "run"
        for name, value in doc["outputs"].items():
            rows.append(f"{label},{name},{value!r},{doc.get('verdicts', {}).get(name, '')}")
        tpath = src / f"{prefix}trace.csv"
        if tpath.is_file():
            traces[label] = SimulationTrace.from_csv(tpath.read_text(encoding="utf-8"), doc["T_HB"])
    run.write("summary.csv", "\n".join(rows) + "\n")
    if traces:
        run.add(plots.pv_loops(traces, run.path("pv_loops.svg")))
        run.add(plots.time_series(traces, run.path("time_series.svg")))
    print(f"summarised {len(prefixes)} report(s) into {run.dir}")
    return EXIT_OK


# ----------------------------------------------------------------- parser
def _global_options(p: argparse.ArgumentParser) -> None:
    # Registered on the top-level parser and, with suppressed defaults, on every
    # verb, so the options work on either side of the verb.
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./{DEFAULT_ROOT})")
    p.add_argument("--run", help="run directory name (default: command and UTC timestamp)")
    p.add_argument("--jobs", type=int, help="worker processes (0: one per CPU; default 1)")
    p.add_argument("--bsa", type=float, help=f"body surface area [m^2] (default {BodyMetrics().bsa:g})")
    p.add_argument("--plots", action="store_true", help="also write SVG figures")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypertwin", description=__doc__.splitlines()[0])
    _global_options(ap)
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _global_options(common)
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_flags(p, variant=True, default_variant="C"):
        if variant:
            p.add_argument("--variant", choices=("NC", "C"), default=default_variant)
        p.add_argument("--params", help="parameter file (TOML); default: healthy set")
        p.add_argument("--hr", type=float, help=f"override heart rate (default {DEFAULT_HR:g})")
        p.add_argument("--dt", type=float, default=1e-3)
        p.add_argument("--max-beats", type=int, default=300)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--keep", type=int, default=1, help="heartbeats kept in the trace")

    p = sub.add_parser("simulate", parents=[common], help="run one model to its limit cycle")
    sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", parents=[common], help="simulate a built-in hypertensive scenario")
    p.add_argument("condition")
    p.add_argument("severity")
    sim_flags(p)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("sobol", parents=[common], help="Saltelli design and total Sobol indices")
    sim_flags(p, default_variant="NC")
    p.set_defaults(max_beats=150)
    p.add_argument("--n", type=int, default=sensitivity.DESK_N, help="base sample count (power of 2)")
    p.add_argument("--threshold", type=float, default=0.2)
    p.set_defaults(func=cmd_sobol)

    p = sub.add_parser("groups", parents=[common], help="grouped one-at-a-time indicator campaign")
    sim_flags(p, default_variant="NC")
    p.set_defaults(func=cmd_groups)

    p = sub.add_parser("calibrate", parents=[common], help="fit the non-capillary model to targets")
    p.add_argument("--problem", help="problem document (JSON); overrides the flags below")
    p.add_argument("--targets", help="targets document (JSON); default: healthy capillary outputs")
    p.add_argument("--params", help="starting parameter file (TOML)")
    p.add_argument("--hr", type=float)
    p.add_argument("--free", help="comma-separated parameter paths")
    p.add_argument("--loss", type=int, default=0, choices=cal.LOSS_IDS)
    p.add_argument("--threshold", type=float, default=cal.DEFAULT_THRESHOLD)
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("lossstudy", parents=[common], help="compare loss functions across scenarios")
    p.add_argument("--cases", default="all", help="'all' or condition:severity,...")
    p.add_argument("--losses", default="0-8")
    p.add_argument("--free", help="comma-separated parameter paths")
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_lossstudy)

    p = sub.add_parser("match", parents=[common], help="tune one variant so its traces follow the other")
    p.add_argument("--reference", help="reference parameter file")
    p.add_argument("--mutable", help="parameter file of the model being tuned")
    p.add_argument("--reverse", action="store_true", help="tune NC towards a C reference")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--tune", help="comma-separated parameter paths (default: all tunable)")
    p.add_argument("--stop", choices=("strict", "acceptable"), default="strict")
    sim_flags(p, variant=False)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("workflow", parents=[common], help="scenario targets, then calibration with LV frozen")
    p.add_argument("condition", help="condition name or 'healthy'")
    p.add_argument("severity", nargs="?")
    p.add_argument("--params", help="starting NC parameter file")
    p.add_argument("--hr", type=float)
    p.add_argument("--free", help="comma-separated parameter paths")
    p.add_argument("--loss", type=int, default=1, choices=cal.LOSS_IDS)
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_workflow)

    p = sub.add_parser("report", parents=[common], help="summarise and plot an existing run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if args.jobs is None:
        args.jobs = 1
    if args.bsa is None:
        args.bsa = BodyMetrics().bsa
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args, args.command)
    status, extra = EXIT_ERROR, None
    try:
        status = args.func(args, run)
    except (UsageError, ParameterError, VariantError, FileNotFoundError) as exc:
        print(f"hypertwin {args.command}: {exc}", file=sys.stderr)
        status, extra = EXIT_USAGE, {"error": str(exc)}
    except SimulationDivergence as exc:
        print(f"hypertwin {args.command}: simulation diverged: {exc}", file=sys.stderr)
        status, extra = EXIT_DIVERGENCE, {"error": str(exc)}
    finally:
        run.close(status, extra)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
