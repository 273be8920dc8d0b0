"""Fitting parameter sets to target outputs with bounded quasi-Newton minimisation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import scenarios
from .engine import IntegrationConfig, SimulationDivergence, simulate
from .observables import BodyMetrics, NonPeriodicTraceError, OutputReport, compute_outputs
from .params import ParameterSet, expand, lv_paths, resolve
from .presets import healthy

log = logging.getLogger(__name__)

LOSS_IDS = tuple(range(9))
DEFAULT_THRESHOLD = 1e-3
DIVERGENCE_PENALTY = 1e6
FD_STEP = 1e-6
# Fixed beat count for every loss evaluation: the loss is then a smooth
# function of the parameters and finite differences stay meaningful.
CALIBRATION_BEATS = 40


class ZeroTargetError(ValueError):
    """A relative residual was requested against a zero target."""


# ------------------------------------------------------------ loss algebra
def residual(q: float, d: float, name: str = "target") -> float:
    """Relative error |(q - d) / d|."""
    if d == 0:
        raise ZeroTargetError(f"{name}: target value is zero")
    return abs((q - d) / d)


def log_cosh(x):
    """log(cosh x) without overflow for large |x|."""
    a = np.abs(np.asarray(x, dtype=float))
    out = a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)
    return out if out.ndim else float(out)


def _h(d):
    return 1.0 + 0.5 * np.log1p(d * d)


def loss_transform(r: int, delta):
    """Residual transform f_r applied elementwise to ``delta`` >= 0."""
    d = np.abs(np.asarray(delta, dtype=float))
    if r == 0:
        out = d ** 2
    elif r == 1:
        out = log_cosh(d)
    elif r in (2, 3, 4, 5):
        g2 = np.asarray(log_cosh(d)) ** 2
        out = g2 * {2: 1.0, 3: d, 4: d ** 2, 5: d ** 10}[r]
    elif r == 6:
        out = d ** 1.5 * _h(d)
    elif r == 7:
        out = d ** 1.5 / (1.0 + d ** 1.5) * _h(d)
    elif r == 8:
        out = d ** 2 / (1.0 + d ** 2) * _h(d)
    else:
        raise ValueError(f"loss id must be in 0..8, got {r}")
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


# ------------------------------------------------------------------ problems
@dataclass(frozen=True)
class TargetData:
    names: tuple[str, ...]
    values: tuple[float, ...]
    units: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("target values must be finite")
        if self.units and len(self.units) != len(self.names):
            raise ValueError("units and names differ in length")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_report(cls, report: Mapping[str, float], names: Sequence[str] | None = None,
                    skip_zero: bool = True) -> "TargetData":
        """Targets from a report; outputs with value zero cannot anchor a relative error."""
        names = list(report) if names is None else list(names)
        keep = [n for n in names if not (skip_zero and report[n] == 0)]
        return cls(tuple(keep), tuple(float(report[n]) for n in keep))

    def to_dict(self) -> dict:
        doc = {"names": list(self.names), "values": list(self.values)}
        if self.units:
            doc["units"] = list(self.units)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TargetData":
        return cls(tuple(doc["names"]), tuple(float(v) for v in doc["values"]),
                   tuple(doc.get("units", ())))


def default_bounds(values, span: float = 2.0 / 3.0) -> list[tuple[float, float]]:
    return [(v * (1 - span), v * (1 + span)) if v > 0 else (v * (1 + span), v * (1 - span))
            for v in values]


@dataclass
class CalibrationProblem:
    free: tuple[str, ...]
    initial: ParameterSet
    targets: TargetData
    loss_id: int = 0
    bounds: tuple[tuple[float, float], ...] | None = None
    threshold: float = DEFAULT_THRESHOLD
    frozen: tuple[str, ...] = ()
    beats: int = CALIBRATION_BEATS
    body: BodyMetrics = field(default_factory=BodyMetrics)
    max_iter: int = 500
    gtol: float = 1e-8
    # Maps a parameter set to named outputs; None means simulate and report.
    # Not serialised.
    model: Callable[[ParameterSet], Mapping[str, float]] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.free = tuple(self.free)
        if not self.free:
            raise ValueError("no free parameters")
        if self.loss_id not in LOSS_IDS:
            raise ValueError(f"loss id must be in 0..8, got {self.loss_id}")
        frozen = set(expand(self.frozen, self.initial.variant))
        for p in self.free:
            if set(resolve(p, self.initial.variant)) & frozen:
                raise ValueError(f"{p} is both free and frozen")
        x0 = self.x0()
        if self.bounds is None:
            self.bounds = tuple(default_bounds(x0))
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(self.bounds) != len(self.free):
            raise ValueError("one bound pair per free parameter is required")
        for name, v, (lo, hi) in zip(self.free, x0, self.bounds):
            if not lo <= v <= hi:
                raise ValueError(f"initial {name} = {v} outside bounds [{lo}, {hi}]")

    def x0(self) -> np.ndarray:
        return np.array([self.initial.get(p) for p in self.free])

    def params_at(self, x) -> ParameterSet:
        return self.initial.with_values(dict(zip(self.free, map(float, x))))

    @property
    def cfg(self) -> IntegrationConfig:
        return IntegrationConfig(min_heartbeats=self.beats, max_heartbeats=self.beats)

    def to_dict(self) -> dict:
        return {"free": list(self.free), "bounds": [list(b) for b in self.bounds],
                "loss_id": self.loss_id, "threshold": self.threshold, "frozen": list(self.frozen),
                "beats": self.beats, "bsa": self.body.bsa, "max_iter": self.max_iter,
                "gtol": self.gtol, "targets": self.targets.to_dict(),
                "initial": {"variant": self.initial.variant, **self.initial.flat()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CalibrationProblem":
        init = dict(doc["initial"])
        variant = init.pop("variant")
        return cls(tuple(doc["free"]), ParameterSet.from_flat(variant, init),
                   TargetData.from_dict(doc["targets"]), int(doc.get("loss_id", 0)),
                   tuple(tuple(b) for b in doc["bounds"]) if doc.get("bounds") else None,
                   float(doc.get("threshold", DEFAULT_THRESHOLD)), tuple(doc.get("frozen", ())),
                   int(doc.get("beats", CALIBRATION_BEATS)), BodyMetrics(doc.get("bsa", BodyMetrics().bsa)),
                   int(doc.get("max_iter", 500)), float(doc.get("gtol", 1e-8)))

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProblem":
        return cls.from_dict(json.loads(text))


@dataclass
class CalibrationResult:
    params: ParameterSet
    free: tuple[str, ...]
    x: np.ndarray
    loss: float
    deviation: float
    wall_time: float
    iterations: int
    evaluations: int
    success: bool
    message: str = ""
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"free": list(self.free), "x": [float(v) for v in self.x], "loss": self.loss,
                "deviation": self.deviation, "wall_time": self.wall_time,
                "iterations": self.iterations, "evaluations": self.evaluations,
                "success": self.success, "message": self.message, "history": self.history,
                "params": {"variant": self.params.variant, **self.params.flat()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------- evaluation
def report_for(params: ParameterSet, beats: int = CALIBRATION_BEATS,
               body: BodyMetrics | None = None) -> OutputReport:
    """Outputs after a fixed number of beats from the default initial state."""
    cfg = IntegrationConfig(min_heartbeats=beats, max_heartbeats=beats)
    return compute_outputs(simulate(params, cfg=cfg), params, body)


def loss_from_report(report: Mapping[str, float], targets: TargetData, loss_id: int):
    deltas = np.array([residual(report[n], d, n) for n, d in zip(targets.names, targets.values)])
    return float(np.sum(loss_transform(loss_id, deltas))), float(deltas.sum())


def evaluate_loss(problem: CalibrationProblem, params: ParameterSet):
    """``(loss, total deviation, report)``; a failed simulation costs a fixed penalty."""
    try:
        if problem.model is not None:
            rep = problem.model(params)
        else:
            rep = report_for(params, problem.beats, problem.body)
        loss, dev = loss_from_report(rep, problem.targets, problem.loss_id)
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        return loss, dev, rep
    except (SimulationDivergence, NonPeriodicTraceError, FloatingPointError, ValueError) as exc:
        if isinstance(exc, ZeroTargetError):
            raise
        log.debug("penalised evaluation: %s", exc)
        return DIVERGENCE_PENALTY, math.inf, None


class _Reached(Exception):
    pass


class _Objective:
    """Loss and forward-difference gradient in the unit box of the bounds."""

    def __init__(self, problem: CalibrationProblem):
        self.problem = problem
        lo, hi = np.array(problem.bounds).T
        self.lo, self.span = lo, np.where(hi > lo, hi - lo, 1.0)
        self.best_u: np.ndarray | None = None
        self.best = (math.inf, math.inf)
        self.evaluations = 0
        self.history: list[float] = []

    def theta(self, u):
        return self.lo + np.clip(u, 0.0, 1.0) * self.span

    def loss(self, u) -> tuple[float, float]:
        self.evaluations += 1
        f, dev, _ = evaluate_loss(self.problem, self.problem.params_at(self.theta(u)))
        return f, dev

    def __call__(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        f, dev = self.loss(u)
        if f < self.best[0]:
            self.best, self.best_u = (f, dev), u.copy()
        self.history.append(f)
        if f < self.problem.threshold:
            raise _Reached()
        g = np.zeros_like(u)
        theta = self.theta(u)
        for i in range(u.size):
            step = FD_STEP * max(abs(theta[i]), 1e-12) / self.span[i]
            sign = 1.0 if u[i] + step <= 1.0 else -1.0
            v = u.copy()
            v[i] += sign * step
            fi, _ = self.loss(v)
            g[i] = sign * (fi - f) / step if fi < DIVERGENCE_PENALTY else 0.0
        return f, g


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """L-BFGS-B from the initial values; stops early once the loss drops below threshold."""
    t0 = time.perf_counter()
    obj = _Objective(problem)
    u0 = (problem.x0() - obj.lo) / obj.span
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    try:
        res = minimize(obj, u0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * u0.size,
                       callback=count,
                       options={"maxiter": problem.max_iter, "gtol": problem.gtol, "ftol": 1e-15,
                                "maxcor": 10})
        message = str(res.message)
    except _Reached:
        message = "loss below threshold"
    x = obj.theta(obj.best_u)
    loss, dev = obj.best
    return CalibrationResult(problem.params_at(x), problem.free, x, loss, dev,
                             time.perf_counter() - t0, iterations, obj.evaluations,
                             loss < problem.threshold, message, obj.history)


# ------------------------------------------------------------ free parameters
_SOBOL_CACHE = "sobol_nc_healthy.csv"


def cached_sobol_indices():
    """Total indices of the healthy NC baseline shipped with the package, or None."""
    from .sensitivity import SobolResult
    try:
        text = resources.files("hypertwin").joinpath("data", _SOBOL_CACHE).read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return None
    return SobolResult.from_csv(text)


def default_free_parameters(threshold: float = 0.2) -> list[str]:
    """Parameters relevant (total index >= threshold) for some output of the healthy NC model."""
    from .sensitivity import relevant_parameters
    result = cached_sobol_indices()
    if result is None:
        raise FileNotFoundError("no cached sensitivity indices; pass free parameters explicitly")
    return relevant_parameters(result, threshold)


# ---------------------------------------------------------- study pipelines
def scenario_targets(condition: str | None, severity: str | None,
                     body: BodyMetrics | None = None, names: Sequence[str] | None = None) -> TargetData:
    """Outputs of the capillary model, optionally after applying a built-in scenario."""
    base = healthy("C")
    if condition is not None:
        base = scenarios.apply(scenarios.builtin(condition, severity), base)
    trace = simulate(base)
    rep = compute_outputs(trace, base, body)
    nc_names = [n for n in rep if n != "S_f"] if names is None else list(names)
    return TargetData.from_report(rep, nc_names)


def workflow_0d(condition: str | None, severity: str | None, start: ParameterSet | None = None,
                free: Sequence[str] | None = None, loss_id: int = 1, max_iter: int = 500,
                body: BodyMetrics | None = None):
    """Calibrate the non-capillary model to a scenario of the capillary one with LV parameters frozen."""
    body = body or BodyMetrics()
    targets = scenario_targets(condition, severity, body)
    start = start or healthy("NC")
    frozen = set(lv_paths())
    free = default_free_parameters() if free is None else list(free)
    free = [p for p in free if not set(resolve(p, start.variant)) & frozen]
    problem = CalibrationProblem(tuple(free), start, targets, loss_id, frozen=tuple(sorted(frozen)),
                                 body=body, max_iter=max_iter)
    return targets, calibrate(problem)


@dataclass
class StudyRow:
    condition: str
    severity: str
    loss_id: int
    time: float
    deviation: float
    loss: float
    success: bool


def loss_study(cases: Sequence[tuple[str, str]], losses: Sequence[int] = LOSS_IDS,
               start: ParameterSet | None = None, free: Sequence[str] | None = None,
               max_iter: int = 500, body: BodyMetrics | None = None) -> list[StudyRow]:
    """Calibrate the NC model once per (case, loss) and record time and total deviation."""
    body = body or BodyMetrics()
    start = start or healthy("NC")
    free = default_free_parameters() if free is None else list(free)
    rows = []
    for condition, severity in cases:
        targets = scenario_targets(condition, severity, body)
        for r in losses:
            prob = CalibrationProblem(tuple(free), start, targets, r, body=body, max_iter=max_iter)
            res = calibrate(prob)
            rows.append(StudyRow(condition, severity, r, res.wall_time, res.deviation, res.loss,
                                 res.success))
            log.info("%s/%s f%d: loss %.3g in %.1f s", condition, severity, r, res.loss, res.wall_time)
    return rows


def study_to_csv(rows: Sequence[StudyRow], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("condition", "severity", "loss_id", "time_s", "deviation", "loss", "success"))
    for r in rows:
        w.writerow((r.condition, r.severity, r.loss_id, repr(r.time), repr(r.deviation),
                    repr(r.loss), str(r.success).lower()))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def fastest_losses(rows: Sequence[StudyRow]) -> dict[tuple[str, str], int]:
    """Per case, the loss id whose calibration finished fastest among successful ones."""
    best: dict[tuple[str, str], StudyRow] = {}
    for r in rows:
        key = (r.condition, r.severity)
        cur = best.get(key)
        rank = (not r.success, r.time)
        if cur is None or rank < (not cur.success, cur.time):
            best[key] = r
    return {k: v.loss_id for k, v in best.items()}
