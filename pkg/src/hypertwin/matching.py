"""Greedy coordinate search that makes one circulation variant reproduce the other's traces."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import IntegrationConfig, SimulationDivergence, SimulationTrace, last_beat, simulate
from .model import variable_names
from .params import CAPILLARY_FIELDS, ParameterSet, tunable_paths
from .presets import healthy

log = logging.getLogger(__name__)

SHARED_VARIABLES = variable_names("NC")
DEFAULT_SCHEDULE = (1.05, 0.95, 1.02, 0.98, 1.01, 0.99)


class AlignmentError(ValueError):
    """Two traces do not share a time grid or a variable."""


@dataclass(frozen=True)
class MatchConfig:
    n: int = 10
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    strict_threshold: float = 0.92
    acceptable_threshold: float = 1.5
    variables: tuple[str, ...] = SHARED_VARIABLES
    parameters: tuple[str, ...] | None = None  # default: tunable leaves, capillary first
    max_rounds: int = 4  # passes over the whole schedule
    stop_at: str = "strict"  # "strict" or "acceptable"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.schedule:
            raise ValueError("empty factor schedule")
        for k in self.schedule:
            if not k > 0 or k == 1:
                raise ValueError(f"scaling factors must be positive and differ from 1, got {k}")
        if not (self.strict_threshold > 0 and self.acceptable_threshold > 0):
            raise ValueError("thresholds must be positive")
        if not self.variables:
            raise ValueError("no variables to compare")
        if self.stop_at not in ("strict", "acceptable"):
            raise ValueError("stop_at must be 'strict' or 'acceptable'")

    @property
    def stop_threshold(self) -> float:
        return self.strict_threshold if self.stop_at == "strict" else self.acceptable_threshold


def match_error(trace_a: SimulationTrace, trace_b: SimulationTrace,
                variables: Sequence[str] = SHARED_VARIABLES) -> float:
    """Sum over variables of the integrated absolute gap over the last beat.

    Each term is normalised by log(2 + mean |v_b|), so ``trace_b`` plays the
    role of the normalising trace.
    """
    a, b = last_beat(trace_a), last_beat(trace_b)
    ta, tb = a.time - a.time[0], b.time - b.time[0]
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-9):
        raise AlignmentError("traces are not sampled on the same grid")
    T = tb[-1]
    eps = 0.0
    for v in variables:
        if v not in a or v not in b:
            raise AlignmentError(f"variable {v!r} missing from one trace")
        va, vb = a[v], b[v]
        gap = np.trapezoid(np.abs(va - vb), tb)
        mean_b = np.trapezoid(np.abs(vb), tb) / T
        eps += gap / math.log(2.0 + mean_b)
    return float(eps)


@dataclass
class MatchStep:
    iteration: int
    parameter: str
    factor: float
    error: float
    accepted: bool
    note: str = ""


@dataclass
class MatchResult:
    params: ParameterSet
    error: float
    initial_error: float
    steps: list[MatchStep] = field(default_factory=list)
    crossed_acceptable: int | None = None  # iteration index of the first crossing
    crossed_strict: int | None = None

    @property
    def accepted_errors(self) -> list[float]:
        return [s.error for s in self.steps if s.accepted]

    @property
    def simulations(self) -> int:
        return len(self.steps)

    def trajectory_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("iteration", "parameter", "factor", "error", "accepted", "note"))
        w.writerow((0, "", "", repr(self.initial_error), "true", "initial"))
        for s in self.steps:
            w.writerow((s.iteration, s.parameter, repr(s.factor), repr(s.error),
                        str(s.accepted).lower(), s.note))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def default_parameters(variant: str) -> list[str]:
    """Tunable leaves with the capillary ones first."""
    paths = tunable_paths(variant)
    cap = [p for p in paths if p.startswith("capillary.")]
    return cap + [p for p in paths if p not in cap]


def match(reference: ParameterSet, mutable: ParameterSet, cfg: MatchConfig | None = None,
          sim_cfg: IntegrationConfig | None = None,
          reference_trace: SimulationTrace | None = None) -> MatchResult:
    """Adjust ``mutable`` one parameter at a time so its trace approaches ``reference``'s.

    For each factor k of the schedule and each parameter, the parameter is
    multiplied by k up to ``n`` times; a step is kept only if the error drops.
    Stops once the error falls below the configured stop threshold.
    """
    cfg = cfg or MatchConfig()
    sim_cfg = sim_cfg or IntegrationConfig()
    if reference.T_HB != mutable.T_HB:
        raise AlignmentError("reference and mutable sets must share the heart rate")
    ref_trace = reference_trace or simulate(reference, cfg=sim_cfg)
    names = list(cfg.parameters) if cfg.parameters is not None else default_parameters(mutable.variant)

    def error_of(p):
        tr = simulate(p, cfg=sim_cfg)
        return match_error(tr, ref_trace, cfg.variables)

    current = mutable
    eps0 = error_of(current)
    eps = eps0
    result = MatchResult(current, eps, eps0)
    it = 0

    def mark_crossings():
        if result.crossed_acceptable is None and eps < cfg.acceptable_threshold:
            result.crossed_acceptable = it
        if result.crossed_strict is None and eps < cfg.strict_threshold:
            result.crossed_strict = it

    mark_crossings()
    done = eps < cfg.stop_threshold
    for _ in range(cfg.max_rounds):
        for k in cfg.schedule:
            if done:
                break
            for name in names:
                if done:
                    break
                for _ in range(cfg.n):
                    it += 1
                    trial = current.scaled({name: k})
                    try:
                        delta = error_of(trial)
                        note = ""
                    except (SimulationDivergence, ValueError) as exc:
                        delta, note = math.inf, f"rejected: {exc}"
                    ok = delta < eps
                    result.steps.append(MatchStep(it, name, k, delta if math.isfinite(delta) else math.nan,
                                                  ok, note))
                    if not ok:
                        break
                    current, eps = trial, delta
                    mark_crossings()
                    if eps < cfg.stop_threshold:
                        done = True
                        break
            log.info("factor %.3g done: error %.4g after %d simulations", k, eps, it)
    result.params, result.error = current, eps
    return result


def shared_start(reference: ParameterSet | None = None, capillary_from: ParameterSet | None = None) -> ParameterSet:
    """Capillary model built from the non-capillary values plus healthy capillary parameters."""
    reference = reference or healthy("NC")
    capillary_from = capillary_from or healthy("C")
    values = dict(reference.flat())
    cap = capillary_from.flat()
    values.update({f"capillary.{f}": cap[f"capillary.{f}"] for f in CAPILLARY_FIELDS})
    return ParameterSet.from_flat("C", values)
