"""Global (Sobol total index) and grouped one-at-a-time sensitivity analysis."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .engine import IntegrationConfig, SimulationDivergence, SimulationTrace, last_beat, simulate
from .model import variable_names
from .observables import (BodyMetrics, NonPeriodicTraceError, compute_outputs,
                          output_names, pv_loop_area)
from .parallel import pmap
from .params import CHAMBERS, ParameterSet, sensitivity_paths

log = logging.getLogger(__name__)

DESK_N = 2 ** 8
PAPER_N = 2 ** 12
LOWER_FACTOR, UPPER_FACTOR = 1.0 / 3.0, 5.0 / 3.0
FAILURE_WARN_FRACTION = 0.05


# ------------------------------------------------------------------ sampling
def sobol_sequence(dim: int, count: int, skip: int = 0) -> np.ndarray:
    """Points ``skip .. skip + count - 1`` of the unscrambled Sobol sequence in [0, 1)^dim."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if count < 0 or skip < 0:
        raise ValueError("count and skip must be non-negative")
    total = count + skip
    if total == 0:
        return np.zeros((0, dim))
    m = max(0, math.ceil(math.log2(total)))
    pts = qmc.Sobol(d=dim, scramble=False).random_base2(m)
    return pts[skip:total]


@dataclass
class SamplingDesign:
    """Saltelli design over a box.

    Row layout: ``A`` (N rows), ``B`` (N rows), then for each parameter k the
    block ``A_B^k`` (A with column k from B) followed by ``B_A^k``. That gives
    ``2N(N_p + 1)`` rows.
    """

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    N: int
    matrix: np.ndarray
    reference: np.ndarray | None = None

    @property
    def n_params(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def block(self, which: str, k: int | None = None) -> slice:
        N, P = self.N, self.n_params
        if which == "A":
            return slice(0, N)
        if which == "B":
            return slice(N, 2 * N)
        if k is None or not 0 <= k < P:
            raise IndexError(f"parameter index {k} out of range")
        start = 2 * N + 2 * N * k
        if which == "AB":
            return slice(start, start + N)
        if which == "BA":
            return slice(start + N, start + 2 * N)
        raise ValueError(f"unknown block {which!r}")

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("row",) + self.names)
        for i, row in enumerate(self.matrix):
            w.writerow([i] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def saltelli_rows(N: int, n_params: int) -> int:
    return 2 * N * (n_params + 1)


def saltelli_matrix(lower, upper, N: int, names: Sequence[str] | None = None) -> SamplingDesign:
    """Saltelli design for independent uniform inputs on ``[lower, upper]``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("lower and upper must be 1-D and equally long")
    if np.any(lower > upper):
        raise ValueError("lower bound above upper bound")
    if N < 1 or N & (N - 1):
        raise ValueError(f"N must be a power of two, got {N}")
    P = lower.size
    # skip the all-zero first point so no sample sits on a box corner
    base = sobol_sequence(2 * P, N, skip=1)
    span = upper - lower
    A = lower + base[:, :P] * span
    B = lower + base[:, P:] * span
    blocks = [A, B]
    for k in range(P):
        AB = A.copy()
        AB[:, k] = B[:, k]
        BA = B.copy()
        BA[:, k] = A[:, k]
        blocks += [AB, BA]
    names = tuple(names) if names is not None else tuple(f"x{k + 1}" for k in range(P))
    return SamplingDesign(names, lower, upper, N, np.vstack(blocks))


def parameter_intervals(base: ParameterSet, names: Sequence[str],
                        lo: float = LOWER_FACTOR, hi: float = UPPER_FACTOR):
    ref = np.array([base.get(n) for n in names])
    return ref, ref * lo, ref * hi


def saltelli_design(base: ParameterSet, names: Sequence[str] | None = None, N: int = DESK_N) -> SamplingDesign:
    """Design over ``[p/3, 5p/3]`` around the reference value of each named parameter."""
    names = tuple(sensitivity_paths(base.variant) if names is None else names)
    ref, lower, upper = parameter_intervals(base, names)
    design = saltelli_matrix(lower, upper, N, names)
    design.reference = ref
    return design


# ----------------------------------------------------------------- estimator
@dataclass
class SobolResult:
    parameters: tuple[str, ...]
    outputs: tuple[str, ...]
    S: np.ndarray  # (parameters, outputs)
    failed: np.ndarray  # boolean, one per design row
    failure_fraction: np.ndarray  # per output
    warnings: list[str] = field(default_factory=list)

    def index(self, parameter: str, output: str) -> float:
        return float(self.S[self.parameters.index(parameter), self.outputs.index(output)])

    def to_csv(self, path: str | Path | None = None) -> str:
        """Matrix layout: one row per parameter, one column per output."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("parameter",) + tuple(self.outputs))
        for p, row in zip(self.parameters, self.S):
            w.writerow((p,) + tuple(repr(float(x)) for x in row))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, text: str) -> "SobolResult":
        rows = list(csv.reader(io.StringIO(text)))
        outputs = tuple(rows[0][1:])
        params = tuple(r[0] for r in rows[1:])
        S = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(len(params), len(outputs))
        return cls(params, outputs, S, np.zeros(0, bool), np.zeros(len(outputs)))


def total_indices(design: SamplingDesign, Y, outputs: Sequence[str] | None = None) -> SobolResult:
    """Jansen total-effect estimates from model values ``Y`` on the design rows.

    ``Y`` is (rows,) or (rows, outputs); non-finite entries mark failed
    evaluations and are dropped pairwise. A zero-variance output has all
    indices 0.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != design.n_rows:
        raise ValueError(f"expected {design.n_rows} rows of model values, got {Y.shape[0]}")
    n_out = Y.shape[1]
    outputs = tuple(outputs) if outputs is not None else tuple(f"y{j + 1}" for j in range(n_out))
    ok = np.isfinite(Y)
    P = design.n_params
    S = np.zeros((P, n_out))
    fA, fB = Y[design.block("A")], Y[design.block("B")]
    okA, okB = ok[design.block("A")], ok[design.block("B")]
    base_rows = np.vstack([fA, fB])
    base_ok = np.vstack([okA, okB])
    var = np.array([np.var(base_rows[base_ok[:, j], j]) if base_ok[:, j].sum() > 1 else 0.0
                    for j in range(n_out)])
    for k in range(P):
        fAB, fBA = Y[design.block("AB", k)], Y[design.block("BA", k)]
        m1 = okA & ok[design.block("AB", k)]
        m2 = okB & ok[design.block("BA", k)]
        d1 = np.where(m1, fA - fAB, 0.0) ** 2
        d2 = np.where(m2, fB - fBA, 0.0) ** 2
        n = m1.sum(axis=0) + m2.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            num = (d1.sum(axis=0) + d2.sum(axis=0)) / (2.0 * n)
            S[k] = np.where((var > 0) & (n > 0), num / np.where(var > 0, var, 1.0), 0.0)
    failed_rows = ~ok.all(axis=1)
    frac = 1.0 - ok.mean(axis=0)
    notes = []
    for j in np.flatnonzero(frac > FAILURE_WARN_FRACTION):
        msg = f"{outputs[j]}: {frac[j]:.1%} of evaluations failed; indices may be unreliable"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return SobolResult(design.names, outputs, S, failed_rows, frac, notes)


def relevant_parameters(result: SobolResult, threshold: float = 0.2,
                        outputs: Sequence[str] | None = None) -> list[str]:
    """Parameters whose total index reaches ``threshold`` for at least one of ``outputs``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    cols = range(len(result.outputs)) if outputs is None else [result.outputs.index(o) for o in outputs]
    cols = list(cols)
    keep = (result.S[:, cols] >= threshold).any(axis=1)
    return [p for p, k in zip(result.parameters, keep) if k]


# ------------------------------------------------------ model evaluation
class ModelEvaluator:
    """Maps a design row to the output vector of a simulated parameter set.

    Failed runs (divergence, no convergence, open PV loop) give a row of NaN.
    Picklable, so it can be shipped to worker processes.
    """

    def __init__(self, base: ParameterSet, names: Sequence[str], cfg: IntegrationConfig | None = None,
                 body: BodyMetrics | None = None):
        self.base = base
        self.names = tuple(names)
        self.cfg = cfg or IntegrationConfig(max_heartbeats=150)
        self.body = body or BodyMetrics()
        self.outputs = output_names(base.variant)

    def params_for(self, row) -> ParameterSet:
        return self.base.with_values(dict(zip(self.names, map(float, row))))

    def __call__(self, row) -> np.ndarray:
        try:
            p = self.params_for(row)
            trace = simulate(p, cfg=self.cfg)
            if not trace.converged:
                raise SimulationDivergence("limit cycle", trace.time[-1])
            rep = compute_outputs(trace, p, self.body)
            return np.array([rep[o] for o in self.outputs])
        except (SimulationDivergence, NonPeriodicTraceError, ValueError, ZeroDivisionError,
                FloatingPointError):
            return np.full(len(self.outputs), np.nan)


def evaluate_design(design: SamplingDesign, func: Callable, jobs: int | None = 1) -> np.ndarray:
    rows = pmap(func, list(design.matrix), jobs)
    return np.vstack([np.atleast_1d(np.asarray(r, dtype=float)) for r in rows])


def sobol_analysis(base: ParameterSet, N: int = DESK_N, names: Sequence[str] | None = None,
                   jobs: int | None = 1, cfg: IntegrationConfig | None = None,
                   body: BodyMetrics | None = None):
    """Design, evaluate and estimate. Returns ``(design, Y, result)``."""
    design = saltelli_design(base, names, N)
    ev = ModelEvaluator(base, design.names, cfg, body)
    log.info("evaluating %d design rows on %s worker(s)", design.n_rows, jobs)
    Y = evaluate_design(design, ev, jobs)
    return design, Y, total_indices(design, Y, ev.outputs)


# ------------------------------------------------------------------- groups
_COEFF = {"R": 0.15, "L": 0.075, "C": -0.06, "a": 0.12, "p": 0.14, "0": -0.05}
NUANCES = tuple(r for r in range(-5, 6) if r != 0)


def group_coefficients(kind: str, rho: int) -> float:
    """Multiplier applied to a parameter of ``kind`` at nuance ``rho``."""
    if kind not in _COEFF:
        raise ValueError(f"unknown coefficient kind {kind!r}")
    if isinstance(rho, bool) or int(rho) != rho or rho == 0 or abs(rho) > 5:
        raise ValueError(f"rho must be a non-zero integer with |rho| <= 5, got {rho}")
    return 1.0 + _COEFF[kind] * int(rho)


@dataclass(frozen=True)
class GroupSpec:
    name: str
    members: tuple[tuple[str, str], ...]  # (parameter path, coefficient kind)

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"group {self.name!r} has no members")
        for _, kind in self.members:
            if kind not in _COEFF:
                raise ValueError(f"unknown coefficient kind {kind!r}")

    def factors(self, rho: int) -> dict[str, float]:
        return {path: group_coefficients(kind, rho) for path, kind in self.members}


def _rlc(name, branch):
    return GroupSpec(name, tuple((f"circ.{branch}.{f}", f) for f in "RLC"))


def default_groups(variant: str) -> list[GroupSpec]:
    """Five groups for NC; C adds the two capillary beds."""
    groups = [_rlc("systemic arterial", "SYS.AR"), _rlc("systemic venous", "SYS.VEN"),
              _rlc("pulmonary arterial", "PUL.AR"), _rlc("pulmonary venous", "PUL.VEN"),
              GroupSpec("left ventricle", (("chambers.LV.Ea", "a"), ("chambers.LV.Ep", "p"),
                                           ("chambers.LV.V0", "0")))]
    if variant == "C":
        groups.append(GroupSpec("systemic capillary", (("capillary.R_C_SYS", "R"),
                                                       ("capillary.C_C_SYS", "C"))))
        groups.append(GroupSpec("pulmonary capillary", (("capillary.R_C_PUL", "R"),
                                                        ("capillary.C_C_PUL", "C"),
                                                        ("capillary.R_SH", "R"),
                                                        ("capillary.C_SH", "C"))))
    return groups


def _pct_ratio(new, ref) -> float:
    if ref == 0 or not np.isfinite(ref) or not np.isfinite(new):
        return math.nan
    return (new / ref - 1.0) * 100.0


def indicator_names(variant: str) -> list[str]:
    names = [f"Gamma[{o}]" for o in output_names(variant)]
    for v in variable_names(variant):
        names += [f"GammaT[{v}]", f"GammaMean[{v}]", f"GammaMax[{v}]", f"GammaMin[{v}]"]
    names += [f"GammaPV[{c}]" for c in CHAMBERS]
    return names


def indicators(ref_trace: SimulationTrace, mod_trace: SimulationTrace,
               ref_report: Mapping[str, float], mod_report: Mapping[str, float]) -> dict[str, float]:
    """All output, variable and PV-loop indicators of a modified run; NaN marks undefined ones."""
    ref, mod = last_beat(ref_trace), last_beat(mod_trace)
    if ref.variant != mod.variant:
        raise ValueError("traces belong to different variants")
    if ref.time.shape != mod.time.shape or not np.allclose(ref.time - ref.time[0], mod.time - mod.time[0]):
        raise ValueError("traces are not on identical time grids")
    out: dict[str, float] = {}
    for o in output_names(ref.variant):
        out[f"Gamma[{o}]"] = _pct_ratio(mod_report[o], ref_report[o])
    t = ref.time - ref.time[0]
    for v in variable_names(ref.variant):
        a, b = ref[v], mod[v]
        ia = np.trapezoid(a, t)
        out[f"GammaT[{v}]"] = math.nan if ia == 0 else float(np.trapezoid(b - a, t) / ia * 100.0)
        out[f"GammaMean[{v}]"] = _pct_ratio(b.mean(), a.mean())
        out[f"GammaMax[{v}]"] = _pct_ratio(b.max(), a.max())
        out[f"GammaMin[{v}]"] = _pct_ratio(b.min(), a.min())
    for c in CHAMBERS:
        try:
            ra, rb = pv_loop_area(ref, c), pv_loop_area(mod, c)
            out[f"GammaPV[{c}]"] = math.nan if ra == 0 else rb / ra
        except NonPeriodicTraceError:
            out[f"GammaPV[{c}]"] = math.nan
    return out


@dataclass
class CampaignRun:
    group: str
    rho: int
    values: dict[str, float]
    error: str | None = None


class _GroupRunner:
    def __init__(self, base, cfg, body, ref_trace, ref_report):
        self.base, self.cfg, self.body = base, cfg, body
        self.ref_trace, self.ref_report = ref_trace, ref_report

    def __call__(self, job) -> CampaignRun:
        group, rho = job
        names = indicator_names(self.base.variant)
        try:
            p = self.base.scaled(group.factors(rho))
            tr = simulate(p, cfg=self.cfg)
            rep = compute_outputs(tr, p, self.body)
            return CampaignRun(group.name, rho, indicators(self.ref_trace, tr, self.ref_report, rep))
        except (SimulationDivergence, NonPeriodicTraceError, ValueError) as exc:
            return CampaignRun(group.name, rho, {n: math.nan for n in names}, str(exc))


def group_campaign(base: ParameterSet, groups: Sequence[GroupSpec] | None = None,
                   cfg: IntegrationConfig | None = None, body: BodyMetrics | None = None,
                   jobs: int | None = 1) -> list[CampaignRun]:
    """Scale each group at every nuance and compare against the unmodified run."""
    groups = list(default_groups(base.variant) if groups is None else groups)
    cfg = cfg or IntegrationConfig()
    body = body or BodyMetrics()
    ref_trace = simulate(base, cfg=cfg)
    ref_report = compute_outputs(ref_trace, base, body)
    runner = _GroupRunner(base, cfg, body, ref_trace, ref_report)
    return pmap(runner, [(g, r) for g in groups for r in NUANCES], jobs)


def campaign_to_csv(runs: Sequence[CampaignRun], path: str | Path | None = None) -> str:
    """Long format: one row per (group, rho, indicator); empty value marks undefined."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("group", "rho", "indicator", "value"))
    for run in runs:
        for name, v in run.values.items():
            w.writerow((run.group, run.rho, name, "" if not np.isfinite(v) else repr(float(v))))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
