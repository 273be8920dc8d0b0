"""Fixed-step RK4 integration to the periodic limit cycle."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .model import _algebraic_series, _rhs, algebraic_names, state_names, stiffness
from .params import ParameterSet, VariantError
from .presets import initial_state


class SimulationDivergence(RuntimeError):
    """The state became non-finite during integration."""

    def __init__(self, component: str, time: float):
        super().__init__(f"non-finite {component} at t = {time:.6g} s")
        self.component = component
        self.time = time


class WindowError(ValueError):
    """A trace does not contain the requested heartbeat window."""


@dataclass(frozen=True)
class IntegrationConfig:
    """Time-stepping controls.

    ``dt`` is the output grid spacing; it is snapped so an integer number of
    steps fits one heartbeat. Each grid step is split into ``substeps`` RK4
    steps; ``None`` picks the smallest count that keeps the step inside the
    RK4 stability interval for the parameter set's fastest time constant.
    """

    dt: float = 1e-3
    max_heartbeats: int = 300
    convergence_tol: float = 1e-3
    heartbeats_to_keep: int = 1
    min_heartbeats: int = 1
    substeps: int | None = None
    stability_target: float = 2.5
    valve_steepness: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_heartbeats < 2:
            raise ValueError("max_heartbeats must be at least 2")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 1 <= self.heartbeats_to_keep <= self.max_heartbeats:
            raise ValueError("heartbeats_to_keep must lie in [1, max_heartbeats]")
        if self.substeps is not None and self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def halved(self) -> "IntegrationConfig":
        """Same settings at half the grid spacing (self-convergence checks)."""
        return replace(self, dt=self.dt / 2)


@dataclass
class SimulationTrace:
    variant: str
    T_HB: float
    dt: float
    time: np.ndarray
    states: np.ndarray
    algebraic: np.ndarray
    beat_starts: np.ndarray
    converged: bool
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_beats: int = 0
    substeps: int = 1

    @property
    def names(self) -> tuple[str, ...]:
        return state_names(self.variant) + algebraic_names(self.variant)

    @property
    def n_kept_beats(self) -> int:
        return len(self.beat_starts) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def __getitem__(self, name: str) -> np.ndarray:
        snames = state_names(self.variant)
        if name in snames:
            return self.states[:, snames.index(name)]
        anames = algebraic_names(self.variant)
        if name in anames:
            return self.algebraic[:, anames.index(name)]
        raise KeyError(f"no variable {name!r} in a {self.variant} trace")

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t",) + self.names)
        data = np.column_stack([self.time, self.states, self.algebraic])
        for row in data:
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, text: str, T_HB: float, converged: bool = True) -> "SimulationTrace":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        variant = "C" if "p_C_SYS" in header else "NC"
        ns = len(state_names(variant))
        time = body[:, 0]
        dt = (time[-1] - time[0]) / (len(time) - 1)
        spb = int(round(T_HB / dt))
        nb = int(round((len(time) - 1) / spb))
        return cls(variant, T_HB, dt, time, body[:, 1:1 + ns], body[:, 1 + ns:],
                   np.arange(nb + 1) * spb, converged)


@numba.njit(cache=True)
def _integrate(y0, ch, vv, rlc, cap, THB, pEX, steep, spb, sub, min_beats, max_beats, tol, keep):
    n = y0.shape[0]
    h = THB / (spb * sub)
    buf = np.empty((keep, spb + 1, n))
    res = np.zeros(max_beats)
    y = y0.copy()
    start = y0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    alg = np.empty(11)
    nb = 0
    for b in range(max_beats):
        slot = b % keep
        buf[slot, 0] = y
        start[:] = y
        for s in range(spb):
            base = (b * spb + s) * sub
            for q in range(sub):
                t = (base + q) * h
                _rhs(t, y, ch, vv, rlc, cap, THB, pEX, steep, alg, k1)
                for j in range(n):
                    tmp[j] = y[j] + 0.5 * h * k1[j]
                _rhs(t + 0.5 * h, tmp, ch, vv, rlc, cap, THB, pEX, steep, alg, k2)
                for j in range(n):
                    tmp[j] = y[j] + 0.5 * h * k2[j]
                _rhs(t + 0.5 * h, tmp, ch, vv, rlc, cap, THB, pEX, steep, alg, k3)
                for j in range(n):
                    tmp[j] = y[j] + h * k3[j]
                _rhs(t + h, tmp, ch, vv, rlc, cap, THB, pEX, steep, alg, k4)
                for j in range(n):
                    y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(n):
                if not np.isfinite(y[j]):
                    return buf, res[:b + 1], b + 1, j, (b * spb + s + 1) * sub * h
            buf[slot, s + 1] = y
        r = 0.0
        for j in range(n):
            d = abs(y[j] - start[j]) / (abs(y[j]) + 1.0)
            if d > r:
                r = d
        res[b] = r
        nb = b + 1
        if nb >= min_beats and nb >= keep and r < tol:
            break
    return buf, res[:nb], nb, -1, 0.0


def substeps_for(params: ParameterSet, cfg: IntegrationConfig) -> int:
    if cfg.substeps is not None:
        return cfg.substeps
    spb = max(1, round(params.T_HB / cfg.dt))
    h = params.T_HB / spb
    return max(1, math.ceil(h * stiffness(params) / cfg.stability_target))


def simulate(params: ParameterSet, c0=None, cfg: IntegrationConfig | None = None) -> SimulationTrace:
    """Integrate ``params`` from ``c0`` until the beat-to-beat residual drops below tolerance.

    The residual after each heartbeat is the largest relative change of any
    state component over that beat, ``|x(T) - x(T - T_HB)| / (|x(T)| + 1)``.
    The returned trace holds the last ``cfg.heartbeats_to_keep`` beats.
    """
    cfg = cfg or IntegrationConfig()
    y0 = initial_state(params.variant) if c0 is None else np.asarray(c0, dtype=float)
    if y0.shape != (params.n_states,):
        raise VariantError(f"variant {params.variant} expects {params.n_states} initial states, "
                           f"got shape {y0.shape}")
    T = params.T_HB
    spb = max(1, round(T / cfg.dt))
    sub = substeps_for(params, cfg)
    ch, vv, rlc, cap = params.packed()
    keep = cfg.heartbeats_to_keep
    buf, res, nb, bad, bad_t = _integrate(
        y0, ch, vv, rlc, cap, T, params.p_EX, cfg.valve_steepness, spb, sub,
        cfg.min_heartbeats, cfg.max_heartbeats, cfg.convergence_tol, keep)
    if bad >= 0:
        raise SimulationDivergence(state_names(params.variant)[bad], bad_t)

    kept = min(keep, nb)
    first = nb - kept
    parts = [buf[b % keep, :spb] for b in range(first, nb)]
    parts.append(buf[(nb - 1) % keep, spb:spb + 1])
    Y = np.concatenate(parts)
    dt = T / spb
    time = first * T + np.arange(Y.shape[0]) * dt
    alg = _algebraic_series(time, Y, ch, vv, cap, T, params.p_EX, cfg.valve_steepness)
    converged = bool(res[-1] < cfg.convergence_tol)
    return SimulationTrace(params.variant, T, dt, time, Y, alg, np.arange(kept + 1) * spb,
                           converged, res, nb, sub)


def last_beat(trace: SimulationTrace) -> SimulationTrace:
    """Window covering the final heartbeat [T - T_HB, T]."""
    if trace.n_kept_beats < 1:
        raise WindowError("trace holds no complete heartbeat")
    lo = int(trace.beat_starts[-2])
    spb = int(trace.beat_starts[-1] - lo)
    return replace(trace, time=trace.time[lo:], states=trace.states[lo:],
                   algebraic=trace.algebraic[lo:], beat_starts=np.array([0, spb]))
