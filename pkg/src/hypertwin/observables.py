"""Time-independent outputs of a converged heartbeat and healthy-range checks."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .engine import SimulationTrace, last_beat
from .params import ParameterSet

DEFAULT_BSA = 1.75  # m^2


class NonPeriodicTraceError(ValueError):
    """The pressure-volume curve does not close over the beat."""


class MissingVariableError(KeyError):
    """An output needs a variable the model variant does not have."""


class SchemaError(ValueError):
    """Report and healthy ranges do not describe the same outputs."""


@dataclass(frozen=True)
class BodyMetrics:
    bsa: float = DEFAULT_BSA

    def __post_init__(self):
        if not self.bsa > 0:
            raise ValueError("body surface area must be positive")


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float
    unit: str
    source: str

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty range [{self.lo}, {self.hi}]")


_ECHO, _MRI = "echocardiography", "MRI"

HEALTHY_RANGES: dict[str, Range] = {
    "LA_IVmax": Range(24, 57, "mL/m2", _MRI),
    "LA_IVmin": Range(9, 28, "mL/m2", _MRI),
    "LA_IVpreAC": Range(15, 46, "mL/m2", _MRI),
    "LA_PassEF": Range(8, 44, "%", _MRI),
    "LA_ActEF": Range(17, 58, "%", _MRI),
    "LA_TotEF": Range(37, 70, "%", _MRI),
    "LA_Pmax": Range(6, 20, "mmHg", _ECHO),
    "LA_Pmin": Range(-2, 9, "mmHg", _ECHO),
    "LA_Pmean": Range(4, 12, "mmHg", _ECHO),
    "RA_IVmax": Range(28, 76, "mL/m2", _MRI),
    "RA_IVmin": Range(9, 45, "mL/m2", _MRI),
    "RA_IVpreAC": Range(19, 61, "mL/m2", _MRI),
    "RA_PassEF": Range(4, 41, "%", _MRI),
    "RA_ActEF": Range(11, 55, "%", _MRI),
    "RA_TotEF": Range(29, 68, "%", _MRI),
    "RA_Pmax": Range(2, 14, "mmHg", _ECHO),
    "RA_Pmin": Range(-2, 6, "mmHg", _ECHO),
    "RA_Pmean": Range(-1, 8, "mmHg", _ECHO),
    "LV_ISV": Range(30, 66, "mL/m2", _MRI),
    "LV_IEDV": Range(47, 107, "mL/m2", _MRI),
    "LV_IESV": Range(11, 47, "mL/m2", _MRI),
    "LV_EF": Range(51, 76, "%", _MRI),
    "LV_Pmax": Range(90, 140, "mmHg", _ECHO),
    "LV_Pmin": Range(4, 12, "mmHg", _ECHO),
    "RV_ISV": Range(28, 75, "mL/m2", _MRI),
    "RV_IEDV": Range(53, 123, "mL/m2", _MRI),
    "RV_IESV": Range(17, 59, "mL/m2", _MRI),
    "RV_EF": Range(42, 72, "%", _MRI),
    "RV_Pmax": Range(15, 28, "mmHg", _ECHO),
    "RV_Pmin": Range(0, 8, "mmHg", _ECHO),
    "CI": Range(2.8, 4.2, "L/min/m2", _ECHO),
    "SAP_max": Range(0, 140, "mmHg", _ECHO),
    "SAP_min": Range(0, 80, "mmHg", _ECHO),
    "PAP_max": Range(15, 28, "mmHg", _ECHO),
    "PAP_min": Range(5, 16, "mmHg", _ECHO),
    "PAP_mean": Range(10, 22, "mmHg", _ECHO),
    "PWP_max": Range(9, 23, "mmHg", _ECHO),
    "PWP_min": Range(1, 12, "mmHg", _ECHO),
    "PWP_mean": Range(6, 15, "mmHg", _ECHO),
    "SVR": Range(11.3, 17.5, "mmHg min/L", _ECHO),
    "PVR": Range(1.9, 3.1, "mmHg min/L", _ECHO),
    "S_f": Range(0, 0.05, "1/m2", "shunt"),
}

ATRIAL_OUTPUTS = ("IVmax", "IVmin", "IVpreAC", "PassEF", "ActEF", "TotEF", "Pmax", "Pmin", "Pmean")
VENTRICULAR_OUTPUTS = ("ISV", "IEDV", "IESV", "EF", "Pmax", "Pmin")
GLOBAL_OUTPUTS = ("CI", "SAP_max", "SAP_min", "SAP_mean", "PAP_max", "PAP_min", "PAP_mean",
                  "PWP_max", "PWP_min", "PWP_mean", "SVR", "PVR", "max_grad_p_rAV",
                  "LV_SW", "RV_SW")


def output_names(variant: str) -> tuple[str, ...]:
    """Names in report order: 45 for NC, 46 for C (adds ``S_f``)."""
    names = [f"{c}_{o}" for c in ("LA", "RA") for o in ATRIAL_OUTPUTS]
    names += [f"{c}_{o}" for c in ("LV", "RV") for o in VENTRICULAR_OUTPUTS]
    names += list(GLOBAL_OUTPUTS)
    if variant == "C":
        names.append("S_f")
    return tuple(names)


class OutputReport(Mapping):
    """Ordered, read-only map of output name to value."""

    def __init__(self, variant: str, values: Mapping[str, float], bsa: float = DEFAULT_BSA):
        self.variant = variant
        self.bsa = bsa
        self._values = {k: float(v) for k, v in values.items()}

    def __getitem__(self, name: str) -> float:
        try:
            return self._values[name]
        except KeyError:
            if name == "S_f":
                raise MissingVariableError("S_f needs the shunt flow of variant C") from None
            raise

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"OutputReport({self.variant}, {len(self)} outputs)"

    def to_dict(self) -> dict[str, float]:
        return dict(self._values)

    def to_json(self, verdicts: Mapping | None = None) -> str:
        doc: dict = {"variant": self.variant, "bsa": self.bsa, "outputs": self.to_dict()}
        if verdicts is not None:
            doc["verdicts"] = dict(verdicts)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "OutputReport":
        doc = json.loads(text)
        return cls(doc["variant"], doc["outputs"], doc.get("bsa", DEFAULT_BSA))


def polygon_area(x, y) -> float:
    """Signed shoelace area of the closed polygon through (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def pv_loop_area(trace: SimulationTrace, chamber: str, rtol: float = 1e-2) -> float:
    """Area enclosed by a chamber's pressure-volume loop over the final beat, in mmHg*L."""
    beat = last_beat(trace)
    V = beat[f"V_{chamber}"]
    p = beat[f"p_{chamber}"]
    for name, x in (("volume", V), ("pressure", p)):
        span = np.ptp(x) + 1e-12
        if abs(x[-1] - x[0]) > rtol * span:
            raise NonPeriodicTraceError(f"{chamber} {name} loop open by {abs(x[-1] - x[0]):.3g}")
    return abs(polygon_area(V, p)) / 1000.0


def _mean(t, v):
    return float(np.trapezoid(v, t) / (t[-1] - t[0]))


def compute_outputs(trace: SimulationTrace, params: ParameterSet,
                    body: BodyMetrics | None = None) -> OutputReport:
    """All scalar outputs of the final heartbeat of ``trace``."""
    body = body or BodyMetrics()
    bsa = body.bsa
    beat = last_beat(trace)
    t = beat.time
    out: dict[str, float] = {}
    spb = int(beat.beat_starts[-1])

    for ch in ("LA", "RA"):
        V, p = beat[f"V_{ch}"], beat[f"p_{ch}"]
        # the window starts at a multiple of T_HB, so phase == offset
        k = int(round((params.chambers[ch].tC % 1.0) * params.T_HB / beat.dt)) % spb
        vmax, vmin, vpre = V.max(), V.min(), V[k]
        out[f"{ch}_IVmax"] = vmax / bsa
        out[f"{ch}_IVmin"] = vmin / bsa
        out[f"{ch}_IVpreAC"] = vpre / bsa
        out[f"{ch}_PassEF"] = (vmax - vpre) / vmax * 100
        out[f"{ch}_ActEF"] = (vpre - vmin) / vpre * 100
        out[f"{ch}_TotEF"] = (vmax - vmin) / vmax * 100
        out[f"{ch}_Pmax"] = p.max()
        out[f"{ch}_Pmin"] = p.min()
        out[f"{ch}_Pmean"] = _mean(t, p)

    for ch in ("LV", "RV"):
        V, p = beat[f"V_{ch}"], beat[f"p_{ch}"]
        edv, esv = V.max(), V.min()
        out[f"{ch}_ISV"] = (edv - esv) / bsa
        out[f"{ch}_IEDV"] = edv / bsa
        out[f"{ch}_IESV"] = esv / bsa
        out[f"{ch}_EF"] = (edv - esv) / edv * 100
        out[f"{ch}_Pmax"] = p.max()
        out[f"{ch}_Pmin"] = p.min()

    co = _mean(t, beat["Q_AV"]) * 60 / 1000  # L/min
    out["CI"] = co / bsa
    for key, var in (("SAP", "p_AR_SYS"), ("PAP", "p_AR_PUL"), ("PWP", "p_VEN_PUL")):
        v = beat[var]
        out[f"{key}_max"] = v.max()
        out[f"{key}_min"] = v.min()
        out[f"{key}_mean"] = _mean(t, v)
    out["SVR"] = (out["SAP_mean"] - _mean(t, beat["p_RA"])) / co
    out["PVR"] = (out["PAP_mean"] - _mean(t, beat["p_LA"])) / co
    out["max_grad_p_rAV"] = float(np.max(beat["p_RV"] - beat["p_RA"]))
    out["LV_SW"] = pv_loop_area(beat, "LV")
    out["RV_SW"] = pv_loop_area(beat, "RV")
    if trace.variant == "C":
        out["S_f"] = _mean(t, beat["Q_SH"]) / (co * 1000 / 60) / bsa

    ordered = {k: out[k] for k in output_names(trace.variant)}
    return OutputReport(trace.variant, ordered, bsa)


def range_check(report: Mapping[str, float], ranges: Mapping[str, Range] | None = None):
    """Classify every output that has a range as ``in``, ``below``, ``above``
    or ``undefined`` (NaN value).

    Returns ``(verdicts, all_in_range)``.
    """
    ranges = HEALTHY_RANGES if ranges is None else ranges
    common = [n for n in ranges if n in report]
    if not common:
        raise SchemaError("report and ranges share no output names")
    verdicts = {}
    for name in common:
        r, v = ranges[name], report[name]
        if math.isnan(v):
            verdicts[name] = "undefined"
        else:
            verdicts[name] = "below" if v < r.lo else "above" if v > r.hi else "in"
    return verdicts, all(v == "in" for v in verdicts.values())
