"""Parameter containers for the two closed-loop circulation variants.

Every scalar is addressable by a dotted path (``chambers.LV.Ea``,
``valves.AV.Rmin``, ``circ.SYS.AR.R``, ``capillary.R_SH``, ``HR``). The same
grammar is used by parameter files, scenario files, sensitivity designs and
calibration problems.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

CHAMBERS = ("LA", "LV", "RA", "RV")
VALVES = ("MV", "AV", "TV", "PV")
BRANCHES = ("SYS.AR", "SYS.VEN", "PUL.AR", "PUL.VEN")
CHAMBER_FIELDS = ("Ea", "Ep", "TC", "TR", "tC", "V0")
VALVE_FIELDS = ("Rmin", "Rmax")
RLC_FIELDS = ("R", "L", "C")
CAPILLARY_FIELDS = ("R_C_SYS", "C_C_SYS", "R_C_PUL", "C_C_PUL", "R_SH", "C_SH")
VARIANTS = ("NC", "C")

# Upstream/downstream chambers of each valve; "AR_SYS"/"AR_PUL" are arterial nodes.
VALVE_CONNECTIONS = {
    "MV": ("LA", "LV"),
    "AV": ("LV", "AR_SYS"),
    "TV": ("RA", "RV"),
    "PV": ("RV", "AR_PUL"),
}


class ParameterError(KeyError):
    """Unknown parameter path or a path that does not exist in this variant."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class VariantError(ValueError):
    """Operation incompatible with the model variant (NC vs C)."""


@dataclass(frozen=True)
class ChamberParams:
    """Elastances (mmHg/mL), resting volume (mL) and activation timing.

    ``TC``, ``TR`` and ``tC`` are fractions of the heartbeat period, so the
    activation pattern stretches with the heart rate.
    """

    Ea: float
    Ep: float
    TC: float
    TR: float
    tC: float
    V0: float

    def __post_init__(self):
        # Ea == 0 is allowed: it switches the chamber's contraction off.
        if self.Ea < 0 or self.Ep <= 0:
            raise ValueError(f"elastances must be positive: Ea={self.Ea}, Ep={self.Ep}")
        if self.TC <= 0 or self.TR <= 0:
            raise ValueError(f"contraction/relaxation durations must be positive: {self}")
        if self.tC < 0 or self.V0 < 0:
            raise ValueError(f"tC and V0 must be non-negative: {self}")


@dataclass(frozen=True)
class ValveParams:
    Rmin: float
    Rmax: float

    def __post_init__(self):
        if not 0 < self.Rmin < self.Rmax:
            raise ValueError(f"valve needs 0 < Rmin < Rmax, got {self}")


@dataclass(frozen=True)
class RlcBranch:
    R: float
    L: float
    C: float

    def __post_init__(self):
        if min(self.R, self.L, self.C) <= 0:
            raise ValueError(f"RLC values must be positive, got {self}")


@dataclass(frozen=True)
class CapillaryParams:
    R_C_SYS: float
    C_C_SYS: float
    R_C_PUL: float
    C_C_PUL: float
    R_SH: float
    C_SH: float

    def __post_init__(self):
        if min(dataclasses.astuple(self)) <= 0:
            raise ValueError(f"capillary values must be positive, got {self}")


@dataclass(frozen=True)
class ParameterSet:
    """Full parameter vector of one model variant.

    ``variant`` is ``"NC"`` (no capillaries, 12 states) or ``"C"``
    (capillaries and shunt, 14 states). ``capillary`` is present iff the
    variant is ``"C"``.
    """

    variant: str
    HR: float
    chambers: Mapping[str, ChamberParams]
    valves: Mapping[str, ValveParams]
    circ: Mapping[str, RlcBranch]
    capillary: CapillaryParams | None = None
    p_EX: float = 0.0
    _packed: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise VariantError(f"unknown variant {self.variant!r}")
        if (self.variant == "C") != (self.capillary is not None):
            raise VariantError("variant C requires capillary parameters and NC forbids them")
        if not self.HR > 0:
            raise ValueError(f"HR must be positive, got {self.HR}")
        for name, keys in (("chambers", CHAMBERS), ("valves", VALVES), ("circ", BRANCHES)):
            missing = set(keys) - set(getattr(self, name))
            if missing:
                raise ValueError(f"missing {name}: {sorted(missing)}")

    @property
    def T_HB(self) -> float:
        return 60.0 / self.HR

    @property
    def n_states(self) -> int:
        return 14 if self.variant == "C" else 12

    # ------------------------------------------------------------------ paths
    def flat(self) -> dict[str, float]:
        """All leaf parameters keyed by path, in a stable order."""
        out = {"HR": float(self.HR), "p_EX": float(self.p_EX)}
        for ch in CHAMBERS:
            for f in CHAMBER_FIELDS:
                out[f"chambers.{ch}.{f}"] = float(getattr(self.chambers[ch], f))
        for v in VALVES:
            for f in VALVE_FIELDS:
                out[f"valves.{v}.{f}"] = float(getattr(self.valves[v], f))
        for b in BRANCHES:
            for f in RLC_FIELDS:
                out[f"circ.{b}.{f}"] = float(getattr(self.circ[b], f))
        if self.capillary is not None:
            for f in CAPILLARY_FIELDS:
                out[f"capillary.{f}"] = float(getattr(self.capillary, f))
        return out

    @classmethod
    def from_flat(cls, variant: str, values: Mapping[str, float]) -> "ParameterSet":
        known = set(leaf_paths(variant)) | {"HR", "p_EX"}
        unknown = set(values) - known
        if unknown:
            raise ParameterError(f"unknown parameter paths for variant {variant}: {sorted(unknown)}")

        def grab(path):
            try:
                return float(values[path])
            except KeyError:
                raise ParameterError(f"missing parameter {path!r}") from None

        chambers = {ch: ChamberParams(*(grab(f"chambers.{ch}.{f}") for f in CHAMBER_FIELDS))
                    for ch in CHAMBERS}
        valves = {v: ValveParams(*(grab(f"valves.{v}.{f}") for f in VALVE_FIELDS)) for v in VALVES}
        circ = {b: RlcBranch(*(grab(f"circ.{b}.{f}") for f in RLC_FIELDS)) for b in BRANCHES}
        cap = None
        if variant == "C":
            cap = CapillaryParams(*(grab(f"capillary.{f}") for f in CAPILLARY_FIELDS))
        return cls(variant=variant, HR=grab("HR"), chambers=chambers, valves=valves,
                   circ=circ, capillary=cap, p_EX=float(values.get("p_EX", 0.0)))

    def get(self, path: str) -> float:
        leaves = resolve(path, self.variant)
        flat = self.flat()
        vals = {flat[p] for p in leaves}
        if len(vals) != 1:
            raise ParameterError(f"alias {path!r} covers unequal values {sorted(vals)}")
        return vals.pop()

    def with_values(self, updates: Mapping[str, float]) -> "ParameterSet":
        """Copy with the given paths (leaves or aliases) set to new values."""
        flat = self.flat()
        for path, value in updates.items():
            for leaf in resolve(path, self.variant):
                flat[leaf] = float(value)
        return ParameterSet.from_flat(self.variant, flat)

    def scaled(self, factors: Mapping[str, float]) -> "ParameterSet":
        """Copy with each addressed leaf multiplied by its factor."""
        flat = self.flat()
        for path, factor in factors.items():
            for leaf in resolve(path, self.variant):
                flat[leaf] = flat[leaf] * float(factor)
        return ParameterSet.from_flat(self.variant, flat)

    # ---------------------------------------------------------------- packing
    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays consumed by the compiled kernels: (chambers, valves, rlc, capillary).

        Chamber timings are converted to seconds.
        """
        if self._packed is None:
            ch = np.array([[getattr(self.chambers[c], f) for f in CHAMBER_FIELDS] for c in CHAMBERS])
            ch[:, 2:5] *= self.T_HB  # timings to seconds
            vv = np.array([[getattr(self.valves[v], f) for f in VALVE_FIELDS] for v in VALVES])
            rlc = np.array([[getattr(self.circ[b], f) for f in RLC_FIELDS] for b in BRANCHES])
            if self.capillary is None:
                cap = np.ones(len(CAPILLARY_FIELDS))
            else:
                cap = np.array(dataclasses.astuple(self.capillary), dtype=float)
            object.__setattr__(self, "_packed", (ch, vv, rlc, cap))
        return self._packed

    # ------------------------------------------------------------- documents
    def to_toml(self) -> str:
        lines = [f'variant = "{self.variant}"']
        lines += [f"{k} = {_fmt(v)}" for k, v in self.flat().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text: str) -> "ParameterSet":
        doc = tomllib.loads(text)
        variant = doc.pop("variant", None)
        if variant is None:
            variant = "C" if "capillary" in doc else "NC"
        return cls.from_flat(variant, _flatten(doc))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ParameterSet":
        return cls.from_toml(Path(path).read_text(encoding="utf-8"))


def _fmt(x: float) -> str:
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return f"{x:.1f}"
    return repr(float(x))


def _flatten(doc: Mapping, prefix: str = "") -> dict[str, float]:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def leaf_paths(variant: str) -> list[str]:
    """Leaf paths of a variant, excluding ``HR`` and ``p_EX``."""
    paths = [f"chambers.{c}.{f}" for c in CHAMBERS for f in CHAMBER_FIELDS]
    paths += [f"valves.{v}.{f}" for v in VALVES for f in VALVE_FIELDS]
    paths += [f"circ.{b}.{f}" for b in BRANCHES for f in RLC_FIELDS]
    if variant == "C":
        paths += [f"capillary.{f}" for f in CAPILLARY_FIELDS]
    return paths


# Aliases address several leaves at once: shared valve resistances (the
# healthy tables list one Rmin/Rmax for all four valves) and a valve's whole
# resistance law (``valves.AV.R`` scales both of its regimes).
ALIASES = {"valves.Rmin": [f"valves.{v}.Rmin" for v in VALVES],
           "valves.Rmax": [f"valves.{v}.Rmax" for v in VALVES]}
ALIASES.update({f"valves.{v}.R": [f"valves.{v}.Rmin", f"valves.{v}.Rmax"] for v in VALVES})


def resolve(path: str, variant: str) -> list[str]:
    """Expand ``path`` to the leaf paths it addresses in ``variant``."""
    if path in ALIASES:
        return list(ALIASES[path])
    if path in ("HR", "p_EX"):
        return [path]
    if path.startswith("capillary.") and variant != "C":
        raise VariantError(f"{path!r} only exists in variant C")
    if path in leaf_paths(variant):
        return [path]
    raise ParameterError(f"unknown parameter path {path!r}")


def timing_paths() -> list[str]:
    return [f"chambers.{c}.{f}" for c in CHAMBERS for f in ("TC", "TR", "tC")]


def sensitivity_paths(variant: str) -> list[str]:
    """Parameters varied in the global sensitivity study.

    Heart rate and activation timings are held fixed; the four valves share one
    Rmin and one Rmax. That leaves 26 parameters for NC and 32 for C.
    """
    paths = [f"chambers.{c}.{f}" for c in CHAMBERS for f in ("Ea", "Ep", "V0")]
    paths += ["valves.Rmin", "valves.Rmax"]
    paths += [f"circ.{b}.{f}" for b in BRANCHES for f in RLC_FIELDS]
    if variant == "C":
        paths += [f"capillary.{f}" for f in CAPILLARY_FIELDS]
    return paths


def tunable_paths(variant: str) -> list[str]:
    """Leaves other than HR, p_EX and activation timings."""
    skip = set(timing_paths())
    return [p for p in leaf_paths(variant) if p not in skip]


def lv_paths() -> list[str]:
    return ["chambers.LV.Ea", "chambers.LV.Ep", "chambers.LV.V0"]


def expand(paths: Iterable[str], variant: str) -> list[str]:
    out: list[str] = []
    for p in paths:
        for leaf in resolve(p, variant):
            if leaf not in out:
                out.append(leaf)
    return out
