"""Hypertensive scenarios as percentage changes to a baseline parameter set."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .params import ParameterSet, VariantError, resolve, tomllib

CONDITIONS = ("Systemic", "Pulmonary", "Renovascular")
SEVERITIES = ("Mild", "Moderate", "Severe")

# One row per parameter; each entry holds (Mild, Moderate, Severe) percentages
# for the three conditions. None marks an unchanged parameter.
_ROWS: list[tuple[str, dict[str, tuple]]] = [
    ("HR", {"Systemic": (None, 5, 10), "Pulmonary": (None, 5, 10),
            "Renovascular": (None, None, 10)}),
    ("chambers.LV.Ea", {"Systemic": (10, 20, 40), "Pulmonary": (5, 10, 15)}),
    ("chambers.LV.V0", {"Systemic": (None, None, -10), "Pulmonary": (None, None, -10)}),
    ("circ.SYS.AR.R", {"Systemic": (10, 30, 50), "Pulmonary": (None, None, 5),
                       "Renovascular": (15, 40, 85)}),
    ("circ.SYS.AR.C", {"Systemic": (-10, -20, -40), "Pulmonary": (None, None, -10),
                       "Renovascular": (-10, -15, -25)}),
    ("circ.SYS.VEN.R", {"Systemic": (None, None, 5)}),
    ("circ.SYS.VEN.C", {"Systemic": (None, None, -5)}),
    ("circ.PUL.AR.R", {"Systemic": (None, None, 10), "Pulmonary": (20, 50, 100),
                       "Renovascular": (5, 15, 40)}),
    ("circ.PUL.AR.C", {"Systemic": (None, None, -10), "Pulmonary": (-10, -25, -50)}),
    ("circ.PUL.VEN.R", {"Pulmonary": (10, 25, 50)}),
    ("circ.PUL.VEN.C", {"Pulmonary": (-10, -25, -50)}),
    ("capillary.R_C_SYS", {"Systemic": (None, None, 10)}),
    ("capillary.C_C_SYS", {"Systemic": (None, None, -20)}),
    ("capillary.R_C_PUL", {"Pulmonary": (10, 30, 60), "Renovascular": (5, 10, 25)}),
    ("capillary.C_C_PUL", {"Pulmonary": (None, None, -20)}),
    ("valves.AV.R", {"Systemic": (25, 50, 100), "Renovascular": (25, 50, 100)}),
    ("valves.MV.R", {"Systemic": (None, 10, 20), "Renovascular": (10, 20, 30)}),
    ("valves.PV.R", {"Pulmonary": (25, 50, 100), "Renovascular": (25, 50, 100)}),
    ("valves.TV.R", {"Pulmonary": (10, 25, 50), "Renovascular": (10, 25, 50)}),
]

CANDIDATE_PATHS = tuple(path for path, _ in _ROWS)


@dataclass(frozen=True)
class ScenarioSpec:
    condition: str
    severity: str
    modifications: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        mods = tuple((str(p), float(d)) for p, d in self.modifications)
        paths = [p for p, _ in mods]
        if len(set(paths)) != len(paths):
            raise ValueError("a parameter path appears twice in one scenario")
        for p, d in mods:
            if not d > -100:
                raise ValueError(f"{p}: a change of {d}% would make the parameter non-positive")
        object.__setattr__(self, "modifications", mods)

    @property
    def name(self) -> str:
        return f"{self.condition}-{self.severity}"

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.modifications)

    def needs_capillaries(self) -> bool:
        return any(p.startswith("capillary.") for p in self.paths)

    # ------------------------------------------------------------- documents
    def to_dict(self) -> dict:
        return {"condition": self.condition, "severity": self.severity,
                "modifications": [{"path": p, "percent": d} for p, d in self.modifications]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        mods = [(m["path"], m["percent"]) for m in doc.get("modifications", [])]
        return cls(doc["condition"], doc["severity"], tuple(mods))

    def to_toml(self) -> str:
        lines = [f'condition = "{self.condition}"', f'severity = "{self.severity}"']
        for p, d in self.modifications:
            lines += ["", "[[modifications]]", f'path = "{p}"', f"percent = {d!r}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(tomllib.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_toml(Path(path).read_text(encoding="utf-8"))


def builtin(condition: str, severity: str) -> ScenarioSpec:
    """The tabulated changes for one (condition, severity) pair, unchanged rows omitted."""
    if condition not in CONDITIONS or severity not in SEVERITIES:
        raise ValueError(f"unknown scenario ({condition!r}, {severity!r})")
    k = SEVERITIES.index(severity)
    mods = []
    for path, cols in _ROWS:
        delta = cols.get(condition, (None, None, None))[k]
        if delta is not None:
            mods.append((path, float(delta)))
    return ScenarioSpec(condition, severity, tuple(mods))


def all_builtins() -> list[ScenarioSpec]:
    return [builtin(c, s) for c in CONDITIONS for s in SEVERITIES]


def apply(spec: ScenarioSpec, base: ParameterSet) -> ParameterSet:
    """Scale each listed parameter of ``base`` by ``1 + percent/100``."""
    if spec.needs_capillaries() and base.variant != "C":
        raise VariantError(f"{spec.name} changes capillary parameters; base is variant {base.variant}")
    for p in spec.paths:
        resolve(p, base.variant)
    return base.scaled({p: 1.0 + d / 100.0 for p, d in spec.modifications})


def apply_all(base: ParameterSet, specs: Iterable[ScenarioSpec] | None = None) -> dict[str, ParameterSet]:
    specs = all_builtins() if specs is None else specs
    return {s.name: apply(s, base) for s in specs}
