"""Healthy reference parameter sets and default initial states."""

from __future__ import annotations

import numpy as np

from .params import (CapillaryParams, ChamberParams, ParameterSet, RlcBranch, ValveParams,
                     VariantError, VALVES)

# Heart rate is not tabulated with the healthy parameters. At 80 bpm the
# healthy C run lands on the reference RV volumes and ejection fraction.
DEFAULT_HR = 80.0

# Chamber columns: Ea, Ep, TC, TR, tC, V0 (timings as fractions of the beat).


def healthy_nc(HR: float = DEFAULT_HR) -> ParameterSet:
    chambers = {
        "LA": ChamberParams(0.255, 0.1512, 0.15, 0.8, 0.75, 4.0),
        "LV": ChamberParams(8.442, 0.126, 0.25, 0.5, 0.0, 42.0),
        "RA": ChamberParams(6e-2, 7e-2, 0.1, 0.7, 0.8, 4.0),
        "RV": ChamberParams(0.495, 7e-2, 0.25, 0.4, 0.0, 16.0),
    }
    valves = {v: ValveParams(Rmin=7.5e-3, Rmax=75006.2) for v in VALVES}
    circ = {
        "SYS.AR": RlcBranch(R=0.42, L=5e-3, C=0.96),
        "SYS.VEN": RlcBranch(R=0.352, L=5e-4, C=60.0),
        "PUL.AR": RlcBranch(R=0.104, L=5e-4, C=5.0),
        "PUL.VEN": RlcBranch(R=1.05e-2, L=5e-4, C=16.0),
    }
    return ParameterSet("NC", HR, chambers, valves, circ)


def healthy_c(HR: float = DEFAULT_HR) -> ParameterSet:
    chambers = {
        "LA": ChamberParams(0.38, 0.27, 0.1, 0.8, 0.75, 4.0),
        "LV": ChamberParams(2.7, 6.9e-2, 0.265, 0.4, 0.0, 3.541),
        "RA": ChamberParams(0.126, 0.195, 0.1, 0.7, 0.8, 3.5385),
        "RV": ChamberParams(0.43, 4.1264e-2, 0.3, 0.4, 0.0, 8.4067),
    }
    valves = {v: ValveParams(Rmin=6.2872e-3, Rmax=94168.0) for v in VALVES}
    circ = {
        "SYS.AR": RlcBranch(R=0.5911, L=2.0643e-4, C=1.3315),
        "SYS.VEN": RlcBranch(R=0.3596, L=2.0643e-5, C=75.0),
        "PUL.AR": RlcBranch(R=7.14e-2, L=2.0643e-5, C=6.0043),
        "PUL.VEN": RlcBranch(R=3.75e-2, L=2.0643e-5, C=13.181),
    }
    cap = CapillaryParams(R_C_SYS=2.17e-2, C_C_SYS=0.27981, R_C_PUL=1.7538e-2,
                          C_C_PUL=5.7803, R_SH=0.35174, C_SH=4.9043e-2)
    return ParameterSet("C", HR, chambers, valves, circ, cap)


def healthy(variant: str, HR: float = DEFAULT_HR) -> ParameterSet:
    """Healthy reference set at heart rate ``HR`` (1/min)."""
    if variant not in ("NC", "C"):
        raise VariantError(f"unknown variant {variant!r}")
    return healthy_c(HR) if variant == "C" else healthy_nc(HR)


# Initial volumes (mL), pressures (mmHg) and fluxes (mL/s). Only the total
# stressed volume they imply survives to the limit cycle.
INITIAL_STATE = {
    "V_LA": 65.0, "V_LV": 120.0, "V_RA": 65.0, "V_RV": 145.0,
    "p_AR_SYS": 80.0, "p_VEN_SYS": 30.0, "p_AR_PUL": 35.0, "p_VEN_PUL": 24.0,
    "Q_AR_SYS": 0.0, "Q_VEN_SYS": 0.0, "Q_AR_PUL": 0.0, "Q_VEN_PUL": 0.0,
}


def initial_state(variant: str, overrides: dict | None = None) -> np.ndarray:
    """Default c1(0); capillary pressures start at the matching venous pressure."""
    vals = dict(INITIAL_STATE)
    if overrides:
        vals.update(overrides)
    y = [vals[k] for k in INITIAL_STATE]
    if variant == "C":
        y += [vals.get("p_C_SYS", vals["p_VEN_SYS"]), vals.get("p_C_PUL", vals["p_VEN_PUL"])]
    return np.array(y, dtype=float)
