"""Algebraic relations and ODE right-hand side of the closed-loop circulation.

State order (c1)::

    V_LA V_LV V_RA V_RV | p_AR_SYS p_VEN_SYS p_AR_PUL p_VEN_PUL |
    Q_AR_SYS Q_VEN_SYS Q_AR_PUL Q_VEN_PUL | (C only) p_C_SYS p_C_PUL

Algebraic order (c2)::

    p_LA p_LV p_RA p_RV | Q_MV Q_AV Q_TV Q_PV | (C only) Q_C_SYS Q_C_PUL Q_SH

The numerical kernels are compiled with numba and operate on the packed
arrays returned by :meth:`ParameterSet.packed`; the functions at the bottom of
the module are the Python-facing API.
"""

from __future__ import annotations

from math import cos, exp, log, pi

import numba
import numpy as np

from .params import ChamberParams, ParameterSet, ValveParams, VariantError

STATE_NAMES_NC = ("V_LA", "V_LV", "V_RA", "V_RV",
                  "p_AR_SYS", "p_VEN_SYS", "p_AR_PUL", "p_VEN_PUL",
                  "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL")
STATE_NAMES_C = STATE_NAMES_NC + ("p_C_SYS", "p_C_PUL")
ALGEBRAIC_NAMES_NC = ("p_LA", "p_LV", "p_RA", "p_RV", "Q_MV", "Q_AV", "Q_TV", "Q_PV")
ALGEBRAIC_NAMES_C = ALGEBRAIC_NAMES_NC + ("Q_C_SYS", "Q_C_PUL", "Q_SH")


def state_names(variant: str) -> tuple[str, ...]:
    return STATE_NAMES_C if variant == "C" else STATE_NAMES_NC


def algebraic_names(variant: str) -> tuple[str, ...]:
    return ALGEBRAIC_NAMES_C if variant == "C" else ALGEBRAIC_NAMES_NC


def variable_names(variant: str) -> tuple[str, ...]:
    """Time-dependent variables reported per run: 20 for NC, 25 for C."""
    return state_names(variant) + algebraic_names(variant)


# ------------------------------------------------------------------ kernels
@numba.njit(cache=True)
def _activation(t, tC, TC, TR, THB):
    # Contraction and relaxation phases are each wrapped into the beat on their
    # own, so a relaxation running past the end of the beat stays continuous.
    e = 0.0
    a = (t - tC) % THB
    if a < TC:
        e += 0.5 * (1.0 - cos(pi * a / TC))
    b = (t - tC - TC) % THB
    if b < TR:
        e += 0.5 * (1.0 + cos(pi * b / TR))
    if e > 1.0:
        e = 1.0
    return e


@numba.njit(cache=True)
def _resistance(rmin, rmax, dp, steep):
    if steep <= 0.0:
        return rmin if dp >= 0.0 else rmax
    x = steep * dp
    if x > 50.0:
        return rmin
    if x < -50.0:
        return rmax
    s = 1.0 / (1.0 + exp(x))
    return exp(log(rmin) + (log(rmax) - log(rmin)) * s)


@numba.njit(cache=True)
def _algebraic(t, y, ch, vv, cap, THB, pEX, steep, out):
    for i in range(4):
        e = _activation(t, ch[i, 4], ch[i, 2], ch[i, 3], THB)
        out[i] = pEX + (ch[i, 1] + ch[i, 0] * e) * (y[i] - ch[i, 5])
    p_la, p_lv, p_ra, p_rv = out[0], out[1], out[2], out[3]
    p_ar_sys, p_ar_pul = y[4], y[6]
    out[4] = (p_la - p_lv) / _resistance(vv[0, 0], vv[0, 1], p_la - p_lv, steep)
    out[5] = (p_lv - p_ar_sys) / _resistance(vv[1, 0], vv[1, 1], p_lv - p_ar_sys, steep)
    out[6] = (p_ra - p_rv) / _resistance(vv[2, 0], vv[2, 1], p_ra - p_rv, steep)
    out[7] = (p_rv - p_ar_pul) / _resistance(vv[3, 0], vv[3, 1], p_rv - p_ar_pul, steep)
    if y.shape[0] == 14:
        out[8] = (y[12] - y[5]) / cap[0]
        out[9] = (y[13] - y[7]) / cap[2]
        out[10] = (y[13] - y[7]) / cap[4]


@numba.njit(cache=True)
def _rhs(t, y, ch, vv, rlc, cap, THB, pEX, steep, alg, out):
    _algebraic(t, y, ch, vv, cap, THB, pEX, steep, alg)
    p_la, p_ra = alg[0], alg[2]
    q_mv, q_av, q_tv, q_pv = alg[4], alg[5], alg[6], alg[7]
    p_ar_sys, p_ven_sys, p_ar_pul, p_ven_pul = y[4], y[5], y[6], y[7]
    q_ar_sys, q_ven_sys, q_ar_pul, q_ven_pul = y[8], y[9], y[10], y[11]

    out[0] = q_ven_pul - q_mv
    out[1] = q_mv - q_av
    out[2] = q_ven_sys - q_tv
    out[3] = q_tv - q_pv
    out[4] = (q_av - q_ar_sys) / rlc[0, 2]
    out[6] = (q_pv - q_ar_pul) / rlc[2, 2]
    out[9] = -(q_ven_sys + (p_ra - p_ven_sys) / rlc[1, 0]) * rlc[1, 0] / rlc[1, 1]
    out[11] = -(q_ven_pul + (p_la - p_ven_pul) / rlc[3, 0]) * rlc[3, 0] / rlc[3, 1]
    if y.shape[0] == 14:
        p_c_sys, p_c_pul = y[12], y[13]
        q_c_sys, q_c_pul, q_sh = alg[8], alg[9], alg[10]
        out[5] = (q_c_sys - q_ven_sys) / rlc[1, 2]
        out[7] = (q_sh + q_c_pul - q_ven_pul) / rlc[3, 2]
        out[8] = -(q_ar_sys + (p_c_sys - p_ar_sys) / rlc[0, 0]) * rlc[0, 0] / rlc[0, 1]
        out[10] = -(q_ar_pul + (p_c_pul - p_ar_pul) / rlc[2, 0]) * rlc[2, 0] / rlc[2, 1]
        out[12] = (q_ar_sys - q_c_sys) / cap[1]
        out[13] = (q_ar_pul - q_sh - q_c_pul) / (cap[3] + cap[5])
    else:
        out[5] = (q_ar_sys - q_ven_sys) / rlc[1, 2]
        out[7] = (q_ar_pul - q_ven_pul) / rlc[3, 2]
        out[8] = -(q_ar_sys + (p_ven_sys - p_ar_sys) / rlc[0, 0]) * rlc[0, 0] / rlc[0, 1]
        out[10] = -(q_ar_pul + (p_ven_pul - p_ar_pul) / rlc[2, 0]) * rlc[2, 0] / rlc[2, 1]


@numba.njit(cache=True)
def _activation_array(t, tC, TC, TR, THB):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = _activation(t[i], tC, TC, TR, THB)
    return out


@numba.njit(cache=True)
def _algebraic_series(t, Y, ch, vv, cap, THB, pEX, steep):
    m = 11 if Y.shape[1] == 14 else 8
    out = np.empty((Y.shape[0], m))
    for k in range(Y.shape[0]):
        _algebraic(t[k], Y[k], ch, vv, cap, THB, pEX, steep, out[k])
    return out


# ------------------------------------------------------------- Python API
def activation(chamber: ChamberParams, t, T_HB: float):
    """Normalised activation e(t) in [0, 1] (half-cosine rise and decay)."""
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    e = _activation_array(tt, chamber.tC * T_HB, chamber.TC * T_HB, chamber.TR * T_HB, T_HB)
    return e if np.ndim(t) else float(e[0])


def elastance(chamber: ChamberParams, t, T_HB: float):
    """Time-varying elastance E(t) = Ep + Ea * e(t) in mmHg/mL."""
    return chamber.Ep + chamber.Ea * activation(chamber, t, T_HB)


def chamber_pressure(chamber: ChamberParams, E, V, p_EX=0.0):
    return p_EX + E * (np.asarray(V) - chamber.V0)


def valve_resistance(valve: ValveParams, p_up, p_down, steepness: float = 0.0) -> float:
    """Diode-like valve resistance: Rmin when open (p_up >= p_down), Rmax otherwise.

    A positive ``steepness`` (1/mmHg) replaces the switch by a logistic blend
    in log-resistance.
    """
    return _resistance(valve.Rmin, valve.Rmax, float(p_up) - float(p_down), float(steepness))


def valve_flux(valve: ValveParams, p_up, p_down, steepness: float = 0.0) -> float:
    return (p_up - p_down) / valve_resistance(valve, p_up, p_down, steepness)


def _check_state(params: ParameterSet, state) -> np.ndarray:
    y = np.asarray(state, dtype=float)
    if y.shape != (params.n_states,):
        raise VariantError(f"variant {params.variant} expects {params.n_states} states, "
                           f"got shape {y.shape}")
    return y


def algebraic(params: ParameterSet, t: float, state, steepness: float = 0.0) -> dict[str, float]:
    """Chamber pressures and valve/capillary fluxes at one instant."""
    y = _check_state(params, state)
    ch, vv, _, cap = params.packed()
    names = algebraic_names(params.variant)
    out = np.empty(len(names))
    _algebraic(float(t), y, ch, vv, cap, params.T_HB, params.p_EX, float(steepness), out)
    return dict(zip(names, out.tolist()))


def rhs(params: ParameterSet, t: float, state, steepness: float = 0.0) -> np.ndarray:
    """d(c1)/dt for either variant."""
    y = _check_state(params, state)
    ch, vv, rlc, cap = params.packed()
    alg = np.empty(11)
    out = np.empty_like(y)
    _rhs(float(t), y, ch, vv, rlc, cap, params.T_HB, params.p_EX, float(steepness), alg, out)
    return out


def stressed_volume(params: ParameterSet, state) -> float | np.ndarray:
    """Chamber volumes plus blood stored on every compliance (mL).

    Conserved exactly by the continuous equations of both variants. Accepts a
    single state or an (n, states) array.
    """
    Y = np.asarray(state, dtype=float)
    _, _, rlc, cap = params.packed()
    total = Y[..., 0:4].sum(axis=-1)
    total = total + rlc[0, 2] * Y[..., 4] + rlc[1, 2] * Y[..., 5]
    total = total + rlc[2, 2] * Y[..., 6] + rlc[3, 2] * Y[..., 7]
    if params.variant == "C":
        total = total + cap[1] * Y[..., 12] + (cap[3] + cap[5]) * Y[..., 13]
    return total


def stiffness(params: ParameterSet) -> float:
    """Rough magnitude (1/s) of the fastest decay rate of the linearised system."""
    ch, vv, rlc, cap = params.packed()
    rates = [rlc[i, 0] / rlc[i, 1] for i in range(4)]
    emax = ch[:, 0] + ch[:, 1]
    # open valve: two elastic compartments draining through Rmin
    rates.append((emax[0] + emax[1]) / vv[0, 0])
    rates.append((emax[1] + 1.0 / rlc[0, 2]) / vv[1, 0])
    rates.append((emax[2] + emax[3]) / vv[2, 0])
    rates.append((emax[3] + 1.0 / rlc[2, 2]) / vv[3, 0])
    if params.variant == "C":
        rates += [1.0 / (cap[0] * cap[1]), 1.0 / (cap[2] * (cap[3] + cap[5]))]
    return float(max(rates))
