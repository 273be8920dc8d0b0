import math
import warnings

import numpy as np
import pytest

from hypertwin import sensitivity as sens
from hypertwin.engine import simulate
from hypertwin.observables import compute_outputs
from hypertwin.presets import healthy


def _ishigami(X, a=7.0, b=0.1):
    x1, x2, x3 = X.T
    return np.sin(x1) + a * np.sin(x2) ** 2 + b * x3 ** 4 * np.sin(x1)


def ishigami_totals(a=7.0, b=0.1):
    """Analytic total indices from the closed-form variance decomposition."""
    pi = math.pi
    V1 = 0.5 * (1 + b * pi ** 4 / 5) ** 2
    V2 = a ** 2 / 8
    V13 = 8 * b ** 2 * pi ** 8 / 225
    V = a ** 2 / 8 + b * pi ** 4 / 5 + b ** 2 * pi ** 8 / 18 + 0.5
    return np.array([(V1 + V13) / V, V2 / V, V13 / V])


def _van_der_corput(n):
    """Radical inverse in base 2, visited in Gray-code order as Sobol generators do."""
    out = []
    for i in range(1, n + 1):
        x, f, k = 0.0, 0.5, i ^ (i >> 1)
        while k:
            x += f * (k & 1)
            k >>= 1
            f /= 2
        out.append(x)
    return np.array(out)


def _star_discrepancy(P):
    """Largest gap between empirical and uniform measure over anchored boxes
    whose corners sit on the point coordinates (open and closed variants)."""
    n = len(P)
    xs, ys = np.sort(np.append(P[:, 0], 1.0)), np.sort(np.append(P[:, 1], 1.0))
    ix = np.searchsorted(xs, P[:, 0])
    iy = np.searchsorted(ys, P[:, 1])
    M = np.zeros((len(xs), len(ys)))
    np.add.at(M, (ix, iy), 1)
    closed = M.cumsum(0).cumsum(1) / n
    vol = np.outer(xs, ys)
    d = np.abs(closed - vol).max()
    opened = np.zeros_like(closed)
    opened[1:, 1:] = closed[:-1, :-1]
    return max(d, np.abs(opened - vol).max())


def test_sobol_dim_one_matches_van_der_corput():
    pts = sens.sobol_sequence(1, 16, skip=1)[:, 0]
    np.testing.assert_array_equal(pts, _van_der_corput(16))
    assert list(pts[:3]) == [0.5, 0.75, 0.25]


def test_sobol_points_in_unit_cube_and_deterministic():
    a = sens.sobol_sequence(7, 500)
    assert a.min() >= 0 and a.max() < 1
    np.testing.assert_array_equal(a, sens.sobol_sequence(7, 500))


def test_sobol_beats_random_on_star_discrepancy():
    d_sobol = _star_discrepancy(sens.sobol_sequence(2, 1024, skip=1))
    d_rand = np.median([_star_discrepancy(np.random.default_rng(s).random((1024, 2))) for s in range(20)])
    assert d_sobol < d_rand


def test_design_row_count_small():
    d = sens.saltelli_matrix([0, 0, 0], [1, 1, 1], 4)
    assert d.n_rows == 32 == sens.saltelli_rows(4, 3)


def test_design_rows_inside_intervals_and_radial_structure():
    base = healthy("NC")
    d = sens.saltelli_design(base, N=16)
    lo, hi = d.lower, d.upper
    assert np.all(d.matrix >= lo) and np.all(d.matrix <= hi)
    ref = np.array([base.get(n) for n in d.names])
    np.testing.assert_allclose(lo, ref / 3)
    np.testing.assert_allclose(hi, ref * 5 / 3)
    A, B = d.matrix[d.block("A")], d.matrix[d.block("B")]
    for k in (0, 5, d.n_params - 1):
        AB = d.matrix[d.block("AB", k)]
        expect = A.copy()
        expect[:, k] = B[:, k]
        np.testing.assert_array_equal(AB, expect)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        sens.saltelli_matrix([0], [1], 6)


def _design(N, dim, lo=-math.pi, hi=math.pi):
    return sens.saltelli_matrix([lo] * dim, [hi] * dim, N)


def test_ishigami_totals():
    d = _design(2 ** 12, 3)
    res = sens.total_indices(d, _ishigami(d.matrix))
    expected = ishigami_totals()
    np.testing.assert_allclose(expected, [0.5576, 0.4424, 0.2437], atol=5e-4)
    np.testing.assert_allclose(res.S[:, 0], expected, atol=0.05)


def test_additive_function_shares():
    widths = np.array([1.0, 2.0, 3.0])
    d = sens.saltelli_matrix([0, 0, 0], widths, 2 ** 11)
    res = sens.total_indices(d, d.matrix.sum(axis=1))
    var = widths ** 2 / 12
    np.testing.assert_allclose(res.S[:, 0], var / var.sum(), atol=0.05)


def test_constant_function_gives_zero():
    d = _design(64, 4)
    res = sens.total_indices(d, np.full(d.n_rows, 3.0))
    assert np.all(res.S == 0)


def test_single_coordinate_function():
    d = _design(2 ** 10, 4, 0.0, 1.0)
    res = sens.total_indices(d, np.exp(d.matrix[:, 2]))
    assert res.S[2, 0] >= 0.9
    assert np.all(np.delete(res.S[:, 0], 2) <= 0.05)


def test_failed_rows_are_excluded_and_warned():
    d = _design(2 ** 10, 3)
    Y = _ishigami(d.matrix)
    Y[::10] = np.nan
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = sens.total_indices(d, Y)
    assert res.warnings and any("failed" in str(w.message) for w in caught)
    assert res.failed.sum() == len(Y[::10])
    np.testing.assert_allclose(res.S[:, 0], ishigami_totals(), atol=0.08)


def test_relevant_parameters_thresholds():
    d = _design(2 ** 10, 3)
    res = sens.total_indices(d, _ishigami(d.matrix))
    assert sens.relevant_parameters(res, 0.99) == []
    assert sens.relevant_parameters(res, 1e-9) == list(d.names)
    assert sens.relevant_parameters(res, 0.3) == [d.names[0], d.names[1]]
    with pytest.raises(ValueError):
        sens.relevant_parameters(res, 1.0)


def test_sobol_result_csv_round_trip():
    d = _design(2 ** 6, 3)
    res = sens.total_indices(d, _ishigami(d.matrix), ["f"])
    back = sens.SobolResult.from_csv(res.to_csv())
    assert back.parameters == res.parameters and back.outputs == res.outputs
    np.testing.assert_array_equal(back.S, res.S)


@pytest.mark.parametrize("kind,rho,expected", [("R", 5, 1.75), ("C", -5, 1.30), ("0", 1, 0.95),
                                               ("L", 2, 1.15), ("a", -1, 0.88), ("p", 3, 1.42)])
def test_group_coefficients(kind, rho, expected):
    assert sens.group_coefficients(kind, rho) == pytest.approx(expected)


@pytest.mark.parametrize("rho", [0, 6, -6, 1.5])
def test_group_coefficients_domain(rho):
    with pytest.raises(ValueError):
        sens.group_coefficients("R", rho)


def test_group_and_indicator_counts():
    assert len(sens.default_groups("NC")) == 5
    assert len(sens.default_groups("C")) == 7
    assert len(sens.indicator_names("NC")) == 45 + 20 * 4 + 4 == 129
    assert len(sens.indicator_names("C")) == 46 + 25 * 4 + 4 == 150


def test_indicators_identity(nc_trace, nc_report):
    ind = sens.indicators(nc_trace, nc_trace, nc_report, nc_report)
    assert len(ind) == 129
    for name, v in ind.items():
        if name.startswith("GammaPV"):
            assert v == 1.0
        elif math.isfinite(v):
            assert v == 0.0
        else:
            assert name.startswith(("GammaMin", "GammaMax", "GammaMean", "GammaT", "Gamma["))


def test_indicators_scale_linearly(nc_trace, nc_report):
    from dataclasses import replace
    from hypertwin.engine import last_beat
    b = last_beat(nc_trace)
    scaled = replace(b, states=b.states * 1.1, algebraic=b.algebraic * 1.1)
    ind = sens.indicators(b, scaled, nc_report, nc_report)
    for v in ("V_LV", "p_AR_SYS", "p_LA"):
        for kind in ("GammaT", "GammaMean", "GammaMax", "GammaMin"):
            assert ind[f"{kind}[{v}]"] == pytest.approx(10.0, rel=1e-9)


def test_group_pair_has_opposite_signs():
    base = healthy("NC")
    ref = simulate(base)
    ref_rep = compute_outputs(ref, base)
    group = sens.default_groups("NC")[0]
    assert group.name == "systemic arterial"
    gam = []
    for rho in (-1, 1):
        p = base.scaled(group.factors(rho))
        tr = simulate(p)
        gam.append(sens.indicators(ref, tr, ref_rep, compute_outputs(tr, p))["Gamma[SAP_max]"])
    assert gam[0] * gam[1] < 0


def test_evaluator_returns_nan_row_on_failure():
    base = healthy("NC")
    ev = sens.ModelEvaluator(base, ["chambers.LV.Ea"])
    ok = ev(np.array([base.get("chambers.LV.Ea")]))
    assert np.all(np.isfinite(ok)) and ok.size == 45
    bad = ev(np.array([-1.0]))  # negative elastance is rejected by validation
    assert np.all(np.isnan(bad))
