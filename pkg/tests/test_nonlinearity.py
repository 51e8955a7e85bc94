"""Tests for the nonlinearity evaluators, the barrier integral F and the
admissibility checks."""

import json
import math

import numpy as np
import pytest

from heatlab.errors import DivisionNearZero, OutOfRange
from heatlab.nonlinearity import (
    check_admissibility,
    check_fprime_F_limit,
    check_log_convexity_ratio,
    custom,
    cutoff_exp,
    eval_F,
    eval_F_inverse,
    eval_F_inverse_log,
    eval_F_log,
    power_exp,
    pure_power,
    sobolev_exponent,
)

FAMILIES = {
    "power_exp": power_exp(5.0, 2.0),
    "cutoff_exp": cutoff_exp(20.0),
    "pure_power": pure_power(3.0),
}


def central_diff(fn, u, rel=1e-5):
    h = u * rel
    return (fn(u + h) - fn(u - h)) / (2 * h)


# ---------------------------------------------------------------------------
# evaluator consistency
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_first_derivative_matches_finite_difference(name):
    spec = FAMILIES[name]
    u = np.geomspace(0.05, 15.0, 100)
    fd = central_diff(spec.f, u, rel=1e-6)
    assert np.allclose(spec.fp(u), fd, rtol=5e-6)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_second_derivative_matches_finite_difference(name):
    spec = FAMILIES[name]
    u = np.geomspace(0.05, 15.0, 100)
    fd = central_diff(spec.fp, u, rel=1e-6)
    assert np.allclose(spec.fpp(u), fd, rtol=5e-6)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_log_profile_consistent_with_f(name):
    spec = FAMILIES[name]
    u = np.geomspace(0.1, 25.0, 50)
    assert np.allclose(spec.g(u), np.log(spec.f(u)), rtol=0, atol=1e-12)
    fd = central_diff(spec.g, u)
    assert np.allclose(spec.gp(u), fd, rtol=1e-6)
    fd2 = central_diff(spec.gp, u)
    assert np.allclose(spec.gpp(u), fd2, rtol=1e-5, atol=1e-10)


def test_cutoff_shape_function_plateau():
    spec = cutoff_exp(20.0)
    # chi == 20 for u >= 4, so f is exactly 20 e^{20u} there
    for u in (4.0, 4.5, 6.0):
        assert spec.f(u) == pytest.approx(20.0 * math.exp(20.0 * u), rel=1e-14)
    # C^2 matching at the joints
    for joint in (1.0, 3.0, 4.0):
        lo, hi = joint - 1e-9, joint + 1e-9
        assert spec.f(lo) == pytest.approx(spec.f(hi), rel=1e-7)
        assert spec.fp(lo) == pytest.approx(spec.fp(hi), rel=1e-7)
        assert spec.fpp(lo) == pytest.approx(spec.fpp(hi), rel=1e-6)


def test_family_constructors_reject_bad_parameters():
    with pytest.raises(ValueError):
        power_exp(5.0, 1.0)     # tail not superexponential
    with pytest.raises(ValueError):
        pure_power(1.0)         # no integrable reciprocal tail
    with pytest.raises(ValueError):
        cutoff_exp(0.0)


def test_custom_family_roundtrip():
    # shifted exponential e^u - 1 through the custom constructor
    spec = custom(
        f=lambda u: np.exp(u) - 1.0,
        fp=lambda u: np.exp(u),
        fpp=lambda u: np.exp(u),
        log_convex_from=0.0,
        label="shifted exp",
    )
    assert spec.label == "shifted exp"
    assert spec.f(1.0) == pytest.approx(math.e - 1.0)


# ---------------------------------------------------------------------------
# barrier integral F and its inverse
# ---------------------------------------------------------------------------

def test_barrier_integral_pure_power_closed_form():
    # F(u) = u^{1-p}/(p-1); for p=3, F(2) = 1/8
    spec = pure_power(3.0)
    assert eval_F(spec, 2.0) == pytest.approx(0.125, rel=1e-10)
    for u in (0.5, 1.0, 7.0):
        assert eval_F(spec, u) == pytest.approx(u ** -2 / 2.0, rel=1e-10)


def test_barrier_integral_cutoff_tail_closed_form():
    # above the plateau: F(u) = e^{-a u}/(20 a)
    spec = cutoff_exp(20.0)
    assert eval_F_log(spec, 5.0) == pytest.approx(
        -100.0 - math.log(400.0), rel=1e-12)


def test_barrier_integral_decreasing():
    for spec in FAMILIES.values():
        u = np.geomspace(0.2, 30.0, 40)
        vals = [eval_F_log(spec, x) for x in u]
        assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_inverse_roundtrip(name):
    spec = FAMILIES[name]
    for u in np.geomspace(0.3, 25.0, 12):
        log_y = eval_F_log(spec, float(u))
        back = eval_F_inverse_log(spec, log_y)
        assert back == pytest.approx(float(u), rel=1e-8)


def test_inverse_plain_interface():
    spec = pure_power(3.0)
    assert eval_F_inverse(spec, 0.125) == pytest.approx(2.0, rel=1e-10)
    with pytest.raises(OutOfRange):
        eval_F_inverse(spec, -1.0)


def test_barrier_integral_survives_overflowing_f():
    # f overflows in float64 far below u=500; the log-space path must not
    spec = power_exp(5.0, 2.0)
    val = eval_F_log(spec, 500.0)
    assert np.isfinite(val)
    assert val < -1e5   # e^{-250000} scale


# ---------------------------------------------------------------------------
# scalar limit diagnostics
# ---------------------------------------------------------------------------

def test_fprime_F_exactly_one_on_cutoff_plateau():
    spec = cutoff_exp(20.0)
    for _, v in check_fprime_F_limit(spec, [4.0, 10.0, 40.0]):
        assert v == pytest.approx(1.0, abs=1e-12)


def test_fprime_F_approaches_one_for_power_exp():
    spec = power_exp(5.0, 2.0)
    vals = [v for _, v in check_fprime_F_limit(spec, [10.0, 100.0, 1000.0])]
    errs = np.abs(np.array(vals) - 1.0)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-4


def test_fprime_F_constant_for_pure_power():
    # f'F = p/(p-1) identically: 3/2 for p=3, 2 for p=2
    for p, want in ((3.0, 1.5), (2.0, 2.0)):
        for _, v in check_fprime_F_limit(pure_power(p), [1.0, 10.0, 100.0]):
            assert v == pytest.approx(want, rel=1e-10)


def test_log_convexity_ratio_values():
    # for u^p e^{u^q}: g''/g'^2 = (q(q-1)u^q - p)/(q u^q + p)^2
    spec = power_exp(5.0, 2.0)
    (_, v), = check_log_convexity_ratio(spec, [10.0])
    assert v == pytest.approx(195.0 / 42025.0, rel=1e-12)
    # for u^p: ratio is -1/p identically
    (_, v), = check_log_convexity_ratio(pure_power(3.0), [7.0])
    assert v == pytest.approx(-1.0 / 3.0, rel=1e-12)


def test_log_convexity_ratio_rejects_flat_profile():
    flat = custom(
        f=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        fp=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        fpp=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        log_convex_from=0.0,
        label="flat",
    )
    with pytest.raises(DivisionNearZero):
        check_log_convexity_ratio(flat, [1.0])


# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------

def test_sobolev_exponent():
    assert sobolev_exponent(3) == pytest.approx(5.0)
    assert sobolev_exponent(5) == pytest.approx(7.0 / 3.0)
    with pytest.raises(ValueError):
        sobolev_exponent(2)


def test_admissibility_exponential_families_all_pass():
    for spec in (power_exp(5.0, 2.0), cutoff_exp(20.0)):
        report = check_admissibility(spec, dim=3)
        assert report.all_pass, report.to_json()
        fpF = report.limit_estimates["fprime_F"]["value"]
        assert fpF == pytest.approx(1.0, abs=1e-3)


def test_admissibility_subcritical_power_fails_deficit():
    # p=2 < p_S=5 in three dimensions: Q/(u f) = 1 - (p_S+1)/(p+1) = -1
    report = check_admissibility(pure_power(2.0), dim=3)
    assert not report.conditions["A4"].passed
    assert not report.conditions["A3"].passed  # -1/p does not vanish
    assert report.conditions["A1"].passed
    assert report.conditions["A2"].passed


def test_admissibility_supercritical_power_passes_deficit():
    # p=3 > p_S=7/3 in five dimensions: deficit = 1 - (10/3)/4 = 1/6 > 0
    report = check_admissibility(pure_power(3.0), dim=5)
    assert report.conditions["A4"].passed
    assert not report.conditions["A3"].passed


def test_admissibility_report_serializes():
    report = check_admissibility(power_exp(5.0, 2.0), dim=3)
    doc = json.loads(report.to_json())
    assert doc["all_pass"] is True
    names = {c["condition"] for c in doc["conditions"]}
    assert names == {"A1", "A2", "A3", "A4"}


def test_admissibility_input_validation():
    spec = power_exp(5.0, 2.0)
    with pytest.raises(ValueError):
        check_admissibility(spec, dim=3, n_samples=10)
    with pytest.raises(ValueError):
        check_admissibility(spec, dim=3, u_max=-1.0)
