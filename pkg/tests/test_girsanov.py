import numpy as np
import pytest
from hypothesis import given, strategies as st

from twistshrink.coefficients import preset
from twistshrink.girsanov import (
    evaluate_path,
    lambda_m,
    log_cosh,
    path_log_probabilities,
    path_probability,
    q_plus,
    step_law,
    w_m,
)
from twistshrink.phi import solve_phi
from twistshrink.simulate import RunConfig
from twistshrink.verify import enumerate_measure


def test_log_cosh_stable():
    x = np.array([0.0, 1e-3, 2.0, 800.0, -800.0])
    expect = np.array([0.0, 1e-6 / 2 - 1e-12 / 12 + 1e-18 / 45, np.log(np.cosh(2.0)), 800 - np.log(2), 800 - np.log(2)])
    assert np.allclose(log_cosh(x), expect, rtol=1e-14, atol=1e-16)


@given(st.floats(-1e6, 1e6), st.integers(0, 10))
def test_step_probabilities(psi, m):
    law = step_law(psi, m)
    assert 0.0 <= law.q_plus <= 1.0
    assert law.q_plus + law.q_minus == pytest.approx(1.0)
    x = psi * 2.0 ** -m
    assert law.q_plus == pytest.approx(0.5 - 0.5 * np.tanh(x), abs=1e-15)


def test_step_law_values():
    assert step_law(0.0, 3).q_plus == 0.5
    assert step_law(-0.5, 0).q_plus == pytest.approx(0.7310585786300049)
    with pytest.raises(ValueError):
        step_law(float("nan"), 0)


def test_q_plus_symmetry():
    psi = np.linspace(-3, 3, 13)
    assert np.allclose(q_plus(psi, 1) + q_plus(-psi, 1), 1.0)


@pytest.mark.parametrize("cfg", [RunConfig(preset="gbm", a=1, c=1), RunConfig(preset="ou", b=1, c=-1, d=0, x0=0)])
@pytest.mark.parametrize("m", [0, 1, 2])
def test_enumeration_identities(cfg, m):
    e_lam, e_lam_w, total = enumerate_measure(cfg, m, 8)
    assert abs(e_lam - 1) <= 1e-12
    assert abs(e_lam_w) <= 1e-12
    assert abs(total - 1) <= 1e-12


def test_path_probability_equals_density_times_fair_coin():
    # Q_m(path) = Lambda_m * 2^-n on every path
    coeffs = preset("ou")
    sol = solve_phi(coeffs, m=2)
    pos = np.array([0, 1, 2, 1, 2, 3, 2])
    p = evaluate_path(sol, coeffs, pos, 2)
    assert path_probability(p) == pytest.approx(np.log(lambda_m(p)) - 6 * np.log(2), abs=1e-13)
    assert np.allclose(w_m(p), p.W)


def test_gbm_series_by_hand():
    # psi = -1/2 at m = 0: one up step
    coeffs = preset("gbm", a=1.0, c=1.0, x0=1.0)
    sol = solve_phi(coeffs, m=0)
    p = evaluate_path(sol, coeffs, [0, 1], 0)
    assert p.X[-1] == pytest.approx(np.e)
    assert p.W[-1] == pytest.approx(1 + np.tanh(-0.5))
    assert p.log_lambda[-1] == pytest.approx(0.5 - np.log(np.cosh(0.5)))
    assert path_log_probabilities(p.psi, p.increments, 0) == pytest.approx(np.log(1 / (1 + np.exp(-1.0))))
