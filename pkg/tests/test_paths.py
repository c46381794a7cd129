import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistshrink.errors import HorizonError
from twistshrink.paths import (
    DiscretePath,
    DyadicGrid,
    discrete_ito_decompose,
    discrete_stratonovich_decompose,
    stochastic_sum,
    trapezoid_between,
    trapezoidal_sum,
    trapezoidal_sum_edges,
)
from twistshrink.walker import WalkLevel

steps = st.lists(st.sampled_from([-1, 1]), min_size=0, max_size=64)
meshes = st.sampled_from([1.0, 0.5, 0.25, 0.125])


def smooth(x):
    return np.sin(x) + 0.3 * x ** 2


@settings(max_examples=200, deadline=None)
@given(steps, meshes, st.integers(-8, 8))
def test_trapezoid_depends_only_on_endpoints(inc, h, k0):
    p = DiscretePath(k0 * h, inc, h)
    assert trapezoidal_sum(smooth, p) == pytest.approx(trapezoidal_sum_edges(smooth, p), abs=1e-11)


@settings(max_examples=100, deadline=None)
@given(steps, meshes)
def test_closed_path_sums_to_zero(inc, h):
    closed = DiscretePath(0.0, list(inc) + [-s for s in reversed(inc)], h)
    assert trapezoidal_sum(smooth, closed) == 0.0
    assert abs(trapezoidal_sum_edges(smooth, closed)) < 1e-10


def test_trapezoid_of_constant_is_displacement():
    assert trapezoid_between(lambda x: np.ones_like(x), 0.0, 2.0, 0.25) == 2.0
    assert trapezoid_between(lambda x: np.ones_like(x), 2.0, 0.0, 0.25) == -2.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=40), meshes, st.floats(-2, 2))
def test_ito_and_stratonovich_identities(inc, h, a):
    f = lambda t, x: np.cos(a * x + t) + t * x ** 3
    p = DiscretePath(0.5, inc, h)
    total = trapezoid_between(lambda x: f(len(inc) * h * h, x), p.start, p.end, h)
    time_term, stoch, quad = discrete_ito_decompose(f, p)
    t2, mid = discrete_stratonovich_decompose(f, p)
    assert time_term + stoch + quad == pytest.approx(total, rel=1e-12, abs=1e-12)
    assert t2 + mid == pytest.approx(total, rel=1e-12, abs=1e-12)


def test_time_independent_f_has_no_time_term():
    p = DiscretePath(0.0, [1, 1, -1, 1], 0.5)
    time_term, _, _ = discrete_ito_decompose(lambda t, x: x ** 2, p)
    assert time_term == 0.0


def test_quadratic_term_for_x_is_half_time():
    # f(x) = x: quadratic term is n h^2 / 2
    p = DiscretePath(0.0, [1, -1, -1, 1, 1, 1], 0.25)
    _, _, quad = discrete_ito_decompose(lambda t, x: np.asarray(x, dtype=float), p)
    assert quad == pytest.approx(6 * 0.25 ** 2 / 2)


def test_stochastic_sum_and_horizon():
    w = WalkLevel(1, np.array([0, 1, 2, 1, 0]))
    # f = 1 gives B_m(t)
    assert stochastic_sum(lambda t, x: np.ones_like(x), w, 0.5) == pytest.approx(1.0)
    with pytest.raises(HorizonError):
        stochastic_sum(lambda t, x: x, w, 2.0)


def test_grid_and_path_basics():
    g = DyadicGrid.level(3)
    assert g.time_mesh == 1 / 64
    p = DiscretePath(1.0, [1, 1, -1], 0.5)
    assert p.end == 1.5 and list(p.vertices) == [1.0, 1.5, 2.0, 1.5]
    with pytest.raises(ValueError):
        DiscretePath(0.0, [2], 1.0)
