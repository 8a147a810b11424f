import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmcritz.errors import UsageError
from qmcritz.metrics import (
    EVAL_INDEX_OFFSET,
    ErrorSeries,
    fit_order,
    fmt_float,
    make_eval_grid,
    pairwise_order,
    relative_l2,
    relative_l2_error,
)
from qmcritz.network import NetworkShape, init_params
from qmcritz.problems import benchmark_dirichlet, benchmark_neumann


def test_relative_l2_examples():
    assert relative_l2([1.0, 1.0], [1.0, 1.0]) == 0.0
    assert relative_l2([0.0, 0.0], [3.0, 4.0]) == 1.0
    assert relative_l2([3.3, 4.4], [3.0, 4.0]) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(UsageError):
        relative_l2([1.0], [0.0])


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_relative_l2_ignores_uniform_quadrature_weight(scale, seed):
    # sqrt(sum w d^2 / sum w u^2) with a constant weight w (the domain volume) is weight-free
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=50), rng.normal(size=50)
    weighted = math.sqrt(np.sum(scale * (v - u) ** 2) / np.sum(scale * u**2))
    assert relative_l2(v, u) == pytest.approx(weighted, rel=1e-12)


def test_eval_grid_is_fixed_and_separate_from_training():
    spec = benchmark_dirichlet(2)
    a, b = make_eval_grid(spec, 256), make_eval_grid(spec, 256)
    assert a.points.tobytes() == b.points.tobytes()
    assert spec.box.contains(a.points).all()
    assert EVAL_INDEX_OFFSET == 2**31


def test_error_of_exact_head_is_small_and_doubling_grid_is_stable():
    spec = benchmark_neumann(2)
    shape = NetworkShape(2, 10, 4)
    theta = init_params(shape, 0)
    e1 = relative_l2_error(theta, shape, spec, make_eval_grid(spec, 2**13))
    e2 = relative_l2_error(theta, shape, spec, make_eval_grid(spec, 2**14))
    assert abs(e1 - e2) / e2 < 0.01


def test_fit_order_exact_power_laws():
    assert fit_order([(100, 1.0), (400, 0.5)]) == pytest.approx(0.5, abs=1e-12)
    pts = [(n, 3.0 * n**-1.0) for n in (10, 100, 1000, 10000)]
    assert fit_order(pts) == pytest.approx(1.0, abs=1e-12)


def test_fit_order_rejects_degenerate_input():
    with pytest.raises(UsageError):
        fit_order([(100, 1.0)])
    with pytest.raises(UsageError):
        fit_order([(100, 1.0), (100, 0.5)])
    with pytest.raises(UsageError):
        fit_order([(100, 0.0), (200, 0.5)])


def test_pairwise_order():
    assert pairwise_order(1.0, 0.5, 4.0) == pytest.approx(0.5, abs=1e-15)
    assert pairwise_order(1.7141, 1.1420, 2.0) == pytest.approx(0.586, abs=1e-3)
    with pytest.raises(UsageError):
        pairwise_order(1.0, 0.5, 1.0)


def test_fit_order_is_invariant_to_error_scale():
    pts = [(500, 4.27), (1000, 3.42), (2000, 2.62), (4000, 2.25)]
    scaled = [(n, 7.5 * e) for n, e in pts]
    assert fit_order(pts) == pytest.approx(fit_order(scaled), abs=1e-12)


def test_windowed_series_averages_trailing_window():
    s = ErrorSeries(window=10)
    for it, e in [(0, 4.0), (5, 2.0), (10, 6.0), (15, 1.0), (20, 3.0)]:
        s.add(it, e)
    # window (it - 10, it]: at 20 covers 15 and 20
    assert s.windowed == [4.0, 3.0, 4.0, 3.5, 2.0]
    assert s.final_windowed == 2.0


def test_windowing_reduces_variance():
    rng = np.random.default_rng(0)
    s = ErrorSeries(window=50)
    for it in range(0, 5000, 5):
        s.add(it, 0.01 + 0.002 * rng.normal())
    assert np.var(s.windowed[20:]) < np.var(s.raw[20:]) / 5


def test_series_csv_round_trip():
    s = ErrorSeries(window=50)
    for it, e in [(0, 0.5), (5, 0.1 / 3), (10, 1e-17)]:
        s.add(it, e)
    text = s.to_csv()
    assert text.splitlines()[0] == "iteration,raw_error,windowed_error"
    back = ErrorSeries.from_csv(text, 50)
    assert back.raw == s.raw and back.iterations == s.iterations
    assert back.to_csv() == text


def test_fmt_float_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 12345.678):
        assert float(fmt_float(x)) == x
