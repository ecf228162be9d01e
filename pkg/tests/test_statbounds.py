import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from probecount.statbounds import (
    BoundQuery,
    K,
    bound_table,
    concentration_bound,
    empirical_tail,
    hoeffding_bound,
    write_bound_table,
)

GRID = np.linspace(0.0, 1.0, 10_001)


@pytest.mark.parametrize("p", [1e-9, 1e-4, 0.01, 0.1, 0.2, 0.25, 1 / 3, 0.4, 0.49, 0.5 - 1e-7, 0.5 - 1e-9,
                               0.5 + 3e-9, 0.6, 0.75, 0.8, 0.99, 1 - 1e-6])
def test_K_against_arbitrary_precision(p):
    assert K(p) == pytest.approx(float(oracles.K_mp(p)), rel=1e-12)


def test_K_fixed_points():
    assert K(0.0) == 0.0 and K(1.0) == 0.0
    assert K(0.5) == 0.25
    assert K(1 / 3) == pytest.approx(0.2404491734814939, rel=1e-12)
    with pytest.raises(ValueError):
        K(1.5)
    with pytest.raises(ValueError):
        K(float("nan"))


def test_K_on_grid_shape():
    k = np.array([K(p) for p in GRID])
    # grid points and their mirrors differ by rounding in 1 - p
    assert np.abs(k - k[::-1]).max() <= 1e-12
    assert k.max() == 0.25 and GRID[k.argmax()] == 0.5
    assert np.all(k <= 0.25)
    half = len(GRID) // 2
    assert np.all(np.diff(k[: half + 1]) > 0)
    assert np.all(np.diff(k[half:]) < 0)
    # zero at both ends with a peak in between: the curve bends down, never up
    assert np.all(np.diff(k, 2) <= 1e-12)


def ratio(p):
    return p * p / K(p)


def test_signal_to_proxy_ratio_limits():
    assert ratio(1e-6) < 1e-10
    assert ratio(1e-6) < ratio(1e-3) < ratio(0.5) == 1.0
    assert 1.0 < ratio(1 - 1e-3) < ratio(1 - 1e-6) < ratio(1 - 1e-9)
    assert ratio(1 - 1e-6) > 20
    assert K(1e-300) > 0


@given(st.floats(1e-6, 1 - 1e-6), st.integers(1, 10**6), st.floats(1e-3, 1.0))
def test_bound_dominates_hoeffding(p, n, phi):
    q = BoundQuery(p, n, phi)
    assert concentration_bound(q) <= hoeffding_bound(q) * (1 + 1e-12)


def test_bounds_agree_at_half():
    for n, phi in [(100, 0.1), (1000, 0.05), (7, 0.9)]:
        q = BoundQuery(0.5, n, phi)
        assert concentration_bound(q) == pytest.approx(hoeffding_bound(q), rel=1e-12)


def test_bound_value_and_scaling():
    # n p^2 phi^2 / (2K) = 1000 * 0.25 * 0.01 / 0.5 = 5 at p = 1/2
    assert concentration_bound(BoundQuery(0.5, 1000, 0.1)) == pytest.approx(2 * math.exp(-5), rel=1e-12)
    a = concentration_bound(BoundQuery(0.3, 400, 0.1))
    b = concentration_bound(BoundQuery(0.3, 800, 0.1))
    assert math.log(b / 2) == pytest.approx(2 * math.log(a / 2), rel=1e-12)
    assert concentration_bound(BoundQuery(0.3, 1, 0.01)) == 1.0


def test_bound_errors():
    with pytest.raises(ValueError):
        concentration_bound(BoundQuery(0.0, 10, 0.1))
    with pytest.raises(ValueError):
        concentration_bound(BoundQuery(1.0, 10, 0.1))
    with pytest.raises(ValueError):
        hoeffding_bound(BoundQuery(0.0, 10, 0.1))
    with pytest.raises(ValueError):
        BoundQuery(0.5, 0, 0.1)
    with pytest.raises(ValueError):
        BoundQuery(0.5, 10, 0.0)
    with pytest.raises(ValueError):
        BoundQuery(-0.1, 10, 0.1)


def test_certain_transmission_has_no_tail():
    assert empirical_tail(1.0, 100, 0.01, 1000).frequency == 0.0


def test_empirical_tail_shrinks_with_n():
    small = empirical_tail(0.3, 100, 0.1, 20_000, seed=1).frequency
    large = empirical_tail(0.3, 1000, 0.1, 20_000, seed=1).frequency
    assert large < small


@pytest.mark.parametrize("p", [0.05, 0.3, 0.5, 0.9])
def test_empirical_tail_below_bound(p):
    n, phi = 500, 0.1
    est = empirical_tail(p, n, phi, 20_000, seed=3)
    assert est.frequency <= concentration_bound(BoundQuery(p, n, phi)) + 3 * est.std_error


def test_empirical_tail_deterministic():
    assert empirical_tail(0.2, 50, 0.2, 500, seed=4) == empirical_tail(0.2, 50, 0.2, 500, seed=4)
    with pytest.raises(ValueError):
        empirical_tail(0.2, 50, 0.2, 0)
    with pytest.raises(ValueError):
        empirical_tail(0.0, 50, 0.2, 10)


def test_bound_table_csv():
    rows = bound_table([0.25, 0.5], 100, 0.1)
    assert [r["p"] for r in rows] == [0.25, 0.5] and rows[0]["empirical"] == ""
    buf = io.StringIO()
    write_bound_table(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "p,K,bound,hoeffding,empirical"
    assert float(lines[2].split(",")[1]) == 0.25
    with_mc = bound_table([0.25], 100, 0.1, trials=200, seed=1)
    assert 0.0 <= with_mc[0]["empirical"] <= 1.0
