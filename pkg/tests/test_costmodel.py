import pytest
from hypothesis import given, strategies as st

from pebtree.costmodel import CostParams, cost_c, cost_c1, fit_cost_params


def test_c1_theta_one_is_one():
    assert cost_c1(50, 1.0, 10_000) == pytest.approx(1.0)
    assert cost_c1(50, 1.0, 10) == pytest.approx(1.0 + 10 - 50)  # capped branch


def test_c1_theta_zero_is_policy_count():
    assert cost_c1(50, 0.0, 10_000) == pytest.approx(50.0)


def test_c1_reference_value():
    assert cost_c1(50, 0.7, 10_000) == pytest.approx(35.5, abs=0.1)
    assert cost_c1(50, 0.7, 10_000) == pytest.approx(1 + 50 - 50**0.7)


def test_c1_leaf_cap_branch():
    # fewer leaves than policies: the leaf count bounds the cost
    assert cost_c1(100, 0.0, 40) == pytest.approx(1 + 40 - 1)


def test_cost_c_theta_one_is_one_for_any_fit():
    for a1, a2 in ((10.0, 0.3), (123.0, -5.0)):
        params = CostParams(a1, a2, 60_000, 50, 1.0, 1000.0, 10_000)
        assert cost_c(params) == pytest.approx(1.0)


def test_cost_c_reference_uniform_fit():
    # the reported uniform-distribution fit (a1=10, a2=0.3) at the default
    # workload point
    params = CostParams(10.0, 0.3, 60_000, 50, 0.0, 1000.0, 10_000)
    assert cost_c(params) == pytest.approx(45.1, abs=1e-9)


def test_cost_c_floor_at_one():
    params = CostParams(-100.0, 0.0, 60_000, 50, 0.0, 1000.0, 10_000)
    assert cost_c(params) == 1.0


def test_fit_round_trip_exact():
    truth = (10.0, 0.3)
    leaf_count = 5_000

    def point(n, theta):
        params = CostParams(truth[0], truth[1], n, 50, theta, 1000.0, leaf_count)
        return (n, 1000.0, 50, theta, leaf_count, cost_c(params))

    a1, a2 = fit_cost_params(point(20_000, 0.7), point(60_000, 0.7))
    assert (a1, a2) == (pytest.approx(10.0), pytest.approx(0.3))
    # recovered parameters reproduce every other noiseless point
    for n in (10_000, 40_000, 100_000):
        for theta in (0.0, 0.3, 0.9):
            params = CostParams(a1, a2, n, 50, theta, 1000.0, leaf_count)
            truth_params = CostParams(truth[0], truth[1], n, 50, theta, 1000.0, leaf_count)
            assert cost_c(params) == pytest.approx(cost_c(truth_params))


def test_fit_rejects_degenerate_samples():
    sample = (20_000, 1000.0, 50, 0.7, 5_000, 30.0)
    with pytest.raises(ValueError):
        fit_cost_params(sample, (20_000, 1000.0, 50, 0.5, 5_000, 25.0))  # same density
    with pytest.raises(ValueError):
        fit_cost_params(
            (20_000, 1000.0, 50, 1.0, 5_000, 1.0),  # theta=1 is singular
            (60_000, 1000.0, 50, 1.0, 5_000, 1.0),
        )


@given(
    theta1=st.floats(0.0, 1.0),
    theta2=st.floats(0.0, 1.0),
    a1=st.floats(0.1, 50.0),
    a2=st.floats(0.0, 5.0),
    n=st.integers(1_000, 100_000),
)
def test_cost_monotone_nonincreasing_in_theta(theta1, theta2, a1, a2, n):
    lo, hi = sorted((theta1, theta2))
    p_lo = CostParams(a1, a2, n, 50, lo, 1000.0, 10_000)
    p_hi = CostParams(a1, a2, n, 50, hi, 1000.0, 10_000)
    assert cost_c(p_hi) <= cost_c(p_lo) + 1e-9


def test_input_validation():
    with pytest.raises(ValueError):
        cost_c1(0, 0.5, 100)
    with pytest.raises(ValueError):
        cost_c1(10, 1.5, 100)
    with pytest.raises(ValueError):
        cost_c1(10, 0.5, 0)
