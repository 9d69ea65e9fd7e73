import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pipedraft.analytic import (
    AnalyticInputs,
    analyze,
    expected_tokens_per_step,
    geometric_sum,
    pipespec_ideal,
    pipespec_rate,
    rho_recursion,
    rho_steady_state,
    rho_time_average,
    sd_speedup,
)

# Exact rational evaluations, rounded to double.
RHO_08_4 = 0.5433601391001956
EN_08_4 = 2.2831993044990218
RATE_099_8 = 8.033826116972072
IDEAL_099_8 = 8.64827525163591
RATE_0001_4 = 1.000001000001

GRID = [(round(0.05 * i, 2), g) for i in range(1, 20) for g in range(1, 17)]


def test_recursion_trivial_rates():
    assert rho_recursion(0.0, 4, 3) == [0.0, 0.0, 0.0]
    assert rho_recursion(1.0, 4, 3) == [1.0, 1.0, 1.0]


def test_recursion_converges_to_closed_form():
    assert rho_recursion(0.8, 4, 50)[-1] == pytest.approx(RHO_08_4, abs=1e-12)
    assert rho_recursion(0.8, 4, 1) == [0.8]


def test_steady_state_values():
    assert rho_steady_state(0.0, 4) == 0.0
    assert rho_steady_state(1.0, 4) == 1.0
    assert rho_steady_state(0.8, 4) == pytest.approx(RHO_08_4, rel=1e-14)


def test_expected_tokens_values():
    assert expected_tokens_per_step(0.0, 4, 0.0) == 1.0
    assert expected_tokens_per_step(1.0, 4, 1.0) == 5.0
    assert expected_tokens_per_step(0.8, 4, 0.5434) == pytest.approx(2.283, abs=5e-4)


def test_pipespec_rate_values():
    assert pipespec_rate(0.5, 1) == pytest.approx(1.2, rel=1e-14)
    assert pipespec_rate(0.8, 4) == pytest.approx(EN_08_4, rel=1e-14)
    assert pipespec_rate(0.99, 8) == pytest.approx(RATE_099_8, rel=1e-12)
    assert pipespec_rate(0.001, 4) == pytest.approx(RATE_0001_4, rel=1e-12)
    assert pipespec_rate(0.001, 4) > 1.0


def test_sd_speedup_values():
    assert sd_speedup(0.0, 8, 10) == pytest.approx(1 / 1.8)
    assert sd_speedup(1.0, 8, 10) == pytest.approx(5.0)
    for a in (0.0, 0.3, 1.0):
        for c in (0.5, 4, 100):
            assert sd_speedup(a, 0, c) == 1.0


def test_ideal_values():
    assert pipespec_ideal(1.0, 8) == 9.0
    assert pipespec_ideal(0.0, 8) == 1.0
    assert pipespec_ideal(0.8, 4) == pytest.approx(3.3616, rel=1e-14)
    assert pipespec_ideal(0.99, 8) == pytest.approx(IDEAL_099_8, rel=1e-12)


def test_geometric_sum_matches_ratio_form():
    for a, g in GRID:
        assert geometric_sum(a, g) == pytest.approx((1 - a ** (g + 1)) / (1 - a), rel=1e-12)


@pytest.mark.parametrize(
    "call",
    [
        lambda: rho_steady_state(1.2, 4),
        lambda: rho_steady_state(-0.1, 4),
        lambda: rho_recursion(0.5, -1, 3),
        lambda: expected_tokens_per_step(0.5, 2, 1.5),
        lambda: sd_speedup(0.5, 2, 0.0),
        lambda: AnalyticInputs(0.5, 2, -1.0),
    ],
)
def test_domain_errors(call):
    with pytest.raises(ValueError):
        call()


def test_closed_form_is_fixed_point_on_grid():
    for a, g in GRID:
        rho = rho_steady_state(a, g)
        assert abs(rho * a ** (g + 1) + (1 - rho) * a - rho) < 1e-12


def test_cesaro_average_matches_fixed_point():
    for a, g in [(0.3, 2), (0.8, 4), (0.95, 16)]:
        assert rho_time_average(a, g, 20000) == pytest.approx(rho_steady_state(a, g), abs=1e-3)


def test_async_rate_exceeds_one_on_grid():
    assert all(pipespec_rate(a, g) > 1.0 for a, g in GRID)


def test_ideal_dominates_sd():
    for a, g in GRID:
        for c in (0.5, 1, 4, 10, 100):
            assert pipespec_ideal(a, g) >= sd_speedup(a, g, c)


def test_monotone_in_alpha_and_gamma():
    alphas = [a for a, _ in GRID[::16]]
    for g in range(1, 17):
        rates = [pipespec_rate(a, g) for a in alphas]
        ideals = [pipespec_ideal(a, g) for a in alphas]
        assert rates == sorted(rates) and ideals == sorted(ideals)
    for a in alphas:
        rates = [pipespec_rate(a, g) for g in range(1, 17)]
        assert all(y >= x - 1e-15 for x, y in zip(rates, rates[1:]))


@given(st.floats(0.0, 1.0), st.integers(0, 64))
def test_report_invariants(alpha, gamma):
    r = analyze(AnalyticInputs(alpha, gamma, 3.0))
    assert 0.0 <= r.rho_steady <= 1.0
    assert r.expected_tokens >= 1.0 - 1e-12
    assert 1.0 - 1e-12 <= r.pipespec_ideal <= gamma + 1 + 1e-9
    assert r.pipespec_rate <= r.pipespec_ideal + 1e-12
    assert math.isfinite(r.sd_speedup)


def test_report_fields():
    r = analyze(AnalyticInputs(0.8, 4, 10.0))
    d = r.as_dict()
    assert set(d) == {
        "alpha",
        "gamma",
        "speed_ratio",
        "rho_steady",
        "expected_tokens",
        "pipespec_rate",
        "sd_speedup",
        "pipespec_ideal",
    }
    assert d["rho_steady"] == pytest.approx(RHO_08_4)
    assert d["expected_tokens"] == pytest.approx(EN_08_4)
