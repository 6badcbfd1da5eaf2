import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjdisc.grid import GridFn
from hjdisc.rates import (
    DIST_FLOOR,
    RateReport,
    RateRow,
    SaturatedWindow,
    fit_rate,
    rate_horizon,
    rate_report,
)
from hjdisc.scenarios import get_scenario
from hjdisc.semigroup import Direction, EvolutionTrace, evolve

from hjdisc.grid import PeriodicGrid

from conftest import CFG, GRID, SQRT3

G128 = PeriodicGrid(128)


def planted(rate, t_end=None, n=1001, scale=1.0):
    t = np.linspace(0.0, t_end or 10.0 / rate, n)
    nan = np.full(n, np.nan)
    return EvolutionTrace(t, scale * np.exp(-rate * t), nan, nan, nan)


# fit_rate


def test_planted_half_rate_is_exact():
    fit = fit_rate(planted(0.5))
    assert fit.R_hat == pytest.approx(0.5, abs=1e-12)
    assert fit.fit_residual < 1e-12
    assert fit.n_points >= 10


@given(rate=st.floats(0.05, 5.0), scale=st.floats(1e-3, 1e3))
def test_planted_rate_recovered(rate, scale):
    fit = fit_rate(planted(rate, scale=scale))
    assert fit.R_hat == pytest.approx(rate, rel=1e-10)


@pytest.mark.parametrize("fraction", [0.25, 0.5, 1.0])
def test_window_is_the_tail_of_the_trace(fraction):
    tr = planted(1.0)
    fit = fit_rate(tr, fraction)
    assert fit.window[1] == tr.times[-1]
    assert fit.window[0] >= tr.times[-1] - fraction * tr.times[-1] - 1e-12


def test_saturated_window_is_rejected():
    with pytest.raises(SaturatedWindow, match="shorten horizon"):
        fit_rate(planted(1.0, t_end=40.0))


def test_floor_is_the_documented_value():
    assert DIST_FLOOR == 1e-12


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_nonfinite_distances_rejected(bad):
    tr = planted(1.0)
    d = tr.dist_to_ref.copy()
    d[-1] = bad
    with pytest.raises(ValueError, match="non-finite"):
        fit_rate(EvolutionTrace(tr.times, d, tr.min_val, tr.max_val, tr.change_rate))


@pytest.mark.parametrize("fraction", [0.0, 1.5])
def test_window_fraction_range(fraction):
    with pytest.raises(ValueError):
        fit_rate(planted(1.0), fraction)


def test_short_window_rejected():
    with pytest.raises(ValueError, match="at least 10"):
        fit_rate(planted(1.0, n=12))


def test_homogeneous_rate_is_one():
    m = get_scenario("homogeneous").model(3.0)
    _, tr = evolve(m, GridFn.constant(GRID, 0.0), 10.0, Direction.BACKWARD, CFG, GridFn.constant(GRID, 3.0))
    assert fit_rate(tr).R_hat == pytest.approx(1.0, abs=1e-3)


# horizon


@pytest.mark.parametrize("a, dt", [(0.866, 2e-3), (1.0, 2e-3), (0.3, 1e-3), (0.01, 2e-3)])
def test_horizon_is_whole_steps(a, dt):
    t = rate_horizon(a, 0.3, dt)
    steps = t / dt
    assert steps == pytest.approx(round(steps), abs=1e-9)
    assert t >= min(200.0, math.log(0.3 / 1e-6) / max(a, 0.05)) - 1e-12


def test_horizon_is_capped():
    assert rate_horizon(1e-6, 0.3, 2e-3) <= 200.0 + 2e-3


# rate_report


def test_pendulum_rate_at_one(pendulum_rates):
    row = pendulum_rates.rows[0]
    assert row.c == 1.0
    assert row.R_hat == pytest.approx(SQRT3 / 2, rel=0.1)
    assert row.a_hat == pytest.approx(SQRT3 / 2, abs=0.02)


@pytest.mark.parametrize("i, c", list(enumerate([1.0, 3.0, 10.0, 100.0])))
def test_pendulum_average_closed_form(pendulum_rates, i, c):
    assert pendulum_rates.rows[i].a_hat == pytest.approx(math.sqrt(c * (c + 2)) / (c + 1), abs=0.02)


def test_quadratic_average_is_one(quadratic_rates):
    for row in quadratic_rates.rows:
        assert row.a_hat == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("which", ["pendulum_rates", "quadratic_rates"])
def test_rate_equals_average(request, which):
    rep = request.getfixturevalue(which)
    for row in rep.rows:
        assert row.ok, row.flags
        assert row.gap <= 0.1 * row.a_hat + 0.02
    assert rep.flags["monotone_nondecreasing_R"] and rep.flags["monotone_nondecreasing_a"]
    assert rep.flags["approaching_lambda_plus"] and rep.flags["all_rows_ok"]


def test_rate_does_not_depend_on_offset(pendulum_rates):
    other = rate_report(get_scenario("pendulum-sine").model, [1.0], CFG, delta=0.1, grid=GRID)
    a, b = pendulum_rates.rows[0].R_hat, other.rows[0].R_hat
    assert abs(a - b) <= 0.1 * max(a, b)


def test_report_csv_and_json(pendulum_rates, tmp_path):
    text = pendulum_rates.to_csv(tmp_path / "rates.csv")
    assert (tmp_path / "rates.csv").read_text() == text
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["c", "a_hat", "R_hat", "gap", "lambda_plus", "flags"]
    assert [float(r["c"]) for r in rows] == [1.0, 3.0, 10.0, 100.0]
    assert float(rows[0]["R_hat"]) == pendulum_rates.rows[0].R_hat
    data = json.loads(pendulum_rates.to_json(tmp_path / "rates.json"))
    assert data["delta"] == 0.3
    assert {"fit_residual", "window", "horizon", "flags"} <= set(data["rows"][0])
    assert data["flags"] == pendulum_rates.flags


def test_failed_rows_are_reported_not_raised():
    # appendix-c at c = -0.5 lies below the critical value: no stationary solution
    rep = rate_report(get_scenario("appendix-c").model, [-0.5], CFG.replace(t_max=20.0), grid=G128)
    assert not rep.rows[0].ok
    assert rep.rows[0].flags[0].startswith("failed")
    assert not rep.flags["all_rows_ok"]
    assert "failed" in rep.to_csv()


def test_empty_report_serializes():
    rep = RateReport([RateRow(1.0)], {}, 0.3)
    data = json.loads(rep.to_json())
    assert data["rows"][0]["R_hat"] is None


def test_divergence_check_grows(pendulum):
    rep = rate_report(get_scenario("pendulum-sine").model, [1.0], CFG, grid=GRID, divergence_check=True)
    row = rep.rows[0]
    assert row.divergence_growth is not None and row.divergence_growth >= 0
    assert "divergence_not_growing" not in row.flags
