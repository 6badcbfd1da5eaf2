import json
import math

import numpy as np
import pytest

from hjdisc.critical import (
    BracketError,
    CriticalMethod,
    CriticalReport,
    Probe,
    _check_monotone,
    bisect_critical,
    mane_fit,
    mane_value,
    nonneg_critical,
    zero_clusters,
)
from hjdisc.grid import PeriodicGrid
from hjdisc.model import ContactModel, DiscountSpec, HamiltonianSpec
from hjdisc.scenarios import get_scenario
from hjdisc.semigroup import LongTime

G128 = PeriodicGrid(128)
G512 = PeriodicGrid(512)


def appendix_c(c=0.0):
    return get_scenario("appendix-c").model(c)


@pytest.fixture(scope="module")
def appendix_c_bisection():
    return bisect_critical(get_scenario("appendix-c").model, (-1.0, 1.0), 0.02, grid=G128)


@pytest.fixture(scope="module")
def appendix_c_nonneg():
    return nonneg_critical(appendix_c(), grid=G512)


# bisection


@pytest.mark.parametrize("name", ["quadratic-sine", "pendulum-sine"])
def test_bisection_sign_changing_discount(name):
    rep = bisect_critical(get_scenario(name).model, (-1.0, 1.0), 0.02, grid=G128)
    assert rep.method is CriticalMethod.BISECTION
    assert abs(rep.c0) <= 0.02
    lo, hi = rep.bracket
    assert hi - lo <= 0.02 and lo <= rep.c0 <= hi


def test_bisection_squared_discount(appendix_c_bisection):
    assert abs(appendix_c_bisection.c0) <= 0.02


def test_probes_are_monotone_in_c(appendix_c_bisection):
    decided = sorted((p for p in appendix_c_bisection.probes if p.kind is not LongTime.UNDETERMINED),
                     key=lambda p: p.c)
    kinds = [p.kind for p in decided]
    first = kinds.index(LongTime.CONVERGED)
    assert all(k is LongTime.DIVERGED_DOWN for k in kinds[:first])
    assert all(k is LongTime.CONVERGED for k in kinds[first:])


def test_report_json_round_trip(appendix_c_bisection, tmp_path):
    path = tmp_path / "critical.json"
    text = appendix_c_bisection.to_json(path)
    data = json.loads(path.read_text())
    assert text == path.read_text()
    assert set(data) == {"c0", "method", "bracket", "probes", "cross_check"}
    assert data["c0"] == appendix_c_bisection.c0
    assert all(set(p) >= {"c", "class"} for p in data["probes"])


def test_bracket_must_straddle():
    with pytest.raises(BracketError):
        bisect_critical(appendix_c, (0.5, 1.0), 0.02, grid=G128)


@pytest.mark.parametrize("bracket, tol", [((1.0, -1.0), 0.02), ((-1.0, 1.0), 0.0)])
def test_bisection_argument_checks(bracket, tol):
    with pytest.raises(ValueError):
        bisect_critical(appendix_c, bracket, tol, grid=G128)


def test_monotone_check_rejects_inverted_probes():
    probes = [Probe(0.0, LongTime.CONVERGED, 1.0), Probe(0.5, LongTime.DIVERGED_DOWN, 1.0)]
    with pytest.raises(RuntimeError, match="not monotone"):
        _check_monotone(probes)
    _check_monotone(probes[::-1][:1] + [Probe(-1.0, LongTime.DIVERGED_DOWN, 1.0)])


# Mane critical value


def test_mane_value_mechanical_is_max_potential():
    h = HamiltonianSpec.mechanical("cos-1")
    assert abs(mane_value(h)) < 0.02
    # same value at a coarser resolution
    assert abs(mane_value(h, grid=G128) - mane_value(h)) < 0.02


@pytest.mark.parametrize("a, expected", [(0.0, 2.0), (-1.0, 0.25)])
def test_mane_value_squared_family(a, expected):
    h = appendix_c().h
    if a:
        h = h.plus_potential(a, appendix_c().lam)
    assert abs(mane_value(h) - expected) < 0.02


@pytest.mark.parametrize("k", [-1.0, 0.7])
def test_mane_value_shifts_with_constant(k):
    h = HamiltonianSpec.mechanical("1-cos")
    assert mane_value(h.shifted(k)) == pytest.approx(mane_value(h) + k, abs=0.02)


def test_mane_fit_reports_residual():
    fit = mane_fit(HamiltonianSpec.mechanical("cos-1"))
    assert fit.horizon == 100.0 and fit.fit_residual < 1e-3


# non-negative discount


def test_nonneg_squared_discount(appendix_c_nonneg):
    rep = appendix_c_nonneg
    assert rep.method is CriticalMethod.NONNEG_FORMULA
    assert abs(rep.c0) <= 0.05
    assert abs(rep.cross_check["limit"] - rep.c0) <= 0.05
    assert rep.cross_check["zero_set"] == [0.0]


def test_nonneg_without_zeros_is_minus_infinity():
    m = ContactModel(HamiltonianSpec.mechanical("cos-1"), DiscountSpec.constant(1.0), 0.0)
    rep = nonneg_critical(m)
    assert rep.c0 == -math.inf
    assert json.loads(rep.to_json())["c0"] == "-inf"


def test_nonneg_zero_at_pi_gives_potential_value():
    x = G512.nodes
    lam = DiscountSpec.tabulated((1 + np.cos(x)) ** 2)
    m = ContactModel(HamiltonianSpec.mechanical("cos-1"), lam, 0.0)
    rep = nonneg_critical(m, grid=G512, zero_tol=1e-9)
    assert rep.c0 == pytest.approx(-2.0, abs=1e-12)
    assert abs(rep.cross_check["limit"] + 2.0) <= 0.05


def test_nonneg_requires_nonnegative_discount():
    with pytest.raises(ValueError, match="lambda >= 0"):
        nonneg_critical(get_scenario("pendulum-sine").model(0.0))


def test_bisection_and_formula_agree(appendix_c_bisection, appendix_c_nonneg):
    assert abs(appendix_c_bisection.c0 - appendix_c_nonneg.c0) <= 0.05


@pytest.mark.parametrize("tol, n_clusters", [(1e-8, 1), (0.5, 1), (5.0, 1)])
def test_zero_clusters_wrap_around(tol, n_clusters):
    clusters = zero_clusters(DiscountSpec.one_minus_cos_squared(), G128, tol)
    assert len(clusters) == n_clusters
    assert 0 in clusters[0]


def test_zero_clusters_of_sine():
    clusters = zero_clusters(DiscountSpec.sine(), G128, 1e-8)
    assert sorted(int(c[0]) for c in clusters) == [0, 64]


def test_report_infinite_values_serialize():
    rep = CriticalReport(math.inf, CriticalMethod.MANE_LIMIT)
    assert json.loads(rep.to_json())["c0"] == "inf"
