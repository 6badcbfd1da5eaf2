"""One test per acceptance criterion at reference resolution (n = 512, dt = 2e-3, v_max = 12)."""

import math

import numpy as np
import pytest

from hjdisc.characteristics import (
    ContactState,
    estimate_mather_average,
    find_fixed_point,
    graph_jets,
    lyapunov_lower_bound,
    lyapunov_margin,
)
from hjdisc.critical import bisect_critical, nonneg_critical
from hjdisc.grid import GridFn, interpolate, sup_distance
from hjdisc.model import model_constants
from hjdisc.rates import fit_rate
from hjdisc.scenarios import get_scenario
from hjdisc.semigroup import Direction, LongTime, classify_longtime, evolve, initial_upper_constant
from hjdisc.verify import check_composition, check_markov, check_monotone, check_subsolution_monotone

from conftest import ACCEPTANCE, CFG, GRID, SQRT3, random_walk


def record(k, checks):
    """``checks`` is a list of (label, ok, value text); the criterion passes when all do."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{label} {text}{'' if good else ' [fail]'}" for label, good, text in checks)
    ACCEPTANCE[k] = (ok, detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def family(name):
    return get_scenario(name).model


def test_criterion_1_critical_values():
    checks = []
    for name in ("quadratic-sine", "pendulum-sine", "appendix-c"):
        c0 = bisect_critical(family(name), (-1.0, 1.0), 0.02, CFG, GRID).c0
        checks.append((f"{name} c0", abs(c0) <= 0.02, f"{c0:.4f}"))
    c0 = nonneg_critical(get_scenario("appendix-c").model(0.0), CFG, GRID).c0
    checks.append(("appendix-c nonneg c0", abs(c0) <= 0.05, f"{c0:.4f}"))
    record(1, checks)


def test_criterion_2_stationary_solutions(pendulum, pendulum_u_minus, quadratic_u_minus):
    u = float(interpolate(pendulum_u_minus.u, math.pi / 3))
    fp = find_fixed_point(pendulum, ContactState(1.0, 0.0, 1.5))
    d = fp.distance(ContactState(math.pi / 3, 0.0, SQRT3))
    q = float(interpolate(quadratic_u_minus.u, math.pi / 2))
    record(2, [
        ("pendulum u(pi/3)", abs(u - SQRT3) <= 5e-2, f"{u:.4f}"),
        ("pendulum fixed point error", d <= 1e-8, f"{d:.1e}"),
        ("quadratic u(pi/2)", abs(q - 1.0) <= 5e-2, f"{q:.4f}"),
    ])


def test_criterion_3_rates(pendulum_rates, quadratic_rates):
    p = pendulum_rates.rows[0]
    checks = [
        ("pendulum R_hat", abs(p.R_hat - SQRT3 / 2) <= 0.1 * SQRT3 / 2, f"{p.R_hat:.4f}"),
        ("pendulum a_hat", abs(p.a_hat - SQRT3 / 2) <= 0.02, f"{p.a_hat:.4f}"),
    ]
    for r in quadratic_rates.rows:
        checks.append((f"quadratic c={r.c:g} a_hat", abs(r.a_hat - 1.0) <= 0.01, f"{r.a_hat:.4f}"))
    for r in [p, *quadratic_rates.rows]:
        bound = 0.1 * r.a_hat + 0.02
        checks.append((f"gap c={r.c:g}", r.gap <= bound, f"{r.gap:.4f}<={bound:.3f}"))
    record(3, checks)


def test_criterion_4_asymptote(pendulum_rates):
    a = [r.a_hat for r in pendulum_rates.rows]
    lam_plus = pendulum_rates.rows[-1].lambda_plus
    record(4, [
        ("a_hat nondecreasing", all(y >= x for x, y in zip(a, a[1:])), ", ".join(f"{v:.4f}" for v in a)),
        ("last a_hat", a[-1] >= 0.99, f"{a[-1]:.5f}"),
        ("lambda_+", abs(lam_plus - 1.0) <= 1e-6, f"{lam_plus:.6f}"),
    ])


def test_criterion_5_divergence(pendulum, pendulum_u_minus, pendulum_v_plus):
    m = get_scenario("appendix-c").model(-0.05)
    cfg = CFG.replace(tol=1e-4, t_max=2000)
    data = {
        "upper constant": GridFn.constant(GRID, initial_upper_constant(m)),
        "zero": GridFn.constant(GRID, 0.0),
        "random walk": GridFn(GRID, random_walk(np.random.default_rng(5), GRID.n, 0.1)),
    }
    checks = []
    for label, phi in data.items():
        kind = classify_longtime(m, phi, cfg).kind
        checks.append((f"appendix-c c=-0.05 from {label}", kind is LongTime.DIVERGED_DOWN, kind.value))
    below = classify_longtime(pendulum, pendulum_v_plus.u - 0.2, CFG).kind
    checks.append(("pendulum v_+ - 0.2", below is LongTime.DIVERGED_DOWN, below.value))
    above = classify_longtime(pendulum, pendulum_u_minus.u + 0.2, CFG)
    d = sup_distance(above.solution.u, pendulum_u_minus.u) if above.kind is LongTime.CONVERGED else math.inf
    checks.append(("pendulum u_- + 0.2", above.kind is LongTime.CONVERGED and d < 1e-5,
                   f"{above.kind.value}, |limit - u_-| {d:.1e}"))
    record(5, checks)


def test_criterion_6_semigroup_properties(pendulum):
    rng = np.random.default_rng(0)
    mono = check_monotone(pendulum, CFG, GRID, rng)
    Lam = model_constants(pendulum).Lambda
    worst = -math.inf
    for _ in range(3):
        # slopes stay well inside the velocity window
        phi = GridFn(GRID, random_walk(rng, GRID.n, 0.02))
        psi = GridFn(GRID, random_walk(rng, GRID.n, 0.02))
        d0 = sup_distance(phi, psi)
        a, b = phi, psi
        for k in range(12):
            a, _ = evolve(pendulum, a, 0.25, Direction.BACKWARD, CFG)
            b, _ = evolve(pendulum, b, 0.25, Direction.BACKWARD, CFG)
            t = 0.25 * (k + 1)
            worst = max(worst, sup_distance(a, b) - (math.exp(Lam * t) * d0 + 5 * CFG.dt))
    comp = check_composition(pendulum, CFG, GRID, rng)
    markov = check_markov(pendulum, CFG, GRID, rng)
    sub = check_subsolution_monotone(pendulum.with_c(0.0), CFG, GRID, rng)
    record(6, [
        ("monotone max(T phi - T psi)", mono.passed, f"{mono.value:.1e}"),
        ("contraction excess over t in (0, 3]", worst <= 0.0, f"{worst:.2e}"),
        ("composition", comp.passed, f"{comp.value:.1e}<={comp.bound:.1e}"),
        ("Markov", markov.passed, f"{markov.value:.3f}<={markov.bound:.3f}"),
        ("T_t 0 >= 0 at c=0", sub.passed is True, f"max decrease {sub.value:.1e}"),
    ])


def test_criterion_7_homogeneous_exactness():
    m = get_scenario("homogeneous").model(3.0)
    zero, three = GridFn.constant(GRID, 0.0), GridFn.constant(GRID, 3.0)
    checks = []
    for t in (0.5, 1.0, 2.0):
        u, _ = evolve(m, zero, t, Direction.BACKWARD, CFG)
        err = abs(sup_distance(u, three) - 3.0 * math.exp(-t))
        checks.append((f"t={t:g}", err <= 5 * CFG.dt, f"{err:.1e}"))
    _, tr = evolve(m, zero, 10.0, Direction.BACKWARD, CFG, three)
    R = fit_rate(tr).R_hat
    checks.append(("R_hat", abs(R - 1.0) <= 1e-3, f"{R:.6f}"))
    record(7, checks)


def test_criterion_8_critical_mather(quadratic0_u_minus, pendulum0_u_minus):
    q = get_scenario("quadratic-sine").model(0.0)
    est = estimate_mather_average(q, quadratic0_u_minus)
    on_arc = [f.state for f in est.fixed_points
              if abs(f.state.p) < 1e-6 and abs(f.state.u) < 1e-6 and -0.05 <= f.state.x <= math.pi + 0.05]
    p = get_scenario("pendulum-sine").model(0.0)
    pest = estimate_mather_average(p, pendulum0_u_minus)
    origin = ContactState(0.0, 0.0, 0.0)
    d = min((f.state.distance(origin) for f in pest.fixed_points), default=math.inf)
    record(8, [
        ("quadratic a_hat", abs(est.a_hat) <= 0.02, f"{est.a_hat:.4f}"),
        ("quadratic fixed point on [0, pi]", bool(on_arc), f"x0 = {on_arc[0].x:.3f}" if on_arc else "none"),
        ("pendulum fixed point near origin", d <= 1e-6, f"{d:.1e}"),
    ])


def test_criterion_9_lyapunov_margin(pendulum, quadratic, pendulum_u_minus, quadratic_u_minus):
    psi = GridFn.constant(GRID, 0.0)
    checks = []
    for name, m, sol in (("pendulum", pendulum, pendulum_u_minus), ("quadratic", quadratic, quadratic_u_minus)):
        jets = graph_jets(sol.u, stride=4)
        margin = lyapunov_margin(m, psi, jets)
        bound = lyapunov_lower_bound(m, psi, jets)
        checks.append((f"{name} margin", margin >= 0.2 and margin >= bound, f"{margin:.4f} (bound {bound:.4f})"))
    record(9, checks)
