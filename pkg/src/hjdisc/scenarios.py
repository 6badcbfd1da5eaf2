"""Built-in worked examples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .model import ContactModel, DiscountSpec, HamiltonianSpec


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    build: Callable[[float], ContactModel]

    def model(self, c: float = 0.0) -> ContactModel:
        return self.build(float(c))


def _quadratic_sine(c):
    return ContactModel(HamiltonianSpec.quadratic(), DiscountSpec.sine(), c, "quadratic-sine")


def _pendulum_sine(c):
    return ContactModel(HamiltonianSpec.mechanical("cos-1"), DiscountSpec.sine(), c, "pendulum-sine")


def _appendix_c(c):
    return ContactModel(HamiltonianSpec.mechanical("1-cos"), DiscountSpec.one_minus_cos_squared(), c, "appendix-c")


def _homogeneous(c):
    return ContactModel(HamiltonianSpec.mechanical("zero"), DiscountSpec.constant(1.0), c, "homogeneous")


SCENARIOS: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario("quadratic-sine", "h = |p|^2, lambda = sin x", _quadratic_sine),
        Scenario("pendulum-sine", "h = p^2/2 + cos x - 1, lambda = sin x", _pendulum_sine),
        Scenario("appendix-c", "h = p^2/2 + 1 - cos x, lambda = (1 - cos x)^2", _appendix_c),
        Scenario("homogeneous", "h = p^2/2, lambda = 1", _homogeneous),
    )
}


def list_scenarios() -> list[dict]:
    return [{"name": s.name, "description": s.description} for s in SCENARIOS.values()]


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
