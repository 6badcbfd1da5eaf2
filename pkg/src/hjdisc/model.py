"""Contact Hamiltonians ``H(x, p, u) = lambda(x) u + h(x, p) - c`` on the circle.

The circle is the flat torus ``[0, 2*pi)``.  A :class:`ContactModel` bundles a
Tonelli Hamiltonian :class:`HamiltonianSpec`, a discount factor
:class:`DiscountSpec` and the constant ``c`` on the right-hand side of
``lambda(x) u + h(x, du) = c``.

All specs are frozen dataclasses.  Closed-form kinds evaluate analytically;
tabulated kinds interpolate periodic samples.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

TWO_PI = 2.0 * math.pi

#: Finite-difference step for derivatives of tabulated data.
FD_STEP = 1e-6


class SignClass(str, enum.Enum):
    PLUS = "Plus"
    MINUS = "Minus"
    PLUS_MINUS = "PlusMinus"
    ZERO = "IdenticallyZero"


def wrap(x):
    """Reduce angles to ``[0, 2*pi)``."""
    return np.mod(x, TWO_PI)


def _check_finite(*args):
    for a in args:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def _periodic_linear(samples: np.ndarray, x):
    """Periodic piecewise-linear interpolation of samples on a uniform grid."""
    n = samples.shape[0]
    s = wrap(np.asarray(x, dtype=float)) * (n / TWO_PI)
    j = np.floor(s).astype(np.intp)
    w = s - j
    j %= n
    return (1.0 - w) * samples[j] + w * samples[(j + 1) % n]


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

_POTENTIALS: dict[str, tuple[Callable, Callable]] = {
    "zero": (lambda x: np.zeros_like(x), lambda x: np.zeros_like(x)),
    "cos-1": (lambda x: np.cos(x) - 1.0, lambda x: -np.sin(x)),
    "1-cos": (lambda x: 1.0 - np.cos(x), lambda x: np.sin(x)),
    "cos": (np.cos, lambda x: -np.sin(x)),
    "-cos": (lambda x: -np.cos(x), np.sin),
}


@dataclass(frozen=True)
class Potential:
    """A potential ``V(x) = sum_k coef_k * V_k(x) + offset``.

    Terms are either expression ids from the built-in table or a
    :class:`DiscountSpec`, which lets ``h + a*lambda`` stay closed-form.
    """

    terms: tuple[tuple[float, object], ...] = ((1.0, "zero"),)
    offset: float = 0.0

    @classmethod
    def named(cls, name: str) -> "Potential":
        if name not in _POTENTIALS:
            raise ValueError(f"unknown potential {name!r}; known: {sorted(_POTENTIALS)}")
        return cls(terms=((1.0, name),))

    @property
    def label(self) -> str:
        parts = []
        for coef, term in self.terms:
            name = term if isinstance(term, str) else f"lambda[{term.label}]"
            parts.append(name if coef == 1.0 else f"{coef:g}*{name}")
        if self.offset:
            parts.append(f"{self.offset:g}")
        return " + ".join(parts)

    def plus(self, coef: float, term) -> "Potential":
        return replace(self, terms=self.terms + ((float(coef), term),))

    def shifted(self, k: float) -> "Potential":
        return replace(self, offset=self.offset + float(k))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.offset)
        for coef, term in self.terms:
            out = out + coef * (_POTENTIALS[term][0](x) if isinstance(term, str) else term(x))
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for coef, term in self.terms:
            d = _POTENTIALS[term][1](x) if isinstance(term, str) else term.derivative(x)
            out = out + coef * d
        return out


# ---------------------------------------------------------------------------
# discount factors
# ---------------------------------------------------------------------------


class DiscountKind(str, enum.Enum):
    CONSTANT = "constant"
    SINE = "sine"
    ONE_MINUS_COS_SQ = "one-minus-cos-squared"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class DiscountSpec:
    """Discount factor ``lambda(x) = scale * base(x)``.

    ``scale`` only matters for the non-constant kinds; it is how reflection
    negates a closed-form discount.
    """

    kind: DiscountKind
    value: float = 0.0
    scale: float = 1.0
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", DiscountKind(self.kind))
        if self.kind is DiscountKind.TABULATED:
            if self.samples is None:
                raise ValueError("tabulated discount needs samples")
            s = np.array(self.samples, dtype=float)
            if s.ndim != 1 or s.size < 8:
                raise ValueError("tabulated discount needs at least 8 periodic samples")
            _check_finite(s)
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    @classmethod
    def constant(cls, value: float) -> "DiscountSpec":
        return cls(DiscountKind.CONSTANT, value=float(value))

    @classmethod
    def sine(cls) -> "DiscountSpec":
        return cls(DiscountKind.SINE)

    @classmethod
    def one_minus_cos_squared(cls) -> "DiscountSpec":
        return cls(DiscountKind.ONE_MINUS_COS_SQ)

    @classmethod
    def tabulated(cls, samples) -> "DiscountSpec":
        return cls(DiscountKind.TABULATED, samples=samples)

    @property
    def label(self) -> str:
        if self.kind is DiscountKind.CONSTANT:
            return f"{self.value:g}"
        base = {"sine": "sin", "one-minus-cos-squared": "(1-cos)^2", "tabulated": "table"}[self.kind.value]
        return base if self.scale == 1.0 else f"{self.scale:g}*{base}"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k is DiscountKind.CONSTANT:
            return np.full_like(x, self.value)
        if k is DiscountKind.SINE:
            return self.scale * np.sin(x)
        if k is DiscountKind.ONE_MINUS_COS_SQ:
            return self.scale * (1.0 - np.cos(x)) ** 2
        return self.scale * _periodic_linear(self.samples, x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k is DiscountKind.CONSTANT:
            return np.zeros_like(x)
        if k is DiscountKind.SINE:
            return self.scale * np.cos(x)
        if k is DiscountKind.ONE_MINUS_COS_SQ:
            return self.scale * 2.0 * (1.0 - np.cos(x)) * np.sin(x)
        return (self(x + FD_STEP) - self(x - FD_STEP)) / (2 * FD_STEP)

    def negated(self) -> "DiscountSpec":
        if self.kind is DiscountKind.CONSTANT:
            return replace(self, value=-self.value)
        return replace(self, scale=-self.scale)

    def __eq__(self, other):
        if not isinstance(other, DiscountSpec):
            return NotImplemented
        same_samples = (self.samples is None and other.samples is None) or (
            self.samples is not None and other.samples is not None
            and np.array_equal(self.samples, other.samples)
        )
        return (self.kind, self.value, self.scale) == (other.kind, other.value, other.scale) and same_samples

    __hash__ = object.__hash__


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


class HamiltonianKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    MECHANICAL = "mechanical"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Tonelli Hamiltonian ``h(x, p)``.

    * ``quadratic``: ``h = p**2``
    * ``mechanical``: ``h = p**2 / 2 + V(x)``
    * ``tabulated``: samples on a periodic-in-x, uniform ``[-p_max, p_max]``
      lattice; linear in x, cubic spline in p.
    """

    kind: HamiltonianKind
    potential: Potential = field(default_factory=Potential)
    samples: np.ndarray | None = field(default=None, repr=False)
    p_max: float = 16.0
    p_flip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", HamiltonianKind(self.kind))
        if self.kind is HamiltonianKind.TABULATED:
            if self.samples is None:
                raise ValueError("tabulated Hamiltonian needs samples")
            s = np.array(self.samples, dtype=float)
            if s.ndim != 2 or s.shape[0] < 8 or s.shape[1] < 5:
                raise ValueError("tabulated Hamiltonian needs an (nx>=8, np>=5) lattice")
            _check_finite(s)
            if np.any(np.diff(s, 2, axis=1) <= 0):
                raise ValueError("tabulated Hamiltonian is not strictly convex in p")
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    @classmethod
    def quadratic(cls) -> "HamiltonianSpec":
        return cls(HamiltonianKind.QUADRATIC)

    @classmethod
    def mechanical(cls, potential: Potential | str) -> "HamiltonianSpec":
        if isinstance(potential, str):
            potential = Potential.named(potential)
        return cls(HamiltonianKind.MECHANICAL, potential=potential)

    @classmethod
    def tabulated(cls, samples, p_max: float = 16.0) -> "HamiltonianSpec":
        return cls(HamiltonianKind.TABULATED, samples=samples, p_max=float(p_max))

    @classmethod
    def tabulate(cls, fn: Callable, nx: int = 256, n_p: int = 513, p_max: float = 16.0) -> "HamiltonianSpec":
        """Sample ``fn(x, p)`` on the default lattice."""
        x = np.arange(nx) * (TWO_PI / nx)
        p = np.linspace(-p_max, p_max, n_p)
        return cls.tabulated(fn(x[:, None], p[None, :]), p_max)

    @property
    def label(self) -> str:
        if self.kind is HamiltonianKind.QUADRATIC:
            return "p^2"
        if self.kind is HamiltonianKind.MECHANICAL:
            return f"p^2/2 + ({self.potential.label})"
        return "table" + (" (reflected)" if self.p_flip else "")

    @cached_property
    def _p_nodes(self) -> np.ndarray:
        return np.linspace(-self.p_max, self.p_max, self.samples.shape[1])

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self._p_nodes, self.samples, axis=1)

    def _table(self, x, p):
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        if self.p_flip:
            p = -p
        if np.any(np.abs(p) > self.p_max):
            raise ValueError("momentum outside the tabulated range")
        nx = self.samples.shape[0]
        s = wrap(x) * (nx / TWO_PI)
        j = np.floor(s).astype(np.intp)
        w = s - j
        j %= nx
        flat_p = p.ravel()
        rows = self._spline(flat_p)  # (nx, len(flat_p))
        cols = np.arange(flat_p.size)
        jr, wr = j.ravel(), w.ravel()
        out = (1.0 - wr) * rows[jr, cols] + wr * rows[(jr + 1) % nx, cols]
        return out.reshape(x.shape)

    def __call__(self, x, p):
        k = self.kind
        if k is HamiltonianKind.QUADRATIC:
            return np.asarray(p, float) ** 2 + 0.0 * np.asarray(x, float)
        if k is HamiltonianKind.MECHANICAL:
            return 0.5 * np.asarray(p, float) ** 2 + self.potential(x)
        return self._table(x, p)

    def dp(self, x, p):
        k = self.kind
        if k is HamiltonianKind.QUADRATIC:
            return 2.0 * np.asarray(p, float) + 0.0 * np.asarray(x, float)
        if k is HamiltonianKind.MECHANICAL:
            return np.asarray(p, float) + 0.0 * np.asarray(x, float)
        return (self(x, np.asarray(p) + FD_STEP) - self(x, np.asarray(p) - FD_STEP)) / (2 * FD_STEP)

    def dx(self, x, p):
        k = self.kind
        if k is HamiltonianKind.QUADRATIC:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(p)).shape)
        if k is HamiltonianKind.MECHANICAL:
            return self.potential.derivative(x) + 0.0 * np.asarray(p, float)
        return (self(np.asarray(x) + FD_STEP, p) - self(np.asarray(x) - FD_STEP, p)) / (2 * FD_STEP)

    def lagrangian(self, x, v):
        """``l(x, v) = sup_p {p v - h(x, p)}``."""
        k = self.kind
        if k is HamiltonianKind.QUADRATIC:
            return 0.25 * np.asarray(v, float) ** 2 + 0.0 * np.asarray(x, float)
        if k is HamiltonianKind.MECHANICAL:
            return 0.5 * np.asarray(v, float) ** 2 - self.potential(x)
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        out = np.array([self._legendre_point(xi, vi) for xi, vi in zip(x.ravel(), v.ravel())])
        return out.reshape(x.shape)

    def _legendre_point(self, x: float, v: float) -> float:
        P = self.p_max
        res = minimize_scalar(
            lambda p: -(p * v - float(self._table(x, p))),
            bounds=(-P, P),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if abs(res.x) > P - 1e-6 * P:
            raise ValueError("momentum range too small")
        return -float(res.fun)

    def reflected(self) -> "HamiltonianSpec":
        """``h(x, -p)``; closed-form kinds are even in p."""
        if self.kind is HamiltonianKind.TABULATED:
            return replace(self, p_flip=not self.p_flip)
        return self

    def plus_potential(self, coef: float, term) -> "HamiltonianSpec":
        """``h + coef * term`` for a closed-form ``term``; mechanical kinds only."""
        if self.kind is not HamiltonianKind.MECHANICAL:
            raise ValueError("only mechanical Hamiltonians accept extra potential terms")
        return replace(self, potential=self.potential.plus(coef, term))

    def shifted(self, k: float) -> "HamiltonianSpec":
        if self.kind is not HamiltonianKind.MECHANICAL:
            raise ValueError("only mechanical Hamiltonians can be shifted")
        return replace(self, potential=self.potential.shifted(k))

    def lagrangian_coefficients(self, x):
        """Return ``(q2, q1, q0)`` with ``l(x, v) = q2 v^2 + q1(x) v + q0(x)``.

        Returns ``None`` for kinds whose Lagrangian is not quadratic in v.
        """
        x = np.asarray(x, float)
        if self.kind is HamiltonianKind.QUADRATIC:
            return 0.25, np.zeros_like(x), np.zeros_like(x)
        if self.kind is HamiltonianKind.MECHANICAL:
            return 0.5, np.zeros_like(x), -self.potential(x)
        return None

    def __eq__(self, other):
        if not isinstance(other, HamiltonianSpec):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.kind is HamiltonianKind.TABULATED:
            return (
                np.array_equal(self.samples, other.samples)
                and self.p_max == other.p_max
                and self.p_flip == other.p_flip
            )
        return self.potential == other.potential

    __hash__ = object.__hash__


# ---------------------------------------------------------------------------
# contact model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConstants:
    E0: float
    e0: float
    Lambda: float
    lambda_plus: float
    lambda_minus: float
    sign_class: SignClass

    def as_dict(self) -> dict:
        return {
            "E0": self.E0,
            "e0": self.e0,
            "Lambda": self.Lambda,
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
            "sign_class": self.sign_class.value,
        }


def classify_sign(lam_min: float, lam_max: float) -> SignClass:
    if lam_min < 0.0 < lam_max:
        return SignClass.PLUS_MINUS
    if lam_min >= 0.0 and lam_max > 0.0:
        return SignClass.PLUS
    if lam_max <= 0.0 and lam_min < 0.0:
        return SignClass.MINUS
    return SignClass.ZERO


@dataclass(frozen=True)
class ContactModel:
    h: HamiltonianSpec
    lam: DiscountSpec
    c: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise ValueError("c must be finite")

    @property
    def label(self) -> str:
        return self.name or f"h={self.h.label}, lambda={self.lam.label}"

    def with_c(self, c: float) -> "ContactModel":
        return replace(self, c=float(c))

    def hamiltonian(self, x, p, u):
        _check_finite(x, p, u)
        return self.lam(wrap(x)) * np.asarray(u, float) + self.h(wrap(x), p) - self.c

    def lagrangian(self, x, v):
        _check_finite(x, v)
        return self.h.lagrangian(wrap(x), v)

    def reflect(self) -> "ContactModel":
        return replace(self, h=self.h.reflected(), lam=self.lam.negated())

    def constants(self, n: int = 4096, n_p: int = 1025, p_max: float = 16.0) -> ModelConstants:
        return model_constants(self, n=n, n_p=n_p, p_max=p_max)

    def characteristic_field(self, x, p, u):
        """Right-hand side of the contact characteristic system."""
        lam = self.lam(x)
        hp = self.h.dp(x, p)
        hval = self.h(x, p)
        xdot = hp
        pdot = -self.lam.derivative(x) * u - self.h.dx(x, p) - lam * p
        udot = p * hp - hval - lam * u + self.c
        return xdot, pdot, udot


def eval_hamiltonian(model: ContactModel, x, p, u):
    return model.hamiltonian(x, p, u)


def eval_lagrangian(model: ContactModel, x, v):
    return model.lagrangian(x, v)


def model_constants(model: ContactModel, n: int = 4096, n_p: int = 1025, p_max: float = 16.0) -> ModelConstants:
    """Dense-sampling estimates of ``E0, e0, Lambda, lambda_+, lambda_-``."""
    if n < 4096:
        raise ValueError("constants need at least 4096 x samples")
    x = np.arange(n) * (TWO_PI / n)
    lam = model.lam(x)
    lam_plus, lam_minus = float(lam.max()), float(lam.min())
    E0 = float(np.max(model.h(x, np.zeros_like(x))))
    if model.h.kind is HamiltonianKind.MECHANICAL:
        e0 = float(model.h.potential(x).min())
    elif model.h.kind is HamiltonianKind.QUADRATIC:
        e0 = 0.0
    else:
        p_max = min(p_max, model.h.p_max)
        xs = x[:: max(1, n // model.h.samples.shape[0])]
        p = np.linspace(-p_max, p_max, n_p)
        e0 = float(model.h(xs[:, None], p[None, :]).min())
    return ModelConstants(
        E0=E0,
        e0=e0,
        Lambda=max(abs(lam_plus), abs(lam_minus)),
        lambda_plus=lam_plus,
        lambda_minus=lam_minus,
        sign_class=classify_sign(lam_minus, lam_plus),
    )


def reflect(model: ContactModel) -> ContactModel:
    return model.reflect()
