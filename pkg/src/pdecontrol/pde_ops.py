"""Differential operators for semilinear evolution equations and the
closed-form error bounds used for verification.

Operators have the shape F[u] = div(A grad u) + b . grad u + f(u) with
constant coefficients; each concrete form declares the Lipschitz/ellipticity
metadata consumed by the bound evaluators (never by the dynamics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingDerivative
from .rom import EvalBundle


@dataclass(frozen=True)
class Transport:
    """F[u] = -velocity . grad u (constant advection)."""

    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64))

    lipschitz_f: float = 0.0
    ellipticity: float = 0.0
    div_b_bound: float = 0.0

    @property
    def tag(self) -> str:
        comps = ",".join(repr(float(v)) for v in self.velocity)
        return f"transport[v=({comps})]"


@dataclass(frozen=True)
class Heat:
    """F[u] = laplacian(u)."""

    lipschitz_f: float = 0.0
    ellipticity: float = 1.0
    div_b_bound: float = 0.0

    @property
    def tag(self) -> str:
        return "heat"


# Local Lipschitz constant of 1.5(u - u^3) on |u| <= 1.5; reporting only.
_AC_UMAX = 1.5


@dataclass(frozen=True)
class AllenCahn:
    """F[u] = epsilon * laplacian(u) + 1.5 (u - u^3)."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def lipschitz_f(self) -> float:
        return 1.5 * (3.0 * _AC_UMAX**2 - 1.0)

    @property
    def ellipticity(self) -> float:
        return self.epsilon

    div_b_bound: float = 0.0

    @property
    def tag(self) -> str:
        return f"allen_cahn[eps={self.epsilon!r}]"


@dataclass(frozen=True)
class Semilinear:
    """Generic constant-coefficient form a*laplacian(u) + drift . grad u + f(u).

    The diffusion tensor is restricted to scalar multiples of the identity so
    the operator is computable from the Laplacian alone.
    """

    diffusion: float
    drift: np.ndarray
    nonlinearity: str  # "zero" | "identity" | "allen_cahn"

    def __post_init__(self):
        object.__setattr__(self, "drift", np.asarray(self.drift, dtype=np.float64))
        if self.nonlinearity not in ("zero", "identity", "allen_cahn"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.diffusion < 0:
            raise ValueError("diffusion must be nonnegative")

    @property
    def lipschitz_f(self) -> float:
        return {"zero": 0.0, "identity": 1.0, "allen_cahn": 1.5 * (3.0 * _AC_UMAX**2 - 1.0)}[
            self.nonlinearity
        ]

    @property
    def ellipticity(self) -> float:
        return self.diffusion

    div_b_bound: float = 0.0

    @property
    def tag(self) -> str:
        comps = ",".join(repr(float(v)) for v in self.drift)
        return f"semilinear[a={self.diffusion!r},b=({comps}),f={self.nonlinearity}]"


PdeOperator = Transport | Heat | AllenCahn | Semilinear


def _nonlin(tag: str, u):
    if tag == "zero":
        return 0.0 * u
    if tag == "identity":
        return u
    return 1.5 * (u - u**3)


def required_flags(op: PdeOperator) -> dict:
    """Minimal EvalBundle fields the operator consumes."""
    if isinstance(op, Transport):
        return {"value": False, "grad_x": True, "laplacian": False}
    if isinstance(op, Heat):
        return {"value": False, "grad_x": False, "laplacian": True}
    if isinstance(op, AllenCahn):
        return {"value": True, "grad_x": False, "laplacian": True}
    need_grad = bool(np.any(op.drift != 0.0))
    return {"value": op.nonlinearity != "zero", "grad_x": need_grad, "laplacian": op.diffusion != 0.0}


def apply_operator(op: PdeOperator, bundle: EvalBundle) -> float:
    """F[u_theta](x) from a single-point evaluation bundle."""
    need = required_flags(op)
    if need["value"] and not bundle.flags.value:
        raise MissingDerivative(f"{op.tag} needs the value")
    if need["grad_x"] and not bundle.flags.grad_x:
        raise MissingDerivative(f"{op.tag} needs grad_x")
    if need["laplacian"] and not bundle.flags.laplacian:
        raise MissingDerivative(f"{op.tag} needs the laplacian")
    out = apply_operator_arrays(
        op,
        np.atleast_1d(np.float64(bundle.value)),
        np.atleast_2d(bundle.grad_x),
        np.atleast_1d(np.float64(bundle.laplacian)),
    )
    return float(out[0])


def apply_operator_arrays(op: PdeOperator, value, grad_x, laplacian) -> np.ndarray:
    """Vectorized F[u] over a batch; used by the assembly fast path."""
    if isinstance(op, Transport):
        return -(grad_x @ op.velocity)
    if isinstance(op, Heat):
        return np.asarray(laplacian, dtype=np.float64)
    if isinstance(op, AllenCahn):
        return op.epsilon * laplacian + 1.5 * (value - value**3)
    out = op.diffusion * laplacian + _nonlin(op.nonlinearity, value)
    if np.any(op.drift != 0.0):
        out = out + grad_x @ op.drift
    return out


@dataclass(frozen=True)
class Problem:
    """An operator on an axis-aligned box with a horizon and boundary type."""

    operator: PdeOperator
    lo: np.ndarray
    hi: np.ndarray
    horizon: float
    boundary: str  # "zero_dirichlet" | "periodic"

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo/hi must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("domain requires lo < hi per coordinate")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.boundary not in ("zero_dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def domain(self):
        return (self.lo, self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


def theory_bound(op: PdeOperator, c_poincare: float, eps0: float, eps: float, t: float) -> float:
    """Gronwall envelope e^{(L_f + B/2 - lambda/C_p) t} (eps0 + eps*t)."""
    if c_poincare <= 0:
        raise ValueError("c_poincare must be positive")
    if eps0 < 0 or eps < 0 or t < 0:
        raise ValueError("eps0, eps, t must be nonnegative")
    rate = op.lipschitz_f + 0.5 * op.div_b_bound - op.ellipticity / c_poincare
    return math.exp(rate * t) * (eps0 + eps * t)


def euler_bound(l_v: float, m_v: float, vol_omega: float, h: float, t: float) -> float:
    """Euler time-discretization contribution (L_V M_V |Omega| h / 2)(e^{L_V t} - 1)."""
    if min(l_v, m_v, vol_omega, h, t) < 0:
        raise ValueError("all arguments must be nonnegative")
    return 0.5 * l_v * m_v * vol_omega * h * math.expm1(l_v * t)


# Reporting convention for the unit-scale boxes used in the experiments.
POINCARE_UNIT_BOX = 1.0 / math.pi
