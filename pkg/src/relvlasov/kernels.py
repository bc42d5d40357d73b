"""Relativistic velocity map, Coulomb/Newton kernels and their mollified forms.

All kernels are radial, so the convolution with a radial mollifier of
radius ``R`` follows from the shell theorem: outside the support the
mollified kernel equals the singular one, inside it is determined by the
enclosed-mass fraction ``m(s)``, ``s = |x| / R``.

Vectors are numpy arrays with a trailing axis of length 3; every function
broadcasts over leading axes.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidInputError, SingularityError

FOUR_PI = 4.0 * np.pi


class MollifierShape(str, Enum):
    UNIFORM_BALL = "uniform_ball"
    WENDLAND_C2 = "wendland_c2"


@dataclass(frozen=True)
class MollifierSpec:
    """Radial mollifier eta^n(x) = n^3 eta(n x), support radius 1/n."""

    level: int
    shape: MollifierShape = MollifierShape.UNIFORM_BALL

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise InvalidInputError(f"mollifier level must be a positive integer, got {self.level}")
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "shape", MollifierShape(self.shape))

    @property
    def radius(self):
        return 1.0 / self.level

    def density(self, x):
        return mollifier_density(x, self.radius, self.shape)

    def to_dict(self):
        return {"level": self.level, "shape": self.shape.value}


# Wendland C2 profile (1 - s)^4 (1 + 4 s) on s < 1.  Everything the kernels
# need is a polynomial in s, built once here.
_W_PROFILE = Polynomial([1.0, -1.0]) ** 4 * Polynomial([1.0, 4.0])
_W_MASS = (Polynomial([0.0, 0.0, 1.0]) * _W_PROFILE).integ()  # int_0^s u^2 p(u) du
_W_TOTAL = _W_MASS(1.0)
_W_NORM = 1.0 / (FOUR_PI * _W_TOTAL)  # eta(r) = _W_NORM / R^3 * p(r / R)
_W_MASS_OVER_S3 = Polynomial(_W_MASS.coef[3:])
_W_MASS_OVER_S = Polynomial(_W_MASS.coef[1:])
_W_FIRST_MOMENT = (Polynomial([0.0, 1.0]) * _W_PROFILE).integ()  # int_0^s u p(u) du
_W_FIRST_TOTAL = _W_FIRST_MOMENT(1.0)

# Coefficient arrays (ascending powers) consumed by the compiled kernels.
WENDLAND_FORCE_COEF = _W_MASS_OVER_S3.coef / (FOUR_PI * _W_TOTAL)
WENDLAND_POT_COEF = (
    _W_MASS_OVER_S / (FOUR_PI * _W_TOTAL) + _W_NORM * (_W_FIRST_TOTAL - _W_FIRST_MOMENT)
).coef


def _as_vec(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (3,):
        raise InvalidInputError(f"{name} must have a trailing axis of length 3, got shape {x.shape}")
    return x


def norm(x):
    return np.sqrt(np.sum(np.asarray(x, dtype=float) ** 2, axis=-1))


def hat_velocity(v):
    """Physical velocity v / sqrt(1 + |v|^2); its norm is always below 1."""
    v = _as_vec(v, "v")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("velocity has non-finite components")
    return v / np.sqrt(1.0 + np.sum(v * v, axis=-1))[..., None]


def lorentz_factor(v):
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + np.sum(v * v, axis=-1))


def _check_nonzero(r):
    if np.any(r == 0.0):
        raise SingularityError("singular kernel evaluated at the origin")


def coulomb_kernel(x):
    """K(x) = x / (4 pi |x|^3)."""
    x = _as_vec(x)
    r = norm(x)
    _check_nonzero(r)
    return x / (FOUR_PI * r**3)[..., None]


def newton_potential(x):
    """H(x) = 1 / (4 pi |x|); note grad H = -K."""
    x = _as_vec(x)
    r = norm(x)
    _check_nonzero(r)
    return 1.0 / (FOUR_PI * r)


def mollifier_density(x, radius, shape=MollifierShape.UNIFORM_BALL):
    shape = MollifierShape(shape)
    s = norm(_as_vec(x)) / radius
    inside = s < 1.0
    if shape is MollifierShape.UNIFORM_BALL:
        val = np.full(s.shape, 3.0 / (FOUR_PI * radius**3))
    else:
        val = _W_NORM / radius**3 * _W_PROFILE(np.minimum(s, 1.0))
    return np.where(inside, val, 0.0)


def enclosed_mass_fraction(s, shape=MollifierShape.UNIFORM_BALL):
    """Fraction of mollifier mass inside radius ``s`` (in units of the support radius)."""
    shape = MollifierShape(shape)
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    if shape is MollifierShape.UNIFORM_BALL:
        return s**3
    return _W_MASS(s) / _W_TOTAL


def _force_factor_inside(s, radius, shape):
    # K_R(x) = x * factor for |x| < R
    if shape is MollifierShape.UNIFORM_BALL:
        return np.full(np.shape(s), 1.0 / (FOUR_PI * radius**3))
    return np.polynomial.polynomial.polyval(s, WENDLAND_FORCE_COEF) / radius**3


def _potential_inside(s, radius, shape):
    if shape is MollifierShape.UNIFORM_BALL:
        return (3.0 - s * s) / (2.0 * FOUR_PI * radius)
    return np.polynomial.polynomial.polyval(s, WENDLAND_POT_COEF) / radius


def mollified_kernel_radius(x, radius, shape=MollifierShape.UNIFORM_BALL):
    """K convolved with a radial mollifier of the given support radius."""
    shape = MollifierShape(shape)
    x = _as_vec(x)
    r = norm(x)
    outside = r >= radius
    safe = np.where(outside[..., None], x, 1.0)  # keep the singular branch away from r = 0
    far = safe / (FOUR_PI * norm(safe) ** 3)[..., None]
    near = x * _force_factor_inside(r / radius, radius, shape)[..., None]
    return np.where(outside[..., None], far, near)


def mollified_potential_radius(x, radius, shape=MollifierShape.UNIFORM_BALL):
    shape = MollifierShape(shape)
    x = _as_vec(x)
    r = norm(x)
    outside = r >= radius
    far = 1.0 / (FOUR_PI * np.where(outside, r, 1.0))
    near = _potential_inside(np.minimum(r / radius, 1.0), radius, shape)
    return np.where(outside, far, near)


def mollified_kernel(x, spec):
    """K^n = K * eta^n; defined everywhere, equal to K for |x| >= 1/n."""
    return mollified_kernel_radius(x, spec.radius, spec.shape)


def mollified_potential(x, spec):
    """H * eta^n; equal to H for |x| >= 1/n, maximal at the origin."""
    return mollified_potential_radius(x, spec.radius, spec.shape)


def kernel_params(spec):
    """(radius, shape code) for the compiled kernels; code 0 means singular."""
    if spec is None:
        return 0.0, 0
    return spec.radius, 1 if spec.shape is MollifierShape.UNIFORM_BALL else 2
