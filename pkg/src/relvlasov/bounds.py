"""Functional inequalities used to control the potential energy.

Interpolation bound
-------------------
For q >= 1 and any R > 0 the local density satisfies

    rho(x) <= c_q R^a ||f(x, .)||_q + R^-1 int |v| f(x, v) dv,

with a = 3(q-1)/q and c_q = |B_1|^((q-1)/q) (Hoelder on the ball |v| < R,
plain Chebyshev outside).  Minimising A R^a + B / R over R gives

    (1 + a) a^(-a/(1+a)) A^(1/(1+a)) B^(a/(1+a)),

and Hoelder in x with p = (4q-3)/(3q-2), theta = 3(q-1)/(4q-3) turns the
pointwise bound into

    ||rho||_p <= C(q) ||sqrt(1+|v|^2) f||_1^theta ||f||_q^(1-theta),
    C(q) = (1 + a) a^(-theta) c_q^(q/(4q-3)).

At q = 1 the bound is ||rho||_1 = ||f||_1, i.e. C = 1.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .fields import convolve_potential
from .phase_space import DepositGrid, PhaseGrid, grid_lp

BALL_VOLUME = 4.0 * math.pi / 3.0


def interpolation_exponents(q):
    """(p, theta) for the interpolation bound at exponent q >= 1."""
    if not q >= 1:
        raise InvalidInputError(f"interpolation exponent q must be >= 1, got {q}")
    p = (4 * q - 3) / (3 * q - 2)
    theta = 3 * (q - 1) / (4 * q - 3)
    return p, theta


def interpolation_constant(q):
    """C(q) from the optimisation over the velocity cut-off radius."""
    interpolation_exponents(q)
    if q == 1:
        return 1.0
    a = 3 * (q - 1) / q
    theta = 3 * (q - 1) / (4 * q - 3)
    c_q = BALL_VOLUME ** ((q - 1) / q)
    return (1 + a) * a ** (-theta) * c_q ** (q / (4 * q - 3))


def hls_potential_constant():
    """Sharp constant in  int (H * rho) rho <= C ||rho||_{6/5}^2.

    This is Lieb's sharp Hardy-Littlewood-Sobolev constant for the kernel
    |x|^-1 in three dimensions, divided by 4 pi.
    """
    n, lam = 3, 1
    c = (math.pi ** (lam / 2) * math.gamma(n / 2 - lam / 2) / math.gamma(n - lam / 2)
         * (math.gamma(n / 2) / math.gamma(n)) ** (-1 + lam / n))
    return c / (4 * math.pi)


def default_epsilon():
    """Smallness threshold for ||f0||_{3/2} in the attractive case.

    Combining the potential bound with the interpolation bound at q = 3/2,
    int (H * rho) rho <= C_H C(3/2)^2 ||sqrt(1+|v|^2) f||_1 ||f||_{3/2},
    so the relativistic energy controls the attractive potential energy
    whenever ||f||_{3/2} < 1 / (C_H C(3/2)^2).
    """
    return 1.0 / (hls_potential_constant() * interpolation_constant(1.5) ** 2)


@dataclass
class BoundReport:
    q: float
    p: float
    theta: float
    constant: float
    rho_norm: float
    weighted_l1: float
    f_norm: float
    bound: float
    passed: bool

    @property
    def margin(self):
        return self.bound - self.rho_norm

    def to_dict(self):
        d = asdict(self)
        d["margin"] = self.margin
        return d


def _weight_cell_means(v_axes, dv, order=3):
    # cell average of sqrt(1 + |v|^2) over each velocity cell (Gauss-Legendre)
    t, wt = np.polynomial.legendre.leggauss(order)
    out = 0.0
    for a in range(order):
        for b in range(order):
            for c in range(order):
                vx = v_axes[0][:, None, None] + 0.5 * dv[0] * t[a]
                vy = v_axes[1][None, :, None] + 0.5 * dv[1] * t[b]
                vz = v_axes[2][None, None, :] + 0.5 * dv[2] * t[c]
                out = out + wt[a] * wt[b] * wt[c] / 8.0 * np.sqrt(1 + vx**2 + vy**2 + vz**2)
    return out


def interpolation_check(grid, q):
    """Both sides of the interpolation bound for a piecewise-constant f.

    ``grid`` is a :class:`PhaseGrid` whose axes are cell centres.
    """
    if not isinstance(grid, PhaseGrid):
        raise InvalidInputError("interpolation_check needs a PhaseGrid")
    if not q >= 1:
        raise InvalidInputError(f"q must be >= 1, got {q}")
    f = np.asarray(grid.values, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise InvalidInputError("f must be finite and nonnegative")
    p, theta = interpolation_exponents(q)
    C = interpolation_constant(q)
    dx3 = float(np.prod(grid.dx))
    dv3 = float(np.prod(grid.dv))
    rho = f.sum(axis=(3, 4, 5)) * dv3
    rho_norm = grid_lp(rho, dx3, p)
    weight = _weight_cell_means(grid.v_axes, grid.dv)
    weighted = float(np.sum(f * weight[None, None, None]) * dx3 * dv3)
    f_norm = grid_lp(f, grid.cell_volume, q)
    bound = C * weighted**theta * f_norm ** (1 - theta)
    # a relative slack of a few ulps absorbs summation order
    passed = bool(rho_norm <= bound * (1 + 1e-12))
    return BoundReport(float(q), p, theta, C, rho_norm, weighted, f_norm, bound, passed)


def sobolev_ratio(rho):
    """||H * rho||_6 / ||rho||_{6/5} by node quadrature.

    ``rho`` is a :class:`DepositGrid` or a scalar grid field.  The
    potential uses the one-cell regularised kernel.
    """
    if isinstance(rho, DepositGrid):
        grid, values = rho.grid, rho.rho
    else:
        grid, values = rho.grid, np.asarray(rho.values)
    if not np.any(values):
        raise InvalidInputError("sobolev ratio undefined for rho = 0")
    phi = convolve_potential(grid, values, None)
    vol = grid.cell_volume
    return grid_lp(phi, vol, 6.0) / grid_lp(values, vol, 1.2)


__all__ = [
    "interpolation_exponents", "interpolation_constant", "hls_potential_constant",
    "default_epsilon", "BoundReport", "interpolation_check", "sobolev_ratio",
]
