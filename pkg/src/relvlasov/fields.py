"""Self-consistent fields, potentials and discrete vector calculus.

Particle fields are direct sums over the ensemble with the mollified
kernel.  Grid potentials are the node double sum
``(H * mu)(x_c) = sum_c' mu_c' h^3 H_R(x_c - x_c')``; the double sum is a
discrete aperiodic convolution and is evaluated with a zero-padded FFT
(``method="fft"``) or literally (``method="direct"``, small grids only).
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from . import _compiled
from .errors import InvalidInputError, SingularityError
from .kernels import (FOUR_PI, MollifierShape, hat_velocity, kernel_params,
                      mollified_potential_radius)
from .phase_space import DepositGrid, GridSpec


class FieldSample(NamedTuple):
    E: np.ndarray
    B: np.ndarray


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar (nx, ny, nz) or vector (nx, ny, nz, 3) node data on a grid."""

    grid: GridSpec
    values: np.ndarray

    @property
    def is_vector(self):
        return self.values.ndim == 4

    def __add__(self, other):
        _check_same(self, other)
        return GridField(self.grid, self.values + other.values)

    def __mul__(self, c):
        return GridField(self.grid, self.values * c)

    __rmul__ = __mul__


def _check_same(a, b):
    if not a.grid.same_geometry(b.grid):
        raise InvalidInputError("grid geometries differ")


def _check_sigma(sigma_e, sigma_b):
    if sigma_e not in (-1, 0, 1) or sigma_b not in (0, 1):
        raise InvalidInputError(f"unsupported coupling signs ({sigma_e}, {sigma_b})")


def fields_from_sources(targets, src_x, src_vhat, src_w, sigma_e, sigma_b, spec):
    """(E, B) arrays of shape (M, 3) at ``targets`` from point sources."""
    targets = np.ascontiguousarray(np.asarray(targets, dtype=float).reshape(-1, 3))
    radius, shape = kernel_params(spec)
    if sigma_e == 0 and sigma_b == 0:
        z = np.zeros_like(targets)
        return z, z.copy()
    E, B, bad = _compiled.pair_fields(
        targets, np.ascontiguousarray(src_x), np.ascontiguousarray(src_vhat),
        np.ascontiguousarray(src_w), radius, shape, float(sigma_e), float(sigma_b))
    if bad:
        raise SingularityError("target coincides with a source under the singular kernel")
    return E, B


def eval_fields_direct(ensemble, targets, sigma_e, sigma_b, spec):
    """E(x) = sE sum_j w_j K^n(x - x_j), B(x) = sB sum_j w_j vhat_j x K^n(x - x_j).

    Returns a :class:`FieldSample` of (M, 3) arrays.  ``spec=None`` uses
    the singular kernels.
    """
    _check_sigma(sigma_e, sigma_b)
    if len(ensemble) == 0:
        raise InvalidInputError("empty ensemble")
    E, B = fields_from_sources(targets, ensemble.x, ensemble.vhat, ensemble.w, sigma_e, sigma_b, spec)
    return FieldSample(E, B)


def lorentz_rhs(z, E, B):
    """Phase velocity b = (vhat, E + vhat x B) for phase points z (..., 6)."""
    z = np.asarray(z, dtype=float)
    vh = hat_velocity(z[..., 3:])
    return np.concatenate([vh, np.asarray(E) + np.cross(vh, B)], axis=-1)


# -- grid potentials ---------------------------------------------------------

def _offset_kernel(grid, radius, shape):
    n = grid.dims
    h = grid.spacing
    ax = [np.arange(-(d - 1), d) * h for d in n]
    g = np.meshgrid(*ax, indexing="ij")
    pts = np.stack(g, axis=-1)
    return h**3 * mollified_potential_radius(pts, radius, shape)


def _fft_convolve(mu, kern):
    # aperiodic convolution of mu (n) with kern indexed by offsets -(n-1)..(n-1)
    n = mu.shape[:3]
    full = [2 * d - 1 for d in n]
    size = [sfft.next_fast_len(f + d - 1, real=True) for f, d in zip(full, n)]
    kf = sfft.rfftn(kern, s=size)
    comps = mu if mu.ndim == 4 else mu[..., None]
    out = np.empty(comps.shape)
    for c in range(comps.shape[3]):
        conv = sfft.irfftn(sfft.rfftn(comps[..., c], s=size) * kf, s=size)
        out[..., c] = conv[n[0] - 1:2 * n[0] - 1, n[1] - 1:2 * n[1] - 1, n[2] - 1:2 * n[2] - 1]
    return out if mu.ndim == 4 else out[..., 0]


def potential_radius(grid, spec):
    """Mollification radius used on a grid: 1/n, but never below one cell."""
    if spec is None:
        return grid.spacing
    return max(spec.radius, grid.spacing)


def convolve_potential(grid, mu, spec=None, method="fft"):
    radius = potential_radius(grid, spec)
    shape = MollifierShape.UNIFORM_BALL if spec is None else spec.shape
    if method == "direct":
        code = 1 if shape is MollifierShape.UNIFORM_BALL else 2
        vec = mu if mu.ndim == 4 else mu[..., None]
        out = _compiled.grid_potential_direct(np.ascontiguousarray(vec, dtype=float),
                                              grid.spacing, radius, code)
        return out if mu.ndim == 4 else out[..., 0]
    if method != "fft":
        raise InvalidInputError(f"unknown convolution method {method!r}")
    return _fft_convolve(np.asarray(mu, dtype=float), _offset_kernel(grid, radius, shape))


def eval_potential_grid(dep, which="rho", spec=None, method="fft"):
    """H * rho (scalar) or H * J (vector potential) on the deposit grid.

    The kernel is H mollified at radius max(1/n, h); with ``spec=None`` the
    radius is one cell, which only regularises the diagonal term.
    """
    if which == "rho":
        mu = dep.rho
    elif which == "J":
        mu = dep.J
    else:
        raise InvalidInputError(f"which must be 'rho' or 'J', got {which!r}")
    return GridField(dep.grid, convolve_potential(dep.grid, mu, spec, method))


# -- discrete vector calculus ------------------------------------------------

def _check_dims(field):
    if min(field.grid.dims) < 3:
        raise InvalidInputError("finite differences need at least 3 nodes per axis")


def _d(values, axis, h):
    return np.gradient(values, h, axis=axis, edge_order=2)


def grid_grad(field):
    """Second-order central differences inside, one-sided second order at the edges."""
    _check_dims(field)
    if field.is_vector:
        raise InvalidInputError("grid_grad takes a scalar field")
    h = field.grid.spacing
    return GridField(field.grid, np.stack([_d(field.values, a, h) for a in range(3)], axis=-1))


def grid_div(field):
    _check_dims(field)
    if not field.is_vector:
        raise InvalidInputError("grid_div takes a vector field")
    h = field.grid.spacing
    v = field.values
    return GridField(field.grid, sum(_d(v[..., a], a, h) for a in range(3)))


def grid_curl(field):
    _check_dims(field)
    if not field.is_vector:
        raise InvalidInputError("grid_curl takes a vector field")
    h = field.grid.spacing
    v = field.values
    cx = _d(v[..., 2], 1, h) - _d(v[..., 1], 2, h)
    cy = _d(v[..., 0], 2, h) - _d(v[..., 2], 0, h)
    cz = _d(v[..., 1], 0, h) - _d(v[..., 0], 1, h)
    return GridField(field.grid, np.stack([cx, cy, cz], axis=-1))


def field_energy(field):
    """sum over nodes of |F|^2 h^3 (no factor 1/2)."""
    return float(np.sum(np.asarray(field.values) ** 2) * field.grid.cell_volume)


def grid_fields(dep, sigma_e=1, sigma_b=1, spec=None, method="fft"):
    """Grid E = -sE grad(H * rho) and B = sB curl(H * J)."""
    phi = eval_potential_grid(dep, "rho", spec, method)
    A = eval_potential_grid(dep, "J", spec, method)
    E = grid_grad(phi) * (-float(sigma_e))
    B = grid_curl(A) * float(sigma_b)
    return E, B


# -- exterior tails -----------------------------------------------------------

def exterior_kernel_energy(center, lo, hi, n_theta=400, n_phi=800):
    """int over R^3 minus the box [lo, hi] of |K(x - center)|^2 dx.

    Radially, int_rho^inf r^-4 r^2 dr = 1/rho, so the integral reduces to
    the solid-angle average of 1/rho(u), rho(u) the distance from
    ``center`` to the box boundary along u.
    """
    center = np.asarray(center, dtype=float)
    lo = np.asarray(lo, dtype=float) - center
    hi = np.asarray(hi, dtype=float) - center
    if np.any(lo >= 0) or np.any(hi <= 0):
        raise InvalidInputError("center must lie inside the box")
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    ph = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    st = np.sqrt(1 - ct**2)
    u = np.stack([st[:, None] * np.cos(ph)[None, :], st[:, None] * np.sin(ph)[None, :],
                  np.broadcast_to(ct[:, None], (n_theta, n_phi))], axis=-1)
    with np.errstate(divide="ignore"):
        t = np.where(u > 0, hi / u, np.where(u < 0, lo / u, np.inf))
    rho = t.min(axis=-1)
    integral = np.sum(wt[:, None] / rho) * (2 * np.pi / n_phi)
    return float(integral / FOUR_PI**2)


def monopole_tail(dep, which="rho"):
    """(estimate, bound) for the field energy outside the grid box.

    The estimate treats the source as a point monopole at its centroid;
    the bound is charge^2 / (4 pi margin), margin being the distance from
    the centroid to the box boundary.
    """
    lo, hi = dep.grid.cell_box()
    nodes = dep.grid.nodes()
    rho = dep.rho
    total = float(rho.sum() * dep.grid.cell_volume)
    if which == "rho":
        q2 = total**2
    else:
        q2 = float(np.sum((dep.J.sum(axis=(0, 1, 2)) * dep.grid.cell_volume) ** 2))
    if total > 0:
        center = np.tensordot(rho, nodes, axes=3) * dep.grid.cell_volume / total
    else:
        center = 0.5 * (lo + hi)
    margin = float(min(np.min(center - lo), np.min(hi - center)))
    if q2 == 0.0:
        return 0.0, 0.0
    return q2 * exterior_kernel_energy(center, lo, hi), q2 / (FOUR_PI * margin)


# -- divergence of the phase-space field ------------------------------------

def divergence_check_b(field_fn, lo, hi, h, n_points=64, seed=0):
    """max |div_{x,v} b| by central differences at sampled phase points.

    ``field_fn(x)`` returns (E, B) arrays for positions x (M, 3); the
    phase points are uniform in the 6D box [lo, hi].
    """
    if not h > 0:
        raise InvalidInputError("step h must be positive")
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    z = lo + (hi - lo) * rng.random((n_points, 6))
    div = np.zeros(n_points)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        zp = z + e
        zm = z - e
        Ep, Bp = field_fn(zp[:, :3])
        Em, Bm = field_fn(zm[:, :3])
        bp = lorentz_rhs(zp, Ep, Bp)[:, k]
        bm = lorentz_rhs(zm, Em, Bm)[:, k]
        div += (bp - bm) / (2 * h)
    return float(np.max(np.abs(div)))


def direct_field_fn(ensemble, sigma_e, sigma_b, spec):
    def fn(x):
        s = eval_fields_direct(ensemble, x, sigma_e, sigma_b, spec)
        return s.E, s.B
    return fn


def deposit_potential_energies(dep, spec=None, method="fft"):
    """(1/2) sum (H*rho) rho h^3 and (1/2) sum (H*J).J h^3 on the deposit grid."""
    vol = dep.grid.cell_volume
    if not np.any(dep.rho) and not np.any(dep.J):
        return 0.0, 0.0
    phi = eval_potential_grid(dep, "rho", spec, method).values
    pe = 0.5 * float(np.sum(phi * dep.rho) * vol)
    if np.any(dep.J):
        A = eval_potential_grid(dep, "J", spec, method).values
        pm = 0.5 * float(np.sum(A * dep.J) * vol)
    else:
        pm = 0.0
    return pe, pm


__all__ = [
    "FieldSample", "GridField", "DepositGrid", "eval_fields_direct", "fields_from_sources",
    "lorentz_rhs", "eval_potential_grid", "convolve_potential", "grid_grad", "grid_div",
    "grid_curl", "field_energy", "grid_fields", "monopole_tail", "exterior_kernel_energy",
    "divergence_check_b", "direct_field_fn", "deposit_potential_energies", "potential_radius",
]
