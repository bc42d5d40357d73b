"""Particle and grid representations of the phase-space density.

Phase points are arrays with a trailing axis of length 6, ``(x, y, z,
vx, vy, vz)``.  An :class:`Ensemble` carries weighted particles; a
:class:`DepositGrid` holds the cloud-in-cell moments rho and J on the
nodes of a uniform Cartesian grid.
"""
import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidInputError, OutOfDomainError
from .kernels import hat_velocity, lorentz_factor

BALL_VOLUME = 4.0 * np.pi / 3.0
GAUSS_TRUNCATION = 6.0  # support box half-width, in standard deviations


class ProfileKind(str, Enum):
    GAUSSIAN_PRODUCT = "gaussian_product"
    BALL_BALL = "ball_ball"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class Tabulation:
    """Node values of f on a tensor lattice; multilinear in between."""

    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        values = np.asarray(self.values, dtype=float)
        if len(axes) != 6 or values.shape != tuple(len(a) for a in axes):
            raise InvalidInputError("tabulation needs six axes matching the value array shape")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidInputError("tabulated values must be finite and nonnegative")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class InitialProfile:
    """Analytic initial density f0, a sum of identical product components.

    For ``GAUSSIAN_PRODUCT`` each component is
    ``exp(-|x-xc|^2/(2 sx^2) - |v-vc|^2/(2 sv^2))``; for ``BALL_BALL`` it is
    the indicator of ``|x-xc| < rx, |v-vc| < rv``.  ``x_scale``/``v_scale``
    are the widths or radii.  ``band=(lo, hi)`` keeps only values in
    ``[lo, hi)``.
    """

    kind: ProfileKind
    amplitude: float = 1.0
    x_centers: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    v_centers: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    x_scale: float = 1.0
    v_scale: float = 1.0
    band: Optional[tuple] = None
    table: Optional[Tabulation] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        xc = np.atleast_2d(np.asarray(self.x_centers, dtype=float))
        vc = np.atleast_2d(np.asarray(self.v_centers, dtype=float))
        if xc.shape != vc.shape or xc.shape[1] != 3:
            raise InvalidInputError("x_centers and v_centers must both have shape (k, 3)")
        object.__setattr__(self, "x_centers", xc)
        object.__setattr__(self, "v_centers", vc)
        if self.kind is ProfileKind.TABULATED:
            if self.table is None:
                raise InvalidInputError("tabulated profile needs a table")
        elif not (self.x_scale > 0 and self.v_scale > 0):
            raise InvalidInputError("profile widths/radii must be positive")
        if not (self.amplitude >= 0 and np.isfinite(self.amplitude)):
            raise InvalidInputError("amplitude must be finite and nonnegative")
        if self.band is not None:
            lo, hi = self.band
            if not lo < hi:
                raise InvalidInputError(f"empty band {self.band}")
            object.__setattr__(self, "band", (float(lo), float(hi)))

    # -- constructors ---------------------------------------------------
    @classmethod
    def gaussian(cls, mass=None, amplitude=None, x_centers=((0, 0, 0),), v_centers=None,
                 sigma_x=1.0, sigma_v=1.0):
        x_centers = np.atleast_2d(np.asarray(x_centers, dtype=float))
        if v_centers is None:
            v_centers = np.zeros_like(x_centers)
        unit = cls(ProfileKind.GAUSSIAN_PRODUCT, 1.0, x_centers, v_centers, sigma_x, sigma_v)
        return unit._scaled_to(mass, amplitude)

    @classmethod
    def ball_ball(cls, mass=None, amplitude=None, x_centers=((0, 0, 0),), v_centers=None,
                  radius_x=1.0, radius_v=1.0):
        x_centers = np.atleast_2d(np.asarray(x_centers, dtype=float))
        if v_centers is None:
            v_centers = np.zeros_like(x_centers)
        unit = cls(ProfileKind.BALL_BALL, 1.0, x_centers, v_centers, radius_x, radius_v)
        return unit._scaled_to(mass, amplitude)

    @classmethod
    def tabulated(cls, axes, values):
        return cls(ProfileKind.TABULATED, table=Tabulation(axes, values))

    def _scaled_to(self, mass, amplitude):
        if (mass is None) == (amplitude is None):
            if mass is None:
                return self
            raise InvalidInputError("give either mass or amplitude, not both")
        if amplitude is None:
            amplitude = mass / self._component_mass() / self.n_components
        return self.with_amplitude(amplitude)

    def with_amplitude(self, amplitude):
        return InitialProfile(self.kind, float(amplitude), self.x_centers, self.v_centers,
                              self.x_scale, self.v_scale, self.band, self.table)

    def scaled(self, c):
        if self.kind is ProfileKind.TABULATED:
            return InitialProfile.tabulated(self.table.axes, c * self.table.values)
        return self.with_amplitude(c * self.amplitude)

    def with_band(self, band):
        return InitialProfile(self.kind, self.amplitude, self.x_centers, self.v_centers,
                              self.x_scale, self.v_scale, band, self.table)

    # -- evaluation -----------------------------------------------------
    @property
    def n_components(self):
        return self.x_centers.shape[0]

    def _component_mass(self):
        if self.kind is ProfileKind.GAUSSIAN_PRODUCT:
            return (2 * np.pi) ** 3 * (self.x_scale * self.v_scale) ** 3
        return BALL_VOLUME**2 * (self.x_scale * self.v_scale) ** 3

    def unbanded(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1:] != (6,):
            raise InvalidInputError(f"phase points need a trailing axis of length 6, got {z.shape}")
        if self.kind is ProfileKind.TABULATED:
            return self._tabulated(z)
        x = z[..., None, :3] - self.x_centers
        v = z[..., None, 3:] - self.v_centers
        rx = np.sum(x * x, axis=-1)
        rv = np.sum(v * v, axis=-1)
        if self.kind is ProfileKind.GAUSSIAN_PRODUCT:
            comp = np.exp(-0.5 * (rx / self.x_scale**2 + rv / self.v_scale**2))
        else:
            comp = ((rx < self.x_scale**2) & (rv < self.v_scale**2)).astype(float)
        return self.amplitude * np.sum(comp, axis=-1)

    def _tabulated(self, z):
        t = self.table
        flat = z.reshape(-1, 6)
        lo = np.array([a[0] for a in t.axes])
        hi = np.array([a[-1] for a in t.axes])
        if np.any(flat < lo) or np.any(flat > hi):
            raise OutOfDomainError("phase point outside the tabulated domain")
        interp = RegularGridInterpolator(t.axes, t.values, method="linear")
        return interp(flat).reshape(z.shape[:-1])

    def __call__(self, z):
        val = self.unbanded(z)
        if self.band is not None:
            lo, hi = self.band
            val = np.where((val >= lo) & (val < hi), val, 0.0)
        return val

    def sup(self):
        """Upper bound of the unbanded profile (exact for one component)."""
        if self.kind is ProfileKind.TABULATED:
            return float(self.table.values.max())
        return self.amplitude * self.n_components

    def support_box(self):
        """(lo, hi) arrays of length 6 enclosing the support.

        Gaussians are truncated at ``GAUSS_TRUNCATION`` standard deviations.
        """
        if self.kind is ProfileKind.TABULATED:
            return (np.array([a[0] for a in self.table.axes]),
                    np.array([a[-1] for a in self.table.axes]))
        k = GAUSS_TRUNCATION if self.kind is ProfileKind.GAUSSIAN_PRODUCT else 1.0
        centers = np.hstack([self.x_centers, self.v_centers])
        half = np.array([self.x_scale] * 3 + [self.v_scale] * 3) * k
        return centers.min(axis=0) - half, centers.max(axis=0) + half

    def _is_single_product(self):
        return self.kind is not ProfileKind.TABULATED and self.n_components == 1

    def mass(self, cells_per_axis=16):
        """Integral of f0; analytic when unbanded, lattice quadrature otherwise."""
        if self.band is None and self.kind is not ProfileKind.TABULATED:
            return self.amplitude * self.n_components * self._component_mass()
        return lattice_integral(self, lambda f: f, cells_per_axis)

    def to_dict(self):
        if self.kind is ProfileKind.TABULATED:
            raise InvalidInputError("tabulated profiles are not serialisable to config")
        d = {"kind": self.kind.value, "amplitude": self.amplitude,
             "x_centers": self.x_centers.tolist(), "v_centers": self.v_centers.tolist(),
             "x_scale": self.x_scale, "v_scale": self.v_scale}
        if self.band is not None:
            d["band"] = list(self.band)
        return d


def evaluate_profile(profile, z):
    """f0(z) >= 0 (banded profiles return 0 outside their level band)."""
    return profile(z)


def band_decompose(profile, kmax):
    """Split f0 into level bands [k, k+1) for k < kmax plus the remainder [kmax, inf)."""
    if kmax < 1:
        raise InvalidInputError("kmax must be at least 1")
    bands = [profile.with_band((k, k + 1)) for k in range(kmax)]
    bands.append(profile.with_band((kmax, np.inf)))
    return bands


# -- lattices ------------------------------------------------------------

def lattice_axes(lo, hi, cells_per_axis):
    """Cell centers and widths of a midpoint lattice on the box [lo, hi]."""
    m = np.broadcast_to(np.asarray(cells_per_axis, dtype=int), (len(lo),))
    axes = []
    widths = []
    for a, b, n in zip(lo, hi, m):
        h = (b - a) / n
        axes.append(a + h * (np.arange(n) + 0.5))
        widths.append(h)
    return axes, np.array(widths)


def _iter_lattice(axes, chunk=1 << 18):
    # yields (N, 6) blocks of lattice points in C order
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(total, start + chunk)), shape)
        yield np.stack([axes[d][idx[d]] for d in range(6)], axis=-1)


def _subsample_offsets(widths, subsamples):
    s = int(subsamples)
    frac = (np.arange(s) + 0.5) / s - 0.5
    grids = np.meshgrid(*([frac] * 6), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1) * widths


def _cell_means(profile, pts, widths, subsamples):
    if subsamples == 1:
        return profile(pts)
    offs = _subsample_offsets(widths, subsamples)
    acc = np.zeros(pts.shape[0])
    for o in offs:
        acc += profile(pts + o)
    return acc / len(offs)


def lattice_integral(profile, func, cells_per_axis, box=None, subsamples=1):
    """sum over lattice cells of func(cell mean of f) * cell volume."""
    lo, hi = profile.support_box() if box is None else box
    axes, widths = lattice_axes(lo, hi, cells_per_axis)
    vol = float(np.prod(widths))
    total = 0.0
    for pts in _iter_lattice(axes):
        total += float(np.sum(func(_cell_means(profile, pts, widths, subsamples))))
    return total * vol


def lattice_mass(profile, cells_per_axis, subsamples=1):
    """Total weight of the stratified lattice discretisation of f0.

    Single-component unbanded product profiles factor into an x sum times a
    v sum, which keeps very fine lattices cheap.
    """
    if not (profile._is_single_product() and profile.band is None):
        return lattice_integral(profile, lambda f: f, cells_per_axis, subsamples=subsamples)
    lo, hi = profile.support_box()
    axes, widths = lattice_axes(lo, hi, cells_per_axis)
    frac = (np.arange(subsamples) + 0.5) / subsamples - 0.5

    def block_sum(ax, h, center, scale):
        pts = [a[:, None] + h_ * frac[None, :] for a, h_ in zip(ax, h)]
        # cell-averaged factor on each axis, combined over the 3D block
        g = np.meshgrid(*[p.ravel() for p in pts], indexing="ij")
        r2 = sum((gi - c) ** 2 for gi, c in zip(g, center))
        if profile.kind is ProfileKind.GAUSSIAN_PRODUCT:
            val = np.exp(-0.5 * r2 / scale**2)
        else:
            val = (r2 < scale**2).astype(float)
        return float(val.sum()) / subsamples**3 * float(np.prod(h))

    sx = block_sum(axes[:3], widths[:3], profile.x_centers[0], profile.x_scale)
    sv = block_sum(axes[3:], widths[3:], profile.v_centers[0], profile.v_scale)
    return profile.amplitude * sx * sv


# -- ensembles -----------------------------------------------------------

class Particle(NamedTuple):
    x: np.ndarray
    v: np.ndarray
    w: float


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weighted particles; arrays are made read-only on construction."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1, 3)
        v = np.array(self.v, dtype=float).reshape(-1, 3)
        w = np.array(self.w, dtype=float).reshape(-1)
        if not (x.shape == v.shape and w.shape[0] == x.shape[0]):
            raise InvalidInputError("x, v, w must describe the same number of particles")
        if np.any(w < 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise InvalidInputError("particle data must be finite with nonnegative weights")
        if self.time < 0:
            raise InvalidInputError("ensemble time must be nonnegative")
        for a in (x, v, w):
            a.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "time", float(self.time))

    def __len__(self):
        return self.w.shape[0]

    def __getitem__(self, i):
        return Particle(self.x[i], self.v[i], float(self.w[i]))

    @property
    def z(self):
        return np.hstack([self.x, self.v])

    @property
    def vhat(self):
        return hat_velocity(self.v)

    @property
    def total_weight(self):
        return float(np.sum(self.w))

    @classmethod
    def from_phase(cls, z, w, time=0.0):
        z = np.asarray(z, dtype=float).reshape(-1, 6)
        return cls(z[:, :3], z[:, 3:], w, time)

    def with_state(self, z, time):
        return Ensemble.from_phase(z, self.w, time)

    def concat(self, other):
        return Ensemble(np.vstack([self.x, other.x]), np.vstack([self.v, other.v]),
                        np.concatenate([self.w, other.w]), self.time)

    def relativistic_energy(self):
        return float(np.sum(self.w * lorentz_factor(self.v)))

    # CSV: header x,y,z,vx,vy,vz,w; values written with full round-trip precision
    CSV_HEADER = ("x", "y", "z", "vx", "vy", "vz", "w")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(self.CSV_HEADER)
            for row in np.hstack([self.x, self.v, self.w[:, None]]):
                out.writerow([repr(float(a)) for a in row])

    @classmethod
    def from_csv(cls, path, time=0.0):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != cls.CSV_HEADER:
            raise InvalidInputError(f"unexpected ensemble CSV header {rows[0]}")
        data = np.array(rows[1:], dtype=float).reshape(-1, 7)
        return cls(data[:, :3], data[:, 3:6], data[:, 6], time)


class SamplingMode(str, Enum):
    LATTICE = "lattice"
    MONTE_CARLO = "monte_carlo"


def _unit_ball(rng, n):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.random(n)[:, None] ** (1.0 / 3.0)


def _draw_base(profile, rng, n):
    if profile.kind is ProfileKind.TABULATED:
        lo, hi = profile.support_box()
        bound = profile.sup()
        out = []
        while sum(len(o) for o in out) < n:
            z = lo + (hi - lo) * rng.random((2 * n, 6))
            keep = rng.random(2 * n) * bound < profile.unbanded(z)
            out.append(z[keep])
        return np.vstack(out)[:n]
    comp = rng.integers(profile.n_components, size=n)
    if profile.kind is ProfileKind.GAUSSIAN_PRODUCT:
        x = rng.standard_normal((n, 3)) * profile.x_scale
        v = rng.standard_normal((n, 3)) * profile.v_scale
    else:
        x = _unit_ball(rng, n) * profile.x_scale
        v = _unit_ball(rng, n) * profile.v_scale
    return np.hstack([x + profile.x_centers[comp], v + profile.v_centers[comp]])


def sample_ensemble(profile, n, seed, mode=SamplingMode.MONTE_CARLO, subsamples=1):
    """Deterministic particle discretisation of f0.

    ``monte_carlo`` draws ``n`` points from f0/mass with equal weights
    mass/n.  ``lattice`` places particles at the centers of a midpoint
    lattice with ``round(n ** (1/6))`` cells per axis over the support box
    and weight f0 * cell volume (cell means over ``subsamples**6`` points
    when ``subsamples > 1``); empty cells are dropped.
    """
    mode = SamplingMode(mode)
    if n < 1:
        raise InvalidInputError("need at least one particle")
    if mode is SamplingMode.LATTICE:
        m = max(1, int(round(n ** (1.0 / 6.0))))
        lo, hi = profile.support_box()
        axes, widths = lattice_axes(lo, hi, m)
        vol = float(np.prod(widths))
        pts = np.vstack(list(_iter_lattice(axes)))
        w = _cell_means(profile, pts, widths, subsamples) * vol
        keep = w > 0
        if not np.any(keep):
            raise InvalidInputError("profile has zero mass on the sampling lattice")
        return Ensemble.from_phase(pts[keep], w[keep])
    mass = profile.mass()
    if not mass > 0:
        raise InvalidInputError("cannot sample a zero-mass profile")
    rng = np.random.default_rng(seed)
    if profile.band is None:
        z = _draw_base(profile, rng, n)
    else:
        base = profile.with_band(None)
        chunks = []
        got = 0
        for _ in range(10_000):
            cand = _draw_base(base, rng, max(n, 1024))
            cand = cand[profile(cand) > 0]
            chunks.append(cand)
            got += len(cand)
            if got >= n:
                break
        else:
            raise InvalidInputError("band holds too little mass to sample")
        z = np.vstack(chunks)[:n]
    return Ensemble.from_phase(z, np.full(n, mass / n))


# -- grids ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform node grid: node (i, j, k) sits at origin + h * (i, j, k)."""

    origin: np.ndarray
    spacing: float
    dims: tuple

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        if not self.spacing > 0:
            raise InvalidInputError(f"grid spacing must be positive, got {self.spacing}")
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidInputError(f"grid dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "dims", dims)

    @classmethod
    def centered(cls, center, half_width, n):
        """n^3 nodes spanning [center - half_width, center + half_width]."""
        h = 2.0 * half_width / (n - 1)
        return cls(np.asarray(center, dtype=float) - half_width, h, (n, n, n))

    @property
    def cell_volume(self):
        return self.spacing**3

    @property
    def upper(self):
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def axes(self):
        return [self.origin[d] + self.spacing * np.arange(self.dims[d]) for d in range(3)]

    def nodes(self):
        g = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(g, axis=-1)

    def cell_box(self):
        """Box covered by the node cells (each node owns an h^3 cube)."""
        half = 0.5 * self.spacing
        return self.origin - half, self.upper + half

    def same_geometry(self, other):
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.origin, other.origin))

    def to_dict(self):
        return {"origin": self.origin.tolist(), "spacing": self.spacing, "dims": list(self.dims)}


@dataclass(frozen=True, eq=False)
class DepositGrid:
    grid: GridSpec
    rho: np.ndarray
    J: np.ndarray
    escaped: float = 0.0
    time: float = 0.0

    @property
    def mass(self):
        return float(np.sum(self.rho) * self.grid.cell_volume)

    def scaled(self, c):
        return DepositGrid(self.grid, c * self.rho, c * self.J, c * self.escaped, self.time)


def _cic_weights(x, grid):
    f = (x - grid.origin) / grid.spacing
    dims = np.array(grid.dims)
    inside = np.all((f >= 0) & (f <= dims - 1), axis=1)
    base = np.minimum(np.floor(f), np.maximum(dims - 2, 0)).astype(int)
    frac = f - base
    # single-node axes: everything on that node
    flat = dims == 1
    base[:, flat] = 0
    frac[:, flat] = 0.0
    return inside, base, frac


def deposit(ensemble, grid):
    """Cloud-in-cell deposition of w into rho and of w * v_hat into J.

    Particles outside the node box are not deposited; their weight is
    returned as ``escaped``.  Accumulation order is fixed (corner, then
    particle index), so the result is reproducible.
    """
    if not isinstance(grid, GridSpec):
        grid = GridSpec(**grid)
    inside, base, frac = _cic_weights(ensemble.x, grid)
    w = ensemble.w[inside]
    vh = ensemble.vhat[inside]
    base = base[inside]
    frac = frac[inside]
    dims = grid.dims
    n_nodes = int(np.prod(dims))
    idx_all = []
    wt_all = []
    for corner in np.ndindex(2, 2, 2):
        c = np.array(corner)
        idx = base + c
        ok = np.all(idx < np.array(dims), axis=1)
        wt = np.prod(np.where(c, frac, 1.0 - frac), axis=1) * w
        wt = np.where(ok, wt, 0.0)
        idx = np.minimum(idx, np.array(dims) - 1)
        idx_all.append(np.ravel_multi_index(idx.T, dims))
        wt_all.append(wt)
    idx = np.concatenate(idx_all)
    wt = np.concatenate(wt_all)
    vol = grid.cell_volume
    rho = np.bincount(idx, weights=wt, minlength=n_nodes).reshape(dims) / vol
    vrep = np.tile(vh, (8, 1))
    J = np.stack([np.bincount(idx, weights=wt * vrep[:, d], minlength=n_nodes) for d in range(3)],
                 axis=-1).reshape(dims + (3,)) / vol
    escaped = float(np.sum(ensemble.w[~inside]))
    return DepositGrid(grid, rho, J, escaped, ensemble.time)


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Piecewise-constant f on a 6D midpoint lattice (x cells times v cells)."""

    x_axes: list
    v_axes: list
    values: np.ndarray

    @property
    def dx(self):
        return np.array([a[1] - a[0] for a in self.x_axes])

    @property
    def dv(self):
        return np.array([a[1] - a[0] for a in self.v_axes])

    @property
    def cell_volume(self):
        return float(np.prod(self.dx) * np.prod(self.dv))


def _grid_values(obj):
    if isinstance(obj, DepositGrid):
        return obj.rho, obj.grid.cell_volume
    if isinstance(obj, PhaseGrid):
        return obj.values, obj.cell_volume
    if hasattr(obj, "values") and hasattr(obj, "grid"):
        vals = obj.values
        if vals.ndim == 4:
            vals = np.linalg.norm(vals, axis=-1)
        return vals, obj.grid.cell_volume
    raise InvalidInputError(f"cannot take a norm of {type(obj).__name__}")


def grid_lp(values, cell_volume, p):
    a = np.abs(values)
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a**p) * cell_volume) ** (1.0 / p))


def lp_norm(obj, p, cells_per_axis=16):
    """L^p norm of a grid (exact for piecewise-constant data) or of a profile."""
    if not p >= 1:
        raise InvalidInputError(f"L^p norm needs p >= 1, got {p}")
    if isinstance(obj, InitialProfile):
        if obj.band is None and obj._is_single_product():
            if np.isinf(p):
                return obj.amplitude
            # product structure: int f^p = A^p * (int of one factor^p)
            if obj.kind is ProfileKind.GAUSSIAN_PRODUCT:
                base = (2 * np.pi / p) ** 3 * (obj.x_scale * obj.v_scale) ** 3
            else:
                base = obj._component_mass()
            return float(obj.amplitude * base ** (1.0 / p))
        if p == 1:
            return obj.mass(cells_per_axis)
        return lattice_integral(obj, lambda f: f**p, cells_per_axis) ** (1.0 / p)
    values, vol = _grid_values(obj)
    return grid_lp(values, vol, p)


# -- serialisation ---------------------------------------------------------

def write_grid_array(path, grid, values, **meta):
    """Flat little-endian float64 binary (row-major) plus a JSON sidecar."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    values.tofile(path.with_suffix(".bin"))
    sidecar = dict(grid.to_dict())
    sidecar["components"] = int(values.shape[3]) if values.ndim == 4 else 1
    sidecar["dtype"] = "float64-le"
    sidecar["order"] = "row-major"
    sidecar.update(meta)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_grid_array(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = GridSpec(meta["origin"], meta["spacing"], meta["dims"])
    shape = tuple(grid.dims) + ((meta["components"],) if meta["components"] > 1 else ())
    values = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(shape)
    return grid, values, meta


def write_deposit(prefix, dep):
    prefix = Path(prefix)
    write_grid_array(prefix.with_name(prefix.name + "_rho"), dep.grid, dep.rho,
                     escaped=dep.escaped, time=dep.time)
    write_grid_array(prefix.with_name(prefix.name + "_J"), dep.grid, dep.J,
                     escaped=dep.escaped, time=dep.time)


def read_deposit(prefix):
    prefix = Path(prefix)
    grid, rho, meta = read_grid_array(prefix.with_name(prefix.name + "_rho"))
    _, J, _ = read_grid_array(prefix.with_name(prefix.name + "_J"))
    return DepositGrid(grid, rho, J, meta.get("escaped", 0.0), meta.get("time", 0.0))
