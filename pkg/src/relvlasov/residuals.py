"""Weak-form residuals of the transport and continuity equations.

Test functions are tensor products of the polynomial bump (1 - s^2)^3 in
t and in each phase coordinate; a time-only variant is constant in phase
space.  Residuals are reported together with the L1 size of the
integrand, so that ``normalized`` is scale free.
"""
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dynamics import IntegratorConfig, backtrace
from .errors import InvalidInputError
from .phase_space import DepositGrid, Ensemble, lattice_axes

_CHUNK = 1 << 16


def bump(s):
    """(1 - s^2)^3 on |s| < 1 and its derivative."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    u = np.where(inside, 1 - s * s, 0.0)
    return u**3, -6 * s * u**2


@dataclass(frozen=True)
class TestFunction:
    """phi(t, z) = b((t - tc)/rt) prod_k b((z_k - c_k)/r_k).

    With ``time_only`` the phase factor is 1 and the phase integral runs
    over the midpoint lattice ``box`` with ``cells`` per axis.
    """

    __test__ = False  # not a pytest class

    id: str
    t_center: float
    t_radius: float
    center: Optional[tuple] = None
    radius: Optional[tuple] = None
    time_only: bool = False
    box: Optional[tuple] = None
    cells: int = 8

    def __post_init__(self):
        if not self.t_radius > 0:
            raise InvalidInputError("test function needs a positive time radius")
        if self.time_only:
            if self.box is None:
                raise InvalidInputError("time-only test function needs a phase box")
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            object.__setattr__(self, "box", (tuple(lo.tolist()), tuple(hi.tolist())))
        else:
            c = np.asarray(self.center, dtype=float).reshape(-1)
            r = np.asarray(self.radius, dtype=float).reshape(-1)
            if c.shape != r.shape or c.size not in (3, 6) or np.any(r <= 0):
                raise InvalidInputError("centre and radius need 3 or 6 matching entries, radii > 0")
            object.__setattr__(self, "center", tuple(c.tolist()))
            object.__setattr__(self, "radius", tuple(r.tolist()))

    @property
    def t_support(self):
        return self.t_center - self.t_radius, self.t_center + self.t_radius

    def time_factor(self, t):
        b, db = bump((np.asarray(t, dtype=float) - self.t_center) / self.t_radius)
        return b, db / self.t_radius

    def space_factor(self, y):
        """Value and gradient of the phase factor at points y (M, d)."""
        c = np.asarray(self.center)
        r = np.asarray(self.radius)
        d = c.size
        b, db = bump((y[:, :d] - c) / r)
        db = db / r
        val = np.prod(b, axis=1)
        grad = np.empty_like(b)
        for k in range(d):
            others = np.prod(np.delete(b, k, axis=1), axis=1)
            grad[:, k] = db[:, k] * others
        return val, grad

    def to_dict(self):
        return asdict(self)


# -- beta family ----------------------------------------------------------

def beta_function(beta_id):
    """Bounded C1 renormalisations: arctan, s/(1+s), capped:M = M tanh(s/M)."""
    if callable(beta_id):
        return beta_id
    if beta_id == "arctan":
        return np.arctan
    if beta_id == "rational":
        return lambda s: s / (1.0 + s)
    if isinstance(beta_id, str) and beta_id.startswith("capped:"):
        M = float(beta_id.split(":", 1)[1])
        if not M > 0:
            raise InvalidInputError("cap must be positive")
        return lambda s: M * np.tanh(s / M)
    raise InvalidInputError(f"unknown beta {beta_id!r}")


@dataclass
class ResidualReport:
    testfn_id: str
    beta_id: Optional[str]
    residual: float
    l1_size: float
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self):
        if self.l1_size == 0.0:
            return 0.0
        return abs(self.residual) / self.l1_size

    def to_dict(self):
        return {"testfn": self.testfn_id, "beta": self.beta_id, "residual": self.residual,
                "l1_size": self.l1_size, "normalized": self.normalized, **self.meta}


def _gauss(lo, hi, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * t + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _phase_nodes(testfn, n_phase):
    if testfn.time_only:
        lo, hi = testfn.box
        axes, widths = lattice_axes(np.array(lo), np.array(hi), testfn.cells)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 6)
        return pts, np.full(len(pts), float(np.prod(widths)))
    c = np.asarray(testfn.center)
    r = np.asarray(testfn.radius)
    if c.size != 6:
        raise InvalidInputError("transport residual needs a phase-space test function")
    nodes, weights = zip(*(_gauss(c[k] - r[k], c[k] + r[k], n_phase) for k in range(6)))
    pts = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, 6)
    w = np.ones(1)
    for k in range(6):
        w = np.multiply.outer(w, weights[k])
    return pts, w.reshape(-1)


def _f_at(pts, t, history, profile, cfg):
    out = np.empty(len(pts))
    for s in range(0, len(pts), _CHUNK):
        chunk = pts[s:s + _CHUNK]
        foot = chunk if t == 0.0 else backtrace(chunk, t, history, cfg)
        out[s:s + _CHUNK] = profile(foot)
    return out


def renorm_residual(history, profile, beta, testfn, cfg=None, n_time=3, n_phase=5):
    """Quadrature of  int phi0 beta(f0) + int int (d_t phi + grad phi . b) beta(f_t).

    f_t is the Lagrangian solution obtained by back-tracing along
    ``history``; b = (vhat, E + vhat x B) uses the fields of ``history``.
    ``n_time`` Gauss nodes are used on every snapshot interval met by the
    time support, ``n_phase`` per phase axis.
    """
    cfg = cfg or IntegratorConfig()
    beta_fn = beta_function(beta)
    t_lo, t_hi = testfn.t_support
    if t_hi > history.t_end * (1 + 1e-12) or t_hi <= 0:
        raise InvalidInputError(
            f"test function time support [{t_lo}, {t_hi}] not inside the run [0, {history.t_end}]")
    pts, pw = _phase_nodes(testfn, n_phase)
    if testfn.time_only:
        space, grad = np.ones(len(pts)), None
    else:
        space, grad = testfn.space_factor(pts)
    residual = 0.0
    size = 0.0
    if t_lo < 0:
        chi0, _ = testfn.time_factor(0.0)
        g0 = beta_fn(profile(pts)) * chi0 * space * pw
        residual += float(g0.sum())
        size += float(np.abs(g0).sum())
    # the fields are piecewise linear in time, so each snapshot interval
    # inside the support gets its own Gauss rule
    cuts = np.unique(np.clip(np.concatenate([np.asarray(history.times, dtype=float), [t_lo, t_hi]]),
                             max(t_lo, 0.0), t_hi))
    tn, tw = map(np.concatenate, zip(*(_gauss(a, b, n_time) for a, b in zip(cuts[:-1], cuts[1:]))))
    for t, wt in zip(tn, tw):
        chi, dchi = testfn.time_factor(t)
        g = beta_fn(_f_at(pts, t, history, profile, cfg)) * pw * wt
        a = dchi * space * g
        residual += float(a.sum())
        size += float(np.abs(a).sum())
        if grad is not None:
            E, B = history.fields_at(pts[:, :3], t)
            vh = pts[:, 3:] / np.sqrt(1 + np.sum(pts[:, 3:] ** 2, axis=1))[:, None]
            force = E + np.cross(vh, B)
            adv = chi * (np.sum(grad[:, :3] * vh, axis=1) + np.sum(grad[:, 3:] * force, axis=1)) * g
            residual += float(adv.sum())
            size += float(np.abs(adv).sum())
    beta_id = beta if isinstance(beta, str) else getattr(beta, "__name__", "custom")
    return ResidualReport(testfn.id, beta_id, residual, size,
                          {"n_time": n_time, "n_phase": n_phase if not testfn.time_only else testfn.cells})


def _bracket(times, t):
    k = int(np.searchsorted(times, t, side="right")) - 1
    k = min(max(k, 0), len(times) - 2)
    return k, (t - times[k]) / (times[k + 1] - times[k])


def _interp_pair(deps, times, t):
    k, a = _bracket(times, t)
    rho = (1 - a) * deps[k].rho + a * deps[k + 1].rho
    J = (1 - a) * deps[k].J + a * deps[k + 1].J
    return rho, J


def _check_time_support(testfn, times):
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("snapshot times must start at 0 and increase")
    t_lo, t_hi = testfn.t_support
    if t_hi > times[-1] * (1 + 1e-12) or t_hi <= 0:
        raise InvalidInputError(
            f"test function time support [{t_lo}, {t_hi}] not inside the run [0, {times[-1]}]")
    return t_lo, t_hi


def _time_nodes(times, t_lo, t_hi, n_gauss):
    cuts = np.unique(np.clip(np.concatenate([times, [t_lo, t_hi]]), max(t_lo, 0.0), t_hi))
    for a, b in zip(cuts[:-1], cuts[1:]):
        yield from zip(*_gauss(a, b, n_gauss))


def continuity_residual(deposits, testfn, n_gauss=4):
    """Quadrature of  int phi0 rho0 + int int (d_t phi rho + grad_x phi . J) dt.

    ``deposits`` is a snapshot series with increasing times starting at 0,
    either of :class:`DepositGrid` objects on one grid (grid quadrature
    of the deposited densities) or of particle ensembles, in which case
    rho = sum w delta_x and J = sum w vhat delta_x are paired with phi
    exactly.  In time, the pairings are linear between snapshots and each
    snapshot interval (split at the support ends of phi) is integrated
    with Gauss-Legendre, so that a static density gives an exactly
    telescoping sum.
    """
    deps = list(deposits)
    if len(deps) < 2:
        raise InvalidInputError("need at least two snapshots")
    if all(isinstance(d, Ensemble) for d in deps):
        return _continuity_particles(deps, testfn, n_gauss)
    if not all(isinstance(d, DepositGrid) for d in deps):
        raise InvalidInputError("snapshots must all be deposits or all be ensembles")
    grid = deps[0].grid
    if not all(d.grid.same_geometry(grid) for d in deps):
        raise InvalidInputError("all snapshots must share one grid")
    times = np.array([d.time for d in deps], dtype=float)
    t_lo, t_hi = _check_time_support(testfn, times)
    c = np.asarray(testfn.center)[:3]
    r = np.asarray(testfn.radius)[:3]
    lo, hi = grid.origin, grid.upper
    if np.any(c - r < lo) or np.any(c + r > hi):
        raise InvalidInputError("test function spatial support leaves the deposit grid")
    nodes = grid.nodes().reshape(-1, 3)
    x_only = TestFunction(testfn.id, testfn.t_center, testfn.t_radius, tuple(c), tuple(r))
    space, grad = x_only.space_factor(nodes)
    vol = grid.cell_volume
    space = space * vol
    grad = grad * vol
    residual = 0.0
    size = 0.0
    if t_lo < 0:
        chi0, _ = testfn.time_factor(0.0)
        g0 = chi0 * space * deps[0].rho.reshape(-1)
        residual += float(g0.sum())
        size += float(np.abs(g0).sum())
    for t, wt in _time_nodes(times, t_lo, t_hi, n_gauss):
        chi, dchi = testfn.time_factor(t)
        rho, J = _interp_pair(deps, times, t)
        g1 = dchi * wt * space * rho.reshape(-1)
        g2 = chi * wt * np.sum(grad * J.reshape(-1, 3), axis=1)
        residual += float(g1.sum() + g2.sum())
        size += float(np.abs(g1).sum() + np.abs(g2).sum())
    return ResidualReport(testfn.id, None, residual, size,
                          {"n_snapshots": len(deps), "spacing": grid.spacing, "pairing": "grid"})


def _continuity_particles(snaps, testfn, n_gauss):
    times = np.array([s.time for s in snaps], dtype=float)
    t_lo, t_hi = _check_time_support(testfn, times)
    c = np.asarray(testfn.center)[:3]
    r = np.asarray(testfn.radius)[:3]
    x_only = TestFunction(testfn.id, testfn.t_center, testfn.t_radius, tuple(c), tuple(r))
    # per snapshot: rho and J paired with phi, and the same with |.| for the size
    pair_rho, pair_j, abs_rho, abs_j = (np.empty(len(snaps)) for _ in range(4))
    for k, s in enumerate(snaps):
        space, grad = x_only.space_factor(s.x)
        flux = np.sum(grad * s.vhat, axis=1) * s.w
        pair_rho[k] = np.dot(space, s.w)
        abs_rho[k] = np.dot(np.abs(space), s.w)
        pair_j[k] = flux.sum()
        abs_j[k] = np.abs(flux).sum()
    residual = 0.0
    size = 0.0
    if t_lo < 0:
        chi0, _ = testfn.time_factor(0.0)
        residual += chi0 * pair_rho[0]
        size += abs(chi0) * abs_rho[0]
    for t, wt in _time_nodes(times, t_lo, t_hi, n_gauss):
        chi, dchi = testfn.time_factor(t)
        k, a = _bracket(times, t)
        lin = lambda v: (1 - a) * v[k] + a * v[k + 1]
        residual += wt * (dchi * lin(pair_rho) + chi * lin(pair_j))
        size += wt * (abs(dchi) * lin(abs_rho) + abs(chi) * lin(abs_j))
    return ResidualReport(testfn.id, None, float(residual), float(size),
                          {"n_snapshots": len(snaps), "pairing": "particles"})


__all__ = ["bump", "TestFunction", "beta_function", "ResidualReport", "renorm_residual",
           "continuity_residual"]
