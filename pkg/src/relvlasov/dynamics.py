"""Characteristics, self-consistent evolution and Picard iteration.

A :class:`FieldHistory` stores ensemble snapshots of a run; fields at an
intermediate time are the linear interpolation of the fields generated by
the two bracketing snapshots.  Transport along a history integrates the
characteristic system  x' = vhat,  v' = E + vhat x B  for arbitrary phase
points with those frozen fields.
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import _compiled
from .errors import BlowUpError, InvalidInputError, NumericalFailure
from .fields import fields_from_sources, lorentz_rhs
from .kernels import MollifierSpec, hat_velocity
from .phase_space import Ensemble, GridSpec

_TIME_EPS = 1e-12


class Scheme(str, Enum):
    RK4 = "rk4"
    BORIS = "boris"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: Scheme = Scheme.RK4
    v_max_guard: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not self.v_max_guard > 0:
            raise InvalidInputError("v_max_guard must be positive")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass(frozen=True)
class FieldConfig:
    sigma_e: int = 1
    sigma_b: int = 0
    mollifier: Optional[MollifierSpec] = None

    def __post_init__(self):
        if self.sigma_e not in (-1, 0, 1) or self.sigma_b not in (0, 1):
            raise InvalidInputError(f"unsupported coupling signs ({self.sigma_e}, {self.sigma_b})")

    @property
    def is_free(self):
        return self.sigma_e == 0 and self.sigma_b == 0

    def to_dict(self):
        return {"sigma_E": self.sigma_e, "sigma_B": self.sigma_b,
                "mollifier": None if self.mollifier is None else self.mollifier.to_dict()}


def _n_steps(span, dt):
    n = int(np.ceil(abs(span) / dt - 1e-9))
    return max(n, 1)


@dataclass(eq=False)
class FieldHistory:
    """Snapshots of a run plus the coupling they were generated with."""

    times: np.ndarray
    snapshots: list
    field_cfg: FieldConfig
    status: str = "ok"
    abort_time: Optional[float] = None
    grid: Optional[GridSpec] = None
    node_fields: Optional[list] = None
    interp_order: int = 1
    _sources: list = field(default_factory=list, repr=False)
    _stacked: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.snapshots) or len(self.times) == 0:
            raise InvalidInputError("history needs one snapshot per time")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("history times must start at 0 and increase strictly")
        self._sources = [
            (np.ascontiguousarray(s.x), np.ascontiguousarray(s.vhat), np.ascontiguousarray(s.w))
            for s in self.snapshots
        ]

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def final(self):
        return self.snapshots[-1]

    def _snapshot_fields(self, k, x):
        fc = self.field_cfg
        if self.node_fields is not None:
            vals, inside = _compiled.node_interp(self.node_fields[k][None], self.interp_order,
                                                 self.grid.origin, self.grid.spacing, x)
            E = vals[:, :3]
            B = vals[:, 3:]
            if not np.all(inside):
                out = ~inside
                sx, sv, sw = self._sources[k]
                Eo, Bo = fields_from_sources(x[out], sx, sv, sw, fc.sigma_e, fc.sigma_b, fc.mollifier)
                E[out] = Eo
                B[out] = Bo
            return E, B
        sx, sv, sw = self._sources[k]
        return fields_from_sources(x, sx, sv, sw, fc.sigma_e, fc.sigma_b, fc.mollifier)

    def locate(self, t):
        """(k, a): t = (1 - a) t_k + a t_{k+1}."""
        times = self.times
        if t < -_TIME_EPS or t > times[-1] * (1 + _TIME_EPS) + _TIME_EPS:
            raise InvalidInputError(f"time {t} outside history range [0, {times[-1]}]")
        if len(times) == 1:
            return 0, 0.0
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(max(k, 0), len(times) - 2)
        a = (t - times[k]) / (times[k + 1] - times[k])
        if abs(a) < 1e-9:
            a = 0.0
        elif abs(a - 1.0) < 1e-9:
            a = 1.0
        return k, min(max(a, 0.0), 1.0)

    def fields_at(self, x, t):
        x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 3))
        if self.field_cfg.is_free:
            z = np.zeros_like(x)
            return z, z.copy()
        k, a = self.locate(t)
        if a == 0.0:
            return self._snapshot_fields(k, x)
        if a == 1.0:
            return self._snapshot_fields(k + 1, x)
        E0, B0 = self._snapshot_fields(k, x)
        E1, B1 = self._snapshot_fields(k + 1, x)
        return (1 - a) * E0 + a * E1, (1 - a) * B0 + a * B1

    def with_grid_sampling(self, grid, every=1, order=3):
        """Copy whose fields come from node values on ``grid``.

        Node fields are direct sums from each kept snapshot (every
        ``every``-th plus the last), interpolated trilinearly (``order=1``)
        or with cubic B-splines (``order=3``, C2 in x, so RK4 keeps its
        order and the flow stays close to volume preserving).  Points off
        the usable node box fall back to the direct sum.  Fields still
        depend on x only, so the phase-space field stays divergence-free.
        """
        if order not in (1, 3):
            raise InvalidInputError("interpolation order must be 1 or 3")
        if order == 3 and min(grid.dims) < 4:
            raise InvalidInputError("cubic interpolation needs at least 4 nodes per axis")
        keep = list(range(0, len(self.times), every))
        if keep[-1] != len(self.times) - 1:
            keep.append(len(self.times) - 1)
        snaps = [self.snapshots[k] for k in keep]
        fc = self.field_cfg
        nodes = np.ascontiguousarray(grid.nodes().reshape(-1, 3))
        node_fields = []
        for s in snaps:
            E, B = fields_from_sources(nodes, s.x, s.vhat, s.w, fc.sigma_e, fc.sigma_b, fc.mollifier)
            vals = np.hstack([E, B]).reshape(grid.dims + (6,))
            if order == 3:
                vals = np.stack([ndimage.spline_filter(vals[..., c], order=3, mode="mirror")
                                 for c in range(6)], axis=-1)
            node_fields.append(np.ascontiguousarray(vals))
        return FieldHistory(self.times[keep], snaps, fc, self.status, self.abort_time, grid,
                            node_fields, order)

    def stacked_node_fields(self):
        if self._stacked is None:
            self._stacked = np.ascontiguousarray(np.stack(self.node_fields))
        return self._stacked

    def manifest(self):
        return {"times": [repr(float(t)) for t in self.times], "n_snapshots": len(self.times),
                "status": self.status, "abort_time": self.abort_time, **self.field_cfg.to_dict()}

    def export(self, directory):
        """Per-snapshot ensemble CSVs plus ``history.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for i, s in enumerate(self.snapshots):
            name = f"snapshot_{i:05d}.csv"
            s.to_csv(d / name)
            names.append(name)
        man = self.manifest()
        man["files"] = names
        (d / "history.json").write_text(json.dumps(man, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        man = json.loads((d / "history.json").read_text())
        times = [float(t) for t in man["times"]]
        snaps = [Ensemble.from_csv(d / f, t) for f, t in zip(man["files"], times)]
        moll = man["mollifier"]
        fc = FieldConfig(man["sigma_E"], man["sigma_B"],
                         None if moll is None else MollifierSpec(moll["level"], moll["shape"]))
        return cls(times, snaps, fc, man["status"], man["abort_time"])


def free_history(ensemble, T, n_steps):
    """History of exact free streaming: x(t) = x0 + t vhat0, v(t) = v0."""
    times = T * np.arange(n_steps + 1) / n_steps
    vh = ensemble.vhat
    snaps = [Ensemble(ensemble.x + t * vh, ensemble.v, ensemble.w, t) for t in times]
    return FieldHistory(times, snaps, FieldConfig(0, 0, None))


# -- single steps -------------------------------------------------------------

def _rhs(z, t, fields):
    E, B = fields(z[:, :3], t)
    return lorentz_rhs(z, E, B)


def _rk4(z, t, dt, fields):
    k1 = _rhs(z, t, fields)
    k2 = _rhs(z + 0.5 * dt * k1, t + 0.5 * dt, fields)
    k3 = _rhs(z + 0.5 * dt * k2, t + 0.5 * dt, fields)
    k4 = _rhs(z + dt * k3, t + dt, fields)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def boris_kick(v, E, B, dt):
    """Relativistic Boris velocity update; pure B rotations keep |v| fixed."""
    vm = v + 0.5 * dt * E
    gm = np.sqrt(1.0 + np.sum(vm * vm, axis=-1))[:, None]
    tv = 0.5 * dt * B / gm
    sv = 2.0 * tv / (1.0 + np.sum(tv * tv, axis=-1))[:, None]
    vp = vm + np.cross(vm, tv)
    vplus = vm + np.cross(vp, sv)
    return vplus + 0.5 * dt * E


def _boris(z, t, dt, fields):
    x = z[:, :3] + 0.5 * dt * hat_velocity(z[:, 3:])
    E, B = fields(x, t + 0.5 * dt)
    v = boris_kick(z[:, 3:], E, B, dt)
    x = x + 0.5 * dt * hat_velocity(v)
    return np.hstack([x, v])


def _advance(z, t, dt, fields, scheme):
    if scheme is Scheme.RK4:
        return _rk4(z, t, dt, fields)
    return _boris(z, t, dt, fields)


def _guard(z, cfg, t, step):
    vmax = np.max(np.linalg.norm(z[:, 3:], axis=1)) if len(z) else 0.0
    if not np.isfinite(vmax):
        raise NumericalFailure(f"non-finite state at step {step}", step=step)
    if vmax > cfg.v_max_guard:
        raise BlowUpError(f"|v| = {vmax:.3g} exceeds guard {cfg.v_max_guard:g} at t = {t:.6g}",
                          time=t, state=z, step=step)


def step(z, t, history, cfg, dt=None):
    """One explicit step of the configured scheme along the frozen history."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    dt = cfg.dt if dt is None else dt
    out = _advance(z, t, dt, history.fields_at, cfg.scheme)
    _guard(out, cfg, t + dt, 1)
    return out


def integrate(z0, t0, t1, history, cfg, record=False):
    """Transport phase points from t0 to t1 (either direction).

    Uses the largest step not exceeding ``cfg.dt`` that divides |t1 - t0|.
    With ``record`` the state at every step is returned as well.
    """
    z = np.atleast_2d(np.asarray(z0, dtype=float)).copy()
    if t1 == t0:
        return (z, [z.copy()]) if record else z
    n = _n_steps(t1 - t0, cfg.dt)
    dt = (t1 - t0) / n
    if history.field_cfg.is_free:
        # zero field: characteristics are straight lines, use them exactly
        x0 = z[:, :3].copy()
        vh = hat_velocity(z[:, 3:])
        traj = [z.copy()] if record else None
        for k in range(1, n + 1) if record else (n,):
            t = t0 + (t1 - t0) * k / n
            z = np.hstack([x0 + (t - t0) * vh, z[:, 3:]])
            if record:
                traj.append(z)
        return (z, traj) if record else z
    if not record and cfg.scheme is Scheme.RK4 and history.node_fields is not None \
            and not history.field_cfg.is_free:
        return _integrate_on_nodes(z, t0, t1, n, history, cfg)
    traj = [z.copy()] if record else None
    for k in range(n):
        t = t0 + (t1 - t0) * k / n
        z = _advance(z, t, dt, history.fields_at, cfg.scheme)
        _guard(z, cfg, t + dt, k + 1)
        if record:
            traj.append(z.copy())
    return (z, traj) if record else z


def _integrate_on_nodes(z, t0, t1, n, history, cfg):
    # compiled RK4 through the node fields; points leaving the node box
    # are redone with the generic path (direct-sum fallback)
    out, ok, vmax = _compiled.rk4_grid_transport(
        np.ascontiguousarray(z), float(t0), float(t1), n, np.ascontiguousarray(history.times),
        history.stacked_node_fields(), history.interp_order, history.grid.origin,
        history.grid.spacing)
    if not np.all(ok):
        rest = ~ok
        direct = FieldHistory(history.times, history.snapshots, history.field_cfg)
        out[rest] = integrate(z[rest], t0, t1, direct, cfg)
        vmax[rest] = np.linalg.norm(out[rest, 3:], axis=1)
    if not np.all(np.isfinite(out)) or not np.all(np.isfinite(vmax)):
        raise NumericalFailure("non-finite state during transport")
    if len(vmax) and vmax.max() > cfg.v_max_guard:
        raise BlowUpError(f"|v| = {vmax.max():.3g} exceeds guard {cfg.v_max_guard:g}",
                          time=t1, state=out)
    return out


def flow(z, t, history, cfg):
    """Forward characteristic flow from time 0 to t."""
    return integrate(z, 0.0, t, history, cfg)


def backtrace(z, t, history, cfg):
    """Foot at time 0 of the characteristic through (t, z)."""
    return integrate(z, t, 0.0, history, cfg)


def evaluate_f(z, t, history, profile, cfg):
    """Lagrangian solution f_t(z) = f0(backtrace(z, t))."""
    z = np.asarray(z, dtype=float)
    foot = backtrace(z.reshape(-1, 6), t, history, cfg)
    return profile(foot).reshape(z.shape[:-1])


def flow_jacobian(z, t, history, h, cfg):
    """det of the 6x6 central-difference Jacobian of the forward flow at z."""
    if not h > 0:
        raise InvalidInputError("h must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    m = z.shape[0]
    if t == 0:
        return np.ones(m)
    eye = np.eye(6) * h
    pts = np.concatenate([z[:, None, :] + eye[None], z[:, None, :] - eye[None]], axis=1)
    out = flow(pts.reshape(-1, 6), t, history, cfg).reshape(m, 12, 6)
    jac = (out[:, :6, :] - out[:, 6:, :]) / (2 * h)  # jac[p, k, :] = d flow / d z_k
    return np.linalg.det(np.swapaxes(jac, 1, 2))


# -- self-consistent evolution -------------------------------------------------

def _self_fields(w, fc):
    w = np.ascontiguousarray(w)

    def fields(z):
        x = np.ascontiguousarray(z[:, :3])
        return fields_from_sources(x, x, np.ascontiguousarray(hat_velocity(z[:, 3:])), w,
                                   fc.sigma_e, fc.sigma_b, fc.mollifier)
    return fields


def _coupled_step(z, dt, fields, scheme):
    if scheme is Scheme.RK4:
        def rhs(y):
            E, B = fields(y)
            return lorentz_rhs(y, E, B)
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * dt * k1)
        k3 = rhs(z + 0.5 * dt * k2)
        k4 = rhs(z + dt * k3)
        return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    x = z[:, :3] + 0.5 * dt * hat_velocity(z[:, 3:])
    E, B = fields(np.hstack([x, z[:, 3:]]))
    v = boris_kick(z[:, 3:], E, B, dt)
    return np.hstack([x + 0.5 * dt * hat_velocity(v), v])


def run_coupled(ensemble0, T, cfg, field_cfg, stride=1):
    """Self-consistent particle evolution up to time T.

    Every stage of the scheme evaluates the fields of the current stage
    ensemble by direct summation, so the whole particle system is advanced
    synchronously.  Snapshots are kept every ``stride`` steps and at T.
    A velocity blow-up stops the run; the returned history then has
    ``status == "blowup"`` and ends at the last good snapshot.
    """
    if not T > 0:
        raise InvalidInputError("T must be positive")
    if stride < 1:
        raise InvalidInputError("stride must be at least 1")
    n = _n_steps(T, cfg.dt)
    dt = T / n
    w = ensemble0.w
    fields = _self_fields(w, field_cfg)
    z = ensemble0.z
    times = [0.0]
    snaps = [Ensemble.from_phase(z, w, 0.0)]
    status = "ok"
    abort_time = None
    x0 = ensemble0.x
    vh0 = ensemble0.vhat
    for k in range(n):
        t = T * (k + 1) / n
        if field_cfg.is_free:
            z = np.hstack([x0 + t * vh0, ensemble0.v])
        else:
            z = _coupled_step(z, dt, fields, cfg.scheme)
        if not np.all(np.isfinite(z)):
            raise NumericalFailure(f"non-finite fields or state at step {k + 1}", step=k + 1)
        if np.max(np.linalg.norm(z[:, 3:], axis=1)) > cfg.v_max_guard:
            status = "blowup"
            abort_time = t
            break
        if (k + 1) % stride == 0 or k + 1 == n:
            times.append(t)
            snaps.append(Ensemble.from_phase(z, w, t))
    return FieldHistory(np.array(times), snaps, field_cfg, status, abort_time)


# -- Picard iteration ----------------------------------------------------------

@dataclass
class PicardReport:
    """Sup distances d_n = max_{t, i} |Z^{n+1}_i(t) - Z^n_i(t)|, n = 1..N."""

    distances: list
    times: np.ndarray
    status: str = "ok"
    n_samples: int = 0
    trajectories: Optional[list] = None

    def ratios(self):
        d = np.asarray(self.distances)
        return d[1:] / d[:-1]

    def to_dict(self):
        return {"distances": [repr(float(d)) for d in self.distances],
                "iterates": list(range(1, len(self.distances) + 1)),
                "T": float(self.times[-1]), "n_samples": self.n_samples, "status": self.status}


def picard_solve(ensemble, T, n_iter, cfg, field_cfg, sample=None, keep_trajectories=False):
    """Picard iteration on characteristics.

    Iterate 1 is exact free streaming; iterate n+1 transports the ensemble
    along the frozen history generated by iterate n.  ``sample`` selects
    the particle indices over which the distances are measured (all by
    default).  Returns ``(report, history of the last iterate)``.
    """
    if not T > 0 or n_iter < 1:
        raise InvalidInputError("need T > 0 and at least one iterate")
    n = _n_steps(T, cfg.dt)
    idx = np.arange(len(ensemble)) if sample is None else np.asarray(sample)
    hist = free_history(ensemble, T, n)
    prev = np.stack([s.z for s in hist.snapshots])
    kept = [prev] if keep_trajectories else None
    distances = []
    status = "ok"
    z0 = ensemble.z
    for _ in range(n_iter):
        hist = FieldHistory(hist.times, hist.snapshots, field_cfg)
        try:
            _, traj = integrate(z0, 0.0, T, hist, cfg, record=True)
        except BlowUpError:
            status = "blowup"
            break
        cur = np.stack(traj)
        distances.append(float(np.max(np.linalg.norm(cur[:, idx] - prev[:, idx], axis=-1))))
        if keep_trajectories:
            kept.append(cur)
        hist = FieldHistory(hist.times, [Ensemble.from_phase(c, ensemble.w, t)
                                         for c, t in zip(cur, hist.times)], field_cfg)
        prev = cur
    report = PicardReport(distances, hist.times, status, len(idx), kept)
    return report, hist
