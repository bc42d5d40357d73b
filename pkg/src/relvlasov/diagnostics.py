"""Energy functionals, energy ledger, Casimirs and initial-data admissibility.

Energy bookkeeping uses two families of potential energies:

* pair energies ``(1/2) sum_ij w_i w_j H_n(x_i - x_j)`` (and the same with
  ``vhat_i . vhat_j`` inserted) with the run's mollified kernel.  These are
  the quantities the particle scheme conserves exactly in continuous time,
  so they are the ones used for the conservation checks;
* grid energies from a cloud-in-cell deposit, used for the field-energy
  identities and reported in the ledger when a grid is given.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _compiled
from .bounds import default_epsilon, hls_potential_constant, interpolation_constant
from .dynamics import IntegratorConfig, backtrace
from .errors import InvalidInputError, ValidationError
from .fields import (convolve_potential, deposit_potential_energies, field_energy, grid_curl,
                     grid_div, grid_grad, GridField, monopole_tail)
from .kernels import MollifierShape, MollifierSpec, kernel_params
from .phase_space import ProfileKind, _iter_lattice, deposit, lattice_axes, lp_norm

LEDGER_COLUMNS = (
    "time",            # snapshot time
    "mass",            # sum of particle weights
    "grid_mass",       # deposited mass on the ledger grid (nan without a grid)
    "escaped",         # weight outside the ledger grid (nan without a grid)
    "rel_energy",      # sum w sqrt(1 + |v|^2)
    "pe_electric",     # (1/2) sum w_i w_j H_n(x_i - x_j), unsigned
    "pe_magnetic",     # (1/2) sum w_i w_j vhat_i . vhat_j H_n(x_i - x_j), unsigned
    "e_field_energy",  # (1/2) int |E|^2 on the grid plus exterior tail
    "b_field_energy",  # (1/2) int |B|^2 on the grid plus exterior tail
)


def relativistic_energy(ensemble):
    """sum_i w_i sqrt(1 + |v_i|^2)."""
    return ensemble.relativistic_energy()


def pair_energies(ensemble, spec):
    """Unsigned (electric, magnetic) pair potential energies with kernel H_n.

    With ``spec=None`` the singular kernel is used and coincident pairs,
    the diagonal included, are left out.
    """
    if len(ensemble) == 0:
        return 0.0, 0.0
    radius, shape = kernel_params(spec)
    pe, pm = _compiled.pair_energies(np.ascontiguousarray(ensemble.x),
                                     np.ascontiguousarray(ensemble.vhat),
                                     np.ascontiguousarray(ensemble.w), radius, shape)
    return float(pe), float(pm)


def potential_energies(dep, spec=None):
    """(1/2) sum (H*rho) rho h^3 and (1/2) sum (H*J).J h^3 for a deposit."""
    return deposit_potential_energies(dep, spec)


# -- field-energy identities --------------------------------------------------

@dataclass
class IdentityReport:
    e_sq: float          # sum |E|^2 h^3 inside the box
    e_sq_tail: float     # exterior monopole estimate of int |E|^2
    phi_rho: float       # sum (H*rho) rho h^3
    curl_sq: float       # sum |curl(H*J)|^2 h^3
    div_sq: float        # sum (div(H*J))^2 h^3
    grad_a_tail: float   # exterior estimate of int |grad(H*J)|^2
    a_j: float           # sum (H*J).J h^3
    tail_bound: float    # monopole bound for the electric tail
    tolerance: float = 0.05

    @property
    def electric_discrepancy(self):
        if self.phi_rho == 0.0:
            return 0.0
        return abs(self.e_sq + self.e_sq_tail - self.phi_rho) / self.phi_rho

    @property
    def magnetic_ratio(self):
        lhs = self.curl_sq + self.div_sq + self.grad_a_tail
        if self.a_j == 0.0:
            return 0.0 if lhs == 0.0 else math.inf
        return lhs / self.a_j

    @property
    def magnetic_ok(self):
        return self.a_j >= -self.tolerance * abs(self.phi_rho) and \
            self.magnetic_ratio <= 1 + self.tolerance

    def to_dict(self):
        d = asdict(self)
        d.update(electric_discrepancy=self.electric_discrepancy,
                 magnetic_ratio=self.magnetic_ratio, magnetic_ok=self.magnetic_ok)
        return d


def energy_identities(dep, spec=None, tolerance=0.05):
    """The five grid quantities behind  int|E|^2 = int (H*rho) rho  and
    int|B|^2 = int (H*J).J - int (div H*J)^2.

    Field energies in the box are completed by monopole exterior tails.
    """
    vol = dep.grid.cell_volume
    phi = GridField(dep.grid, convolve_potential(dep.grid, dep.rho, spec))
    e_sq = field_energy(grid_grad(phi))
    tail, bound = monopole_tail(dep, "rho")
    phi_rho = float(np.sum(phi.values * dep.rho) * vol)
    if np.any(dep.J):
        A = GridField(dep.grid, convolve_potential(dep.grid, dep.J, spec))
        curl_sq = field_energy(grid_curl(A))
        div_sq = field_energy(grid_div(A))
        a_j = float(np.sum(A.values * dep.J) * vol)
        a_tail, _ = monopole_tail(dep, "J")
    else:
        curl_sq = div_sq = a_j = a_tail = 0.0
    return IdentityReport(e_sq, tail, phi_rho, curl_sq, div_sq, a_tail, a_j, bound, tolerance)


# -- ledger -----------------------------------------------------------------

@dataclass
class EnergyLedger:
    """One row per snapshot; columns in :data:`LEDGER_COLUMNS` plus Casimirs."""

    rows: list
    sigma_e: int
    sigma_b: int
    casimir_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def columns(self):
        return LEDGER_COLUMNS + tuple(f"casimir_{c}" for c in self.casimir_ids)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def times(self):
        return self.column("time")

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([repr(float(r[c])) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, sigma_e, sigma_b):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [{k: float(v) for k, v in r.items()} for r in reader]
            names = reader.fieldnames
        cas = tuple(n[len("casimir_"):] for n in names if n.startswith("casimir_"))
        return cls(rows, sigma_e, sigma_b, cas)


def _grid_energies(snap, grid, spec, sigma_e, sigma_b):
    dep = deposit(snap, grid)
    row = {"grid_mass": dep.mass, "escaped": dep.escaped}
    e = b = 0.0
    if sigma_e != 0 and np.any(dep.rho):
        phi = GridField(grid, convolve_potential(grid, dep.rho, spec))
        e = 0.5 * (field_energy(grid_grad(phi)) + monopole_tail(dep, "rho")[0])
    if sigma_b != 0 and np.any(dep.J):
        A = GridField(grid, convolve_potential(grid, dep.J, spec))
        b = 0.5 * (field_energy(grid_curl(A)) + monopole_tail(dep, "J")[0])
    row["e_field_energy"] = e
    row["b_field_energy"] = b
    return row


def build_ledger(history, grid=None, casimirs=None, every=1):
    """Fold the snapshots of ``history`` into an :class:`EnergyLedger`.

    ``casimirs`` maps an id to a callable ``f(snapshot_index) -> value``.
    Without a grid the field energies fall back to the pair energies
    (exact for the electric part by the energy identity).
    """
    fc = history.field_cfg
    spec = fc.mollifier
    casimirs = casimirs or {}
    rows = []
    for k in range(0, len(history.times), every):
        snap = history.snapshots[k]
        pe, pm = pair_energies(snap, spec) if len(snap) else (0.0, 0.0)
        row = {"time": float(history.times[k]), "mass": snap.total_weight,
               "rel_energy": snap.relativistic_energy(), "pe_electric": pe, "pe_magnetic": pm}
        if grid is not None:
            row.update(_grid_energies(snap, grid, fc.mollifier, fc.sigma_e, fc.sigma_b))
        else:
            row.update(grid_mass=math.nan, escaped=math.nan,
                       e_field_energy=abs(fc.sigma_e) * pe, b_field_energy=fc.sigma_b * pm)
        for cid, fn in casimirs.items():
            row[f"casimir_{cid}"] = float(fn(k))
        rows.append(row)
    meta = {"field_energy_source": "grid" if grid is not None else "pair",
            "status": history.status}
    return EnergyLedger(rows, fc.sigma_e, fc.sigma_b, tuple(casimirs), meta)


@dataclass
class InequalityReport:
    passed: bool
    energy0: float
    margins: np.ndarray
    defect: float
    tolerance: float

    @property
    def min_margin(self):
        return float(self.margins.min())

    def to_dict(self):
        return {"passed": self.passed, "energy0": self.energy0, "min_margin": self.min_margin,
                "defect": self.defect, "tolerance": self.tolerance}


def energy_inequality_check(ledger, sigma_e=None, sigma_b=None, tol=0.01):
    """REL(t) + sE PE(t) <= REL(0) + sE PE(0) + tol |E_0| at every snapshot.

    E_0 is the full initial energy, magnetic potential energy included.
    For sB = 0 the relation must hold as an equality up to the same
    tolerance.  ``defect`` is the largest relative deviation.
    """
    if len(ledger) < 2:
        raise InvalidInputError("ledger needs at least two snapshots")
    se = ledger.sigma_e if sigma_e is None else sigma_e
    sb = ledger.sigma_b if sigma_b is None else sigma_b
    rel = ledger.column("rel_energy")
    pe = ledger.column("pe_electric")
    pm = ledger.column("pe_magnetic")
    lhs = rel + se * pe
    e0 = float(rel[0] + se * pe[0] + sb * pm[0])
    scale = abs(e0) if e0 != 0 else 1.0
    margins = (lhs[0] - lhs) / scale
    defect = float(np.max(np.abs(margins)))
    passed = bool(margins.min() >= -tol)
    if sb == 0:
        passed = passed and defect <= tol
    return InequalityReport(passed, e0, margins, defect, tol)


def finite_energy_criterion(ledger, T=None):
    """(trapezoid integral of REL + field energies over [0, T], finite?)."""
    t = ledger.times
    if len(t) == 0:
        return 0.0, True
    T = t[-1] if T is None else T
    if T > t[-1] * (1 + 1e-12):
        raise InvalidInputError("ledger does not cover [0, T]")
    keep = t <= T * (1 + 1e-12)
    integrand = (ledger.column("rel_energy") + ledger.column("e_field_energy")
                 + ledger.column("b_field_energy"))[keep]
    if keep.sum() < 2:
        return 0.0, bool(np.all(np.isfinite(integrand)))
    value = float(np.trapezoid(integrand, t[keep]))
    return value, bool(np.isfinite(value))


# -- Casimirs -------------------------------------------------------------------

def psi_function(psi):
    """Casimir densities: 'square' s^2, 'min1' min(s, 1), 'above:c' 1_{s > c}."""
    if callable(psi):
        return psi
    if psi == "square":
        return lambda s: s * s
    if psi == "min1":
        return lambda s: np.minimum(s, 1.0)
    if isinstance(psi, str) and psi.startswith("above:"):
        c = float(psi.split(":", 1)[1])
        return lambda s: (s > c).astype(float)
    raise InvalidInputError(f"unknown Casimir density {psi!r}")


@dataclass
class CasimirResult:
    value: float
    time: float
    outside_weight: float
    warning: Optional[str] = None


def _nearest_snapshot(history, t):
    k = int(np.argmin(np.abs(history.times - t)))
    return history.snapshots[k]


def casimir(history, profile, psi, t, box, cells, cfg=None, chunk=1 << 16):
    """int psi(f_t) over the midpoint lattice on ``box`` = (lo, hi).

    f_t is obtained by back-tracing each lattice point to time 0.  If more
    than 0.1% of the particle weight of the nearest snapshot lies outside
    the box, a coverage warning is attached.
    """
    cfg = cfg or IntegratorConfig()
    fn = psi_function(psi)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes, widths = lattice_axes(lo, hi, cells)
    vol = float(np.prod(widths))
    total = 0.0
    for pts in _iter_lattice(axes, chunk):
        foot = pts if t == 0 else backtrace(pts, t, history, cfg)
        total += float(np.sum(fn(profile(foot))))
    snap = _nearest_snapshot(history, t)
    z = snap.z
    out = ~np.all((z >= lo) & (z <= hi), axis=1)
    frac = float(snap.w[out].sum() / snap.total_weight) if snap.total_weight > 0 else 0.0
    warn = None
    if frac > 1e-3:
        warn = f"lattice misses {frac:.2%} of the weight at t = {t:g}"
    return CasimirResult(total * vol, float(t), frac, warn)


# -- initial-data admissibility ---------------------------------------------------

@dataclass
class ValidationReport:
    sigma_e: int
    epsilon: float
    checks: list

    @property
    def passed(self):
        return all(c["ok"] for c in self.checks)

    def to_dict(self):
        return {"sigma_E": self.sigma_e, "epsilon": self.epsilon, "passed": self.passed,
                "checks": self.checks}


def _relativistic_moment(profile, cells=48):
    # int sqrt(1+|v|^2) f0; separable for unbanded analytic profiles
    if profile.kind is not ProfileKind.TABULATED and profile.band is None:
        total = 0.0
        half = profile.v_scale * (6.0 if profile.kind is ProfileKind.GAUSSIAN_PRODUCT else 1.0)
        for vc in profile.v_centers:
            axes, widths = lattice_axes(vc - half, vc + half, cells)
            g = np.meshgrid(*axes, indexing="ij")
            r2 = sum((gi - c) ** 2 for gi, c in zip(g, vc))
            if profile.kind is ProfileKind.GAUSSIAN_PRODUCT:
                fv = np.exp(-0.5 * r2 / profile.v_scale**2)
            else:
                fv = (r2 < profile.v_scale**2).astype(float)
            speed = np.sqrt(1 + sum(gi**2 for gi in g))
            vint = float(np.sum(fv * speed) * np.prod(widths))
            vmass = float(np.sum(fv) * np.prod(widths))
            per = profile._component_mass()
            total += profile.amplitude * per * vint / vmass
        return total
    lo, hi = profile.support_box()
    axes, widths = lattice_axes(lo, hi, 10)
    acc = 0.0
    for pts in _iter_lattice(axes):
        acc += float(np.sum(profile(pts) * np.sqrt(1 + np.sum(pts[:, 3:] ** 2, axis=1))))
    return acc * float(np.prod(widths))


def validate_initial(profile, sigma_e, epsilon=None):
    """Admissibility of f0 for the coupling sign ``sigma_e``.

    Always: finite mass and finite relativistic energy.  sE in {0, -1}:
    finite L^{3/2} norm.  sE = -1: ||f0||_{3/2} <= epsilon (default from
    :func:`relvlasov.bounds.default_epsilon`).  Raises
    :class:`ValidationError` naming the first violated condition.
    """
    if sigma_e not in (-1, 0, 1):
        raise InvalidInputError(f"sigma_E must be -1, 0 or 1, got {sigma_e}")
    eps = default_epsilon() if epsilon is None else float(epsilon)
    if not eps > 0:
        raise InvalidInputError("epsilon must be positive")
    checks = []

    def record(name, value, limit, ok):
        checks.append({"condition": name, "value": float(value),
                       "limit": None if limit is None else float(limit), "ok": bool(ok)})
        if not ok:
            raise ValidationError(f"initial data violates {name}: value {value:.6g}"
                                  + ("" if limit is None else f", limit {limit:.6g}"), name)

    mass = profile.mass()
    record("finite_l1", mass, None, np.isfinite(mass) and mass >= 0)
    rel = _relativistic_moment(profile)
    record("finite_relativistic_energy", rel, None, np.isfinite(rel))
    if sigma_e in (0, -1):
        n32 = lp_norm(profile, 1.5)
        record("finite_l3/2", n32, None, np.isfinite(n32))
        # the electric potential energy is then bounded by C_H C(3/2)^2 REL ||f||_{3/2}
        pe_bound = hls_potential_constant() * interpolation_constant(1.5) ** 2 * rel * n32
        record("finite_potential_energy", pe_bound, None, np.isfinite(pe_bound))
        if sigma_e == -1:
            record("smallness_l3/2", n32, eps, n32 <= eps)
    return ValidationReport(sigma_e, eps, checks)


# -- mollified potential energies --------------------------------------------------

@dataclass
class ConvergenceTable:
    levels: list
    radii: list
    values: list
    reference: float

    @property
    def errors(self):
        return [abs(v - self.reference) for v in self.values]

    @property
    def differences(self):
        return [abs(b - a) for a, b in zip(self.values[:-1], self.values[1:])]

    @property
    def monotone(self):
        e = self.errors
        d = self.differences
        return all(b <= a for a, b in zip(e[:-1], e[1:])) and \
            all(b <= a for a, b in zip(d[:-1], d[1:]))

    def to_dict(self):
        return {"levels": self.levels, "radii": self.radii, "values": self.values,
                "reference": self.reference, "errors": self.errors,
                "differences": self.differences, "monotone": self.monotone}


def mollified_energy_convergence(dep, levels, shape=MollifierShape.UNIFORM_BALL):
    """Electric potential energy with H * eta^k for each k, against the
    unmollified (one-cell regularised) grid value."""
    levels = [int(k) for k in levels]
    if any(b <= a for a, b in zip(levels[:-1], levels[1:])):
        raise InvalidInputError("levels must increase")
    values = []
    radii = []
    for k in levels:
        spec = MollifierSpec(k, shape)
        values.append(deposit_potential_energies(dep, spec)[0])
        radii.append(max(spec.radius, dep.grid.spacing))
    ref = deposit_potential_energies(dep, None)[0]
    return ConvergenceTable(levels, radii, values, ref)


__all__ = [
    "LEDGER_COLUMNS", "relativistic_energy", "pair_energies", "potential_energies",
    "IdentityReport", "energy_identities", "EnergyLedger", "build_ledger", "InequalityReport",
    "energy_inequality_check", "finite_energy_criterion", "psi_function", "CasimirResult",
    "casimir", "ValidationReport", "validate_initial", "ConvergenceTable",
    "mollified_energy_convergence",
]
