"""Scenario configuration: a single versioned JSON document.

Layout (schema version 1)::

    {
      "schema_version": 1,
      "coupling": {"explicit": {"sigma_E": 1, "sigma_B": 0}},
      "profile": {"kind": "gaussian_product", "mass": 1.0,
                  "x_centers": [[0, 0, 0]], "v_centers": [[0, 0, 0]],
                  "x_scale": 0.5, "v_scale": 0.5},
      "particles": {"n": 1000, "sampling": "monte_carlo", "seed": 0},
      "mollifier": {"level": 4, "shape": "uniform_ball"},
      "grid": {"origin": [-2, -2, -2], "spacing": 0.125, "dims": [33, 33, 33]},
      "time": {"dt": 0.01, "T": 1.0, "snapshot_stride": 10},
      "integrator": {"scheme": "rk4", "v_max_guard": 1e6},
      "validation": {"epsilon": null},
      "picard": {"iterates": 4, "samples": 512},
      "output": "run"
    }

``coupling`` holds exactly one of ``explicit`` or ``physical``; a physical
block is ``{"q", "m", "G", "epsilon0", "limit": "QES"|"QMS", "magnetic"}``.
Every section but ``coupling`` and ``profile`` may be omitted; defaults are
the values of the dataclasses below.  ``mollifier`` and ``grid`` may be
``null`` (singular kernel, no ledger grid).
"""
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .dynamics import FieldConfig, IntegratorConfig, Scheme
from .errors import ConfigError, InvalidInputError
from .kernels import FOUR_PI, MollifierShape, MollifierSpec
from .phase_space import GridSpec, InitialProfile, ProfileKind, SamplingMode

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExplicitCoupling:
    sigma_E: int
    sigma_B: int


@dataclass(frozen=True)
class PhysicalCoupling:
    q: float
    m: float
    G: float
    epsilon0: float
    limit: str = "QES"
    magnetic: bool = True


@dataclass(frozen=True)
class ProfileSpec:
    kind: str
    x_centers: tuple = ((0.0, 0.0, 0.0),)
    v_centers: Optional[tuple] = None
    x_scale: float = 1.0
    v_scale: float = 1.0
    mass: Optional[float] = None
    amplitude: Optional[float] = None


@dataclass(frozen=True)
class ParticleSpec:
    n: int = 1000
    sampling: str = "monte_carlo"
    seed: int = 0


@dataclass(frozen=True)
class MollifierBlock:
    level: int = 4
    shape: str = "uniform_ball"


@dataclass(frozen=True)
class GridBlock:
    origin: tuple
    spacing: float
    dims: tuple


@dataclass(frozen=True)
class TimeSpec:
    T: float = 1.0
    dt: float = 0.01
    snapshot_stride: int = 10


@dataclass(frozen=True)
class IntegratorBlock:
    scheme: str = "rk4"
    v_max_guard: float = 1e6


@dataclass(frozen=True)
class ValidationBlock:
    epsilon: Optional[float] = None


@dataclass(frozen=True)
class PicardBlock:
    iterates: int = 4
    samples: int = 512


@dataclass(frozen=True)
class ScenarioConfig:
    coupling: object
    profile: ProfileSpec
    particles: ParticleSpec = field(default_factory=ParticleSpec)
    mollifier: Optional[MollifierBlock] = field(default_factory=MollifierBlock)
    grid: Optional[GridBlock] = None
    time: TimeSpec = field(default_factory=TimeSpec)
    integrator: IntegratorBlock = field(default_factory=IntegratorBlock)
    validation: ValidationBlock = field(default_factory=ValidationBlock)
    picard: PicardBlock = field(default_factory=PicardBlock)
    output: Optional[str] = None

    # -- resolved objects ------------------------------------------------
    def resolve_coupling(self):
        """(sigma_E, sigma_B, weight scale)."""
        c = self.coupling
        if isinstance(c, ExplicitCoupling):
            return c.sigma_E, c.sigma_B, 1.0
        se, sb, factor = physical_to_sigma(c.q, c.m, c.G, c.epsilon0, c.limit, c.magnetic)
        # K carries 1/(4 pi) while the physical acceleration uses (x-y)/|x-y|^3
        return se, sb, FOUR_PI * factor

    def field_config(self):
        se, sb, _ = self.resolve_coupling()
        return FieldConfig(se, sb, self.mollifier_spec())

    def mollifier_spec(self):
        if self.mollifier is None:
            return None
        return MollifierSpec(self.mollifier.level, self.mollifier.shape)

    def initial_profile(self):
        p = self.profile
        kind = ProfileKind(p.kind)
        if kind is ProfileKind.TABULATED:
            raise InvalidInputError("tabulated profiles cannot be configured from JSON")
        ctor = InitialProfile.gaussian if kind is ProfileKind.GAUSSIAN_PRODUCT else InitialProfile.ball_ball
        scale_kw = ({"sigma_x": p.x_scale, "sigma_v": p.v_scale} if kind is ProfileKind.GAUSSIAN_PRODUCT
                    else {"radius_x": p.x_scale, "radius_v": p.v_scale})
        prof = ctor(mass=p.mass, amplitude=p.amplitude, x_centers=p.x_centers,
                    v_centers=p.v_centers, **scale_kw)
        _, _, scale = self.resolve_coupling()
        return prof if scale == 1.0 else prof.scaled(scale)

    def integrator_config(self):
        return IntegratorConfig(self.time.dt, Scheme(self.integrator.scheme), self.integrator.v_max_guard)

    def grid_spec(self):
        if self.grid is None:
            return None
        return GridSpec(self.grid.origin, self.grid.spacing, self.grid.dims)

    def with_seed(self, seed):
        return replace(self, particles=replace(self.particles, seed=int(seed)))

    # -- serialisation -----------------------------------------------------
    def to_dict(self):
        d = {"schema_version": SCHEMA_VERSION}
        if isinstance(self.coupling, ExplicitCoupling):
            d["coupling"] = {"explicit": asdict(self.coupling)}
        else:
            d["coupling"] = {"physical": asdict(self.coupling)}
        for f in fields(self):
            if f.name == "coupling":
                continue
            v = getattr(self, f.name)
            d[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        return _listify(d)

    def emit(self):
        """Canonical JSON text (sorted keys, two-space indent)."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        return hashlib.sha256(self.emit().encode()).hexdigest()


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _tupleify(obj):
    if isinstance(obj, list):
        return tuple(_tupleify(v) for v in obj)
    return obj


# -- physical mapping -------------------------------------------------------

def critical_charge(m, G, epsilon0):
    """q_c = sqrt(4 pi epsilon0 G) m (the sign convention is irrelevant: only q^2 enters)."""
    return math.sqrt(FOUR_PI * epsilon0 * G) * m


def physical_to_sigma(q, m, G, epsilon0, limit="QES", magnetic=True):
    """(sigma_E, sigma_B, rescale) from physical constants.

    sigma_E is the sign of |q| - q_c; sigma_B is 1 when the magnetic term
    is retained.  ``rescale`` is the positive coupling that is folded into
    the particle weights: |q^2/(4 pi eps0 m) - G m| when the electric part
    is present, q^2/(4 pi eps0 m) at the critical charge.
    """
    if not m > 0 or not G >= 0 or not epsilon0 > 0:
        raise InvalidInputError("need m > 0, G >= 0 and epsilon0 > 0")
    if limit not in ("QES", "QMS"):
        raise InvalidInputError(f"limit must be 'QES' or 'QMS', got {limit!r}")
    qc = critical_charge(m, G, epsilon0)
    electric = q * q / (FOUR_PI * epsilon0 * m)
    if math.isclose(abs(q), qc, rel_tol=1e-12, abs_tol=0.0) or (q == 0 and qc == 0):
        sigma_e = 0
    else:
        sigma_e = 1 if abs(q) > qc else -1
    sigma_b = 1 if magnetic else 0
    if sigma_e == 0:
        if sigma_b == 0:
            raise InvalidInputError("critical charge without the magnetic term leaves no field")
        if electric == 0:
            raise InvalidInputError("zero charge at the critical point leaves no field")
        return 0, 1, electric
    return sigma_e, sigma_b, abs(electric - G * m)


# -- parsing ----------------------------------------------------------------

_SECTIONS = {
    "particles": ParticleSpec,
    "mollifier": MollifierBlock,
    "grid": GridBlock,
    "time": TimeSpec,
    "integrator": IntegratorBlock,
    "validation": ValidationBlock,
    "picard": PicardBlock,
}
_NULLABLE = {"mollifier", "grid"}
_TOP = {"schema_version", "coupling", "profile", "output"} | set(_SECTIONS)


class _Locator:
    """Maps JSON keys to the line of their first occurrence in the text."""

    def __init__(self, text):
        self.text = text

    def line(self, key):
        m = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        if m is None:
            return None
        return self.text.count("\n", 0, m.start()) + 1


def _reject_duplicates(pairs):
    d = {}
    for k, v in pairs:
        if k in d:
            raise ConfigError(f"duplicate key {k!r}")
        d[k] = v
    return d


def _build(cls, data, where, loc):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object", loc.line(where.split(".")[-1]))
    allowed = {f.name for f in fields(cls)}
    for k in data:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}", loc.line(k))
    try:
        return cls(**{k: _tupleify(v) for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}", loc.line(where.split(".")[-1])) from None


def _check(cond, message, loc, key):
    if not cond:
        raise ConfigError(message, loc.line(key))


def _validate(cfg, loc):
    c = cfg.coupling
    if isinstance(c, ExplicitCoupling):
        _check(c.sigma_E in (-1, 0, 1) and c.sigma_B in (0, 1),
               "sigma_E must be in {-1, 0, 1} and sigma_B in {0, 1}", loc, "explicit")
    else:
        try:
            physical_to_sigma(c.q, c.m, c.G, c.epsilon0, c.limit, c.magnetic)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), loc.line("physical")) from None
    p = cfg.profile
    _check(p.kind in (ProfileKind.GAUSSIAN_PRODUCT.value, ProfileKind.BALL_BALL.value),
           f"profile kind must be gaussian_product or ball_ball, got {p.kind!r}", loc, "kind")
    _check((p.mass is None) != (p.amplitude is None), "profile needs exactly one of mass or amplitude",
           loc, "profile")
    size = p.mass if p.mass is not None else p.amplitude
    _check(isinstance(size, (int, float)) and size >= 0, "profile mass/amplitude must be >= 0", loc, "profile")
    _check(p.x_scale > 0 and p.v_scale > 0, "profile scales must be positive", loc, "x_scale")
    _check(isinstance(cfg.particles.n, int) and cfg.particles.n >= 0, "particles.n must be a non-negative integer",
           loc, "n")
    _check(cfg.particles.sampling in [m.value for m in SamplingMode], "unknown sampling mode", loc, "sampling")
    _check(isinstance(cfg.particles.seed, int) and 0 <= cfg.particles.seed < 2**64,
           "seed must be an unsigned 64-bit integer", loc, "seed")
    t = cfg.time
    _check(t.T > 0, "time.T must be positive", loc, "T")
    _check(t.dt > 0, "time.dt must be positive", loc, "dt")
    _check(isinstance(t.snapshot_stride, int) and t.snapshot_stride >= 1,
           "snapshot_stride must be a positive integer", loc, "snapshot_stride")
    _check(cfg.integrator.scheme in [s.value for s in Scheme], "unknown integrator scheme", loc, "scheme")
    _check(cfg.integrator.v_max_guard > 0, "v_max_guard must be positive", loc, "v_max_guard")
    if cfg.mollifier is not None:
        _check(isinstance(cfg.mollifier.level, int) and cfg.mollifier.level >= 1,
               "mollifier level must be a positive integer", loc, "level")
        _check(cfg.mollifier.shape in [s.value for s in MollifierShape], "unknown mollifier shape",
               loc, "shape")
    if cfg.grid is not None:
        g = cfg.grid
        _check(len(g.origin) == 3 and len(g.dims) == 3 and g.spacing > 0
               and all(isinstance(d, int) and d >= 3 for d in g.dims),
               "grid needs a 3-vector origin, spacing > 0 and three dims >= 3", loc, "grid")
    eps = cfg.validation.epsilon
    _check(eps is None or eps > 0, "epsilon must be positive", loc, "epsilon")
    _check(cfg.picard.iterates >= 1 and cfg.picard.samples >= 1, "picard settings must be positive",
           loc, "picard")


def parse_config_text(text):
    """Parse and fully validate a configuration document."""
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    loc = _Locator(text)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", 1)
    for k in data:
        if k not in _TOP:
            raise ConfigError(f"unknown key {k!r}", loc.line(k))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}", loc.line("schema_version"))
    for k in ("coupling", "profile"):
        if k not in data:
            raise ConfigError(f"missing required section {k!r}")
    coupling = data["coupling"]
    if not isinstance(coupling, dict) or len(coupling) != 1 or not set(coupling) <= {"explicit", "physical"}:
        if isinstance(coupling, dict):
            extra = set(coupling) - {"explicit", "physical"}
            if extra:
                k = sorted(extra)[0]
                raise ConfigError(f"unknown key {k!r} in coupling", loc.line(k))
        raise ConfigError("coupling needs exactly one of 'explicit' or 'physical'", loc.line("coupling"))
    if "explicit" in coupling:
        c = _build(ExplicitCoupling, coupling["explicit"], "coupling.explicit", loc)
    else:
        c = _build(PhysicalCoupling, coupling["physical"], "coupling.physical", loc)
    kw = {"coupling": c, "profile": _build(ProfileSpec, data["profile"], "profile", loc)}
    for name, cls in _SECTIONS.items():
        if name not in data:
            continue
        if data[name] is None:
            _check(name in _NULLABLE, f"section {name!r} cannot be null", loc, name)
            kw[name] = None
        else:
            kw[name] = _build(cls, data[name], name, loc)
    if "output" in data:
        _check(data["output"] is None or isinstance(data["output"], str), "output must be a string",
               loc, "output")
        kw["output"] = data["output"]
    cfg = ScenarioConfig(**kw)
    _validate(cfg, loc)
    return cfg


def parse_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text())


__all__ = [
    "SCHEMA_VERSION", "ExplicitCoupling", "PhysicalCoupling", "ProfileSpec", "ParticleSpec",
    "MollifierBlock", "GridBlock", "TimeSpec", "IntegratorBlock", "ValidationBlock", "PicardBlock",
    "ScenarioConfig", "critical_charge", "physical_to_sigma", "parse_config_text", "parse_config",
]
