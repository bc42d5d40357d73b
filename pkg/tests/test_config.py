import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relvlasov.config import (ExplicitCoupling, PhysicalCoupling, ScenarioConfig, critical_charge,
                              parse_config, parse_config_text, physical_to_sigma)
from relvlasov.errors import ConfigError, InvalidInputError
from relvlasov.kernels import FOUR_PI
from relvlasov.scenarios import PRESETS, sign_presets, two_cluster

MINIMAL = {
    "schema_version": 1,
    "coupling": {"explicit": {"sigma_E": 1, "sigma_B": 0}},
    "profile": {"kind": "gaussian_product", "mass": 1.0},
}


def _text(doc):
    return json.dumps(doc, indent=2)


def test_minimal_document_takes_defaults():
    cfg = parse_config_text(_text(MINIMAL))
    assert cfg.coupling == ExplicitCoupling(1, 0)
    assert cfg.particles.n == 1000 and cfg.particles.seed == 0
    assert cfg.time.dt == 0.01 and cfg.time.T == 1.0
    assert cfg.mollifier.level == 4 and cfg.grid is None
    assert cfg.resolve_coupling() == (1, 0, 1.0)


def test_null_mollifier_and_grid():
    doc = dict(MINIMAL, mollifier=None, grid=None)
    cfg = parse_config_text(_text(doc))
    assert cfg.mollifier is None and cfg.mollifier_spec() is None


def test_coupling_blocks_are_exclusive():
    doc = dict(MINIMAL, coupling={"explicit": {"sigma_E": 1, "sigma_B": 0},
                                  "physical": {"q": 1, "m": 1, "G": 0, "epsilon0": 1}})
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config_text(_text(doc))
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config_text(_text(dict(MINIMAL, coupling={})))


def test_unknown_key_reports_line():
    doc = dict(MINIMAL, time={"dt": 0.1, "tee": 2.0})
    text = _text(doc)
    expected = next(i for i, line in enumerate(text.splitlines(), 1) if '"tee"' in line)
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.line == expected
    assert str(info.value).startswith(f"line {expected}:")


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown key 'extra'"):
        parse_config_text(_text(dict(MINIMAL, extra=1)))


def test_duplicate_keys_rejected():
    text = '{"schema_version": 1, "schema_version": 1, "coupling": {}, "profile": {}}'
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text(text)


def test_malformed_json_has_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text('{\n  "schema_version": 1,\n  oops\n}')
    assert info.value.line == 3


@pytest.mark.parametrize("patch", [
    {"schema_version": 2},
    {"time": {"dt": -1.0}},
    {"time": {"snapshot_stride": 0}},
    {"particles": {"seed": -1}},
    {"particles": {"sampling": "sobol"}},
    {"integrator": {"scheme": "euler"}},
    {"mollifier": {"level": 0}},
    {"grid": {"origin": [0, 0], "spacing": 0.1, "dims": [4, 4, 4]}},
    {"validation": {"epsilon": 0.0}},
    {"profile": {"kind": "gaussian_product"}},
    {"profile": {"kind": "gaussian_product", "mass": 1.0, "amplitude": 1.0}},
    {"profile": {"kind": "tabulated", "mass": 1.0}},
    {"coupling": {"explicit": {"sigma_E": 2, "sigma_B": 0}}},
    {"time": None},
])
def test_invalid_documents(patch):
    with pytest.raises(ConfigError):
        parse_config_text(_text(dict(MINIMAL, **patch)))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.json")


# -- physical mapping ---------------------------------------------------------

def test_critical_charge_value():
    assert critical_charge(2.0, 3.0, 0.5) == pytest.approx(2.0 * math.sqrt(FOUR_PI * 1.5), rel=1e-15)


def test_regimes():
    qc = critical_charge(1.0, 1.0, 1.0)
    assert physical_to_sigma(2 * qc, 1.0, 1.0, 1.0)[:2] == (1, 1)
    assert physical_to_sigma(qc, 1.0, 1.0, 1.0)[:2] == (0, 1)
    assert physical_to_sigma(0.5 * qc, 1.0, 1.0, 1.0)[:2] == (-1, 1)
    assert physical_to_sigma(0.5 * qc, 1.0, 1.0, 1.0, magnetic=False)[:2] == (-1, 0)
    assert physical_to_sigma(1.0, 1.0, 0.0, 1.0)[:2] == (1, 1)


def test_critical_without_magnetics_errors():
    qc = critical_charge(1.0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        physical_to_sigma(qc, 1.0, 1.0, 1.0, magnetic=False)


def test_rescale_values():
    # net coupling |q^2/(4 pi eps0 m) - G m|, and the pure electric part at q_c
    _, _, s = physical_to_sigma(3.0, 2.0, 0.1, 0.5)
    assert s == pytest.approx(abs(9.0 / (FOUR_PI * 0.5 * 2.0) - 0.2), rel=1e-14)
    qc = critical_charge(2.0, 0.1, 0.5)
    _, _, s = physical_to_sigma(qc, 2.0, 0.1, 0.5)
    assert s == pytest.approx(qc**2 / (FOUR_PI * 0.5 * 2.0), rel=1e-14)


@pytest.mark.parametrize("bad", [dict(m=0.0), dict(G=-1.0), dict(epsilon0=0.0), dict(limit="QXS")])
def test_physical_rejects(bad):
    kw = dict(q=1.0, m=1.0, G=1.0, epsilon0=1.0, limit="QES") | bad
    with pytest.raises(InvalidInputError):
        physical_to_sigma(**kw)


def test_physical_block_in_document():
    doc = dict(MINIMAL, coupling={"physical": {"q": 0.0, "m": 1.0, "G": 1.0, "epsilon0": 1.0,
                                               "magnetic": False}})
    cfg = parse_config_text(_text(doc))
    assert isinstance(cfg.coupling, PhysicalCoupling)
    se, sb, scale = cfg.resolve_coupling()
    assert (se, sb) == (-1, 0)
    assert scale == pytest.approx(FOUR_PI, rel=1e-15)
    assert cfg.initial_profile().mass() == pytest.approx(FOUR_PI, rel=1e-12)


def test_critical_document_without_magnetics_is_config_error():
    qc = critical_charge(1.0, 1.0, 1.0)
    doc = dict(MINIMAL, coupling={"physical": {"q": qc, "m": 1.0, "G": 1.0, "epsilon0": 1.0,
                                               "magnetic": False}})
    with pytest.raises(ConfigError):
        parse_config_text(_text(doc))


# -- round trips -------------------------------------------------------------

@pytest.mark.parametrize("cfg", [f() for f in PRESETS.values()] + list(sign_presets().values()))
def test_emit_parse_round_trip(cfg):
    back = parse_config_text(cfg.emit())
    assert back == cfg
    assert back.hash() == cfg.hash()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), dt=st.floats(1e-4, 0.5), n=st.integers(0, 5000))
def test_round_trip_property(seed, dt, n):
    cfg = two_cluster(n=n, seed=0, dt=dt).with_seed(seed)
    assert parse_config_text(cfg.emit()) == cfg


def test_hash_depends_on_content():
    a = two_cluster()
    assert a.hash() != a.with_seed(99).hash()
    assert isinstance(a, ScenarioConfig)
