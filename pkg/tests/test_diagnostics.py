import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relvlasov.bounds import default_epsilon
from relvlasov.diagnostics import (LEDGER_COLUMNS, EnergyLedger, build_ledger, casimir,
                                   energy_identities, energy_inequality_check,
                                   finite_energy_criterion, mollified_energy_convergence,
                                   pair_energies, potential_energies, psi_function,
                                   relativistic_energy, validate_initial)
from relvlasov.dynamics import FieldConfig, IntegratorConfig, free_history, run_coupled
from relvlasov.errors import InvalidInputError, ValidationError
from relvlasov.kernels import MollifierSpec, mollified_potential, newton_potential
from relvlasov.phase_space import (DepositGrid, Ensemble, GridSpec, InitialProfile, deposit,
                                   lp_norm, sample_ensemble)


def _ball_deposit(n_cells, half=2.0, radius=1.0, velocity=(0.0, 0.0, 0.0)):
    grid = GridSpec.centered(np.zeros(3), half, n_cells + 1)
    r = np.linalg.norm(grid.nodes(), axis=-1)
    rho = (r < radius).astype(float)
    rho /= rho.sum() * grid.cell_volume
    return DepositGrid(grid, rho, rho[..., None] * np.asarray(velocity))


def _gaussian_lp(profile, p, sx, sv):
    # ||A exp(-|x|^2/2sx^2 - |v|^2/2sv^2)||_p
    return profile.amplitude * ((2 * np.pi / p) ** 3 * sx**3 * sv**3) ** (1 / p)


# -- energies ------------------------------------------------------------------

def test_relativistic_energy_single_particle():
    ens = Ensemble([[0, 0, 0]], [[3, 0, 0]], [1.0])
    assert relativistic_energy(ens) == pytest.approx(math.sqrt(10), rel=1e-15)


def test_relativistic_energy_at_rest_is_mass(small_ensemble):
    rest = Ensemble(small_ensemble.x, np.zeros_like(small_ensemble.v), small_ensemble.w)
    assert relativistic_energy(rest) == pytest.approx(small_ensemble.total_weight, rel=1e-14)


@pytest.mark.parametrize("spec", [MollifierSpec(4, "uniform_ball"), MollifierSpec(2, "wendland_c2")])
def test_pair_energies_against_numpy(small_ensemble, spec):
    x, w = small_ensemble.x, small_ensemble.w
    vh = small_ensemble.vhat
    d = x[:, None, :] - x[None, :, :]
    H = mollified_potential(d.reshape(-1, 3), spec).reshape(len(x), len(x))
    pe = 0.5 * w @ H @ w
    pm = 0.5 * np.einsum("i,j,ij,ij->", w, w, H, vh @ vh.T)
    got = pair_energies(small_ensemble, spec)
    assert got[0] == pytest.approx(pe, rel=1e-12)
    assert got[1] == pytest.approx(pm, rel=1e-12)


def test_pair_energies_singular_pair():
    ens = Ensemble([[0, 0, 0], [2, 0, 0]], [[0, 0, 0], [0, 0, 0]], [1.0, 3.0])
    pe, pm = pair_energies(ens, None)
    assert pe == pytest.approx(3.0 * newton_potential([2.0, 0, 0]), rel=1e-15)
    assert pm == 0.0


@settings(max_examples=20, deadline=None)
@given(u=st.tuples(*[st.floats(-3, 3)] * 3))
def test_shared_velocity_magnetic_is_scaled_electric(u):
    # with one common velocity vhat_i . vhat_j = |vhat|^2 for every pair
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 3))
    v = np.tile(np.asarray(u), (30, 1))
    ens = Ensemble(x, v, rng.random(30))
    pe, pm = pair_energies(ens, MollifierSpec(4))
    u2 = float(np.sum(ens.vhat[0] ** 2))
    assert pm == pytest.approx(u2 * pe, rel=1e-12, abs=1e-300)


def test_uniform_ball_potential_energy_48():
    # classical self-energy of the unit ball of unit mass: 3/(20 pi)
    exact = 3 / (20 * np.pi)
    pe, pm = potential_energies(_ball_deposit(48))
    assert pe == pytest.approx(exact, rel=0.05)
    assert pm == 0.0


def test_grid_magnetic_energy_for_rigid_motion():
    u = np.array([0.3, -0.2, 0.1])
    pe, pm = potential_energies(_ball_deposit(24, velocity=u))
    assert pm == pytest.approx(float(u @ u) * pe, rel=1e-12)


# -- identities --------------------------------------------------------------------

def test_identities_uniform_ball():
    rep = energy_identities(_ball_deposit(48))
    assert rep.electric_discrepancy <= 0.05
    assert rep.phi_rho == pytest.approx(3 / (10 * np.pi), rel=0.05)
    assert rep.a_j == 0.0 and rep.magnetic_ratio == 0.0 and rep.magnetic_ok


def test_identities_rotating_ball_is_divergence_free():
    # J = rho (omega x x) has zero divergence, so curl^2 carries all of (H*J).J
    dep = _ball_deposit(40)
    X = dep.grid.nodes()
    J = dep.rho[..., None] * np.cross(np.array([0.0, 0.0, 0.5]), X)
    rep = energy_identities(DepositGrid(dep.grid, dep.rho, J))
    assert rep.a_j > 0
    assert rep.div_sq <= 0.02 * rep.curl_sq
    assert rep.magnetic_ratio == pytest.approx(1.0, abs=0.05)


def test_identities_curl_current():
    # J = curl(psi e_z) = (d_y psi, -d_x psi, 0) for a compact bump psi has zero divergence
    grid = GridSpec.centered(np.zeros(3), 2.0, 41)
    X = grid.nodes()
    r2 = np.sum(X**2, axis=-1)
    inside = r2 < 1.0
    u = np.where(inside, 1.0 - r2, 0.0)
    dpsi = -8.0 * u**3  # d psi / d(x_k) = -8 x_k (1 - r^2)^3 for psi = (1 - r^2)^4
    J = np.stack([dpsi * X[..., 1], -dpsi * X[..., 0], np.zeros(grid.dims)], axis=-1)
    rho = np.linalg.norm(J, axis=-1) + 1.0 * inside
    rep = energy_identities(DepositGrid(grid, rho, J))
    assert rep.a_j > 0
    assert rep.div_sq <= 0.01 * rep.a_j
    assert rep.magnetic_ratio <= 1.05


def test_identities_random_currents(rng):
    grid = GridSpec.centered(np.zeros(3), 2.0, 25)
    for _ in range(3):
        prof = InitialProfile.gaussian(mass=1.0, x_centers=rng.uniform(-0.5, 0.5, (2, 3)),
                                       v_centers=rng.uniform(-1, 1, (2, 3)), sigma_x=0.3, sigma_v=0.5)
        dep = deposit(sample_ensemble(prof, 400, int(rng.integers(1 << 30))), grid)
        rep = energy_identities(dep, MollifierSpec(4))
        assert rep.a_j >= 0
        assert rep.magnetic_ratio <= 1.05
        assert rep.magnetic_ok


# -- ledger --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    prof = InitialProfile.gaussian(mass=0.2, x_centers=((-0.4, 0, 0), (0.4, 0, 0)), sigma_x=0.2, sigma_v=0.2)
    ens = sample_ensemble(prof, 200, 11)
    fc = FieldConfig(-1, 1, MollifierSpec(4, "wendland_c2"))
    return run_coupled(ens, 0.2, IntegratorConfig(0.02), fc)


def test_ledger_invariants(small_run):
    grid = GridSpec((-2.0,) * 3, 0.125, (33,) * 3)
    led = build_ledger(small_run, grid)
    assert len(led) == len(small_run.times)
    assert led.columns == LEDGER_COLUMNS
    np.testing.assert_array_equal(led.times, small_run.times)
    mass = led.column("mass")
    assert np.all(mass == mass[0])
    np.testing.assert_allclose(led.column("grid_mass") + led.column("escaped"), mass, rtol=1e-12)
    assert np.all(led.column("rel_energy") >= mass)
    assert np.all(led.column("pe_electric") > 0) and np.all(led.column("pe_magnetic") >= 0)
    assert np.all(led.column("e_field_energy") > 0)
    assert led.meta["field_energy_source"] == "grid"


def test_ledger_without_grid_uses_pair_energies(small_run):
    led = build_ledger(small_run)
    np.testing.assert_array_equal(led.column("e_field_energy"), led.column("pe_electric"))
    np.testing.assert_array_equal(led.column("b_field_energy"), led.column("pe_magnetic"))
    assert np.all(np.isnan(led.column("grid_mass")))


def test_ledger_csv_round_trip(small_run, tmp_path):
    led = build_ledger(small_run, casimirs={"one": lambda k: 1.0 + k})
    path = tmp_path / "ledger.csv"
    text = led.to_csv(path)
    back = EnergyLedger.from_csv(path, led.sigma_e, led.sigma_b)
    assert back.casimir_ids == ("one",)
    for name in led.columns:
        np.testing.assert_array_equal(back.column(name), led.column(name))
    assert back.to_csv() == text


def test_ledger_every(small_run):
    led = build_ledger(small_run, every=3)
    np.testing.assert_array_equal(led.times, small_run.times[::3])


# -- energy inequality ----------------------------------------------------------------

def _synthetic(rel, pe, pm, se, sb):
    rows = [{"time": float(i), "rel_energy": r, "pe_electric": p, "pe_magnetic": m,
             "e_field_energy": p, "b_field_energy": m}
            for i, (r, p, m) in enumerate(zip(rel, pe, pm))]
    return EnergyLedger(rows, se, sb)


def test_inequality_conserved_and_violated():
    ok = energy_inequality_check(_synthetic([2.0, 2.125, 2.25], [0.5, 0.625, 0.75], [0, 0, 0], -1, 0))
    assert ok.passed and ok.defect == 0.0 and ok.energy0 == 1.5
    bad = energy_inequality_check(_synthetic([2.0, 2.1], [0.5, 0.5], [0, 0], -1, 0))
    assert not bad.passed
    assert bad.min_margin == pytest.approx(-0.1 / 1.5, rel=1e-14)


def test_inequality_with_magnetic_allows_decrease():
    # with the magnetic term only the one-sided bound is required
    rep = energy_inequality_check(_synthetic([2.0, 1.5], [0.1, 0.1], [0.2, 0.3], 1, 1))
    assert rep.passed
    assert rep.energy0 == pytest.approx(2.3, rel=1e-15)
    strict = energy_inequality_check(_synthetic([2.0, 1.5], [0.1, 0.1], [0.2, 0.3], 1, 0))
    assert not strict.passed


def test_inequality_needs_two_rows():
    with pytest.raises(InvalidInputError):
        energy_inequality_check(_synthetic([1.0], [0.0], [0.0], 1, 0))


def test_finite_energy_criterion():
    led = _synthetic([1.0, 1.0, 1.0], [0.5, 0.5, 0.5], [0.25, 0.25, 0.25], 1, 1)
    value, finite = finite_energy_criterion(led)
    assert finite and value == pytest.approx(2 * 1.75, rel=1e-15)
    inf = _synthetic([1.0, math.inf], [0.0, 0.0], [0.0, 0.0], 1, 1)
    assert finite_energy_criterion(inf)[1] is False
    with pytest.raises(InvalidInputError):
        finite_energy_criterion(led, T=5.0)


# -- Casimirs -------------------------------------------------------------------------------

def test_psi_family():
    s = np.array([0.0, 0.5, 2.0])
    np.testing.assert_array_equal(psi_function("square")(s), s * s)
    np.testing.assert_array_equal(psi_function("min1")(s), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(psi_function("above:0.4")(s), [0.0, 1.0, 1.0])
    with pytest.raises(InvalidInputError):
        psi_function("cube")


@pytest.fixture(scope="module")
def free_setup():
    sx = sv = 0.5
    prof = InitialProfile.gaussian(mass=1.0, sigma_x=sx, sigma_v=sv)
    ens = sample_ensemble(prof, 200, 4)
    return prof, free_history(ens, 1.0, 10), sx, sv


def test_casimir_initial_value(free_setup):
    # int f0^2 = A^2 (pi sx^2)^(3/2) (pi sv^2)^(3/2)
    prof, hist, sx, sv = free_setup
    exact = prof.amplitude**2 * (np.pi * sx * sx) ** 1.5 * (np.pi * sv * sv) ** 1.5
    box = (np.full(6, -3.0), np.full(6, 3.0))
    res = casimir(hist, prof, "square", 0.0, box, 14)
    assert res.value == pytest.approx(exact, rel=1e-4)


def test_casimir_free_streaming_oracle(free_setup):
    # f_t(x, v) = f0(x - t vhat, v) evaluated directly on the same lattice
    prof, hist, _, _ = free_setup
    lo, hi = np.array([-4.0] * 3 + [-3.0] * 3), np.array([4.0] * 3 + [3.0] * 3)
    cells = 8
    axes = [lo[k] + (hi[k] - lo[k]) * (np.arange(cells) + 0.5) / cells for k in range(6)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 6)
    vh = pts[:, 3:] / np.sqrt(1 + np.sum(pts[:, 3:] ** 2, axis=1))[:, None]
    foot = np.concatenate([pts[:, :3] - 0.7 * vh, pts[:, 3:]], axis=1)
    oracle = np.sum(prof(foot) ** 2) * np.prod((hi - lo) / cells)
    res = casimir(hist, prof, "square", 0.7, (lo, hi), cells)
    assert res.value == pytest.approx(oracle, rel=1e-12)
    assert res.warning is None


def test_casimir_free_streaming_drift(free_setup):
    # each velocity slice is only translated in x, so the drift is the x
    # midpoint error on a Gaussian, spectrally small at spacing 0.4
    prof, hist, _, _ = free_setup
    box = (np.array([-4.0] * 3 + [-3.0] * 3), np.array([4.0] * 3 + [3.0] * 3))
    cells = (20, 20, 20, 6, 6, 6)
    c0 = casimir(hist, prof, "square", 0.0, box, cells).value
    c1 = casimir(hist, prof, "square", 1.0, box, cells).value
    assert abs(c1 - c0) / c0 <= 1e-6


def test_casimir_coverage_warning(free_setup):
    prof, hist, _, _ = free_setup
    res = casimir(hist, prof, "square", 1.0, (np.full(6, -0.5), np.full(6, 0.5)), 2)
    assert res.warning is not None and res.outside_weight > 1e-3


# -- initial-data admissibility -----------------------------------------------------------

def test_lp_norm_of_gaussian():
    prof = InitialProfile.gaussian(mass=2.0, sigma_x=0.4, sigma_v=0.7)
    assert lp_norm(prof, 1.5) == pytest.approx(_gaussian_lp(prof, 1.5, 0.4, 0.7), rel=1e-6)


def test_validate_repulsive_always_passes():
    prof = InitialProfile.gaussian(mass=50.0, sigma_x=0.1, sigma_v=0.1)
    rep = validate_initial(prof, 1)
    assert rep.passed
    assert [c["condition"] for c in rep.checks] == ["finite_l1", "finite_relativistic_energy"]


def test_validate_relativistic_moment_value():
    # int sqrt(1 + |v|^2) f0 for a cold cloud is close to the mass
    prof = InitialProfile.gaussian(mass=1.0, sigma_x=1.0, sigma_v=1e-3)
    rep = validate_initial(prof, 0)
    rel = next(c for c in rep.checks if c["condition"] == "finite_relativistic_energy")["value"]
    assert rel == pytest.approx(1.0 + 1.5e-6, rel=1e-6)


def test_validate_attractive_smallness():
    eps = default_epsilon()
    base = InitialProfile.gaussian(mass=1.0, sigma_x=0.5, sigma_v=0.5)
    big = base.scaled(2 * eps / _gaussian_lp(base, 1.5, 0.5, 0.5))
    with pytest.raises(ValidationError) as info:
        validate_initial(big, -1)
    assert info.value.condition == "smallness_l3/2"
    small = base.scaled(0.5 * eps / _gaussian_lp(base, 1.5, 0.5, 0.5))
    assert validate_initial(small, -1).passed
    assert validate_initial(big, 0).passed


def test_validate_explicit_epsilon():
    prof = InitialProfile.gaussian(mass=1.0, sigma_x=0.5, sigma_v=0.5)
    n32 = _gaussian_lp(prof, 1.5, 0.5, 0.5)
    assert validate_initial(prof, -1, epsilon=1.01 * n32).passed
    with pytest.raises(ValidationError):
        validate_initial(prof, -1, epsilon=0.99 * n32)
    with pytest.raises(InvalidInputError):
        validate_initial(prof, 2)
    with pytest.raises(InvalidInputError):
        validate_initial(prof, -1, epsilon=0.0)


# -- mollified energies -----------------------------------------------------------------------

def test_mollified_energy_convergence_ball():
    dep = _ball_deposit(32)
    table = mollified_energy_convergence(dep, [2, 4, 8, 16])
    assert table.monotone
    assert table.errors[-1] < 0.01 * table.reference
    # mollification lowers the potential energy of a positive density
    assert all(v <= table.reference for v in table.values)
    with pytest.raises(InvalidInputError):
        mollified_energy_convergence(dep, [4, 2])
