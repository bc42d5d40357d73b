import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relvlasov.errors import InvalidInputError, OutOfDomainError
from relvlasov.kernels import hat_velocity
from relvlasov.phase_space import (DepositGrid, Ensemble, GridSpec, InitialProfile, PhaseGrid,
                                   SamplingMode, band_decompose, deposit, evaluate_profile,
                                   lattice_integral, lattice_mass, lp_norm, read_deposit,
                                   sample_ensemble, write_deposit)

GRID = GridSpec((-1.0, -1.0, -1.0), 0.1, (21, 21, 21))


def _random_ensemble(rng, n=100, vmax=5.0, spread=0.8):
    x = rng.uniform(-spread, spread, size=(n, 3)) * 1.3
    v = rng.normal(size=(n, 3)) * vmax
    w = rng.uniform(0.0, 2.0, size=n)
    return Ensemble(x, v, w)


# -- profiles --------------------------------------------------------------

def test_gaussian_peak_is_amplitude():
    p = InitialProfile.gaussian(amplitude=2.5)
    assert evaluate_profile(p, np.zeros(6)) == 2.5


def test_ball_ball_value_inside():
    p = InitialProfile.ball_ball(mass=1.0)
    expected = 1.0 / (4 * np.pi / 3) ** 2
    assert evaluate_profile(p, np.full(6, 0.1)) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.0569932, rel=1e-6)
    assert evaluate_profile(p, np.array([1.1, 0, 0, 0, 0, 0])) == 0.0


def test_band_excludes_values_below(gaussian_profile):
    p = InitialProfile.gaussian(amplitude=3.0)
    # unbanded value 2.5 at this radius; band [3, 4) must drop it
    r = np.sqrt(2 * np.log(3.0 / 2.5))
    z = np.array([r, 0, 0, 0, 0, 0])
    assert p(z) == pytest.approx(2.5, rel=1e-12)
    assert p.with_band((3.0, 4.0))(z) == 0.0


def test_profile_nonnegative(rng):
    for p in (InitialProfile.gaussian(mass=2.0, x_centers=((0, 0, 0), (1, 0, 0))),
              InitialProfile.ball_ball(mass=1.0, radius_x=0.3)):
        assert np.all(p(rng.normal(size=(500, 6))) >= 0)


def test_tabulated_out_of_domain():
    ax = [np.linspace(0, 1, 3)] * 6
    p = InitialProfile.tabulated(ax, np.ones((3,) * 6))
    assert p(np.full(6, 0.5)) == pytest.approx(1.0)
    with pytest.raises(OutOfDomainError):
        p(np.full(6, 1.5))


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        InitialProfile.gaussian(mass=1.0, sigma_x=0.0)
    with pytest.raises(InvalidInputError):
        InitialProfile.gaussian(mass=1.0, amplitude=1.0)


def test_analytic_mass():
    g = InitialProfile.gaussian(mass=0.7, sigma_x=0.3, sigma_v=2.0)
    assert g.mass() == pytest.approx(0.7, rel=1e-14)
    # independent oracle: amplitude times the closed-form Gaussian integral
    assert g.amplitude * (2 * np.pi * 0.3 * 2.0) ** 3 == pytest.approx(0.7, rel=1e-14)


# -- bands -------------------------------------------------------------------

def test_single_band_is_identity(rng):
    p = InitialProfile.gaussian(amplitude=0.9)
    bands = band_decompose(p, 1)
    z = rng.normal(size=(300, 6))
    np.testing.assert_array_equal(bands[0](z), p(z))
    assert np.all(bands[1](z) == 0)


def test_bands_partition_range(rng):
    p = InitialProfile.gaussian(amplitude=2.5, sigma_x=0.5, sigma_v=0.5)
    bands = band_decompose(p, 3)
    z = rng.normal(size=(1000, 6)) * 0.4
    total = sum(b(z) for b in bands)
    np.testing.assert_array_equal(total, p(z))
    # all points fall into exactly one band
    hits = sum((b(z) > 0).astype(int) for b in bands)
    assert np.all(hits == (p(z) > 0))


def test_band_masses_sum_to_total():
    p = InitialProfile.gaussian(amplitude=2.5, sigma_x=0.5, sigma_v=0.5)
    masses = [lattice_integral(b, lambda f: f, 12) for b in band_decompose(p, 3)]
    # the band masses share one lattice, so their sum is the lattice mass of f0 up to rounding
    assert sum(masses) == pytest.approx(lattice_integral(p, lambda f: f, 12), rel=1e-12)
    assert sum(masses) == pytest.approx(p.mass(), rel=1e-6)


def test_band_kmax_validation():
    with pytest.raises(InvalidInputError):
        band_decompose(InitialProfile.gaussian(mass=1.0), 0)


# -- sampling ------------------------------------------------------------------

def test_monte_carlo_total_weight_exact(gaussian_profile):
    ens = sample_ensemble(gaussian_profile, 1000, seed=3)
    assert ens.total_weight == pytest.approx(1.0, rel=1e-14)
    assert np.all(ens.w == ens.w[0])


def test_sampling_is_deterministic(gaussian_profile):
    a = sample_ensemble(gaussian_profile, 500, seed=11)
    b = sample_ensemble(gaussian_profile, 500, seed=11)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.w, b.w)
    c = sample_ensemble(gaussian_profile, 500, seed=12)
    assert not np.array_equal(a.z, c.z)


def test_sampling_rejects_bad_input(gaussian_profile):
    with pytest.raises(InvalidInputError):
        sample_ensemble(gaussian_profile, 0, seed=0)
    with pytest.raises(InvalidInputError):
        sample_ensemble(InitialProfile.gaussian(amplitude=0.0), 10, seed=0)


def test_monte_carlo_moments(gaussian_profile):
    ens = sample_ensemble(gaussian_profile, 20000, seed=5)
    np.testing.assert_allclose(ens.x.std(axis=0), 0.4, rtol=0.03)
    np.testing.assert_allclose(ens.v.std(axis=0), 0.3, rtol=0.03)


def test_lattice_sampling_matches_factored_mass():
    p = InitialProfile.ball_ball(mass=1.0)
    ens = sample_ensemble(p, 8**6, seed=0, mode=SamplingMode.LATTICE)
    assert ens.total_weight == pytest.approx(lattice_mass(p, 8), rel=1e-12)


def test_lattice_mass_ball_ball_32():
    # 32^6 cells with cell-averaged weights (3^6 subsamples per cell)
    p = InitialProfile.ball_ball(mass=1.0)
    assert abs(lattice_mass(p, 32, subsamples=3) - 1.0) < 1e-3


def test_lattice_mass_converges_first_order():
    p = InitialProfile.ball_ball(mass=1.0)
    errs = [abs(lattice_mass(p, m) - 1.0) for m in (8, 16, 32)]
    assert errs[1] <= errs[0] / 2 and errs[2] <= errs[1] / 2


# -- deposition ----------------------------------------------------------------

def test_deposit_single_particle_at_rest():
    # dyadic spacing so the node position is exact in floating point
    grid = GridSpec((-1.0, -1.0, -1.0), 0.125, (17, 17, 17))
    ens = Ensemble([[0.25, 0.0, -0.375]], [[0, 0, 0]], [1.0])
    dep = deposit(ens, grid)
    assert dep.rho[10, 8, 5] * grid.cell_volume == 1.0
    assert np.count_nonzero(dep.rho) == 1
    assert np.all(dep.J == 0)


def test_deposit_single_moving_particle():
    ens = Ensemble([[0.0, 0.0, 0.0]], [[3.0, 0, 0]], [1.0])
    dep = deposit(ens, GRID)
    node = (10, 10, 10)
    np.testing.assert_allclose(dep.J[node] / dep.rho[node], [3 / np.sqrt(10), 0, 0], rtol=1e-14)


def test_deposit_conserves_weight(rng):
    for _ in range(100):
        ens = _random_ensemble(rng)
        dep = deposit(ens, GRID)
        assert dep.mass + dep.escaped == pytest.approx(ens.total_weight, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 6.0))
def test_current_strictly_below_density(seed, log_v):
    rng = np.random.default_rng(seed)
    ens = _random_ensemble(rng, 50, vmax=10.0**log_v)
    dep = deposit(ens, GRID)
    occupied = dep.rho > 0
    assert np.all(np.linalg.norm(dep.J[occupied], axis=-1) < dep.rho[occupied])
    assert np.all(dep.J[~occupied] == 0)


def test_deposit_is_linear_in_ensembles(rng):
    p = InitialProfile.gaussian(amplitude=2.5, sigma_x=0.3, sigma_v=0.3)
    parts = [sample_ensemble(b, 200, seed=k) for k, b in enumerate(band_decompose(p, 2)[:2])]
    both = deposit(parts[0].concat(parts[1]), GRID)
    split = [deposit(e, GRID) for e in parts]
    # bincount accumulation order differs, so equality holds to rounding
    np.testing.assert_allclose(both.rho, split[0].rho + split[1].rho, rtol=1e-13, atol=1e-12)
    np.testing.assert_allclose(both.J, split[0].J + split[1].J, rtol=1e-13, atol=1e-12)


def test_grid_spec_validation():
    with pytest.raises(InvalidInputError):
        GridSpec((0, 0, 0), 0.0, (4, 4, 4))
    with pytest.raises(InvalidInputError):
        GridSpec((0, 0, 0), -1.0, (4, 4, 4))


def test_deposit_roundtrip_files(tmp_path, small_ensemble):
    dep = deposit(small_ensemble, GRID)
    write_deposit(tmp_path / "d", dep)
    back = read_deposit(tmp_path / "d")
    assert np.array_equal(back.rho, dep.rho) and np.array_equal(back.J, dep.J)
    assert back.escaped == dep.escaped
    raw = np.fromfile(tmp_path / "d_rho.bin", dtype="<f8")
    assert np.array_equal(raw, dep.rho.ravel())


def test_ensemble_csv_roundtrip(tmp_path, small_ensemble):
    small_ensemble.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "x,y,z,vx,vy,vz,w"
    back = Ensemble.from_csv(tmp_path / "e.csv")
    assert np.array_equal(back.z, small_ensemble.z) and np.array_equal(back.w, small_ensemble.w)


def test_ensemble_rejects_negative_weight():
    with pytest.raises(InvalidInputError):
        Ensemble([[0, 0, 0]], [[0, 0, 0]], [-1.0])


def test_ensemble_vhat():
    ens = Ensemble([[0, 0, 0]], [[3.0, 0, 0]], [1.0])
    np.testing.assert_array_equal(ens.vhat, hat_velocity(np.array([[3.0, 0, 0]])))


# -- norms -------------------------------------------------------------------

@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 6.0])
def test_lp_unit_cube_indicator(p):
    g = GridSpec((0, 0, 0), 0.25, (4, 4, 4))
    dep = DepositGrid(g, np.ones((4, 4, 4)), np.zeros((4, 4, 4, 3)))
    assert lp_norm(dep, p) == pytest.approx(1.0, rel=1e-14)


def test_lp_ball_ball_mass():
    assert lp_norm(InitialProfile.ball_ball(mass=1.0), 1) == pytest.approx(1.0, abs=1e-6)


def test_lp_gaussian_closed_form():
    # int exp(-p r^2/2) over R^6 with widths: (2 pi / p)^3 (sx sv)^3
    g = InitialProfile.gaussian(amplitude=2.0, sigma_x=0.5, sigma_v=0.7)
    expected = 2.0 * ((2 * np.pi / 1.5) ** 3 * (0.35) ** 3) ** (1 / 1.5)
    assert lp_norm(g, 1.5) == pytest.approx(expected, rel=1e-13)
    assert lp_norm(g, 1.5) == pytest.approx(lattice_integral(g, lambda f: f**1.5, 16) ** (1 / 1.5), rel=1e-4)


@pytest.mark.parametrize("c", [2.0, 5.0])
@pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
def test_lp_homogeneous(c, p, rng):
    axes = [np.linspace(0, 1, 4)] * 3
    vals = rng.random((4, 4, 4, 4, 4, 4))
    a = PhaseGrid(axes, axes, vals)
    b = PhaseGrid(axes, axes, c * vals)
    assert lp_norm(b, p) == pytest.approx(c * lp_norm(a, p), rel=1e-13)
    prof = InitialProfile.gaussian(amplitude=1.0)
    assert lp_norm(prof.scaled(c), p) == pytest.approx(c * lp_norm(prof, p), rel=1e-13)


def test_lp_rejects_small_p():
    with pytest.raises(InvalidInputError):
        lp_norm(InitialProfile.gaussian(mass=1.0), 0.5)
