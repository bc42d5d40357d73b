"""Named scenario presets used by the acceptance suite and the CLI."""
from dataclasses import replace

from .config import (ExplicitCoupling, GridBlock, MollifierBlock, ParticleSpec, PicardBlock,
                     ProfileSpec, ScenarioConfig, TimeSpec)

# The coupled combinations of (sigma_E, sigma_B); (0, 0) is free streaming.
COUPLED_SIGNS = ((1, 0), (-1, 0), (0, 1), (1, 1), (-1, 1))

_LEDGER_GRID = GridBlock((-2.0, -2.0, -2.0), 0.125, (33, 33, 33))


def free_streaming(n=1000, seed=0, T=1.0):
    """Single Gaussian, no field."""
    return ScenarioConfig(
        coupling=ExplicitCoupling(0, 0),
        profile=ProfileSpec("gaussian_product", x_scale=0.5, v_scale=0.5, mass=1.0),
        particles=ParticleSpec(n, "monte_carlo", seed),
        mollifier=None,
        grid=GridBlock((-3.0, -3.0, -3.0), 0.25, (25, 25, 25)),
        time=TimeSpec(T=T, dt=0.05, snapshot_stride=2),
    )


def weak_coupling(seed=1):
    """Small uniform ball, total mass 0.01, used for the Picard contraction."""
    return ScenarioConfig(
        coupling=ExplicitCoupling(1, 1),
        profile=ProfileSpec("ball_ball", x_scale=0.15, v_scale=0.3, mass=0.01),
        particles=ParticleSpec(512, "monte_carlo", seed),
        mollifier=MollifierBlock(8, "uniform_ball"),
        time=TimeSpec(T=0.5, dt=2e-3, snapshot_stride=25),
        picard=PicardBlock(4, 512),
    )


def two_cluster(sigma_e=-1, sigma_b=0, n=2048, seed=2, dt=0.05, level=4):
    """Two Gaussian clusters at (+-0.5, 0, 0) with a Wendland mollifier."""
    return ScenarioConfig(
        coupling=ExplicitCoupling(sigma_e, sigma_b),
        profile=ProfileSpec("gaussian_product", x_centers=((-0.5, 0.0, 0.0), (0.5, 0.0, 0.0)),
                            x_scale=0.15, v_scale=0.15, mass=0.3),
        particles=ParticleSpec(n, "monte_carlo", seed),
        mollifier=MollifierBlock(level, "wendland_c2"),
        grid=_LEDGER_GRID,
        time=TimeSpec(T=0.5, dt=dt, snapshot_stride=1),
    )


def sign_presets(n=1024, seed=3):
    """One two-cluster preset per coupled (sigma_E, sigma_B) combination."""
    return {s: two_cluster(*s, n=n, seed=seed) for s in COUPLED_SIGNS}


def refined(cfg, factor=2):
    """dt divided and mollifier level multiplied by ``factor``."""
    m = cfg.mollifier
    return replace(cfg, time=replace(cfg.time, dt=cfg.time.dt / factor),
                   mollifier=None if m is None else replace(m, level=m.level * factor))


PRESETS = {
    "free_streaming": free_streaming,
    "weak_coupling": weak_coupling,
    "two_cluster": two_cluster,
}

__all__ = ["COUPLED_SIGNS", "free_streaming", "weak_coupling", "two_cluster", "sign_presets",
           "refined", "PRESETS"]
