"""Command line entry point.

    relvlasov simulate|picard|diagnose|validate --config PATH [--out DIR]
              [--seed U64] [--threads K]

Exit status: 0 when every enabled check passes, 1 when a check fails,
2 on velocity blow-up (partial artifacts are kept), 3 on invalid input or
inadmissible initial data.  A ``manifest.json`` is written in every case
once the output directory is known.
"""
import argparse
import hashlib
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .bounds import interpolation_check
from .config import parse_config
from .diagnostics import (EnergyLedger, build_ledger, energy_identities, energy_inequality_check,
                          finite_energy_criterion, mollified_energy_convergence, validate_initial)
from .dynamics import FieldHistory, picard_solve, run_coupled
from .errors import ConfigError, InvalidInputError, RelVlasovError, ValidationError
from .phase_space import PhaseGrid, SamplingMode, deposit, lattice_axes, sample_ensemble
from .residuals import TestFunction, continuity_residual, renorm_residual

log = logging.getLogger("relvlasov")

EXIT_OK, EXIT_CHECK, EXIT_BLOWUP, EXIT_INVALID = 0, 1, 2, 3
RESIDUAL_TOL = 0.01


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sample(cfg):
    return sample_ensemble(cfg.initial_profile(), cfg.particles.n, cfg.particles.seed,
                           SamplingMode(cfg.particles.sampling))


# -- subcommands -------------------------------------------------------------

def _simulate(cfg, out, state):
    ens = _sample(cfg)
    hist = run_coupled(ens, cfg.time.T, cfg.integrator_config(), cfg.field_config(),
                       stride=cfg.time.snapshot_stride)
    hist.export(out / "snapshots")
    ledger = build_ledger(hist, cfg.grid_spec())
    ledger.to_csv(out / "ledger.csv")
    state["status"] = hist.status
    if hist.status == "blowup":
        state["abort_time"] = hist.abort_time
        return
    _ledger_checks(ledger, state["checks"])


def _ledger_checks(ledger, checks):
    mass = ledger.column("mass")
    checks["mass_constant"] = bool(np.max(np.abs(mass - mass[0])) <= 1e-12 * max(1.0, abs(mass[0])))
    checks["rel_energy_above_mass"] = bool(np.all(ledger.column("rel_energy") >= mass * (1 - 1e-15)))
    grid_mass = ledger.column("grid_mass")
    if np.all(np.isfinite(grid_mass)):
        total = grid_mass + ledger.column("escaped")
        checks["grid_mass_accounting"] = bool(np.max(np.abs(total - mass)) <= 1e-12 * max(1.0, mass[0]))
    if len(ledger) >= 2:
        checks["energy_inequality"] = energy_inequality_check(ledger).passed
        checks["finite_energy"] = finite_energy_criterion(ledger)[1]


def _picard(cfg, out, state):
    ens = _sample(cfg)
    n_samples = min(cfg.picard.samples, len(ens))
    rng = np.random.default_rng(cfg.particles.seed)
    sample = np.sort(rng.choice(len(ens), n_samples, replace=False))
    report, _ = picard_solve(ens, cfg.time.T, cfg.picard.iterates, cfg.integrator_config(),
                             cfg.field_config(), sample=sample)
    d = np.asarray(report.distances)
    T = cfg.time.T
    record = report.to_dict()
    record["ratios"] = [repr(float(r)) for r in report.ratios()]
    checks = state["checks"]
    state["status"] = report.status
    if len(d) >= 2:
        checks["picard_decreasing"] = bool(np.all(np.diff(d) < 0))
        n = len(d)
        c_fit = d[0] / T
        bound = T ** (n - 1) / float(np.prod(np.arange(2, n + 1))) * c_fit * 1.5
        record["factorial_bound"] = repr(float(bound))
        checks["picard_factorial_bound"] = bool(d[-1] / d[0] <= bound)
    _write_json(out / "picard.json", record)


def _default_testfns(cfg, T):
    p = cfg.profile
    xc = np.asarray(p.x_centers[0], dtype=float)
    vc = np.zeros(3) if p.v_centers is None else np.asarray(p.v_centers[0], dtype=float)
    rx = 3.0 * p.x_scale if p.kind == "gaussian_product" else 1.5 * p.x_scale
    rv = 3.0 * p.v_scale if p.kind == "gaussian_product" else 1.5 * p.v_scale
    centre = tuple(np.concatenate([xc, vc]).tolist())
    radius = (rx,) * 3 + (rv,) * 3
    return TestFunction("bump0", 0.25 * T, 0.5 * T, centre, radius)


def _diagnose(cfg, out, state):
    snap_dir = out / "snapshots"
    if not (snap_dir / "history.json").is_file():
        raise InvalidInputError(f"no run found in {out} (run 'simulate' first)")
    hist = FieldHistory.load(snap_dir)
    checks = state["checks"]
    grid = cfg.grid_spec()
    ledger_path = out / "ledger.csv"
    if ledger_path.is_file():
        ledger = EnergyLedger.from_csv(ledger_path, hist.field_cfg.sigma_e, hist.field_cfg.sigma_b)
    else:
        ledger = build_ledger(hist, grid)
    _ledger_checks(ledger, checks)
    profile = cfg.initial_profile()
    T = hist.t_end
    reports = {"config_hash": state["config_hash"], "tolerance": RESIDUAL_TOL, "residuals": []}
    tf = _default_testfns(cfg, T)
    history = hist if grid is None or hist.field_cfg.is_free else hist.with_grid_sampling(grid)
    rr = renorm_residual(history, profile, "arctan", tf, cfg.integrator_config())
    reports["residuals"].append(rr.to_dict() | {"testfn_spec": tf.to_dict(), "kind": "renormalized"})
    checks["renorm_residual"] = bool(rr.normalized <= RESIDUAL_TOL)
    pr = continuity_residual(hist.snapshots, tf)
    reports["residuals"].append(pr.to_dict() | {"testfn_spec": tf.to_dict(), "kind": "continuity_particles"})
    checks["continuity_residual_particles"] = bool(pr.normalized <= RESIDUAL_TOL)
    if grid is not None:
        deps = [deposit(s, grid) for s in hist.snapshots]
        lo, hi = grid.origin, grid.upper
        c = np.clip(np.asarray(tf.center[:3]), lo + np.asarray(tf.radius[:3]), hi - np.asarray(tf.radius[:3]))
        tfx = TestFunction("bump0_x", tf.t_center, tf.t_radius, tuple(c), tf.radius[:3])
        cr = continuity_residual(deps, tfx)
        reports["residuals"].append(cr.to_dict() | {"testfn_spec": tfx.to_dict(), "kind": "continuity"})
        checks["continuity_residual"] = bool(cr.normalized <= RESIDUAL_TOL)
        ident = energy_identities(deps[-1], hist.field_cfg.mollifier)
        reports["identities"] = ident.to_dict()
        checks["magnetic_identity"] = ident.magnetic_ok
        if hist.field_cfg.mollifier is not None:
            lvl = hist.field_cfg.mollifier.level
            conv = mollified_energy_convergence(deps[0], [lvl, 2 * lvl, 4 * lvl],
                                                hist.field_cfg.mollifier.shape)
            reports["mollified_energy"] = conv.to_dict()
    lo, hi = profile.support_box()
    xa, _ = lattice_axes(lo[:3], hi[:3], 8)
    va, _ = lattice_axes(lo[3:], hi[3:], 8)
    pts = np.stack(np.meshgrid(*xa, *va, indexing="ij"), axis=-1)
    bound = interpolation_check(PhaseGrid(xa, va, profile(pts.reshape(-1, 6)).reshape(pts.shape[:-1])), 1.5)
    reports["interpolation"] = bound.to_dict()
    checks["interpolation_bound"] = bound.passed
    _write_json(out / "residuals.json", reports)


def _validate(cfg, out, state):
    se, _, _ = cfg.resolve_coupling()
    report = validate_initial(cfg.initial_profile(), se, cfg.validation.epsilon)
    state["validation"] = report.to_dict()
    state["checks"]["initial_data"] = report.passed


COMMANDS = {"simulate": _simulate, "picard": _picard, "diagnose": _diagnose, "validate": _validate}


# -- orchestration -------------------------------------------------------------

def _manifest(out, cfg, state, command, args, started):
    man = {"tool": "relvlasov", "version": _version(), "command": command,
           "config_hash": state.get("config_hash"), "status": state["status"],
           "checks": state["checks"], "passed": all(state["checks"].values()),
           "threads": args.threads, "wall_clock_seconds": round(time.time() - started, 3)}
    if cfg is not None:
        se, sb, scale = cfg.resolve_coupling()
        man.update(sigma_E=se, sigma_B=sb, weight_scale=scale, seed=cfg.particles.seed,
                   mollifier=None if cfg.mollifier is None else
                   {"level": cfg.mollifier.level, "shape": cfg.mollifier.shape})
    for key in ("abort_time", "error", "validation"):
        if key in state:
            man[key] = state[key]
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    man["artifacts"] = {str(p.relative_to(out)): _sha256(p) for p in files}
    _write_json(out / "manifest.json", man)


def build_parser():
    p = argparse.ArgumentParser(prog="relvlasov", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="scenario JSON document")
    p.add_argument("--out", help="output directory (default: the config's 'output', else ./run)")
    p.add_argument("--seed", type=int, help="override the sampling seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, help="number of worker threads for compiled loops")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    started = time.time()
    if args.threads is not None:
        import numba
        if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
            log.error("--threads must be between 1 and %d", numba.config.NUMBA_NUM_THREADS)
            return EXIT_INVALID
        numba.set_num_threads(args.threads)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        log.error("--seed must be an unsigned 64-bit integer")
        return EXIT_INVALID
    cfg = None
    state = {"status": "ok", "checks": {}}
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        log.error("%s: %s", args.config, exc)
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            state.update(status="invalid_config", error=str(exc))
            _manifest(out, None, state, args.command, args, started)
        return EXIT_INVALID
    out = Path(args.out or cfg.output or "run")
    out.mkdir(parents=True, exist_ok=True)
    state["config_hash"] = cfg.hash()
    (out / "config.json").write_text(cfg.emit())
    code = EXIT_OK
    try:
        COMMANDS[args.command](cfg, out, state)
        if state["status"] == "blowup":
            code = EXIT_BLOWUP
        elif not all(state["checks"].values()):
            code = EXIT_CHECK
    except ValidationError as exc:
        state.update(status="validation_failed", error=str(exc))
        state["checks"][exc.condition or "initial_data"] = False
        code = EXIT_INVALID
    except InvalidInputError as exc:
        state.update(status="invalid_input", error=str(exc))
        code = EXIT_INVALID
    except RelVlasovError as exc:
        state.update(status="failed", error=str(exc))
        code = EXIT_CHECK
    finally:
        _manifest(out, cfg, state, args.command, args, started)
    for name, ok in state["checks"].items():
        log.info("%-24s %s", name, "pass" if ok else "FAIL")
    log.info("status %s, exit %d", state["status"], code)
    return code


if __name__ == "__main__":
    sys.exit(main())
