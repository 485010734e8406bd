"""Batch scenario runner.

Every pipeline is a subcommand reading a flat key-value config (flags
override config keys), writing data files plus a run manifest into the
output directory.  The manifest is itself a valid config: re-running the
same subcommand with `--config manifest.cfg` reproduces the data outputs
byte for byte, whatever the worker count (worker parallelism only tiles
independent slices and reductions happen in a fixed order).

Exit codes: 0 success, 1 validation error (bad config, failed hypotheses,
charge imbalance, unknown flags), 2 numerical failure (blowup, NaN,
non-converging sequences).  Log lines go to stderr; stdout stays clean.
"""

import argparse
import os
import sys
import time
from dataclasses import fields as dataclass_fields

import numpy as np

from . import __version__
from .domain import (
    ConfigError,
    ScenarioConfig,
    band_limited_field,
    build_grids,
    ensure_output_dir,
    equilibrium_profile,
    export_csv,
    format_config,
    load_config,
    load_field,
    save_field,
)
from .fullkinetic import ConvergenceFailure, HarmonicPotential, convergence_study
from .gyroaverage import gyroaverage
from .gyrotransport import (
    TransportBlowup,
    TransportState,
    diagnostics,
    maxwellian_state,
    run_transport,
)
from .quasineutrality import ChargeBalanceError, FieldSolveParams, solve_potential
from .steadystate import (
    HypothesisError,
    check_hypotheses,
    density_three_term,
    g_root,
    parse_boundary_spec,
    reconstruct,
    solve_steady_state,
    verify_characteristics,
    BoundaryData,
)

SUBCOMMANDS = ("gyroavg", "field-solve", "transport", "fullkinetic-compare",
               "steady", "selftest")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def log(msg):
    print(msg, file=sys.stderr)


def _apply_overrides(config, overrides):
    known = {f.name for f in dataclass_fields(ScenarioConfig)} - {"metadata"}
    values = {f.name: getattr(config, f.name) for f in dataclass_fields(ScenarioConfig)
              if f.name != "metadata"}
    meta = dict(config.metadata)
    for key, val in overrides.items():
        if key.startswith("meta."):
            meta[key[5:]] = val
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        current = values[key]
        if isinstance(current, bool):
            values[key] = val in ("true", "True", "1", "yes")
        elif isinstance(current, int):
            values[key] = int(val)
        elif isinstance(current, float):
            values[key] = float(val)
        else:
            values[key] = val
    return ScenarioConfig(metadata=meta, **values)


def _resolve_config(args):
    config = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if getattr(args, "epsilons", None):
        overrides["epsilons"] = args.epsilons
    return _apply_overrides(config, overrides)


def _setup_workers(config):
    if config.workers > 0:
        try:
            import numba

            limit = numba.config.NUMBA_NUM_THREADS
            numba.set_num_threads(max(1, min(config.workers, limit)))
        except Exception:
            pass


def _write_manifest(config, outdir, command, started):
    meta = {
        "command": command,
        "version": __version__,
        "wallclock_s": f"{time.time() - started:.3f}",
    }
    path = os.path.join(outdir, "manifest.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(config, extra_meta=meta))
    return path


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(c)) if isinstance(c, (float, np.floating))
                              else str(c) for c in row) + "\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_gyroavg(config, args, outdir):
    perp, parallel, velocity = build_grids(config)
    if args.input:
        field = load_field(args.input, perp, parallel)
        log(f"loaded field from {args.input}")
    else:
        rng = np.random.default_rng(config.seed)
        field = band_limited_field(rng, perp, parallel, kmax=3, rms=1.0)
        log("synthesized a band-limited random field")
    rho = config.rho_single if config.rho_single > 0 else velocity.rho[0]
    out = gyroaverage(field, rho, backend=config.gyro_backend,
                      gyro_points=config.gyro_points)
    save_field(field, os.path.join(outdir, "input.field"))
    save_field(out, os.path.join(outdir, "gyroavg.field"))
    export_csv(out, os.path.join(outdir, "gyroavg.csv"))
    log(f"gyro-averaged at rho = {rho:g} with the {config.gyro_backend} backend")
    return EXIT_OK


def cmd_field_solve(config, args, outdir):
    perp, parallel, velocity = build_grids(config)
    rng = np.random.default_rng(config.seed)
    pert = band_limited_field(rng, perp, parallel, kmax=3,
                              rms=config.perturb_amplitude)
    fbar = maxwellian_state(perp, parallel, velocity, config.ti,
                            density=1.0 + pert.values)
    if velocity.single:
        params = FieldSolveParams(config.te, config.ti, "single_rho",
                                  rho_l=velocity.rho[0])
        from .quasineutrality import gyro_density

        nbar, _ = gyro_density(fbar)
        solution = solve_potential(nbar, params)
    else:
        params = FieldSolveParams(config.te, config.ti, "multi_rho")
        solution = solve_potential(fbar, params)
    save_field(solution.phi, os.path.join(outdir, "phi.field"))
    export_csv(solution.phi, os.path.join(outdir, "phi.csv"))
    _write_csv(os.path.join(outdir, "solve_summary.csv"),
               ["residual_norm", "condition_number", "phi_mean"],
               [(solution.residual_norm, solution.condition_number,
                 solution.phi.mean())])
    log(f"residual {solution.residual_norm:.3e}, "
        f"condition number {solution.condition_number:.3e}")
    return EXIT_OK


def cmd_transport(config, args, outdir):
    perp, parallel, velocity = build_grids(config)
    rng = np.random.default_rng(config.seed)
    pert = band_limited_field(rng, perp, parallel, kmax=2,
                              rms=config.perturb_amplitude)
    fbar = maxwellian_state(perp, parallel, velocity, config.ti,
                            density=1.0 + pert.values)
    if velocity.single:
        params = FieldSolveParams(config.te, config.ti, "single_rho",
                                  rho_l=velocity.rho[0])
    else:
        params = FieldSolveParams(config.te, config.ti, "multi_rho")
    n_steps = max(1, int(round(config.t_end / config.dt)))
    state = TransportState(fbar)
    state.history.append(diagnostics(state))

    def on_step(st):
        k = len(st.history) - 1
        if config.dump_every > 0 and k % config.dump_every == 0:
            save_field(st.fbar, os.path.join(outdir, f"fbar_{k:06d}.field"))

    log(f"running {n_steps} predictor-corrector steps, dt = {config.dt:g}, "
        f"lattice {perp.nx}x{perp.ny}x{parallel.nz}x{velocity.nv}x{velocity.nrho}")
    state = run_transport(state, params, config.dt, n_steps,
                          interp=config.interp, on_step=on_step)
    save_field(state.fbar, os.path.join(outdir, "fbar_final.field"))
    hist = state.history
    _write_csv(os.path.join(outdir, "diagnostics.csv"),
               ["time", "mass", "l1", "l2", "linf", "kinetic_energy"],
               [(h["time"], h["mass"], h["l1"], h["l2"], h["linf"],
                 h["kinetic_energy"]) for h in hist])
    drift = abs(hist[-1]["mass"] - hist[0]["mass"]) / abs(hist[0]["mass"])
    log(f"relative mass drift over the run: {drift:.3e}")
    return EXIT_OK


def cmd_fullkinetic_compare(config, args, outdir):
    perp, parallel, velocity = build_grids(config)
    a = config.phi_amplitude
    potential = HarmonicPotential([
        (a, (1.0, 1.0, 0.0), (0.0, 0.0, 0.0)),
        (0.5 * a, (1.0, 0.0, 1.0), (0.3, 0.0, 0.0)),
    ])
    contrast = config.init_contrast

    def contrast_fn(x, y, z):
        return 1.0 + contrast * np.cos(x) + 0.0 * (y + z)

    log(f"comparing eps = {config.epsilons} with {config.particles} particles")
    rows = convergence_study(
        potential,
        config.epsilon_list(),
        config.t_end,
        perp,
        parallel,
        velocity,
        ti=config.ti,
        contrast_fn=contrast_fn,
        n_particles=config.particles,
        seed=config.seed,
        require_decreasing=False,
    )
    _write_csv(os.path.join(outdir, "epsilon_errors.csv"),
               ["epsilon", "dt", "err_density", "err_momentum", "err_energy",
                "err_total"],
               [(r["epsilon"], r["dt"], r["err_density"], r["err_momentum"],
                 r["err_energy"], r["err_total"]) for r in rows])
    errs = [r["err_total"] for r in rows]
    for r in rows:
        log(f"eps = {r['epsilon']:g}: observable error {r['err_total']:.4e}")
    if not all(b < a_ for a_, b in zip(errs, errs[1:])):
        raise ConvergenceFailure(
            "observable error is not strictly decreasing across the eps sequence"
        )
    return EXIT_OK


def cmd_steady(config, args, outdir):
    n_fn, np_fn = equilibrium_profile(config.n0)
    from .steadystate import EquilibriumProfile

    profile = EquilibriumProfile(n_fn, np_fn)
    bd = BoundaryData(parse_boundary_spec(config.f_minus),
                      parse_boundary_spec(config.f_plus))
    report = check_hypotheses(profile, bd)
    with open(os.path.join(outdir, "hypotheses.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.summary() + "\n")
    _write_csv(os.path.join(outdir, "hypotheses.csv"),
               ["h1", "h2", "h3", "h4", "lam", "mu"],
               [(report.h1, report.h2, report.h3, report.h4, report.lam, report.mu)])
    if not report.all_pass:
        log("hypothesis audit FAILED: " + ", ".join(report.failed()))
        log(report.summary())
        raise HypothesisError("hypotheses failed: " + ", ".join(report.failed()))
    solution = solve_steady_state(profile, bd, n_points=config.steady_points,
                                  tol=config.fixed_point_tol)
    rho, f = reconstruct(solution)
    _write_csv(os.path.join(outdir, "alpha.csv"),
               ["z", "alpha", "rho"],
               list(zip(solution.z, solution.alpha, rho)))
    vs = np.linspace(-6.0, 6.0, 121)
    zs = np.linspace(-1.0, 1.0, 21)
    rows = []
    for z in zs:
        fv = f(np.full_like(vs, z), vs)
        rows.extend((z, v, val) for v, val in zip(vs, fv))
    _write_csv(os.path.join(outdir, "f_samples.csv"), ["z", "v", "f"], rows)
    char = verify_characteristics(solution, n_samples=6)
    mid = density_three_term(solution, 0.0)[0]
    _write_csv(os.path.join(outdir, "steady_summary.csv"),
               ["fixed_point_residual", "iterations", "g_root", "jump",
                "t_margin", "energy_drift", "boundary_mismatch",
                "rho_formula_gap_mid"],
               [(solution.fixed_point_residual, solution.iterations,
                 solution.g_root, solution.jump(), solution.t_margin,
                 char["max_energy_drift"], char["max_boundary_mismatch"],
                 abs(mid - float(solution.profile.n(0.0)) * solution.alpha_at(0.0) / 2))])
    log(f"fixed point in {solution.iterations} iterations, "
        f"residual {solution.fixed_point_residual:.3e}; "
        f"jump {solution.jump():.6g} vs G-root {solution.g_root:.6g}")
    return EXIT_OK


def cmd_selftest(config, args, outdir):
    """Fast invariant sweep across the pipelines."""
    from . import bessel
    from .domain import GyroDistribution, ParallelAxis, PerpGrid, VelocityGrid
    from .fullkinetic import ParticleEnsemble, UniformField, push
    from .gyroaverage import maxwellian_polarization, polarization_kernel
    from .quasineutrality import solve_field_equation
    from .steadystate import EquilibriumProfile, beam, fixed_point_alpha

    checks = []

    def check(name, ok):
        checks.append((name, bool(ok)))
        log(f"selftest {'ok  ' if ok else 'FAIL'} {name}")

    x = np.linspace(0.0, 40.0, 4001)
    th = np.linspace(0.0, np.pi, 1025)[None, :]
    oracle = np.trapezoid(np.cos(x[:, None] * np.sin(th)), th[0], axis=1) / np.pi
    check("bessel j0 vs integral oracle", np.abs(bessel.j0(x) - oracle).max() < 1e-13)

    perp = PerpGrid(16, 16)
    parallel = ParallelAxis(8)
    vel = VelocityGrid.maxwellian(16, 1.0, 32)
    check("rho weights normalized", abs(vel.rho_hweights.sum() - 1.0) < 1e-10)

    rng = np.random.default_rng(config.seed)
    fld = band_limited_field(rng, perp, parallel, kmax=2, rms=1.0)
    p1 = maxwellian_polarization(fld, 1.0, "rho_quadrature")
    p2 = maxwellian_polarization(fld, 1.0, "kernel_convolution")
    rel = np.linalg.norm(p1.values - p2.values) / np.linalg.norm(p1.values)
    check("polarization two-route identity", rel < 1e-6)
    check("kernel mass one", abs(polarization_kernel(1.0).mass() - 1.0) < 1e-8)

    params = FieldSolveParams(1.0, 1.0, "single_rho", rho_l=0.8)
    sol = solve_field_equation(fld, params)
    check("field-solve residual", sol.residual_norm < 1e-10)
    check("mean-zero gauge", abs(sol.phi.mean()) < 1e-12)

    ens = ParticleEnsemble(np.zeros((4, 3)),
                           np.array([[1.0, 0.0, 0.3]] * 4), np.ones(4))
    xg0 = ens.gyro_centers()[:, :2].copy()
    push(ens, UniformField(), 0.05, dt=0.01, n_steps=500)
    check("pusher gyro-center invariance",
          np.abs(ens.gyro_centers()[:, :2] - xg0).max() < 1e-13)

    profile = EquilibriumProfile.constant(1.0)
    bd = BoundaryData(beam(3, 4, 0.2), beam(-4, -3, 0.4))
    ssol = fixed_point_alpha(profile, bd)
    _, frec = reconstruct(ssol)
    check("trivial slab solution",
          abs(float(frec(0.3, 3.5)) - 0.2) < 1e-12
          and abs(float(frec(-0.3, -3.5)) - 0.4) < 1e-12)

    tmp = GyroDistribution(
        rng.normal(size=(vel.nrho, parallel.nz, perp.ny, perp.nx, vel.nv)),
        perp, parallel, vel)
    path = os.path.join(outdir, "selftest_roundtrip.field")
    save_field(tmp, path)
    back = load_field(path, perp, parallel, vel)
    check("serialization round trip", np.array_equal(back.values, tmp.values))

    _write_csv(os.path.join(outdir, "selftest.csv"), ["check", "passed"], checks)
    if not all(ok for _, ok in checks):
        raise RuntimeError("selftest failures: "
                           + ", ".join(n for n, ok in checks if not ok))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser():
    parser = _Parser(prog="flrkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="scenario config file")
        p.add_argument("--output-dir", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--workers", type=int, help="worker count override")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
        if name == "gyroavg":
            p.add_argument("--input", help="input field file (FLRFIELD)")
        if name == "fullkinetic-compare":
            p.add_argument("--epsilons", help="comma-separated scale ratios")
    return parser


_HANDLERS = {
    "gyroavg": cmd_gyroavg,
    "field-solve": cmd_field_solve,
    "transport": cmd_transport,
    "fullkinetic-compare": cmd_fullkinetic_compare,
    "steady": cmd_steady,
    "selftest": cmd_selftest,
}


def main(argv=None):
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        config = _resolve_config(args)
        _setup_workers(config)
        outdir = ensure_output_dir(config.output_dir)
    except (UsageError, ConfigError, FileNotFoundError, ValueError) as exc:
        log(f"error: {exc}")
        return EXIT_VALIDATION
    try:
        return _HANDLERS[args.command](config, args, outdir)
    except (HypothesisError, ChargeBalanceError, ConfigError, ValueError) as exc:
        log(f"error: {exc}")
        return EXIT_VALIDATION
    except (TransportBlowup, ConvergenceFailure, RuntimeError,
            FloatingPointError) as exc:
        log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    finally:
        try:
            _write_manifest(config, outdir, args.command, started)
        except OSError as exc:  # pragma: no cover - disk trouble only
            log(f"could not write manifest: {exc}")


if __name__ == "__main__":
    sys.exit(main())
