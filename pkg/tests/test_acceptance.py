"""Acceptance criteria, one test per criterion, at the stated tolerances.

Each test prints a `[acceptance] criterion N: PASS` line (with the measured
numbers) once its assertions hold; the heavy runs also print progress.
"""

import filecmp
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import report_line
from flrkit.bessel import j0
from flrkit.cli import EXIT_OK, EXIT_VALIDATION, main
from flrkit.domain import (
    ParallelAxis,
    PerpGrid,
    ScalarField,
    VelocityGrid,
    band_limited_field,
)
from flrkit.fullkinetic import (
    HarmonicPotential,
    ParticleEnsemble,
    UniformField,
    convergence_study,
    push,
)
from flrkit.gyroaverage import (
    gyroaverage,
    maxwellian_polarization,
    polarization_kernel,
)
from flrkit.gyrotransport import (
    AdvectionFields,
    TransportState,
    advect,
    build_advection,
    diagnostics,
    electric_field,
    maxwellian_state,
    run_transport,
)
from flrkit.quasineutrality import (
    ChargeBalanceError,
    FieldSolveParams,
    gyro_density,
    solve_field_equation,
)
from flrkit.steadystate import (
    BoundaryData,
    EquilibriumProfile,
    beam,
    check_hypotheses,
    density_three_term,
    fixed_point_alpha,
    g_function,
    g_root,
    reconstruct,
    soft_tail,
    solve_steady_state,
    verify_characteristics,
)


# --------------------------------------------------------------------------
# 1. gyro-average correctness


def test_criterion_1_gyroaverage_against_quadrature_oracle(rng):
    perp = PerpGrid(64, 64)
    parallel = ParallelAxis(2)
    phases = 2.0 * np.pi * np.arange(4096) / 4096

    worst_rel = 0.0
    s_values = np.linspace(0.0, 10.0, 20)
    for s in s_values:
        mx = 3
        k = mx * 2.0 * np.pi / perp.lx
        rho = s / k
        x = perp.x[None, None, :]
        field = ScalarField(
            np.cos(mx * x * (2 * np.pi / perp.lx) * 0 + k * x)
            * np.ones((parallel.nz, perp.ny, 1)), perp, parallel)
        out = gyroaverage(field, rho, backend="spectral")
        # 4096-point gyrophase quadrature of the plane wave
        oracle = float(np.mean(np.cos(s * np.cos(phases))))
        got = out.values[0, 0, 0] / field.values[0, 0, 0]
        denom = max(abs(oracle), 1e-3)  # stay meaningful near Bessel zeros
        worst_rel = max(worst_rel, abs(got - oracle) / denom)
    assert worst_rel <= 1e-10

    worst_backend = 0.0
    f = band_limited_field(rng, perp, parallel, kmax=4, rms=1.0)
    for rho in (0.4, 1.0, 2.3):
        a = gyroaverage(f, rho, backend="spectral")
        b = gyroaverage(f, rho, backend="quadrature", gyro_points=256)
        worst_backend = max(
            worst_backend,
            np.linalg.norm(a.values - b.values) / np.linalg.norm(a.values))
    assert worst_backend <= 1e-6
    report_line(f"[acceptance] criterion 1 (gyro-average vs quadrature oracle): "
                f"PASS  multiplier rel err {worst_rel:.2e}, "
                f"backend gap {worst_backend:.2e}")


# --------------------------------------------------------------------------
# 2. polarization identity


def test_criterion_2_polarization_two_routes(rng):
    perp = PerpGrid(32, 32)
    parallel = ParallelAxis(4)
    worst = 0.0
    for temperature in (0.5, 1.0, 2.0):
        for _ in range(10):
            f = band_limited_field(rng, perp, parallel, kmax=4, rms=1.0)
            a = maxwellian_polarization(f, temperature, "rho_quadrature")
            b = maxwellian_polarization(f, temperature, "kernel_convolution")
            worst = max(worst,
                        np.linalg.norm(a.values - b.values)
                        / np.linalg.norm(a.values))
        assert abs(polarization_kernel(temperature).mass() - 1.0) <= 1e-8
    assert worst <= 1e-6
    report_line(f"[acceptance] criterion 2 (polarization convolution identity): "
                f"PASS  worst route gap {worst:.2e}")


# --------------------------------------------------------------------------
# 3. quasineutrality solve


def test_criterion_3_field_solve(rng):
    perp = PerpGrid(64, 64)
    parallel = ParallelAxis(16)
    vel = VelocityGrid.maxwellian(16, 1.0, 8)
    params = FieldSolveParams(1.0, 1.0, "multi_rho")
    rhs = band_limited_field(rng, perp, parallel, kmax=8, rms=1.0)
    solution = solve_field_equation(rhs, params, velocity=vel)
    assert solution.residual_norm <= 1e-10

    # per-mode scalar formula, single radius
    te, ti, rho_l = 1.2, 0.7, 0.9
    sp = FieldSolveParams(te, ti, "single_rho", rho_l=rho_l)
    mx, mz = 5, 3
    kx = mx * 2.0 * np.pi / perp.lx
    x = perp.x[None, None, :]
    z = parallel.z[:, None, None]
    vals = np.cos(kx * x + 2.0 * np.pi * mz * z / parallel.lz + 0.7) \
        * np.ones((1, perp.ny, 1))
    mode_rhs = ScalarField(np.ascontiguousarray(
        np.broadcast_to(vals, (parallel.nz, perp.ny, perp.nx))), perp, parallel)
    mode_sol = solve_field_equation(mode_rhs, sp)
    denom = 1.0 + (te / ti) * (1.0 - j0(kx * rho_l) ** 2)
    mode_err = np.abs(mode_sol.phi.values - mode_rhs.values / denom).max()
    assert mode_err <= 1e-12

    with pytest.raises(ChargeBalanceError):
        bad = ScalarField(np.full((parallel.nz, perp.ny, perp.nx), 0.02),
                          perp, parallel)
        solve_field_equation(bad, sp)
    report_line(f"[acceptance] criterion 3 (quasineutral solve): PASS  "
                f"residual {solution.residual_norm:.2e}, "
                f"mode formula err {mode_err:.2e}, imbalance trips")


# --------------------------------------------------------------------------
# 4. limit-model transport


def test_criterion_4_transport():
    # (i) free streaming at cubic order under grid halving
    errs = []
    for nz in (16, 32, 64):
        perp = PerpGrid(4, 4)
        parallel = ParallelAxis(nz)
        vel = VelocityGrid.single_rho(16, 6.0, 1.0)
        prof = np.exp(np.cos(2.0 * np.pi * parallel.z / parallel.lz))
        vals = np.broadcast_to(prof[None, :, None, None, None],
                               (1, nz, 4, 4, vel.nv)).copy()
        from flrkit.domain import GyroDistribution

        fbar = GyroDistribution(vals, perp, parallel, vel)
        fields = AdvectionFields.zero(vel, perp, parallel)
        out = fbar
        for _ in range(4):
            out = advect(out, fields, 0.05, interp="cubic")
        exact = np.exp(np.cos(2.0 * np.pi * (parallel.z[:, None]
                                             - vel.v[None, :] * 0.2)
                              / parallel.lz))
        errs.append(np.abs(out.values[0, :, 0, 0, :] - exact).max())
    orders = [np.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 3.5

    # (ii) slice-permutation bit identity on the production lattice
    perp = PerpGrid(32, 32)
    parallel = ParallelAxis(16)
    vel = VelocityGrid.maxwellian(32, 1.0, 4)
    rng = np.random.default_rng(400)
    pert = band_limited_field(rng, perp, parallel, kmax=2, rms=1e-3)
    fbar0 = maxwellian_state(perp, parallel, vel, 1.0, density=1.0 + pert.values)
    params = FieldSolveParams(1.0, 1.0, "multi_rho")
    from flrkit.gyrotransport import self_consistent_fields

    _, fields = self_consistent_fields(fbar0, params)
    fwd = advect(fbar0, fields, 0.01, interp="cubic",
                 slice_order=range(vel.nrho))
    rev = advect(fbar0, fields, 0.01, interp="cubic",
                 slice_order=list(reversed(range(vel.nrho))))
    assert np.array_equal(fwd.values, rev.values)

    # (iii) mass conservation over 1000 self-consistent corrector steps
    state = TransportState(fbar0)
    state.history.append(diagnostics(state))
    t0 = time.time()
    for block in range(10):
        state = run_transport(state, params, 0.01, 100, interp="cubic")
        report_line(f"[acceptance]   transport block {block + 1}/10, "
                    f"t = {state.time:.2f}, "
                    f"mass drift so far "
                    f"{abs(state.history[-1]['mass'] - state.history[0]['mass']) / state.history[0]['mass']:.2e}, "
                    f"{time.time() - t0:.0f}s elapsed")
    drift = abs(state.history[-1]["mass"]
                - state.history[0]["mass"]) / state.history[0]["mass"]
    assert drift <= 1e-8
    report_line(f"[acceptance] criterion 4 (limit-model transport): PASS  "
                f"orders {['%.2f' % o for o in orders]}, 1000-step mass drift "
                f"{drift:.2e}, slice order bit-identical")


# --------------------------------------------------------------------------
# 5. scale-ratio limit experiment


def test_criterion_5_epsilon_limit_experiment():
    # pusher invariants
    ens = ParticleEnsemble(np.array([[1.0, 2.0, 3.0]]),
                           np.array([[0.7, -0.4, 0.2]]), np.array([1.0]))
    xg0 = ens.gyro_centers()[:, :2].copy()
    vp0 = np.hypot(ens.v[0, 0], ens.v[0, 1])
    push(ens, UniformField(), 0.04, dt=0.01, n_steps=4000)
    inv_xg = np.abs(ens.gyro_centers()[:, :2] - xg0).max()
    inv_vp = abs(np.hypot(ens.v[0, 0], ens.v[0, 1]) - vp0)
    assert inv_xg <= 1e-13 and inv_vp <= 1e-13

    # uniform-field drift vs eps <E^perp>
    e0 = 0.3
    drift_errs = {}
    for eps in (0.05, 0.025):
        single = ParticleEnsemble(np.zeros((1, 3)),
                                  np.array([[1.0, 0.0, 0.0]]), np.ones(1))
        dt = 2.0 * np.pi * eps / 64
        n = int(round(60 * 2.0 * np.pi * eps / dt))
        acc = np.zeros(2)
        for _ in range(n):
            push(single, UniformField(e0, 0.0, 0.0), eps, dt, n_steps=1)
            acc += single.v[0, :2]
        vbar = acc / n
        drift_errs[eps] = np.abs(vbar - np.array([0.0, -eps * e0])).max()
        assert drift_errs[eps] <= 2.0 * eps**2 * e0
    report_line(f"[acceptance]   pusher invariants {inv_xg:.1e}/{inv_vp:.1e}, "
                f"drift errors {drift_errs}")

    # the weak-convergence experiment
    perp = PerpGrid(16, 16)
    parallel = ParallelAxis(8)
    vel = VelocityGrid.maxwellian(32, 1.0, 12)
    potential = HarmonicPotential([
        (0.4, (1.0, 1.0, 0.0), (0.0, 0.0, 0.0)),
        (0.2, (1.0, 0.0, 1.0), (0.3, 0.0, 0.0)),
    ])

    def contrast(x, y, z):
        return 1.0 + 0.5 * np.cos(x) + 0.0 * (y + z)

    t0 = time.time()
    rows = convergence_study(potential, [0.1, 0.05, 0.025], 1.0,
                             perp, parallel, vel, contrast_fn=contrast,
                             n_particles=1_000_000, seed=2024,
                             dt_limit=0.0125, require_decreasing=True)
    errs = [r["err_total"] for r in rows]
    for r in rows:
        report_line(f"[acceptance]   eps = {r['epsilon']:g}: "
                    f"weak-observable error {r['err_total']:.4e}")
    assert all(b < a for a, b in zip(errs, errs[1:]))
    report_line(f"[acceptance] criterion 5 (scale-ratio limit): PASS  "
                f"errors {['%.3e' % e for e in errs]} strictly decreasing, "
                f"{time.time() - t0:.0f}s")


# --------------------------------------------------------------------------
# 6. steady-state solver


def test_criterion_6_steady_state():
    amp = 0.2
    bd = BoundaryData(beam(3, 4, amp), beam(-4, -3, 2 * amp))

    # (a) constant profile: boundary data reproduced exactly
    flat = EquilibriumProfile.constant(1.0)
    sol_flat = fixed_point_alpha(flat, bd)
    _, f_flat = reconstruct(sol_flat)
    exact_gap = 0.0
    for z in (-1.0, 0.0, 0.7):
        exact_gap = max(exact_gap, abs(float(f_flat(z, 3.3)) - amp))
        exact_gap = max(exact_gap, abs(float(f_flat(z, -3.3)) - 2 * amp))
    assert exact_gap <= 1e-12

    # (b) decreasing profile: fixed point, admissible set, G-root
    sloped = EquilibriumProfile.linear(1.0, 0.9)
    report = check_hypotheses(sloped, bd)
    assert report.all_pass
    solution = solve_steady_state(sloped, bd, tol=1e-10)
    assert solution.fixed_point_residual <= 1e-10
    assert solution.in_admissible_set()
    margins = solution.k_margins
    gap_g = abs(solution.g_root - solution.jump())
    assert gap_g <= 1e-9
    x_hi = 2.0 * report.mu / float(sloped.n(1.0))
    assert g_function(sloped, bd, report, 0.0) <= 1e-12
    assert g_function(sloped, bd, report, x_hi) >= -1e-12
    gs = [g_function(sloped, bd, report, x) for x in np.linspace(0, x_hi, 100)]
    assert np.all(np.diff(gs) >= -1e-12)

    # (c) density formula agreement, at table nodes (between nodes the
    # interpolation error of alpha would dominate both sides)
    rho_gap = 0.0
    for idx in np.linspace(0, solution.z.size - 1, 10).astype(int):
        z = solution.z[idx]
        rho3, _ = density_three_term(solution, z)
        direct = float(sloped.n(z)) * solution.alpha[idx] / 2.0
        rho_gap = max(rho_gap, abs(rho3 - direct) / max(direct, 1.0))
    assert rho_gap <= 1e-8

    # (d) characteristics audit
    char = verify_characteristics(solution, n_samples=10, h=2e-4)
    assert char["max_energy_drift"] <= 1e-10
    assert char["max_boundary_mismatch"] <= 1e-8

    # (e) violations carry witnesses
    bad_bd = BoundaryData(soft_tail(1.0), beam(-4, -3, 0.4))
    rep_bad = check_hypotheses(sloped, bad_bd)
    assert not rep_bad.h3 and "h3_witness_u" in rep_bad.witnesses
    rep_h4 = check_hypotheses(sloped, BoundaryData(beam(3, 4, 0.5),
                                                   beam(-4, -3, 0.2)))
    assert not rep_h4.h4 and rep_h4.witnesses["influx_minus"] > \
        rep_h4.witnesses["influx_plus"]
    with pytest.raises(Exception):
        g_root(sloped, bad_bd)
    report_line(f"[acceptance] criterion 6 (steady-state solver): PASS  "
                f"trivial gap {exact_gap:.1e}, residual "
                f"{solution.fixed_point_residual:.1e}, |G-root - jump| "
                f"{gap_g:.1e}, K margins jump {margins['jump_margin']:.3f} / "
                f"slope {margins['slope_margin']:.3f}, rho-formula "
                f"{rho_gap:.1e}, energy drift {char['max_energy_drift']:.1e}")


# --------------------------------------------------------------------------
# 7. determinism of every pipeline


def _run_twice(tmp_path, name, argv, outputs, expect=EXIT_OK):
    d1 = tmp_path / f"{name}_a"
    code1 = main(argv + ["--output-dir", str(d1)])
    assert code1 == expect, f"{name} first run exit {code1}"
    d2 = tmp_path / f"{name}_b"
    code2 = main([argv[0], "--config", str(d1 / "manifest.cfg"),
                  "--output-dir", str(d2)] + (["--workers", "2"] if True else []))
    assert code2 == expect, f"{name} rerun exit {code2}"
    for fname in outputs:
        assert filecmp.cmp(d1 / fname, d2 / fname, shallow=False), \
            f"{name}: {fname} differs between runs"


def test_criterion_7_cli_determinism(tmp_path):
    small = ["--set", "nx=16", "--set", "ny=16", "--set", "nz=8"]
    _run_twice(tmp_path, "gyroavg",
               ["gyroavg"] + small + ["--set", "rho_single=0.8"],
               ["gyroavg.field", "gyroavg.csv", "input.field"])
    _run_twice(tmp_path, "field-solve",
               ["field-solve"] + small + ["--set", "nv=16", "--set", "nrho=4"],
               ["phi.field", "solve_summary.csv"])
    _run_twice(tmp_path, "transport",
               ["transport", "--set", "nx=8", "--set", "ny=8", "--set", "nz=8",
                "--set", "nv=16", "--set", "nrho=2", "--set", "dt=0.05",
                "--set", "t_end=0.15"],
               ["diagnostics.csv", "fbar_final.field"])
    _run_twice(tmp_path, "fullkinetic-compare",
               ["fullkinetic-compare"] + small + [
                   "--set", "nv=24", "--set", "nrho=8",
                   "--set", "particles=150000", "--set", "t_end=0.4",
                   "--epsilons", "0.15,0.04"],
               ["epsilon_errors.csv"])
    _run_twice(tmp_path, "steady",
               ["steady", "--set", "n0=linear:1.0,0.9",
                "--set", "steady_points=129"],
               ["alpha.csv", "f_samples.csv", "hypotheses.csv",
                "steady_summary.csv"])
    _run_twice(tmp_path, "selftest", ["selftest"], ["selftest.csv"])
    report_line("[acceptance] criterion 7 (manifest determinism): PASS  "
                "all six pipelines reproduce outputs byte-for-byte")
