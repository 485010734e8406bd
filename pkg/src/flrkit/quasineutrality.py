"""Electroneutrality field solve for the electrostatic potential.

With adiabatic electrons and the polarization correction from the
non-uniform distribution of particles on gyro-circles, charge balance
becomes, after multiplying by Te/e (e = 1 in these units),

    (Phi - <Phi>) + (Te/Ti) * integral (1 - A_rho^2) Phi h(rho) drho
        = Te * (n_i - 1),

where <Phi> is the average along the field direction, A_rho the
gyro-average and n_i the gyro-averaged ion density.  With a single Larmor
radius the integral collapses to (Te/Ti)(1 - A_rho^2) Phi and the right
side is Te (A_rho(nbar) - 1).

Mode by mode in the periodic Fourier basis the operator is diagonal:
  * kpar != 0:  [1 + (Te/Ti)(S - m2)] with m2 the h-weighted J0^2 multiplier
                and S the discrete mass of the h-quadrature (1 up to
                truncation);
  * kpar = 0, kperp != 0:  [(Te/Ti)(S - m2)], solvable but increasingly
                ill-conditioned as kperp -> 0 (the operator genuinely
                degenerates; the condition number is reported, nothing is
                regularized);
  * kpar = 0, kperp = 0:  null; solvability demands a charge-balanced right
                side, and the mean-zero gauge picks the constant.
"""

import numpy as np

from .bessel import j0
from .domain import ScalarField
from .gyroaverage import GyroAverageOperator, _apply_perp_multiplier

__all__ = [
    "FieldSolveParams",
    "QuasineutralSolution",
    "ChargeBalanceError",
    "parallel_average",
    "gyro_density",
    "solve_potential",
    "solve_field_equation",
]

NULL_MODE_RTOL = 1e-10


class ChargeBalanceError(ValueError):
    """Total ion content does not match the electron content."""


class FieldSolveParams:
    """Temperatures and mode choice for the field solve (mean-zero gauge)."""

    def __init__(self, te=1.0, ti=1.0, mode="multi_rho", rho_l=None):
        if te <= 0 or ti <= 0:
            raise ValueError("temperatures must be positive")
        if mode not in ("multi_rho", "single_rho"):
            raise ValueError(f"unknown field-solve mode {mode!r}")
        if mode == "single_rho":
            if rho_l is None or rho_l < 0:
                raise ValueError("single_rho mode needs a nonnegative rho_l")
            rho_l = float(rho_l)
        self.te = float(te)
        self.ti = float(ti)
        self.e_charge = 1.0
        self.mode = mode
        self.rho_l = rho_l


class QuasineutralSolution:
    def __init__(self, phi, phi_parallel_avg, residual_norm, condition_number):
        self.phi = phi
        self.phi_parallel_avg = phi_parallel_avg
        self.residual_norm = residual_norm
        self.condition_number = condition_number


def parallel_average(field):
    """Replace the field by its mean along the (periodic) parallel direction."""
    if not field.parallel.periodic:
        raise ValueError("parallel average requires a periodic parallel axis")
    avg = field.values.mean(axis=0, keepdims=True)
    return field.like(np.broadcast_to(avg, field.values.shape).copy())


def gyro_density(fbar):
    """Gyro-coordinate density and the gyro-averaged ion density.

    nbar(x) = sum_j 2 pi rho_j w_j integral fbar_j dv  (bare 2 pi rho_L in
    single-radius mode); n_i applies the gyro-average per radius node before
    the sum.
    """
    vel = fbar.velocity
    dv = vel.dv
    cols = fbar.values.sum(axis=-1) * dv          # (nrho, nz, ny, nx)
    cj = vel.density_weights()
    nbar = np.tensordot(cj, cols, axes=(0, 0))
    averaged = np.empty_like(cols)
    for jr, rho in enumerate(vel.rho):
        op = GyroAverageOperator(fbar.perp, rho, "spectral")
        averaged[jr] = op.apply_values(cols[jr])
    n_i = np.tensordot(cj, averaged, axes=(0, 0))
    return (ScalarField(nbar, fbar.perp, fbar.parallel),
            ScalarField(n_i, fbar.perp, fbar.parallel))


def _polarization_multiplier(perp, params, velocity=None):
    """(mass, m2) of the h-weighted squared-J0 multiplier on the rfft2 grid."""
    kperp = perp.kperp()
    if params.mode == "single_rho":
        m2 = j0(kperp * params.rho_l) ** 2
        mass = 1.0
    else:
        if velocity is None:
            raise ValueError("multi_rho solve needs the VelocityGrid rho nodes")
        rho = velocity.rho
        w = velocity.rho_hweights
        bes = j0(kperp[..., None] * rho)
        m2 = (bes * bes) @ w
        mass = float(w.sum())
    return mass, m2


def solve_field_equation(rhs, params, velocity=None):
    """Solve the linear electroneutrality operator for a given right side.

    rhs is the full right-hand-side field (already including Te/e factors).
    Raises ChargeBalanceError if the doubly-constant mode of rhs exceeds
    NULL_MODE_RTOL relative to max(rms(rhs), Te/e).
    """
    if not rhs.parallel.periodic:
        raise ValueError("field solve requires a periodic parallel axis")
    vals = rhs.values
    nz, ny, nx = vals.shape
    rms = float(np.sqrt(np.mean(vals**2)))
    mean = float(vals.mean())
    # tolerance anchored to the larger of the right-side scale and the
    # electron-content scale Te/e, so roundoff-level mass drift in long
    # runs does not masquerade as a physical charge imbalance
    scale = max(rms, params.te / params.e_charge)
    if rms > 0 and abs(mean) > NULL_MODE_RTOL * scale:
        raise ChargeBalanceError(
            f"right side has net charge {mean:.3e} (rms {rms:.3e}); "
            "total ion content must match the electron content"
        )
    spec = np.fft.rfftn(vals, axes=(0, 1, 2))
    tau = params.te / params.ti
    mass, m2 = _polarization_multiplier(rhs.perp, params, velocity)
    pol = tau * (mass - m2)                       # (ny, nxr)
    symbol = np.broadcast_to(pol, spec.shape).copy()
    # kpar = 0 planes keep the bare polarization term; on kpar != 0 modes the
    # (Phi - <Phi>) fluctuation contributes its unit
    symbol[1:] += 1.0
    phi_hat = np.zeros_like(spec)
    nonnull = np.ones(spec.shape, dtype=bool)
    nonnull[0, 0, 0] = False
    degenerate = nonnull & (symbol == 0.0)
    if degenerate.any():
        # happens only at rho_L = 0, where the polarization term vanishes and
        # the kpar = 0 plane becomes unsolvable
        if np.abs(spec[degenerate]).max() > NULL_MODE_RTOL * scale * vals.size:
            raise ChargeBalanceError(
                "right side excites kpar = 0 modes on which the operator is null"
            )
        nonnull &= ~degenerate
    phi_hat[nonnull] = spec[nonnull] / symbol[nonnull]
    # gauge: mean(phi) = 0
    phi_hat[0, 0, 0] = 0.0
    cond = float(np.abs(symbol[nonnull]).max() / np.abs(symbol[nonnull]).min())
    phi = np.fft.irfftn(phi_hat, s=vals.shape, axes=(0, 1, 2))
    phi_field = rhs.like(phi)
    # residual of the discrete equation, via re-application of the operator
    applied = apply_operator(phi_field, params, velocity)
    res = applied.values - vals
    denom = np.sqrt(np.sum(vals**2))
    residual = float(np.sqrt(np.sum(res**2)) / denom) if denom > 0 else float(
        np.sqrt(np.sum(res**2)))
    phi_avg = parallel_average(phi_field)
    return QuasineutralSolution(phi_field, phi_avg, residual, cond)


def apply_operator(phi, params, velocity=None):
    """Apply the discrete electroneutrality operator to a potential."""
    tau = params.te / params.ti
    mass, m2 = _polarization_multiplier(phi.perp, params, velocity)
    pol = _apply_perp_multiplier(phi.values, mass - m2)
    fluct = phi.values - parallel_average(phi).values
    return phi.like(fluct + tau * pol)


def solve_potential(source, params, velocity=None):
    """Solve for the potential from a distribution or gyro-density.

    A GyroDistribution source uses the full multi-radius closure: the right
    side is Te (n_i - 1) with n_i from gyro_density.  A ScalarField source
    is taken as the gyro-coordinate density nbar of a single-radius run and
    the right side is Te (A_rho(nbar) - 1).
    """
    from .domain import GyroDistribution

    if isinstance(source, GyroDistribution):
        if params.mode != "multi_rho":
            raise ValueError("distribution input implies multi_rho mode")
        _, n_i = gyro_density(source)
        rhs = n_i.like(params.te / params.e_charge * (n_i.values - 1.0))
        return solve_field_equation(rhs, params, velocity=source.velocity)
    if params.mode != "single_rho":
        raise ValueError("scalar-density input implies single_rho mode")
    op = GyroAverageOperator(source.perp, params.rho_l, "spectral")
    n_i = op.apply_values(source.values)
    rhs = source.like(params.te / params.e_charge * (n_i - 1.0))
    return solve_field_equation(rhs, params, velocity=velocity)
