"""Semi-Lagrangian time integration of the reduced gyrokinetic model.

The reduced distribution fbar(x_g, v, rho) obeys

    d fbar/dt + v d fbar/dz + (A_rho Ez) d fbar/dv
             + (A_rho E_perp)^perp . grad_perp fbar = 0,

one independent transport problem per Larmor-radius node (there is no
dynamics in rho).  One step is Strang-split: half-step parallel advection
at speed v, half-step v-advection at the gyro-averaged parallel field,
full-step perpendicular advection along the rotated gyro-averaged drift,
then the two half-steps in reverse.  Sub-advections interpolate backward
along characteristics with periodic cubic B-splines or trigonometric
interpolation; the perpendicular characteristic is traced with a
second-order midpoint rule (the drift is divergence-free, so the traced
map is area-preserving to the order of the scheme).

Self-consistent runs couple to the electroneutrality solve with a
predictor-corrector: solve, advance, re-solve, average the advection
fields, re-advance.
"""

import warnings

import numpy as np

from . import _interp
from .domain import GyroDistribution
from .gyroaverage import GyroAverageOperator
from .quasineutrality import gyro_density, solve_potential

__all__ = [
    "EField",
    "AdvectionFields",
    "TransportState",
    "TransportBlowup",
    "electric_field",
    "build_advection",
    "step",
    "advect",
    "diagnostics",
    "project_initial",
    "maxwellian_state",
    "recommended_dt",
    "run_transport",
]


class TransportBlowup(FloatingPointError):
    """Non-finite values appeared during a transport step."""


class EField:
    """Electric field components on the lattice, each values[iz, iy, ix]."""

    def __init__(self, ex, ey, ez, perp, parallel):
        self.ex = ex
        self.ey = ey
        self.ez = ez
        self.perp = perp
        self.parallel = parallel

    def max_perp(self):
        return float(np.sqrt(self.ex**2 + self.ey**2).max())

    def max_par(self):
        return float(np.abs(self.ez).max())


def electric_field(phi):
    """E = -grad Phi by spectral differentiation (curl-free by construction)."""
    if not phi.parallel.periodic:
        raise ValueError("spectral gradient requires periodic axes")
    vals = phi.values
    spec = np.fft.rfftn(vals, axes=(0, 1, 2))
    kz = phi.parallel.wavenumbers()
    ky, kx = phi.perp.wavenumbers()
    shape = vals.shape
    ex = -np.fft.irfftn(1j * kx[None, None, :] * spec, s=shape, axes=(0, 1, 2))
    ey = -np.fft.irfftn(1j * ky[None, :, None] * spec, s=shape, axes=(0, 1, 2))
    ez = -np.fft.irfftn(1j * kz[:, None, None] * spec, s=shape, axes=(0, 1, 2))
    return EField(ex, ey, ez, phi.perp, phi.parallel)


class AdvectionFields:
    """Gyro-averaged advection fields, one slice per Larmor-radius node.

    gyro_e_par[j] is the gyro-averaged parallel field; (drift_x, drift_y)[j]
    is the rotated gyro-averaged perpendicular field (E2, -E1) driving the
    guiding centers.  The drift is divergence-free in the perpendicular
    plane whenever E is a gradient.
    """

    def __init__(self, gyro_e_par, drift_x, drift_y, perp, parallel):
        self.gyro_e_par = gyro_e_par
        self.drift_x = drift_x
        self.drift_y = drift_y
        self.perp = perp
        self.parallel = parallel

    @classmethod
    def zero(cls, velocity, perp, parallel):
        shape = (velocity.nrho, parallel.nz, perp.ny, perp.nx)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), perp, parallel)

    def averaged_with(self, other):
        return AdvectionFields(
            0.5 * (self.gyro_e_par + other.gyro_e_par),
            0.5 * (self.drift_x + other.drift_x),
            0.5 * (self.drift_y + other.drift_y),
            self.perp,
            self.parallel,
        )

    def max_drift(self):
        return float(np.sqrt(self.drift_x**2 + self.drift_y**2).max())

    def max_e_par(self):
        return float(np.abs(self.gyro_e_par).max())


def build_advection(efield, velocity):
    """Gyro-average the field per Larmor-radius node and rotate the drift."""
    nrho = velocity.nrho
    nz, ny, nx = efield.ez.shape
    e_par = np.empty((nrho, nz, ny, nx))
    ux = np.empty_like(e_par)
    uy = np.empty_like(e_par)
    for j, rho in enumerate(velocity.rho):
        op = GyroAverageOperator(efield.perp, rho, "spectral")
        e_par[j] = op.apply_values(efield.ez)
        gx = op.apply_values(efield.ex)
        gy = op.apply_values(efield.ey)
        ux[j] = gy          # (E_perp)^perp = (E2, -E1)
        uy[j] = -gx
    return AdvectionFields(e_par, ux, uy, efield.perp, efield.parallel)


class TransportState:
    """Distribution plus time and the running diagnostics history."""

    def __init__(self, fbar, time=0.0, history=None):
        self.fbar = fbar
        self.time = float(time)
        self.history = list(history) if history else []

    def copy(self):
        return TransportState(self.fbar.copy(), self.time, self.history)


# --------------------------------------------------------------------------
# sub-advections (per rho slice; slices never couple)


def _advect_z(values, v, dt, dz, interp):
    # uniform shift v*dt per v-slice along the (periodic) z axis
    mult = _interp.uniform_shift_multiplier(values.shape[0], dz, v * dt / 1.0, interp)
    # multiplier is (nkz, nv) against spectrum (nkz, ny, nx, nv)
    return _interp.apply_axis_multiplier(values, 0, mult[:, None, None, :])


def _advect_v(values, accel, dt, dv, interp):
    # Uniform shift per column.  The v-axis is treated as periodic: the
    # distribution vanishes at the cut (Maxwellian tails below 1e-15), so
    # wrap-around contamination sits at rounding level, while the circulant
    # form conserves the velocity integral exactly (unit multiplier at k=0).
    # A non-periodic spline would instead leak the interior through its
    # boundary coefficients at a resolution-dependent rate.
    if not accel.any():
        return values
    nv = values.shape[-1]
    sigma = accel * (dt / dv)             # shift in cells, per column
    theta = 2.0 * np.pi * np.fft.rfftfreq(nv)
    if interp == "spectral":
        mult = np.exp(-1j * theta * sigma[..., None])
    else:
        big_k = np.ceil(sigma)
        frac = big_k - sigma
        weights = _interp.bspline3_weights(frac)
        num = np.zeros(sigma.shape + theta.shape, dtype=complex)
        for t, wt in zip((-1, 0, 1, 2), weights):
            num += wt[..., None] * np.exp(1j * theta * t)
        b_hat = (4.0 + 2.0 * np.cos(theta)) / 6.0
        mult = np.exp(-1j * theta * big_k[..., None]) * num / b_hat
    spec = np.fft.rfft(values, axis=-1)
    spec *= mult
    return np.fft.irfft(spec, n=nv, axis=-1)


def _advect_perp(values, ux, uy, dt, dx, dy):
    if not (ux.any() or uy.any()):
        return values
    nz, ny, nx = ux.shape
    iy = np.arange(ny)[None, :, None]
    ix = np.arange(nx)[None, None, :]
    # midpoint backward trace of the divergence-free drift
    drift = np.stack([uy, ux], axis=-1)
    dc = _interp.prefilter_periodic_2d(drift, axes=(1, 2))
    my = iy - 0.5 * dt * uy / dy
    mx = ix - 0.5 * dt * ux / dx
    umid = _interp.gather_perp_bicubic(dc, my, mx)
    fy = iy - dt * umid[..., 0] / dy
    fx = ix - dt * umid[..., 1] / dx
    coeff = _interp.prefilter_periodic_2d(values, axes=(1, 2))
    return _interp.gather_perp_bicubic(coeff, fy, fx)


def advect(fbar, fields, dt, interp="cubic", slice_order=None):
    """One Strang-split step of every Larmor-radius slice; returns a new field.

    Slices are processed one at a time (optionally in a caller-chosen
    order); they share no data, so any order gives bit-identical results.
    """
    vel = fbar.velocity
    perp, par = fbar.perp, fbar.parallel
    if not (np.all(np.isfinite(fields.gyro_e_par))
            and np.all(np.isfinite(fields.drift_x))
            and np.all(np.isfinite(fields.drift_y))):
        raise TransportBlowup("non-finite advection fields")
    if not np.all(np.isfinite(fbar.values)):
        raise TransportBlowup("non-finite distribution on entry")
    v = vel.v
    zmult = _interp.uniform_shift_multiplier(par.nz, par.dz, v * 0.5 * dt, interp)
    out = np.empty_like(fbar.values)
    order = range(vel.nrho) if slice_order is None else slice_order
    for j in order:
        f = fbar.values[j]
        f = _interp.apply_axis_multiplier(f, 0, zmult[:, None, None, :])
        f = _advect_v(f, fields.gyro_e_par[j], 0.5 * dt, vel.dv, interp)
        f = _advect_perp(f, fields.drift_x[j], fields.drift_y[j], dt, perp.dx, perp.dy)
        f = _advect_v(f, fields.gyro_e_par[j], 0.5 * dt, vel.dv, interp)
        f = _interp.apply_axis_multiplier(f, 0, zmult[:, None, None, :])
        out[j] = f
    if not np.all(np.isfinite(out)):
        raise TransportBlowup("non-finite values after advection step")
    return GyroDistribution(out, perp, par, vel)


def recommended_dt(fields, fbar):
    """Accuracy-motivated step bound 0.1 min(dz/vmax, dv/|Epar|, dperp/|u|)."""
    vel = fbar.velocity
    limits = [fbar.parallel.dz / max(vel.vmax, 1e-300)]
    e_par = fields.max_e_par()
    if e_par > 0:
        limits.append(vel.dv / e_par)
    drift = fields.max_drift()
    if drift > 0:
        limits.append(min(fbar.perp.dx, fbar.perp.dy) / drift)
    return 0.1 * min(limits)


def step(state, fields, dt, interp="cubic", slice_order=None, check_cfl=True):
    """Advance a TransportState by one step and append diagnostics."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if check_cfl:
        dt_rec = recommended_dt(fields, state.fbar)
        if dt > dt_rec:
            warnings.warn(
                f"dt = {dt:.3g} exceeds the accuracy bound {dt_rec:.3g}; "
                "the semi-Lagrangian step remains stable but degrades",
                RuntimeWarning,
                stacklevel=2,
            )
    fbar = advect(state.fbar, fields, dt, interp, slice_order)
    new = TransportState(fbar, state.time + dt, state.history)
    new.history.append(diagnostics(new))
    return new


def diagnostics(state):
    """Mass, L1/L2/Linf norms and kinetic energy of the current state."""
    fbar = state.fbar if isinstance(state, TransportState) else state
    vel = fbar.velocity
    cell = fbar.cell_volume()
    cj = vel.density_weights()
    vals = fbar.values
    per_slice = vals.reshape(vel.nrho, -1)
    mass = float(cj @ per_slice.sum(axis=1) * cell)
    l1 = float(cj @ np.abs(per_slice).sum(axis=1) * cell)
    l2 = float(np.sqrt(cj @ (per_slice**2).sum(axis=1) * cell))
    linf = float(np.abs(vals).max())
    v2 = vel.v**2
    ke_slices = np.array(
        [np.sum(vals[j] * v2) + vel.rho[j] ** 2 * vals[j].sum() for j in range(vel.nrho)]
    )
    kinetic = float(cj @ ke_slices * cell)
    time = state.time if isinstance(state, TransportState) else 0.0
    return {
        "time": time,
        "mass": mass,
        "l1": l1,
        "l2": l2,
        "linf": linf,
        "kinetic_energy": kinetic,
    }


def project_initial(f6d, perp, parallel, velocity, gyro_points=64):
    """Project 6D initial data onto the reduced lattice by gyrophase averaging.

    f6d(x1, x2, x3, v1, v2, v3) must broadcast over array arguments.  This
    is the initial-layer adaptation: the reduced model starts from the
    position-velocity gyro-average of the 6D initial condition.
    """
    nrho, nv = velocity.nrho, velocity.nv
    out = np.empty((nrho, parallel.nz, perp.ny, perp.nx, nv))
    z = parallel.z[:, None, None, None]
    y = perp.y[None, :, None, None]
    x = perp.x[None, None, :, None]
    vpar = velocity.v[None, None, None, :]
    for j, rho in enumerate(velocity.rho):
        acc = np.zeros((parallel.nz, perp.ny, perp.nx, nv))
        for m in range(gyro_points):
            phi = 2.0 * np.pi * m / gyro_points
            acc += f6d(
                x + rho * np.cos(phi),
                y + rho * np.sin(phi),
                z,
                rho * np.cos(phi - 0.5 * np.pi),
                rho * np.sin(phi - 0.5 * np.pi),
                vpar,
            )
        out[j] = acc / gyro_points
    return GyroDistribution(out, perp, parallel, velocity)


def maxwellian_state(perp, parallel, velocity, ti, density=None):
    """Equilibrium fbar whose discrete density equals `density` exactly.

    density may be an array over (nz, ny, nx) or None for a uniform unit
    density.  The v-profile is a Maxwellian normalized by its discrete sum,
    the rho-profile follows the radial Maxwellian marginal, so gyro_density
    returns the requested density to rounding.
    """
    v = velocity.v
    maxw = np.exp(-(v**2) / ti)
    maxw /= maxw.sum() * velocity.dv
    if density is None:
        density = np.ones((parallel.nz, perp.ny, perp.nx))
    density = np.asarray(density, dtype=float)
    vals = np.empty((velocity.nrho, parallel.nz, perp.ny, perp.nx, velocity.nv))
    if velocity.single:
        base = 1.0 / (2.0 * np.pi * velocity.rho[0])
        vals[0] = density[..., None] * maxw * base
    else:
        from .domain import maxwellian_rho_weight

        hw = maxwellian_rho_weight(velocity.rho, ti)
        norm = float(velocity.rho_dweights @ hw)
        for j in range(velocity.nrho):
            base = hw[j] / (2.0 * np.pi * velocity.rho[j]) / norm
            vals[j] = density[..., None] * maxw * base
    return GyroDistribution(vals, perp, parallel, velocity)


def self_consistent_fields(fbar, params):
    """Solve the potential from fbar and build the advection fields."""
    if params.mode == "multi_rho":
        solution = solve_potential(fbar, params)
    else:
        nbar, _ = gyro_density(fbar)
        solution = solve_potential(nbar, params)
    efield = electric_field(solution.phi)
    return solution, build_advection(efield, fbar.velocity)


def run_transport(state, params, dt, n_steps, interp="cubic", on_step=None):
    """Predictor-corrector self-consistent run; returns the final state.

    Per step: solve the field at t, advance with its advection fields,
    re-solve at the provisional state, average the two advection fields and
    re-advance the original state (second-order coupling).
    """
    for _ in range(n_steps):
        _, adv1 = self_consistent_fields(state.fbar, params)
        provisional = advect(state.fbar, adv1, dt, interp)
        _, adv2 = self_consistent_fields(provisional, params)
        state = step(state, adv1.averaged_with(adv2), dt, interp, check_cfl=False)
        if on_step is not None:
            on_step(state)
    return state


def external_field_run(state, fields, dt, n_steps, interp="cubic", on_step=None):
    """Fixed-field run (no self-consistency); fields are reused every step."""
    for _ in range(n_steps):
        state = step(state, fields, dt, interp, check_cfl=False)
        if on_step is not None:
            on_step(state)
    return state
