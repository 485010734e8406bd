"""Reference 6D solver by characteristics for the scale-ratio experiment.

The rescaled kinetic equation advects particles along

    dx_perp/dt = v_perp / eps,   dx_par/dt = v_par,
    dv/dt      = E(x) + v_perp^perp / eps,

where eps is the scale ratio.  The stiff part is a pure rotation around the
invariant gyro-center x_g = x_perp + v_perp^perp, solved exactly over any
step: the pusher is the symmetric composition

    kick(dt/2) drift_par(dt/2) rotate(dt) drift_par(dt/2) kick(dt/2),

so dt only needs to resolve the slow dynamics.  |v_perp|, v_par and x_g are
exact invariants of the field-free pusher.

Gyro-projection deposits particle weights onto the (x_g, v_par, |v_perp|)
lattice; comparing its low-mode moments (density, parallel momentum,
kinetic energy) with the reduced-model run realizes the weak-convergence
experiment: the observable gap must shrink as eps does (no rate is
asserted).
"""

import warnings

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .domain import GyroDistribution, ScalarField
from .gyrotransport import (
    build_advection,
    electric_field,
    external_field_run,
    project_initial,
    TransportState,
)

__all__ = [
    "ParticleEnsemble",
    "EpsilonRun",
    "HarmonicPotential",
    "UniformField",
    "push",
    "gyro_project",
    "moment_fields",
    "distribution_moments",
    "ensemble_energy",
    "sample_ensemble",
    "convergence_study",
    "ConvergenceFailure",
    "low_mode_coefficients",
    "weak_mode_error",
]


class ConvergenceFailure(RuntimeError):
    """The observable error failed to decrease across the eps sequence."""


class EpsilonRun:
    """Parameters of one full-kinetic run at a given scale ratio.

    dt must resolve the slow dynamics only (dt <= 0.1): the stiff gyration
    is rotated exactly, so the step never needs to resolve 1/eps.
    """

    PUSHERS = ("exact_rotation_splitting",)

    def __init__(self, epsilon, dt, pusher="exact_rotation_splitting"):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < dt <= 0.1:
            raise ValueError("dt must resolve the slow dynamics (0 < dt <= 0.1)")
        if pusher not in self.PUSHERS:
            raise ValueError(f"unknown pusher {pusher!r}")
        self.epsilon = float(epsilon)
        self.dt = float(dt)
        self.pusher = pusher


class ParticleEnsemble:
    """Positions on the torus, velocities in R^3, nonnegative weights."""

    def __init__(self, x, v, w):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        if x.shape != v.shape or x.ndim != 2 or x.shape[1] != 3:
            raise ValueError("x and v must both be (n, 3)")
        if w.shape != (x.shape[0],):
            raise ValueError("w must be (n,)")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        self.x = x
        self.v = v
        self.w = w

    @property
    def n(self):
        return self.x.shape[0]

    def total_weight(self):
        return float(self.w.sum())

    def copy(self):
        return ParticleEnsemble(self.x.copy(), self.v.copy(), self.w.copy())

    def gyro_centers(self):
        """x_g = x + v^perp with v^perp = (v2, -v1, 0); the z part is x3."""
        xg = self.x.copy()
        xg[:, 0] += self.v[:, 1]
        xg[:, 1] -= self.v[:, 0]
        return xg


class HarmonicPotential:
    """Sum of separable cosine modes; gradient available in closed form.

    terms: iterable of (amplitude, (kx, ky, kz), (px, py, pz)).  Used as the
    smooth external potential of the convergence experiment; `sample` puts
    the same potential on a lattice for the reduced-model run.
    """

    def __init__(self, terms):
        self.terms = [(float(a), tuple(map(float, k)), tuple(map(float, p)))
                      for a, k, p in terms]

    def phi(self, x, y, z):
        out = 0.0
        for a, (kx, ky, kz), (px, py, pz) in self.terms:
            out = out + a * np.cos(kx * x + px) * np.cos(ky * y + py) * np.cos(kz * z + pz)
        return out

    def efield(self, x, y, z):
        ex = 0.0
        ey = 0.0
        ez = 0.0
        for a, (kx, ky, kz), (px, py, pz) in self.terms:
            cx, sx = np.cos(kx * x + px), np.sin(kx * x + px)
            cy, sy = np.cos(ky * y + py), np.sin(ky * y + py)
            cz, sz = np.cos(kz * z + pz), np.sin(kz * z + pz)
            ex = ex + a * kx * sx * cy * cz
            ey = ey + a * ky * cx * sy * cz
            ez = ez + a * kz * cx * cy * sz
        return ex, ey, ez

    def sample(self, perp, parallel):
        z = parallel.z[:, None, None]
        y = perp.y[None, :, None]
        x = perp.x[None, None, :]
        vals = self.phi(x, y, z) + np.zeros((parallel.nz, perp.ny, perp.nx))
        return ScalarField(vals, perp, parallel)


class UniformField:
    """Constant electric field (not a periodic potential; for drift tests)."""

    def __init__(self, ex=0.0, ey=0.0, ez=0.0):
        self.e = (float(ex), float(ey), float(ez))

    def efield(self, x, y, z):
        shape = np.broadcast(x, y, z).shape
        return tuple(np.full(shape, c) for c in self.e)

    def phi(self, x, y, z):
        return -(self.e[0] * x + self.e[1] * y + self.e[2] * z)


def _wrap(x, box):
    x[:, 0] %= box[0]
    x[:, 1] %= box[1]
    x[:, 2] %= box[2]


def push(ensemble, field, epsilon, dt, box=None, n_steps=1):
    """Advance the ensemble; the gyration is solved exactly each step."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x, v = ensemble.x, ensemble.v
    angle = np.longdouble(dt) / np.longdouble(epsilon)
    # the rotation block runs in extended precision: a float64 cos/sin pair
    # misses the unit circle by ~half an ulp, which would otherwise feed a
    # secular |v_perp| drift over long field-free runs
    c, s = np.cos(angle), np.sin(angle)
    for _ in range(n_steps):
        ex, ey, ez = field.efield(x[:, 0], x[:, 1], x[:, 2])
        v[:, 0] += 0.5 * dt * ex
        v[:, 1] += 0.5 * dt * ey
        v[:, 2] += 0.5 * dt * ez
        x[:, 2] += 0.5 * dt * v[:, 2]
        # exact rotation about the invariant center x_g = x_perp + v_perp^perp
        w1 = v[:, 0].astype(np.longdouble)
        w2 = v[:, 1].astype(np.longdouble)
        xg1 = x[:, 0].astype(np.longdouble) + w2
        xg2 = x[:, 1].astype(np.longdouble) - w1
        r1 = w1 * c + w2 * s
        r2 = -w1 * s + w2 * c
        v[:, 0] = r1
        v[:, 1] = r2
        x[:, 0] = xg1 - r2
        x[:, 1] = xg2 + r1
        x[:, 2] += 0.5 * dt * v[:, 2]
        ex, ey, ez = field.efield(x[:, 0], x[:, 1], x[:, 2])
        v[:, 0] += 0.5 * dt * ex
        v[:, 1] += 0.5 * dt * ey
        v[:, 2] += 0.5 * dt * ez
        if box is not None:
            _wrap(x, box)
    return ensemble


def _cic_1d(pos, n):
    """Periodic cloud-in-cell: returns (i0, i1, w0, w1) for positions in cells."""
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    return i0 % n, (i0 + 1) % n, 1.0 - frac, frac


def _rho_hats(rho, nodes):
    """Linear hats on the (non-uniform) radius node set, clamped at the ends."""
    nn = nodes.size
    j = np.searchsorted(nodes, rho) - 1
    j = np.clip(j, 0, nn - 2) if nn > 1 else np.zeros_like(j)
    if nn == 1:
        return np.zeros(rho.size, dtype=np.int64), np.zeros(rho.size, dtype=np.int64), \
            np.ones_like(rho), np.zeros_like(rho)
    span = nodes[j + 1] - nodes[j]
    t = np.clip((rho - nodes[j]) / span, 0.0, 1.0)
    return j, j + 1, 1.0 - t, t


def gyro_project(ensemble, perp, parallel, velocity):
    """Deposit weights onto the reduced lattice with linear shape functions.

    The gyrophase is integrated out by the deposition itself: particles at
    the same gyro-center and |v_perp| land in the same cell column whatever
    their phase.  Deposited weight is converted to distribution values with
    the lattice volume element, so the discrete density integral of the
    result returns the total deposited weight exactly.
    """
    xg = ensemble.gyro_centers()
    rho = np.hypot(ensemble.v[:, 0], ensemble.v[:, 1])
    vpar = ensemble.v[:, 2]
    nx, ny, nz, nv, nrho = perp.nx, perp.ny, parallel.nz, velocity.nv, velocity.nrho
    ix0, ix1, wx0, wx1 = _cic_1d(xg[:, 0] / perp.dx, nx)
    iy0, iy1, wy0, wy1 = _cic_1d(xg[:, 1] / perp.dy, ny)
    iz0, iz1, wz0, wz1 = _cic_1d(xg[:, 2] / parallel.dz, nz)
    # v grid is node-centered on [-vmax, vmax]; clamp the (negligible) tails
    pv = (vpar + velocity.vmax) / velocity.dv
    jv = np.clip(np.floor(pv).astype(np.int64), 0, nv - 2)
    tv = np.clip(pv - jv, 0.0, 1.0)
    jr0, jr1, wr0, wr1 = _rho_hats(rho, velocity.rho)

    shape = (nrho, nz, ny, nx, nv)
    acc = np.zeros(int(np.prod(shape)))
    strides = np.array([nz * ny * nx * nv, ny * nx * nv, nx * nv, nv, 1], dtype=np.int64)

    def deposit(jr, wr):
        for iz, wz in ((iz0, wz0), (iz1, wz1)):
            for iy, wy in ((iy0, wy0), (iy1, wy1)):
                for ix, wx in ((ix0, wx0), (ix1, wx1)):
                    for jvv, wv in ((jv, 1.0 - tv), (jv + 1, tv)):
                        flat = (jr * strides[0] + iz * strides[1] + iy * strides[2]
                                + ix * strides[3] + jvv)
                        acc[:] += np.bincount(
                            flat, weights=ensemble.w * wr * wz * wy * wx * wv,
                            minlength=acc.size)

    deposit(jr0, wr0)
    if nrho > 1:
        deposit(jr1, wr1)
    cell = perp.dx * perp.dy * parallel.dz * velocity.dv
    cj = velocity.density_weights()
    vals = acc.reshape(shape) / (cell * cj[:, None, None, None, None])
    return GyroDistribution(vals, perp, parallel, velocity)


def _cic_deconvolve(field, perp, parallel):
    """Divide out the Fourier response of the linear assignment window.

    Cloud-in-cell multiplies every mode by sinc^2(k delta / 2) per
    dimension; grid-sampled reference fields carry no such smoothing, so
    deposited spectra are deconvolved before comparison.
    """
    spec = np.fft.rfftn(field, axes=(0, 1, 2))
    nz, ny, nx = field.shape

    def win(n):
        u = np.pi * np.fft.fftfreq(n)
        w = np.ones(n)
        nz_mask = u != 0
        w[nz_mask] = (np.sin(u[nz_mask]) / u[nz_mask]) ** 2
        return w

    wz = win(nz)
    wy = win(ny)
    wx = win(nx)[: nx // 2 + 1]
    spec /= wz[:, None, None] * wy[None, :, None] * wx[None, None, :]
    return np.fft.irfftn(spec, s=field.shape, axes=(0, 1, 2))


def moment_fields(ensemble, perp, parallel, deconvolve=True):
    """Deposit density, parallel momentum and kinetic energy on the 3D lattice.

    Cloud-in-cell preserves the 0th and 1st moments of every particle, so
    these fields coincide with the corresponding moments of gyro_project
    for the linear-in-v observables, while the quadratic energy observable
    avoids the second-moment bias of depositing onto velocity cells.  With
    deconvolve=True the assignment window is divided out mode by mode, so
    coefficients compare directly with grid-sampled reference moments.
    """
    xg = ensemble.gyro_centers()
    rho2 = ensemble.v[:, 0] ** 2 + ensemble.v[:, 1] ** 2
    vpar = ensemble.v[:, 2]
    nx, ny, nz = perp.nx, perp.ny, parallel.nz
    ix0, ix1, wx0, wx1 = _cic_1d(xg[:, 0] / perp.dx, nx)
    iy0, iy1, wy0, wy1 = _cic_1d(xg[:, 1] / perp.dy, ny)
    iz0, iz1, wz0, wz1 = _cic_1d(xg[:, 2] / parallel.dz, nz)
    cell = perp.dx * perp.dy * parallel.dz
    out = {}
    for name, quantity in (
        ("density", ensemble.w),
        ("momentum", ensemble.w * vpar),
        ("energy", ensemble.w * (vpar**2 + rho2)),
    ):
        acc = np.zeros(nz * ny * nx)
        for iz, wz in ((iz0, wz0), (iz1, wz1)):
            for iy, wy in ((iy0, wy0), (iy1, wy1)):
                for ix, wx in ((ix0, wx0), (ix1, wx1)):
                    flat = (iz * ny + iy) * nx + ix
                    acc += np.bincount(flat, weights=quantity * wz * wy * wx,
                                       minlength=acc.size)
        field = acc.reshape(nz, ny, nx) / cell
        if deconvolve:
            field = _cic_deconvolve(field, perp, parallel)
        out[name] = field
    return out


def distribution_moments(fbar):
    """The same three observable fields from a reduced-model distribution."""
    vel = fbar.velocity
    dv = vel.dv
    cj = vel.density_weights()
    v = vel.v
    vals = fbar.values
    dens = np.tensordot(cj, vals.sum(axis=-1) * dv, axes=(0, 0))
    mom = np.tensordot(cj, (vals @ v) * dv, axes=(0, 0))
    ke_par = (vals @ (v**2)) * dv
    ke = np.tensordot(cj, ke_par + vel.rho[:, None, None, None] ** 2
                      * vals.sum(axis=-1) * dv, axes=(0, 0))
    return {"density": dens, "momentum": mom, "energy": ke}


def ensemble_energy(ensemble, field, epsilon=None):
    """Total energy of the ensemble in a static potential.

    With epsilon given, returns the invariant of the rescaled dynamics,
    sum w (|v_perp|^2/(2 eps) + v_par^2/2 + Phi): the fast rotation makes
    the perpendicular kinetic term enter with the 1/eps weight, and a
    symmetric splitting conserves this to O(dt^2).  Without epsilon the
    plain sum w (|v|^2/2 + Phi) is returned; in the rescaled frame that
    quantity carries an O(eps Phi) gyration oscillation however small dt is.
    """
    phi = field.phi(ensemble.x[:, 0], ensemble.x[:, 1], ensemble.x[:, 2])
    vpar2 = ensemble.v[:, 2] ** 2
    vperp2 = ensemble.v[:, 0] ** 2 + ensemble.v[:, 1] ** 2
    if epsilon is None:
        kinetic = 0.5 * (vperp2 + vpar2)
    else:
        kinetic = vperp2 / (2.0 * epsilon) + 0.5 * vpar2
    return float(np.sum(ensemble.w * (kinetic + phi)))


def sample_ensemble(n, perp, parallel, ti, density=None, seed=0, contrast_fn=None):
    """Low-discrepancy Maxwellian ensemble with optional density modulation.

    Positions come from a scrambled Sobol sequence over the box, velocities
    from the inverse-CDF transform of the remaining three coordinates;
    weights carry the density modulation so the sampled measure matches
    density(x) * Maxwellian(v) with total weight ~ box volume * mean density.
    """
    eng = qmc.Sobol(d=6, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # n need not be a power of two; the balance warning is harmless here
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random(n)
    # keep strictly inside (0,1) for the normal inverse CDF
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    box = (perp.lx, perp.ly, parallel.lz if parallel.periodic else 2.0)
    x = np.column_stack([u[:, 0] * box[0], u[:, 1] * box[1], u[:, 2] * box[2]])
    sigma = np.sqrt(0.5 * ti)
    v = sigma * ndtri(u[:, 3:6])
    volume = box[0] * box[1] * box[2]
    if contrast_fn is None and density is None:
        w = np.full(n, volume / n)
    else:
        fn = contrast_fn if contrast_fn is not None else density
        w = fn(x[:, 0], x[:, 1], x[:, 2]) * (volume / n)
    return ParticleEnsemble(x, v, w)


def low_mode_coefficients(a, n_modes=1):
    """The lowest Fourier coefficients of a 3D field, |k index| <= n_modes.

    Integrals against the smooth test functions exp(i k . x): the weak
    observables of the comparison (pointwise closeness is not expected at
    finite scale ratio).
    """
    fa = np.fft.rfftn(a) / a.size
    nz, ny, nxr = fa.shape
    low = list(range(n_modes + 1))
    sel_z = low + [nz - k for k in range(1, n_modes + 1)]
    sel_y = low + [ny - k for k in range(1, n_modes + 1)]
    sel_x = low[: min(n_modes + 1, nxr)]
    return np.array([fa[iz, iy, ix]
                     for iz in sel_z for iy in sel_y for ix in sel_x])


def weak_mode_error(a, b, n_modes=1):
    """Relative low-mode error of two observable fields (b is the reference)."""
    ca = low_mode_coefficients(a, n_modes)
    cb = low_mode_coefficients(b, n_modes)
    ref = float(np.linalg.norm(cb))
    diff = float(np.linalg.norm(ca - cb))
    return diff / ref if ref > 0 else diff


def convergence_study(
    potential,
    epsilons,
    t_end,
    perp,
    parallel,
    velocity,
    ti=1.0,
    contrast_fn=None,
    n_particles=1_000_000,
    seed=0,
    dt_limit=0.02,
    dt_kinetic_max=0.05,
    gyro_points=64,
    require_decreasing=False,
):
    """Observable-error table of full-kinetic runs against the reduced model.

    The reduced run starts from the gyrophase projection of the same initial
    data and integrates with the static external field.  Each kinetic run
    uses dt = min(dt_kinetic_max, eps/4): the rotation is exact at any step,
    but scaling dt with eps keeps the splitting error well below the
    observable gap being measured.
    """
    epsilons = list(epsilons)
    if not epsilons:
        raise ValueError("need at least one epsilon")

    maxw = lambda v2: np.exp(-v2 / ti) / (np.pi * ti) ** 1.5

    def f0(x1, x2, x3, v1, v2, v3):
        base = maxw(v1**2 + v2**2 + v3**2)
        if contrast_fn is not None:
            base = base * contrast_fn(x1, x2, x3)
        return base

    fbar0 = project_initial(f0, perp, parallel, velocity, gyro_points=gyro_points)
    phi_field = potential.sample(perp, parallel)
    fields = build_advection(electric_field(phi_field), velocity)
    n_lim = max(1, int(round(t_end / dt_limit)))
    limit_state = external_field_run(
        TransportState(fbar0), fields, t_end / n_lim, n_lim, interp="cubic"
    )
    limit_moments = distribution_moments(limit_state.fbar)
    names = ("density", "momentum", "energy")
    ref_coeffs = {n: low_mode_coefficients(limit_moments[n]) for n in names}
    # one common scale: the momentum reference vanishes for symmetric data,
    # so each observable is normalized by the combined reference norm
    ref_total = float(np.sqrt(sum(np.linalg.norm(ref_coeffs[n]) ** 2 for n in names)))

    box = (perp.lx, perp.ly, parallel.lz)
    rows = []
    for eps in epsilons:
        ens = sample_ensemble(
            n_particles, perp, parallel, ti, seed=seed, contrast_fn=contrast_fn
        )
        dt = min(dt_kinetic_max, eps / 4.0)
        n_steps = max(1, int(round(t_end / dt)))
        run = EpsilonRun(eps, t_end / n_steps)
        push(ens, potential, run.epsilon, run.dt, box=box, n_steps=n_steps)
        kin_moments = moment_fields(ens, perp, parallel)
        row = {"epsilon": eps, "dt": run.dt}
        total = 0.0
        for name in names:
            diff = np.linalg.norm(low_mode_coefficients(kin_moments[name])
                                  - ref_coeffs[name])
            err = float(diff) / ref_total
            row[f"err_{name}"] = err
            total += err**2
        row["err_total"] = float(np.sqrt(total))
        rows.append(row)
    errs = [r["err_total"] for r in rows]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    if require_decreasing and not decreasing:
        raise ConvergenceFailure(
            "observable error did not decrease across the eps sequence: "
            + ", ".join(f"{r['epsilon']:g}: {r['err_total']:.3e}" for r in rows)
        )
    return rows
