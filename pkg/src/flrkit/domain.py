"""Grids, fields, distributions, scenario configuration and serialization.

Everything is expressed in the dimensionless variables of the large-field
scaling: the perpendicular plane is a periodic torus [0,lx) x [0,ly), the
parallel direction is either periodic (turbulence runs) or the slab [-1,1]
(steady-state runs), and velocity space carries the parallel velocity
v in [-vmax, vmax] together with a static set of Larmor-radius nodes.

The Larmor-radius nodes discretize the measure h(rho) drho with
h(rho) = (2 rho / Ti) exp(-rho^2 / Ti), the radial marginal of a Maxwellian.
There is no dynamics in rho, so the nodes are a fixed quadrature rule:
Gauss-Legendre on [0, rho_max] with the Maxwellian weight folded into the
node weights.  Plain-drho weights are kept alongside so that arbitrary
rho-integrals (densities, energies) use the same nodes.
"""

import os
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

__all__ = [
    "PerpGrid",
    "ParallelAxis",
    "VelocityGrid",
    "ScalarField",
    "GyroDistribution",
    "ScenarioConfig",
    "build_grids",
    "save_field",
    "load_field",
    "export_csv",
    "parse_config",
    "format_config",
    "ConfigError",
    "FieldFormatError",
]

FORMAT_MAGIC = "FLRFIELD"
FORMAT_VERSION = "v1"


class ConfigError(ValueError):
    """Raised for malformed or unknown scenario-configuration input."""


class FieldFormatError(IOError):
    """Raised when a field file cannot be decoded consistently."""


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class PerpGrid:
    """Uniform periodic lattice on the perpendicular torus [0,lx) x [0,ly)."""

    nx: int
    ny: int
    lx: float = 2.0 * np.pi
    ly: float = 2.0 * np.pi

    def __post_init__(self):
        for name, n in (("nx", self.nx), ("ny", self.ny)):
            if n < 4 or n % 2 != 0:
                raise ValueError(f"{name} must be even and >= 4, got {n}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("perpendicular box lengths must be positive")

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def x(self):
        return np.arange(self.nx) * self.dx

    @property
    def y(self):
        return np.arange(self.ny) * self.dy

    def wavenumbers(self):
        """Angular wavenumbers (ky, kx) for an rfft2 over axes (y, x)."""
        ky = 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)
        kx = 2.0 * np.pi * np.fft.rfftfreq(self.nx, d=self.dx)
        return ky, kx

    def kperp(self):
        """|k_perp| on the rfft2 layout, shape (ny, nx//2+1)."""
        ky, kx = self.wavenumbers()
        return np.hypot(ky[:, None], kx[None, :])


@dataclass(frozen=True)
class ParallelAxis:
    """Direction along the magnetic field: periodic torus or slab [-1,1].

    Slab mode exists for the steady-state boundary-value problem only; the
    transport and field-solve pipelines require a periodic axis.
    """

    nz: int
    mode: str = "periodic"
    lz: float = 2.0 * np.pi

    def __post_init__(self):
        if self.mode not in ("periodic", "slab"):
            raise ValueError(f"unknown parallel mode {self.mode!r}")
        if self.nz < 1:
            raise ValueError("nz must be positive")
        if self.mode == "periodic" and self.lz <= 0:
            raise ValueError("parallel length must be positive")

    @property
    def periodic(self):
        return self.mode == "periodic"

    @property
    def dz(self):
        if self.mode == "slab":
            return 2.0 / self.nz
        return self.lz / self.nz

    @property
    def z(self):
        if self.mode == "slab":
            # cell centers of [-1, 1]
            return -1.0 + (np.arange(self.nz) + 0.5) * self.dz
        return np.arange(self.nz) * self.dz

    def wavenumbers(self):
        if not self.periodic:
            raise ValueError("wavenumbers are defined for the periodic axis only")
        return 2.0 * np.pi * np.fft.fftfreq(self.nz, d=self.dz)


def _gauss_legendre(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def maxwellian_rho_weight(rho, ti):
    """Radial Maxwellian marginal h(rho) = (2 rho / Ti) exp(-rho^2 / Ti)."""
    rho = np.asarray(rho, dtype=float)
    return (2.0 * rho / ti) * np.exp(-(rho * rho) / ti)


class VelocityGrid:
    """Parallel-velocity lattice plus static Larmor-radius quadrature nodes.

    rho_nodes holds (rho, weight) pairs for the measure h(rho) drho; the
    weights of a Maxwellian-generated rule sum to 1.  rho_dweights are the
    matching plain-drho weights, used for integrals against 2 pi rho drho.
    In single-node mode (one prescribed Larmor radius) the h-weight is 1 and
    the plain weight is 1: densities then carry the bare 2 pi rho factor.
    """

    def __init__(self, nv, vmax, rho_nodes, rho_dweights):
        if nv < 2:
            raise ValueError("nv must be >= 2")
        if vmax <= 0:
            raise ValueError("vmax must be positive")
        rho_nodes = np.atleast_2d(np.asarray(rho_nodes, dtype=float))
        if rho_nodes.shape[1] != 2:
            raise ValueError("rho_nodes must be (rho, weight) pairs")
        if np.any(rho_nodes[:, 1] <= 0):
            raise ValueError("rho weights must be positive")
        if np.any(rho_nodes[:, 0] < 0):
            raise ValueError("rho nodes must be nonnegative")
        self.nv = int(nv)
        self.vmax = float(vmax)
        self.rho_nodes = rho_nodes
        self.rho_dweights = np.asarray(rho_dweights, dtype=float)
        if self.rho_dweights.shape != (rho_nodes.shape[0],):
            raise ValueError("rho_dweights must match rho_nodes")

    @classmethod
    def maxwellian(cls, nv, ti, nrho, vmax=None, rho_max=None):
        """Gauss-Legendre nodes on [0, rho_max] with the h(rho) weight folded in.

        rho_max defaults to 6 sqrt(Ti); the discarded tail of h is below
        1e-15 of the total mass.  vmax defaults to 6 sqrt(Ti) as well.
        """
        if ti <= 0:
            raise ValueError("Ti must be positive")
        if vmax is None:
            vmax = 6.0 * np.sqrt(ti)
        if rho_max is None:
            rho_max = 6.0 * np.sqrt(ti)
        rho, dw = _gauss_legendre(int(nrho), 0.0, rho_max)
        hw = dw * maxwellian_rho_weight(rho, ti)
        return cls(nv, vmax, np.column_stack([rho, hw]), dw)

    @classmethod
    def single_rho(cls, nv, vmax, rho_l):
        """One prescribed Larmor radius with unit weight."""
        if rho_l < 0:
            raise ValueError("rho_l must be nonnegative")
        return cls(nv, vmax, [[float(rho_l), 1.0]], [1.0])

    @property
    def nrho(self):
        return self.rho_nodes.shape[0]

    @property
    def rho(self):
        return self.rho_nodes[:, 0]

    @property
    def rho_hweights(self):
        return self.rho_nodes[:, 1]

    @property
    def single(self):
        return self.nrho == 1

    @property
    def dv(self):
        return 2.0 * self.vmax / (self.nv - 1)

    @property
    def v(self):
        return np.linspace(-self.vmax, self.vmax, self.nv)

    def density_weights(self):
        """Per-node factors c_j such that n = sum_j c_j * integral f_j dv.

        Multi-node rules use 2 pi rho_j drho_j; the single-node rule carries
        the bare 2 pi rho_L of the one-radius density formula.
        """
        if self.single:
            return 2.0 * np.pi * self.rho
        return 2.0 * np.pi * self.rho * self.rho_dweights

    def __eq__(self, other):
        return (
            isinstance(other, VelocityGrid)
            and self.nv == other.nv
            and self.vmax == other.vmax
            and np.array_equal(self.rho_nodes, other.rho_nodes)
            and np.array_equal(self.rho_dweights, other.rho_dweights)
        )


# --------------------------------------------------------------------------
# fields


class ScalarField:
    """Real scalar lattice field, stored as values[iz, iy, ix]."""

    def __init__(self, values, perp, parallel):
        values = np.asarray(values, dtype=float)
        expected = (parallel.nz, perp.ny, perp.nx)
        if values.shape != expected:
            raise ValueError(f"field shape {values.shape} != grid shape {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.values = values
        self.perp = perp
        self.parallel = parallel

    @classmethod
    def zeros(cls, perp, parallel):
        return cls(np.zeros((parallel.nz, perp.ny, perp.nx)), perp, parallel)

    def copy(self):
        return ScalarField(self.values.copy(), self.perp, self.parallel)

    def like(self, values):
        return ScalarField(values, self.perp, self.parallel)

    @property
    def shape(self):
        return self.values.shape

    def mean(self):
        return float(self.values.mean())

    def norm2(self):
        """Discrete L2 norm with the cell volume measure."""
        dv = self.perp.dx * self.perp.dy * self.parallel.dz
        return float(np.sqrt(np.sum(self.values**2) * dv))


class GyroDistribution:
    """Reduced distribution on the (x_g, v_par, rho) lattice.

    Stored as values[irho, iz, iy, ix, iv]; the rho slices evolve
    independently and each (iz, iy, ix) column is contiguous in v, which is
    the layout the semi-Lagrangian kernels want.
    """

    def __init__(self, values, perp, parallel, velocity):
        values = np.asarray(values, dtype=float)
        expected = (velocity.nrho, parallel.nz, perp.ny, perp.nx, velocity.nv)
        if values.shape != expected:
            raise ValueError(f"distribution shape {values.shape} != {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("distribution values must be finite")
        self.values = values
        self.perp = perp
        self.parallel = parallel
        self.velocity = velocity

    @classmethod
    def zeros(cls, perp, parallel, velocity):
        shape = (velocity.nrho, parallel.nz, perp.ny, perp.nx, velocity.nv)
        return cls(np.zeros(shape), perp, parallel, velocity)

    def copy(self):
        return GyroDistribution(self.values.copy(), self.perp, self.parallel, self.velocity)

    @property
    def shape(self):
        return self.values.shape

    def cell_volume(self):
        return self.perp.dx * self.perp.dy * self.parallel.dz * self.velocity.dv


# --------------------------------------------------------------------------
# scenario configuration

_PROFILE_PREFIXES = ("constant:", "linear:")


def _parse_bool(s):
    if s in ("true", "True", "1", "yes"):
        return True
    if s in ("false", "False", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


@dataclass
class ScenarioConfig:
    """Flat run configuration shared by every pipeline.

    epsilon is the scale ratio of the large-field ordering; Te, Ti the
    electron and ion temperatures; n0 the equilibrium density profile spec
    ("constant:<value>" or "linear:<left>,<right>" over the slab).  The
    Debye length, gyration frequency and rho_star of the scaling discussion
    may be recorded as metadata but enter no computation.
    """

    # scaling / physics
    epsilon: float = 0.1
    te: float = 1.0
    ti: float = 1.0
    n0: str = "constant:1.0"
    # lattice
    nx: int = 32
    ny: int = 32
    nz: int = 16
    lx: float = 2.0 * np.pi
    ly: float = 2.0 * np.pi
    lz: float = 2.0 * np.pi
    parallel_mode: str = "periodic"
    nv: int = 32
    vmax: float = 0.0          # 0 -> default 6 sqrt(Ti)
    nrho: int = 8
    rho_max: float = 0.0       # 0 -> default 6 sqrt(Ti)
    rho_single: float = 0.0    # >0 -> single-radius mode at this rho_L
    # time stepping
    dt: float = 0.05
    t_end: float = 1.0
    # numerics
    interp: str = "cubic"          # cubic | spectral
    gyro_backend: str = "spectral"  # spectral | quadrature
    gyro_points: int = 32
    # perturbation used by the transport scenario
    perturb_amplitude: float = 1e-3
    # full-kinetic study
    particles: int = 1_000_000
    epsilons: str = "0.1,0.05,0.025"
    phi_amplitude: float = 0.4
    init_contrast: float = 0.5
    # steady-state problem
    f_minus: str = "beam:3,4,0.2"
    f_plus: str = "beam:-4,-3,0.4"
    steady_points: int = 257
    fixed_point_tol: float = 1e-10
    quad_tol: float = 1e-12
    # bookkeeping
    seed: int = 12345
    workers: int = 0           # 0 -> available parallelism
    output_dir: str = "out"
    dump_every: int = 0        # 0 -> final state only
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.te <= 0 or self.ti <= 0:
            raise ConfigError("temperatures must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.vmax < 0 or self.rho_max < 0 or self.rho_single < 0:
            raise ConfigError("velocity-space bounds must be nonnegative")
        if self.interp not in ("cubic", "spectral"):
            raise ConfigError(f"unknown interpolation backend {self.interp!r}")
        if self.gyro_backend not in ("spectral", "quadrature"):
            raise ConfigError(f"unknown gyro-average backend {self.gyro_backend!r}")
        if not any(self.n0.startswith(p) for p in _PROFILE_PREFIXES):
            raise ConfigError(f"n0 spec must start with one of {_PROFILE_PREFIXES}")

    def epsilon_list(self):
        try:
            eps = [float(s) for s in self.epsilons.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad epsilons list {self.epsilons!r}") from exc
        if not eps or any(e <= 0 for e in eps):
            raise ConfigError("epsilons must be positive")
        return eps


_CONFIG_FIELDS = {
    f.name: f.type for f in dataclass_fields(ScenarioConfig) if f.name != "metadata"
}


def parse_config(text):
    """Parse a strict flat key-value scenario file.

    Lines are `key = value`; `#` starts a comment; unknown keys are errors.
    Keys prefixed `meta.` are collected verbatim into the metadata dict.
    """
    values = {}
    meta = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key.startswith("meta."):
            meta[key[5:]] = val
            continue
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        ftype = _CONFIG_FIELDS[key]
        try:
            if ftype in ("int", int):
                values[key] = int(val)
            elif ftype in ("float", float):
                values[key] = float(val)
            elif ftype in ("bool", bool):
                values[key] = _parse_bool(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    return ScenarioConfig(metadata=meta, **values)


def format_config(config, extra_meta=None):
    """Render a ScenarioConfig back into the flat key-value format."""
    lines = []
    for f in dataclass_fields(ScenarioConfig):
        if f.name == "metadata":
            continue
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    meta = dict(config.metadata)
    if extra_meta:
        meta.update(extra_meta)
    for key in sorted(meta):
        lines.append(f"meta.{key} = {meta[key]}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def equilibrium_profile(spec):
    """Turn an n0 spec string into (n(z), n'(z)) callables on [-1, 1]."""
    if spec.startswith("constant:"):
        value = float(spec.split(":", 1)[1])
        if value <= 0:
            raise ConfigError("equilibrium density must be positive")
        return (lambda z: value * np.ones_like(np.asarray(z, dtype=float)),
                lambda z: np.zeros_like(np.asarray(z, dtype=float)))
    if spec.startswith("linear:"):
        try:
            left, right = (float(s) for s in spec.split(":", 1)[1].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad linear profile {spec!r}") from exc
        if left <= 0 or right <= 0:
            raise ConfigError("equilibrium density must be positive")
        slope = 0.5 * (right - left)

        def n(z):
            return left + slope * (np.asarray(z, dtype=float) + 1.0)

        def nprime(z):
            return slope * np.ones_like(np.asarray(z, dtype=float))

        return n, nprime
    raise ConfigError(f"unknown profile spec {spec!r}")


def build_grids(config):
    """Construct (PerpGrid, ParallelAxis, VelocityGrid) from a configuration."""
    perp = PerpGrid(config.nx, config.ny, config.lx, config.ly)
    parallel = ParallelAxis(config.nz, config.parallel_mode, config.lz)
    vmax = config.vmax if config.vmax > 0 else 6.0 * np.sqrt(config.ti)
    if config.rho_single > 0:
        velocity = VelocityGrid.single_rho(config.nv, vmax, config.rho_single)
    else:
        rho_max = config.rho_max if config.rho_max > 0 else None
        velocity = VelocityGrid.maxwellian(
            config.nv, config.ti, config.nrho, vmax=vmax, rho_max=rho_max
        )
    return perp, parallel, velocity


# --------------------------------------------------------------------------
# serialization

def _header_counts(obj):
    if isinstance(obj, GyroDistribution):
        return [obj.perp.nx, obj.perp.ny, obj.parallel.nz, obj.velocity.nv, obj.velocity.nrho]
    return [obj.perp.nx, obj.perp.ny, obj.parallel.nz]


def save_field(obj, path):
    """Write a field or distribution in the FLRFIELD v1 binary format.

    Header: `FLRFIELD v1 <nx> <ny> <nz> [<nv> <nrho>]\\n`, then little-endian
    float64 with ix varying fastest, followed by iy, iz and, for
    distributions, iv then irho.
    """
    counts = _header_counts(obj)
    header = " ".join([FORMAT_MAGIC, FORMAT_VERSION] + [str(c) for c in counts])
    if isinstance(obj, GyroDistribution):
        # memory (irho, iz, iy, ix, iv) -> file order (irho, iv, iz, iy, ix)
        payload = np.ascontiguousarray(obj.values.transpose(0, 4, 1, 2, 3))
    else:
        payload = np.ascontiguousarray(obj.values)
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(payload.astype("<f8").tobytes())


def load_field(path, perp=None, parallel=None, velocity=None):
    """Read a FLRFIELD file back; grids are rebuilt or checked if provided."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) < 5 or parts[0] != FORMAT_MAGIC or parts[1] != FORMAT_VERSION:
            raise FieldFormatError(f"{path}: bad header {header!r}")
        try:
            counts = [int(p) for p in parts[2:]]
        except ValueError as exc:
            raise FieldFormatError(f"{path}: bad header counts in {header!r}") from exc
        if len(counts) not in (3, 5):
            raise FieldFormatError(f"{path}: expected 3 or 5 counts, got {len(counts)}")
        raw = fh.read()
    n_expected = int(np.prod(counts))
    data = np.frombuffer(raw, dtype="<f8")
    if data.size != n_expected:
        raise FieldFormatError(
            f"{path}: payload has {data.size} values, header promises {n_expected}"
        )
    if len(counts) == 3:
        nx, ny, nz = counts
        if perp is None:
            perp = PerpGrid(nx, ny)
        if parallel is None:
            parallel = ParallelAxis(nz)
        if (perp.nx, perp.ny, parallel.nz) != (nx, ny, nz):
            raise FieldFormatError(f"{path}: header counts do not match supplied grids")
        return ScalarField(data.reshape(nz, ny, nx).copy(), perp, parallel)
    nx, ny, nz, nv, nrho = counts
    if perp is None:
        perp = PerpGrid(nx, ny)
    if parallel is None:
        parallel = ParallelAxis(nz)
    if velocity is None:
        raise FieldFormatError(
            f"{path}: a VelocityGrid must be supplied to load a distribution"
        )
    if (perp.nx, perp.ny, parallel.nz, velocity.nv, velocity.nrho) != (nx, ny, nz, nv, nrho):
        raise FieldFormatError(f"{path}: header counts do not match supplied grids")
    values = data.reshape(nrho, nv, nz, ny, nx).transpose(0, 2, 3, 4, 1).copy()
    return GyroDistribution(values, perp, parallel, velocity)


def export_csv(obj, path):
    """CSV export: one row per lattice point, index columns then the value."""
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(obj, GyroDistribution):
            fh.write("irho,iv,iz,iy,ix,value\n")
            vals = obj.values
            for irho in range(vals.shape[0]):
                for iv in range(vals.shape[4]):
                    for iz in range(vals.shape[1]):
                        for iy in range(vals.shape[2]):
                            for ix in range(vals.shape[3]):
                                fh.write(
                                    f"{irho},{iv},{iz},{iy},{ix},"
                                    f"{float(vals[irho, iz, iy, ix, iv])!r}\n"
                                )
        else:
            fh.write("ix,iy,iz,value\n")
            vals = obj.values
            nz, ny, nx = vals.shape
            for iz in range(nz):
                for iy in range(ny):
                    for ix in range(nx):
                        fh.write(f"{ix},{iy},{iz},{float(vals[iz, iy, ix])!r}\n")


def ensure_output_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def band_limited_field(rng, perp, parallel, kmax=3, rms=1.0, zero_mean=True):
    """Random smooth field from Fourier modes with |k index| <= kmax.

    Deterministic for a given generator state; used by the synthetic
    pipelines and the cross-backend tests.
    """
    z = parallel.z[:, None, None] * (2.0 * np.pi / parallel.lz if parallel.periodic else 1.0)
    y = perp.y[None, :, None] * (2.0 * np.pi / perp.ly)
    x = perp.x[None, None, :] * (2.0 * np.pi / perp.lx)
    vals = np.zeros((parallel.nz, perp.ny, perp.nx))
    for mx in range(-kmax, kmax + 1):
        for my in range(-kmax, kmax + 1):
            for mz in range(-kmax, kmax + 1):
                if zero_mean and mx == 0 and my == 0 and mz == 0:
                    continue
                amp = rng.normal() / (1.0 + mx * mx + my * my + mz * mz)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                vals += amp * np.cos(mx * x + my * y + mz * z + phase)
    scale = np.sqrt(np.mean(vals**2))
    if scale > 0:
        vals *= rms / scale
    if zero_mean:
        vals -= vals.mean()
    return ScalarField(vals, perp, parallel)
