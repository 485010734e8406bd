"""Interpolation kernels for backward semi-Lagrangian advection.

Two interpolation families:

- cubic: periodic cubic B-spline interpolation;
- spectral: trigonometric interpolation, exact for uniform shifts of
  periodic data.

Uniform shifts (the parallel advection, whose speed is constant per
v-slice, and the v-advection, whose shift is constant along each column)
are applied as circulant Fourier multipliers, identical to real-space
spline interpolation for periodic data but mass-exact by construction.
The genuinely 2D perpendicular advection uses a spline prefilter plus a
16-tap bicubic gather.  The gather is a numba kernel with a plain-numpy
fallback; both write disjoint elements only, so results are bit-identical
for any thread count.
"""

import numpy as np
import scipy.ndimage as ndi

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap

    prange = range

__all__ = [
    "HAVE_NUMBA",
    "bspline3_weights",
    "uniform_shift_multiplier",
    "apply_axis_multiplier",
    "prefilter_periodic_2d",
    "gather_perp_bicubic",
]


def bspline3_weights(u):
    """Cubic B-spline basis values at fractional offset u in [0, 1)."""
    u = np.asarray(u, dtype=float)
    u2 = u * u
    u3 = u2 * u
    return (
        (1.0 - u) ** 3 / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    )


def uniform_shift_multiplier(n, delta, shifts, kind):
    """Fourier multiplier interpolating periodic data at x - shift.

    Returns a complex array of shape (n//2 + 1, len(shifts)).  kind
    "spectral" is the exact phase shift; kind "cubic" reproduces periodic
    cubic B-spline interpolation at the uniformly shifted points (identical
    to prefilter + gather, folded into one circulant operator).
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    theta = 2.0 * np.pi * np.fft.rfftfreq(n) * 1.0  # k * delta
    sigma = shifts / delta
    if kind == "spectral":
        return np.exp(-1j * np.outer(theta, sigma))
    if kind != "cubic":
        raise ValueError(f"unknown interpolation kind {kind!r}")
    big_k = np.ceil(sigma)
    u = big_k - sigma
    w = bspline3_weights(u)
    num = np.zeros((theta.size, sigma.size), dtype=complex)
    for t, wt in zip((-1, 0, 1, 2), w):
        num += wt[None, :] * np.exp(1j * np.outer(theta, np.full_like(sigma, t)))
    b_hat = (4.0 + 2.0 * np.cos(theta)) / 6.0
    return np.exp(-1j * np.outer(theta, big_k)) * num / b_hat[:, None]


def apply_axis_multiplier(values, axis, mult):
    """rfft along axis, multiply (mult broadcast against the spectrum), irfft."""
    n = values.shape[axis]
    spec = np.fft.rfft(values, axis=axis)
    spec *= mult
    return np.fft.irfft(spec, n=n, axis=axis)


def prefilter_periodic_2d(values, axes):
    """Cubic B-spline coefficients along two periodic axes."""
    c = ndi.spline_filter1d(values, order=3, axis=axes[0], mode="grid-wrap")
    return ndi.spline_filter1d(c, order=3, axis=axes[1], mode="grid-wrap")


# --------------------------------------------------------------------------
# gathers

if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _gather_perp_numba(c, iy0, ix0, uy, ux, out):
        npl, ny, nx, nv = c.shape
        for q in prange(npl * ny * nx):
            p = q // (ny * nx)
            r = q % (ny * nx)
            iy = r // nx
            ix = r % nx
            u = uy[p, iy, ix]
            wy0 = (1.0 - u) ** 3 / 6.0
            wy1 = (3.0 * u**3 - 6.0 * u**2 + 4.0) / 6.0
            wy2 = (-3.0 * u**3 + 3.0 * u**2 + 3.0 * u + 1.0) / 6.0
            wy3 = u**3 / 6.0
            v = ux[p, iy, ix]
            wx0 = (1.0 - v) ** 3 / 6.0
            wx1 = (3.0 * v**3 - 6.0 * v**2 + 4.0) / 6.0
            wx2 = (-3.0 * v**3 + 3.0 * v**2 + 3.0 * v + 1.0) / 6.0
            wx3 = v**3 / 6.0
            j0 = iy0[p, iy, ix]
            i0 = ix0[p, iy, ix]
            for k in range(nv):
                out[p, iy, ix, k] = 0.0
            for a in range(4):
                jj = (j0 - 1 + a) % ny
                if a == 0:
                    wa = wy0
                elif a == 1:
                    wa = wy1
                elif a == 2:
                    wa = wy2
                else:
                    wa = wy3
                for b in range(4):
                    ii = (i0 - 1 + b) % nx
                    if b == 0:
                        wb = wx0
                    elif b == 1:
                        wb = wx1
                    elif b == 2:
                        wb = wx2
                    else:
                        wb = wx3
                    w = wa * wb
                    for k in range(nv):
                        out[p, iy, ix, k] += w * c[p, jj, ii, k]


def _gather_perp_numpy(c, iy0, ix0, uy, ux, out):
    npl, ny, nx, nv = c.shape
    wy = bspline3_weights(uy)
    wx = bspline3_weights(ux)
    p = np.arange(npl)[:, None, None]
    acc = np.zeros_like(c)
    for a in range(4):
        jj = (iy0 - 1 + a) % ny
        for b in range(4):
            ii = (ix0 - 1 + b) % nx
            acc += (wy[a] * wx[b])[..., None] * c[p, jj, ii, :]
    out[...] = acc


def gather_perp_bicubic(coeff, fy, fx):
    """Periodic bicubic gather at fractional feet (fy, fx), broadcast over v.

    coeff: (npl, ny, nx, nv) spline coefficients; fy, fx: feet in index
    units, shape (npl, ny, nx).
    """
    iy0 = np.floor(fy).astype(np.int64)
    ix0 = np.floor(fx).astype(np.int64)
    uy = np.ascontiguousarray(fy - iy0)
    ux = np.ascontiguousarray(fx - ix0)
    ny, nx = coeff.shape[1], coeff.shape[2]
    iy0 = np.ascontiguousarray(iy0 % ny)
    ix0 = np.ascontiguousarray(ix0 % nx)
    c = np.ascontiguousarray(coeff)
    out = np.empty_like(c)
    if HAVE_NUMBA:
        _gather_perp_numba(c, iy0, ix0, uy, ux, out)
    else:
        _gather_perp_numpy(c, iy0, ix0, uy, ux, out)
    return out
