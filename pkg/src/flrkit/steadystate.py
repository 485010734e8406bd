"""Steady kinetic slab problem between two prescribed incoming beams.

A time-independent distribution f(z, v) on z in [-1, 1] obeying

    v df/dz - (rho/n)'(z) df/dv = 0,
    f(-1, v) = f_minus(v) for v > 0,    f(1, v) = f_plus(v) for v < 0,

with rho(z) = integral f(z, v) dv, is self-consistent through the
electroneutrality relation: the force derives from rho/n.  Writing
alpha = 2 rho / n, a nondecreasing solution must satisfy the scalar
fixed-point equation

    n(z)/2 * alpha(z) = integral_{-inf}^0 |u| f_plus(u) / sqrt(u^2 + alpha(1) - alpha(z)) du
                      + integral_{ucut}^inf  u f_minus(u) / sqrt(u^2 - alpha(z) + alpha(-1)) du,

with ucut = 2 sqrt(2 mu / n(1)).  The hypotheses H1-H4 below guarantee a
unique such solution with no trapped trajectories:

    H1: n' <= 0;
    H2: lam := sup_{x>=0} integral_{sqrt(x)}^inf u f_minus(u)/sqrt(u^2-x) du
        is finite;
    H3: f_minus vanishes on (0, ucut), where mu = integral f_plus + lam;
    H4: integral f_minus < integral f_plus  and
        integral f_plus(u)/u^2 du < n(1)/4.

The jump x = alpha(1) - alpha(-1) is also the root of an increasing scalar
function G with G(0) <= 0 <= G(2 mu / n(1)), which gives an independent
check on the fixed point.  Once alpha is known the distribution is
reconstructed in closed form and validated along back-traced
characteristics, whose energy invariant is V^2 + alpha(Z).

Singular moment integrals of the f_minus type are computed with the
substitution u = sqrt(x + s^2), after which the integrand is simply
f_minus(sqrt(x + s^2)) and no endpoint singularity remains.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

__all__ = [
    "BoundaryFunction",
    "BoundaryData",
    "EquilibriumProfile",
    "HypothesisReport",
    "SteadyStateSolution",
    "HypothesisError",
    "TrappedTrajectoryError",
    "check_hypotheses",
    "fixed_point_alpha",
    "g_function",
    "g_root",
    "reconstruct",
    "density_three_term",
    "verify_characteristics",
    "solve_steady_state",
    "parse_boundary_spec",
]

QUAD_TOL = 1e-12
SUP_SCAN_POINTS = 241


class HypothesisError(ValueError):
    """A solvability hypothesis failed; the message names it with a witness."""


class TrappedTrajectoryError(RuntimeError):
    """A characteristic turned around inside the slab."""


# --------------------------------------------------------------------------
# boundary data


class BoundaryFunction:
    """Nonnegative velocity profile with declared support and breakpoints."""

    def __init__(self, fn, support, label="custom", breakpoints=()):
        self.fn = fn
        self.support = (float(support[0]), float(support[1]))
        self.label = label
        pts = [p for p in breakpoints if np.isfinite(p)]
        self.breakpoints = tuple(sorted(set(pts)))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return self.fn(u)

    def __repr__(self):
        return f"BoundaryFunction({self.label}, support={self.support})"


def beam(lo, hi, amplitude):
    """Indicator beam amplitude * chi_[lo, hi] (use negative bounds for f_plus)."""
    lo, hi = float(lo), float(hi)
    if hi <= lo:
        raise ValueError("beam needs lo < hi")

    def fn(u):
        return np.where((u >= lo) & (u <= hi), float(amplitude), 0.0)

    return BoundaryFunction(fn, (lo, hi), f"beam[{lo},{hi}]x{amplitude}", (lo, hi))


def gaussian_beam(center, width, amplitude, cutoff):
    """amplitude * exp(-((u-center)/width)^2), zeroed on the near side of cutoff."""
    center, width, cutoff = float(center), float(width), float(cutoff)
    if width <= 0:
        raise ValueError("width must be positive")
    reach = 7.0 * width
    if center >= 0:
        support = (max(cutoff, center - reach), center + reach)

        def fn(u):
            val = amplitude * np.exp(-(((u - center) / width) ** 2))
            return np.where(u >= cutoff, val, 0.0)

    else:
        support = (center - reach, min(cutoff, center + reach))

        def fn(u):
            val = amplitude * np.exp(-(((u - center) / width) ** 2))
            return np.where(u <= cutoff, val, 0.0)

    return BoundaryFunction(fn, support,
                            f"gauss[{center},{width}]x{amplitude}@{cutoff}",
                            (cutoff,))


def soft_tail(scale=1.0):
    """u exp(-u^2) profile; finite lam but support touching 0 (fails H3)."""

    def fn(u):
        return np.where(u > 0, scale * u * np.exp(-(u**2)), 0.0)

    return BoundaryFunction(fn, (0.0, 7.0), f"tail x{scale}")


def tabulated(u_values, f_values, label="table"):
    """Piecewise-linear profile through (u, value) samples, zero outside."""
    u_values = np.asarray(u_values, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    order = np.argsort(u_values)
    u_values, f_values = u_values[order], f_values[order]
    if np.any(f_values < 0):
        raise ValueError("boundary data must be nonnegative")

    def fn(u):
        return np.interp(u, u_values, f_values, left=0.0, right=0.0)

    return BoundaryFunction(fn, (u_values[0], u_values[-1]), label, tuple(u_values))


def parse_boundary_spec(spec):
    """Parse config specs: beam:lo,hi,amp | gauss:c,w,amp,cut | tail:s | csv:path."""
    kind, _, rest = spec.partition(":")
    if kind == "beam":
        lo, hi, amp = (float(s) for s in rest.split(","))
        return beam(lo, hi, amp)
    if kind == "gauss":
        c, w, amp, cut = (float(s) for s in rest.split(","))
        return gaussian_beam(c, w, amp, cut)
    if kind == "tail":
        return soft_tail(float(rest) if rest else 1.0)
    if kind == "csv":
        rows = np.loadtxt(rest, delimiter=",", ndmin=2)
        return tabulated(rows[:, 0], rows[:, 1], label=f"csv:{rest}")
    raise ValueError(f"unknown boundary spec {spec!r}")


class BoundaryData:
    """Incoming distributions: f_minus on u > 0 and f_plus on u < 0."""

    def __init__(self, f_minus, f_plus):
        if f_minus.support[0] < 0:
            raise ValueError("f_minus must be supported on u > 0")
        if f_plus.support[1] > 0:
            raise ValueError("f_plus must be supported on u < 0")
        self.f_minus = f_minus
        self.f_plus = f_plus

    def influx_minus(self):
        """integral_0^inf f_minus(u) du"""
        lo, hi = self.f_minus.support
        val, _ = quad(self.f_minus, lo, hi, points=self.f_minus.breakpoints or None,
                      epsabs=QUAD_TOL, limit=200)
        return val

    def influx_plus(self):
        """integral_(-inf)^0 f_plus(u) du"""
        lo, hi = self.f_plus.support
        val, _ = quad(self.f_plus, lo, hi, points=self.f_plus.breakpoints or None,
                      epsabs=QUAD_TOL, limit=200)
        return val

    def inv_square_plus(self):
        """integral f_plus(u)/u^2 du (finite when the support avoids 0)."""
        lo, hi = self.f_plus.support
        if hi >= -1e-12:
            # support reaches 0: the moment diverges unless f_plus vanishes there
            probe = self.f_plus(np.linspace(max(lo, -1.0), -1e-8, 64))
            if probe[-1] > 0:
                return np.inf
        val, _ = quad(lambda u: self.f_plus(u) / u**2, lo, min(hi, -1e-300),
                      points=self.f_plus.breakpoints or None,
                      epsabs=QUAD_TOL, limit=200)
        return val


# --------------------------------------------------------------------------
# equilibrium profile


class EquilibriumProfile:
    """Positive density profile n(z) with derivative, on the slab [-1, 1]."""

    def __init__(self, n, nprime):
        self.n = n
        self.nprime = nprime
        zs = np.linspace(-1.0, 1.0, 513)
        nv = np.asarray(n(zs), dtype=float)
        if np.any(nv <= 0):
            raise ValueError("equilibrium density must be positive on the slab")
        self._n_samples = nv
        self._np_samples = np.asarray(nprime(zs), dtype=float)
        self._zs = zs

    @classmethod
    def constant(cls, value=1.0):
        return cls(lambda z: value * np.ones_like(np.asarray(z, dtype=float)),
                   lambda z: np.zeros_like(np.asarray(z, dtype=float)))

    @classmethod
    def linear(cls, left, right):
        slope = 0.5 * (right - left)
        return cls(lambda z: left + slope * (np.asarray(z, dtype=float) + 1.0),
                   lambda z: slope * np.ones_like(np.asarray(z, dtype=float)))

    def norm_np_over_n2(self):
        return float(np.abs(self._np_samples / self._n_samples**2).max())

    def max_nprime(self):
        i = int(np.argmax(self._np_samples))
        return float(self._np_samples[i]), float(self._zs[i])

    def is_constant(self, tol=1e-14):
        return bool(np.abs(self._np_samples).max() <= tol)


# --------------------------------------------------------------------------
# the singular moment and the hypothesis audit


def decelerated_flux(f_minus, x):
    """integral_{sqrt(x)}^inf u f(u)/sqrt(u^2 - x) du via u = sqrt(x + s^2).

    The substitution turns the integrand into f(sqrt(x + s^2)); the endpoint
    singularity disappears and the s-integral runs over the mapped support.
    """
    lo, hi = f_minus.support
    x = float(x)
    s_lo = np.sqrt(max(lo * lo - x, 0.0))
    if np.isfinite(hi):
        s_hi = np.sqrt(max(hi * hi - x, 0.0))
        if s_hi <= s_lo:
            return 0.0
    else:
        s_hi = np.inf
    pts = [np.sqrt(b * b - x) for b in f_minus.breakpoints if b * b > x]
    val, _ = quad(lambda s: f_minus(np.sqrt(x + s * s)), s_lo, s_hi,
                  points=pts or None if np.isfinite(s_hi) else None,
                  epsabs=QUAD_TOL, limit=200)
    return val


def _golden_max(fun, a, b, tol=1e-8):
    gr = 0.5 * (np.sqrt(5.0) - 1.0)
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc, fd = fun(c), fun(d)
    while (b - a) > tol:
        if fc < fd:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = fun(d)
        else:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = fun(c)
    xm = 0.5 * (a + b)
    return xm, fun(xm)


def supremum_decelerated_flux(f_minus, tol=1e-8):
    """(lam, argmax) of the decelerated-flux integral over x >= 0.

    Coarse scan over the support-determined bracket, then golden-section
    refinement around the best cell.  Growing values at the scan edge are
    reported as divergence (the hypothesis fails).
    """
    hi = f_minus.support[1]
    x_max = (hi if np.isfinite(hi) else 10.0) ** 2
    xs = np.linspace(0.0, x_max, SUP_SCAN_POINTS)
    vals = np.array([decelerated_flux(f_minus, x) for x in xs])
    if not np.all(np.isfinite(vals)):
        return np.inf, float(xs[np.argmax(~np.isfinite(vals))])
    i = int(np.argmax(vals))
    if i == SUP_SCAN_POINTS - 1 and vals[-1] > vals[-2]:
        return np.inf, float(xs[-1])
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, SUP_SCAN_POINTS - 1)]
    xm, fm = _golden_max(lambda x: decelerated_flux(f_minus, x), a, b, tol=tol)
    if fm < vals[i]:
        return float(vals[i]), float(xs[i])
    return float(fm), float(xm)


@dataclass
class HypothesisReport:
    h1: bool
    h2: bool
    h3: bool
    h4: bool
    lam: float
    mu: float
    witnesses: dict = field(default_factory=dict)

    @property
    def all_pass(self):
        return self.h1 and self.h2 and self.h3 and self.h4

    def failed(self):
        return [name for name, ok in
                (("H1", self.h1), ("H2", self.h2), ("H3", self.h3), ("H4", self.h4))
                if not ok]

    def summary(self):
        lines = []
        w = self.witnesses
        lines.append(f"H1 (density nonincreasing): {'pass' if self.h1 else 'FAIL'}"
                     f"  max n' = {w.get('max_nprime', 0.0):.3e} at z = {w.get('argmax_nprime', 0.0):+.3f}")
        lines.append(f"H2 (finite decelerated influx): {'pass' if self.h2 else 'FAIL'}"
                     f"  lam = {self.lam:.10g} at x = {w.get('lam_arg', 0.0):.6g}")
        lines.append(f"H3 (incoming beam clears the barrier): {'pass' if self.h3 else 'FAIL'}"
                     f"  dead zone (0, {w.get('ucut', 0.0):.6g}), "
                     f"first support at u = {w.get('support_min', 0.0):.6g}")
        if "h3_witness_u" in w:
            lines.append(f"    witness: f_minus({w['h3_witness_u']:.6g}) = "
                         f"{w['h3_witness_val']:.3e} inside the dead zone")
        lines.append(f"H4 (beam balance and bounded force): {'pass' if self.h4 else 'FAIL'}"
                     f"  influx- = {w.get('influx_minus', 0.0):.6g} "
                     f"< influx+ = {w.get('influx_plus', 0.0):.6g}: "
                     f"{'yes' if w.get('h4_first') else 'NO'}; "
                     f"1/u^2 moment = {w.get('inv_square', 0.0):.6g} "
                     f"< n(1)/4 = {w.get('n1_over_4', 0.0):.6g}: "
                     f"{'yes' if w.get('h4_second') else 'NO'}")
        lines.append(f"mu = {self.mu:.10g}")
        return "\n".join(lines)


def check_hypotheses(profile, bd):
    """Audit H1-H4; every verdict carries a numeric witness."""
    w = {}
    max_np, arg_np = profile.max_nprime()
    w["max_nprime"] = max_np
    w["argmax_nprime"] = arg_np
    h1 = max_np <= 1e-12

    lam, lam_arg = supremum_decelerated_flux(bd.f_minus)
    w["lam_arg"] = lam_arg
    h2 = np.isfinite(lam)

    influx_plus = bd.influx_plus()
    mu = influx_plus + (lam if np.isfinite(lam) else np.inf)
    n1 = float(profile.n(1.0))
    ucut = 2.0 * np.sqrt(2.0 * mu / n1) if np.isfinite(mu) else np.inf
    w["ucut"] = ucut
    w["support_min"] = bd.f_minus.support[0]
    h3 = True
    if np.isfinite(ucut) and ucut > 0:
        probe_u = np.linspace(1e-9, ucut * (1 - 1e-12), 512)
        probe = bd.f_minus(probe_u)
        if np.any(probe > 0):
            h3 = False
            j = int(np.argmax(probe > 0))
            w["h3_witness_u"] = float(probe_u[j])
            w["h3_witness_val"] = float(probe[j])
    else:
        h3 = np.isfinite(ucut)

    influx_minus = bd.influx_minus()
    inv_sq = bd.inv_square_plus()
    w["influx_minus"] = influx_minus
    w["influx_plus"] = influx_plus
    w["inv_square"] = inv_sq
    w["n1_over_4"] = n1 / 4.0
    h4_first = influx_minus < influx_plus
    h4_second = inv_sq < n1 / 4.0
    w["h4_first"] = h4_first
    w["h4_second"] = h4_second
    h4 = h4_first and h4_second

    return HypothesisReport(h1, h2, h3, h4, float(lam), float(mu), w)


# --------------------------------------------------------------------------
# the two moment integrals of the fixed-point map


def incoming_plus_moment(bd, y):
    """integral_(-inf)^0 |u| f_plus(u) / sqrt(u^2 + y) du, regular for y >= 0."""
    lo, hi = bd.f_plus.support
    y = float(y)
    val, _ = quad(lambda u: np.abs(u) * bd.f_plus(u) / np.sqrt(u * u + y),
                  lo, hi, points=bd.f_plus.breakpoints or None,
                  epsabs=QUAD_TOL, limit=200)
    return val


def incoming_minus_moment(bd, x, ucut):
    """integral_{ucut}^inf u f_minus(u) / sqrt(u^2 - x) du (x stays below ucut^2)."""
    x = float(x)
    if x >= ucut * ucut:
        raise ValueError("moment argument reached the integration edge; "
                         "the iterate left its admissible set")
    f = bd.f_minus
    lo = max(ucut, f.support[0])
    hi = f.support[1]
    if np.isfinite(hi) and hi <= lo:
        return 0.0
    # u = sqrt(x + s^2) keeps this uniformly regular even as x -> lo^2
    s_lo = np.sqrt(max(lo * lo - x, 0.0))
    s_hi = np.sqrt(hi * hi - x) if np.isfinite(hi) else np.inf
    pts = [np.sqrt(b * b - x) for b in f.breakpoints if b * b > x]
    val, _ = quad(lambda s: f(np.sqrt(x + s * s)), s_lo, s_hi,
                  points=pts or None if np.isfinite(s_hi) else None,
                  epsabs=QUAD_TOL, limit=200)
    return val


class _ChebMoment:
    """Chebyshev interpolant of an analytic moment on [0, xmax].

    Both moment integrals are analytic in their scalar argument on the
    admissible bracket, so a modest Chebyshev fit reproduces them to
    rounding; the Picard iteration then costs polynomial evaluations, and
    the converged result is re-verified against direct adaptive quadrature.
    """

    def __init__(self, fun, xmax, n_nodes=96):
        self.xmax = float(xmax)
        if self.xmax <= 0:
            self.coef = np.array([fun(0.0)])
            return
        k = np.arange(n_nodes)
        nodes = 0.5 * self.xmax * (1.0 - np.cos(np.pi * (k + 0.5) / n_nodes))
        vals = np.array([fun(x) for x in nodes])
        t = np.cos(np.pi * (k + 0.5) / n_nodes)  # nodes in mapped [-1,1] (reversed)
        self.coef = cheb.chebfit(-t, vals, n_nodes - 1)

    def __call__(self, x):
        if self.xmax <= 0:
            return np.full_like(np.asarray(x, dtype=float), self.coef[0])
        t = 2.0 * np.asarray(x, dtype=float) / self.xmax - 1.0
        return cheb.chebval(t, self.coef)


# --------------------------------------------------------------------------
# fixed point, G-root, reconstruction


class SteadyStateSolution:
    """alpha table on the clustered z grid plus everything derived from it."""

    def __init__(self, z, alpha, profile, bd, report, residual, iterations,
                 relaxed=False):
        self.z = z
        self.alpha = alpha
        self.profile = profile
        self.boundary = bd
        self.report = report
        self.fixed_point_residual = float(residual)
        self.iterations = int(iterations)
        self.relaxed = relaxed
        self.alpha_interp = PchipInterpolator(z, alpha)
        self.rho = np.asarray(profile.n(z), dtype=float) * alpha / 2.0
        self.g_root = None
        self.k_margins = None
        self.t_margin = None

    def alpha_at(self, z):
        return self.alpha_interp(z)

    def jump(self):
        return float(self.alpha[-1] - self.alpha[0])

    def k_audit(self):
        """Margins of the four admissible-set conditions (positive = satisfied)."""
        rep = self.report
        n1 = float(self.profile.n(1.0))
        bound_jump = 2.0 * rep.mu / n1
        dbound = 4.0 * rep.mu * self.profile.norm_np_over_n2()
        deriv = self.alpha_interp.derivative()(self.z)
        self.k_margins = {
            "min_alpha": float(self.alpha.min()),
            "jump_margin": float(bound_jump - self.jump()),
            "min_slope": float(deriv.min()),
            "slope_margin": float(dbound - deriv.max()),
            "slope_bound": float(dbound),
            "jump_bound": float(bound_jump),
        }
        return self.k_margins

    def in_admissible_set(self, tol=1e-8):
        m = self.k_audit()
        return (m["min_alpha"] >= -tol and m["jump_margin"] >= -tol
                and m["min_slope"] >= -tol * max(1.0, m["slope_bound"])
                and m["slope_margin"] >= -tol * max(1.0, m["slope_bound"]))


def _chebyshev_lobatto(n):
    return -np.cos(np.pi * np.arange(n) / (n - 1))


def _is_vacuum(report):
    w = report.witnesses
    return (w.get("influx_minus", 0.0) == 0.0 and w.get("influx_plus", 0.0) == 0.0
            and report.lam == 0.0)


def fixed_point_alpha(profile, bd, report=None, n_points=257, tol=1e-10,
                      max_iter=400):
    """Picard iteration for alpha from alpha = 0, on a clustered z grid.

    The endpoint values enter the map directly, so the grid clusters at
    z = +-1 (Chebyshev-Lobatto).  Pure Picard by default; the relaxation
    factor drops to 0.5 if the sup-residual ever increases.  A constant
    profile short-circuits to the exact translation-invariant solution
    (its admissible set pins the slope to zero, and the closed form is
    available anyway).
    """
    if report is None:
        report = check_hypotheses(profile, bd)
    z = _chebyshev_lobatto(n_points)
    n_z = np.asarray(profile.n(z), dtype=float)
    if _is_vacuum(report):
        # no incoming particles at all: the zero solution, whatever n does
        # (the beam-balance hypothesis is vacuously moot here)
        return SteadyStateSolution(z, np.zeros(n_points), profile, bd, report,
                                   residual=0.0, iterations=0)
    if not report.all_pass:
        raise HypothesisError(
            "hypotheses failed: " + ", ".join(report.failed()) + "\n" + report.summary()
        )

    if profile.is_constant():
        rho_const = bd.influx_minus() + bd.influx_plus()
        alpha = 2.0 * rho_const / n_z
        return SteadyStateSolution(z, alpha, profile, bd, report,
                                   residual=0.0, iterations=0)

    n1 = float(profile.n(1.0))
    ucut = 2.0 * np.sqrt(2.0 * report.mu / n1)
    xmax = 2.0 * report.mu / n1
    plus_m = _ChebMoment(lambda y: incoming_plus_moment(bd, y), 1.25 * xmax)
    minus_m = _ChebMoment(lambda x: incoming_minus_moment(bd, x, ucut), 1.25 * xmax)

    alpha = np.zeros(n_points)
    relax = 1.0
    relaxed = False
    prev_res = np.inf
    res = np.inf
    for it in range(1, max_iter + 1):
        jump_arg = np.clip(alpha[-1] - alpha, 0.0, None)
        rise_arg = np.clip(alpha - alpha[0], 0.0, None)
        beta = (2.0 / n_z) * (plus_m(jump_arg) + minus_m(rise_arg))
        res = float(np.abs(beta - alpha).max())
        if res <= tol:
            alpha = beta
            break
        if res > prev_res and relax == 1.0:
            relax = 0.5
            relaxed = True
        prev_res = res
        alpha = alpha + relax * (beta - alpha)
    else:
        raise RuntimeError(
            f"fixed point did not reach {tol:g} in {max_iter} iterations "
            f"(last residual {res:.3e})"
        )
    sol = SteadyStateSolution(z, alpha, profile, bd, report, res, it, relaxed)
    sol.k_audit()
    return sol


def verify_fixed_point(solution, n_check=33):
    """Residual of the fixed-point equation by direct adaptive quadrature.

    Independent of the interpolated moments used inside the iteration.
    """
    bd = solution.boundary
    rep = solution.report
    n1 = float(solution.profile.n(1.0))
    ucut = 2.0 * np.sqrt(2.0 * rep.mu / n1)
    idx = np.unique(np.linspace(0, solution.z.size - 1, n_check).astype(int))
    worst = 0.0
    for i in idx:
        zi = solution.z[i]
        ai = solution.alpha[i]
        rhs = (incoming_plus_moment(bd, max(solution.alpha[-1] - ai, 0.0))
               + incoming_minus_moment(bd, max(ai - solution.alpha[0], 0.0), ucut))
        lhs = 0.5 * float(solution.profile.n(zi)) * ai
        worst = max(worst, abs(lhs - rhs))
    return worst


def g_function(profile, bd, report, x):
    """The scalar function whose root is the jump alpha(1) - alpha(-1)."""
    n1 = float(profile.n(1.0))
    nm1 = float(profile.n(-1.0))
    ucut = 2.0 * np.sqrt(2.0 * report.mu / n1)
    return (x
            - (2.0 / n1) * incoming_minus_moment(bd, x, ucut)
            + (2.0 / nm1) * incoming_plus_moment(bd, x)
            - (2.0 / n1) * bd.influx_plus()
            + (2.0 / nm1) * bd.influx_minus())


def g_root(profile, bd, report=None, tol=1e-12):
    """Bisection root of the increasing G on its guaranteed bracket.

    Returns (x_star, bracket_high).  G(0) <= 0 and G(2 mu / n(1)) >= 0 are
    asserted; a failed bracket signals an upstream hypothesis violation.
    """
    if report is None:
        report = check_hypotheses(profile, bd)
    if _is_vacuum(report):
        return 0.0, 0.0
    if not report.all_pass:
        raise HypothesisError(
            "hypotheses failed: " + ", ".join(report.failed())
        )
    n1 = float(profile.n(1.0))
    x_hi = 2.0 * report.mu / n1
    if x_hi == 0.0:
        return 0.0, 0.0
    g_lo = g_function(profile, bd, report, 0.0)
    g_hi = g_function(profile, bd, report, x_hi)
    if g_lo > 1e-10 or g_hi < -1e-10:
        raise HypothesisError(
            f"G bracket failed: G(0) = {g_lo:.3e}, G({x_hi:.6g}) = {g_hi:.3e}; "
            "an H3/H4 violation slipped through"
        )
    if abs(g_lo) <= tol:
        return 0.0, x_hi
    a, b = 0.0, x_hi
    fa = g_lo
    x = 0.5 * (a + b)
    for _ in range(200):
        x = 0.5 * (a + b)
        fx = g_function(profile, bd, report, x)
        if abs(fx) <= tol:
            return float(x), x_hi
        if (fx < 0) == (fa < 0):
            a, fa = x, fx
        else:
            b = x
    return float(x), x_hi


def reconstruct(solution):
    """Closed-form distribution from alpha, plus the density table.

    f(z, v) = f_minus(sqrt(alpha(z) - alpha(-1) + v^2)) above the dividing
    velocity -sqrt(alpha(1) - alpha(z)) and
    f_plus(-sqrt(alpha(z) - alpha(1) + v^2)) below it.  Square-root
    arguments more negative than -1e-12 signal a monotonicity breach.
    """
    bd = solution.boundary
    a0 = solution.alpha[0]
    a1 = solution.alpha[-1]
    interp = solution.alpha_interp

    def f(z, v):
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        az = interp(z)
        edge2 = a1 - az
        above = v > -np.sqrt(np.clip(edge2, 0.0, None))
        arg_minus = az - a0 + v * v
        arg_plus = az - a1 + v * v
        bad = np.where(above, arg_minus, arg_plus)
        if np.any(bad < -1e-12):
            raise ValueError("negative square-root argument: alpha is not monotone")
        out = np.where(
            above,
            bd.f_minus(np.sqrt(np.clip(arg_minus, 0.0, None))),
            bd.f_plus(-np.sqrt(np.clip(arg_plus, 0.0, None))),
        )
        return out

    return solution.rho.copy(), f


def density_three_term(solution, z):
    """Density at z from the three-term characteristics formula.

    rho(z) = integral |u| f_plus / sqrt(u^2 + a1 - az) du
           + 2 integral_{sqrt(az-a0)}^{sqrt(a1-a0)} u f_minus / sqrt(u^2 - az + a0) du
           + integral_{sqrt(a1-a0)}^{inf} u f_minus / sqrt(u^2 - az + a0) du;

    the middle term vanishes whenever the incoming beam clears the barrier
    (its range lies inside the dead zone).  All f_minus terms use the
    regularizing substitution.
    """
    bd = solution.boundary
    a0, a1 = solution.alpha[0], solution.alpha[-1]
    az = float(solution.alpha_interp(z))
    x = az - a0
    term1 = incoming_plus_moment(bd, max(a1 - az, 0.0))

    def tail(s_lo, s_hi):
        if s_hi <= s_lo:
            return 0.0
        val, _ = quad(lambda s: bd.f_minus(np.sqrt(x + s * s)), s_lo, s_hi,
                      epsabs=QUAD_TOL, limit=200)
        return val

    s_mid_lo = 0.0
    s_mid_hi = np.sqrt(max(a1 - az, 0.0))
    term2 = 2.0 * tail(s_mid_lo, s_mid_hi)
    hi = bd.f_minus.support[1]
    s_hi = np.sqrt(hi * hi - x) if np.isfinite(hi) else np.inf
    if np.isfinite(s_hi):
        term3 = tail(s_mid_hi, s_hi)
    else:
        val, _ = quad(lambda s: bd.f_minus(np.sqrt(x + s * s)), s_mid_hi, np.inf,
                      epsabs=QUAD_TOL, limit=200)
        term3 = val
    return term1 + term2 + term3, (term1, term2, term3)


# --------------------------------------------------------------------------
# characteristics audit


def _chebyshev_alpha(solution):
    """Smooth global representation of alpha for the trajectory audit.

    The z grid is Chebyshev-Lobatto, so full-degree polynomial
    interpolation is stable; alpha inherits the analyticity of the moment
    integrals and the series converges fast.
    """
    n = solution.z.size
    coef = cheb.chebfit(solution.z, solution.alpha, n - 1)
    dcoef = cheb.chebder(coef)
    return coef, dcoef


def verify_characteristics(solution, n_samples=12, h=2e-4, seed=7):
    """Back-trace characteristics and audit invariants and boundary values.

    Z' = V, V' = -alpha'(Z)/2 is integrated with fixed-step fourth-order
    Runge-Kutta (on a globally smooth polynomial representation of alpha)
    until the trajectory leaves the slab.  Checks: the energy V^2 + alpha(Z)
    stays constant, the reconstructed f is constant along the path, and the
    boundary point hit carries the matching incoming value.  A velocity
    sign change inside the slab is a trapped trajectory and raises.
    """
    coef, dcoef = _chebyshev_alpha(solution)
    a_of = lambda zz: cheb.chebval(zz, coef)
    force = lambda zz: -0.5 * cheb.chebval(zz, dcoef)
    rho_tab, f_rec = reconstruct(solution)
    a0, a1 = solution.alpha[0], solution.alpha[-1]

    rng = np.random.default_rng(seed)
    lo_m, hi_m = solution.boundary.f_minus.support
    lo_p, hi_p = solution.boundary.f_plus.support
    samples = []
    for _ in range(n_samples):
        z0 = rng.uniform(-0.9, 0.9)
        if rng.random() < 0.5 and np.isfinite(hi_m):
            v0 = rng.uniform(max(lo_m, 1e-3), hi_m)
        elif np.isfinite(lo_p):
            v0 = rng.uniform(lo_p, min(hi_p, -1e-3))
        else:
            v0 = rng.uniform(0.5, 2.0)
        samples.append((z0, v0))

    def rk4_step(z, v, dt):
        k1z, k1v = v, force(z)
        k2z, k2v = v + 0.5 * dt * k1v, force(z + 0.5 * dt * k1z)
        k3z, k3v = v + 0.5 * dt * k2v, force(z + 0.5 * dt * k2z)
        k4z, k4v = v + dt * k3v, force(z + dt * k3z)
        return (z + dt / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z),
                v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))

    report = {
        "max_energy_drift": 0.0,
        "max_f_variation": 0.0,
        "max_boundary_mismatch": 0.0,
        "samples": [],
    }
    for z0, v0 in samples:
        e0 = v0 * v0 + a_of(z0)
        f0 = float(f_rec(z0, v0))
        # back-trace: rightward movers come from z=-1, leftward from z=+1
        dt = -h if v0 > -np.sqrt(max(a1 - a_of(z0), 0.0)) else h
        z, v = z0, v0
        e_drift = 0.0
        f_var = 0.0
        sign0 = np.sign(v0) if v0 != 0 else 1.0
        for _ in range(2_000_000):
            zn, vn = rk4_step(z, v, dt)
            if np.sign(vn) != sign0 and abs(zn) < 1.0 - 1e-9:
                raise TrappedTrajectoryError(
                    f"characteristic from (z={z0:.3f}, v={v0:.3f}) turned around "
                    f"inside the slab at z={zn:.4f}"
                )
            if abs(zn) > 1.0:
                # shrink the final step to land on the boundary
                lo_t, hi_t = 0.0, abs(dt)
                zb, vb = z, v
                for _ in range(80):
                    mid = 0.5 * (lo_t + hi_t)
                    zm, vm = rk4_step(z, v, np.sign(dt) * mid)
                    if abs(zm) > 1.0:
                        hi_t = mid
                    else:
                        lo_t, zb, vb = mid, zm, vm
                z, v = zb, vb
                break
            z, v = zn, vn
            e_drift = max(e_drift, abs(v * v + a_of(z) - e0))
            f_var = max(f_var, abs(float(f_rec(z, v)) - f0))
        else:
            raise RuntimeError("characteristic did not leave the slab")
        if v > 0:
            boundary_val = float(solution.boundary.f_minus(np.array(v)))
        else:
            boundary_val = float(solution.boundary.f_plus(np.array(v)))
        mismatch = abs(boundary_val - f0)
        report["max_energy_drift"] = max(report["max_energy_drift"], e_drift)
        report["max_f_variation"] = max(report["max_f_variation"], f_var)
        report["max_boundary_mismatch"] = max(report["max_boundary_mismatch"], mismatch)
        report["samples"].append(
            {"z0": z0, "v0": v0, "exit_z": float(np.sign(z)), "exit_v": float(v),
             "energy_drift": e_drift, "boundary_mismatch": mismatch}
        )
    return report


def uniqueness_margin(solution, n_check=65):
    """min_z T(z) > 0 certifies uniqueness of the nondecreasing solution.

    T(z) = n(z)/2 - integral |u| f_plus / (2 (u^2 + a1 - az)^{3/2}) du
                  - integral_{ucut} u f_minus / (2 (u^2 - az + a0)^{3/2}) du.
    """
    bd = solution.boundary
    rep = solution.report
    n1 = float(solution.profile.n(1.0))
    ucut = 2.0 * np.sqrt(2.0 * rep.mu / n1)
    a0, a1 = solution.alpha[0], solution.alpha[-1]
    zs = np.linspace(-1.0, 1.0, n_check)
    worst = np.inf
    for zi in zs:
        az = float(solution.alpha_interp(zi))
        y = max(a1 - az, 0.0)
        lo, hi = bd.f_plus.support
        t1, _ = quad(lambda u: np.abs(u) * bd.f_plus(u) / (2.0 * (u * u + y) ** 1.5),
                     lo, hi, points=bd.f_plus.breakpoints or None,
                     epsabs=QUAD_TOL, limit=200)
        x = max(az - a0, 0.0)
        f = bd.f_minus
        lo_m = max(ucut, f.support[0])
        hi_m = f.support[1]
        if np.isfinite(hi_m) and hi_m > lo_m:
            t2, _ = quad(lambda u: u * f(u) / (2.0 * (u * u - x) ** 1.5),
                         lo_m, hi_m, points=None, epsabs=QUAD_TOL, limit=200)
        elif not np.isfinite(hi_m):
            t2, _ = quad(lambda u: u * f(u) / (2.0 * (u * u - x) ** 1.5),
                         lo_m, np.inf, epsabs=QUAD_TOL, limit=200)
        else:
            t2 = 0.0
        worst = min(worst, 0.5 * float(solution.profile.n(zi)) - t1 - t2)
    return float(worst)


def solve_steady_state(profile, bd, n_points=257, tol=1e-10):
    """Full pipeline: audit, fixed point, G cross-check, reconstruction data."""
    report = check_hypotheses(profile, bd)
    if _is_vacuum(report):
        solution = fixed_point_alpha(profile, bd, report, n_points=n_points, tol=tol)
        solution.g_root = 0.0
        solution.t_margin = float(np.min(profile.n(solution.z)) / 2.0)
        return solution
    if not report.all_pass:
        raise HypothesisError(
            "hypotheses failed: " + ", ".join(report.failed()) + "\n" + report.summary()
        )
    solution = fixed_point_alpha(profile, bd, report, n_points=n_points, tol=tol)
    x_star, _ = g_root(profile, bd, report)
    solution.g_root = x_star
    solution.t_margin = uniqueness_margin(solution)
    return solution
