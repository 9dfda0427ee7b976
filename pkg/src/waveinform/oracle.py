"""Independent numerical oracles for the wave-kernel closed forms.

Spherical product quadrature of the shell-measure integral forms, exact
spherical means for radial functions, the Kirchhoff solution formula, grid
Lp norms/errors, and a finite-difference d'Alembertian residual checker.
These are deliberately independent evaluation paths: they never reuse the
characteristic-radii closed forms they are used to validate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import KernelEvaluationError
from .fields import ScalarField3D
from .kernels import RADIUS_CLAMP, matern52, matern52_d1, matern52_d2


@dataclass(frozen=True)
class SphericalRule:
    """Product quadrature rule on the unit sphere.

    Gauss-Legendre in cos(theta) times a uniform (trapezoid) grid in phi.
    Weights include the 1/(4 pi) normalization, so they sum to one and
    quadrature sums approximate surface averages.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def product(cls, n_polar, n_azimuth=None):
        if n_azimuth is None:
            n_azimuth = 2 * n_polar
        cos_t, w_polar = np.polynomial.legendre.leggauss(n_polar)
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
        sin_t = np.sqrt(np.maximum(1.0 - cos_t**2, 0.0))
        gx = np.outer(sin_t, np.cos(phi)).ravel()
        gy = np.outer(sin_t, np.sin(phi)).ravel()
        gz = np.outer(cos_t, np.ones(n_azimuth)).ravel()
        nodes = np.column_stack([gx, gy, gz])
        weights = np.outer(w_polar / 2.0, np.full(n_azimuth, 1.0 / n_azimuth)).ravel()
        return cls(nodes=nodes, weights=weights)

    @property
    def size(self):
        return self.weights.size


class SpatialBaseKernel:
    """Two-point spatial kernel with directional-derivative contractions.

    Subclasses provide ``value`` and either analytic directional derivatives
    or inherit the central-difference defaults.  ``terms`` bundles the four
    quantities needed by the time-derivative shell quadrature; subclasses may
    override it with a fused evaluation.
    """

    def value(self, y1, y2):
        raise NotImplementedError

    def grad1_dot(self, y1, y2, d1):
        raise NotImplementedError

    def grad2_dot(self, y1, y2, d2):
        raise NotImplementedError

    def cross_dot(self, y1, y2, d1, d2):
        raise NotImplementedError

    def terms(self, y1, y2, d1, d2):
        return (self.value(y1, y2),
                self.grad1_dot(y1, y2, d1),
                self.grad2_dot(y1, y2, d2),
                self.cross_dot(y1, y2, d1, d2))

    def shell_integrand(self, y1, y2, d1, d2, ct, ctp):
        """k - ct (grad1 k . d1) - ctp (grad2 k . d2) + ct ctp d1' H d2."""
        v, g1, g2, g12 = self.terms(y1, y2, d1, d2)
        return v - ct * g1 - ctp * g2 + (ct * ctp) * g12


class NumericalBase(SpatialBaseKernel):
    """Wraps a pairwise kernel function; derivatives by central differences."""

    def __init__(self, func, step=1e-5):
        self.func = func
        self.step = step

    def value(self, y1, y2):
        return self.func(y1, y2)

    def grad1_dot(self, y1, y2, d1):
        h = self.step
        return (self.func(y1 + h * d1, y2) - self.func(y1 - h * d1, y2)) / (2.0 * h)

    def grad2_dot(self, y1, y2, d2):
        h = self.step
        return (self.func(y1, y2 + h * d2) - self.func(y1, y2 - h * d2)) / (2.0 * h)

    def cross_dot(self, y1, y2, d1, d2):
        h = self.step
        pp = self.func(y1 + h * d1, y2 + h * d2)
        pm = self.func(y1 + h * d1, y2 - h * d2)
        mp = self.func(y1 - h * d1, y2 + h * d2)
        mm = self.func(y1 - h * d1, y2 - h * d2)
        return (pp - pm - mp + mm) / (4.0 * h * h)


class MaternSquaredBase(SpatialBaseKernel):
    """Radial base kernel k(y, y') = g(|y-x0|^2 - |y'-x0|^2).

    ``deriv_order=0`` uses the Matern-5/2 profile itself; ``deriv_order=2``
    uses its negated second derivative, the mixed partial of the Matern
    antiderivative surface (the speed-component prior).
    """

    def __init__(self, center, rho, sigma2, deriv_order=0):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.rho = float(rho)
        self.sigma2 = float(sigma2)
        if deriv_order not in (0, 2):
            raise ValueError("deriv_order must be 0 or 2")
        self.deriv_order = deriv_order

    def _sq_radii(self, y):
        d = y - self.center
        return np.einsum("ij,ij->i", d, d)

    def value(self, y1, y2):
        delta = self._sq_radii(y1)[:, None] - self._sq_radii(y2)[None, :]
        if self.deriv_order == 0:
            return matern52(delta, self.rho, self.sigma2)
        return -matern52_d2(delta, self.rho, self.sigma2)

    def grad1_dot(self, y1, y2, d1):
        v, g1, _, _ = self.terms(y1, y2, d1, np.zeros_like(y2))
        return g1

    def grad2_dot(self, y1, y2, d2):
        v, _, g2, _ = self.terms(y1, y2, np.zeros_like(y1), d2)
        return g2

    def cross_dot(self, y1, y2, d1, d2):
        return self.terms(y1, y2, d1, d2)[3]

    def terms(self, y1, y2, d1, d2):
        if self.deriv_order != 0:
            raise NotImplementedError("derivative terms only for the plain profile")
        rho, s2 = self.rho, self.sigma2
        u1 = self._sq_radii(y1)
        u2 = self._sq_radii(y2)
        a1 = np.einsum("ij,ij->i", y1 - self.center, d1)
        b2 = np.einsum("ij,ij->i", y2 - self.center, d2)
        delta = u1[:, None] - u2[None, :]
        a = np.abs(delta) / rho
        e = np.exp(-a)
        g = s2 * (1.0 + a * (1.0 + a / 3.0)) * e
        dg = -s2 * delta * (1.0 + a) * e / (3.0 * rho**2)
        d2g = -s2 * (1.0 + a - a * a) * e / (3.0 * rho**2)
        g1 = 2.0 * a1[:, None] * dg
        g2 = -2.0 * dg * b2[None, :]
        g12 = -4.0 * d2g * a1[:, None] * b2[None, :]
        return g, g1, g2, g12

    def shell_integrand(self, y1, y2, d1, d2, ct, ctp):
        # Fused form: the gradient/Hessian contractions reduce to row factor
        # P = -2 ct (y1-x0).d1 and column factor Q = 2 ctp (y2-x0).d2 via
        # integrand = g + (P+Q) g' + P Q g''.
        if self.deriv_order != 0:
            raise NotImplementedError("derivative terms only for the plain profile")
        rho, s2 = self.rho, self.sigma2
        pref = s2 / (3.0 * rho**2)
        p = (-2.0 * ct) * np.einsum("ij,ij->i", y1 - self.center, d1)
        q = (2.0 * ctp) * np.einsum("ij,ij->i", y2 - self.center, d2)
        delta = self._sq_radii(y1)[:, None] - self._sq_radii(y2)[None, :]
        a = np.abs(delta) / rho
        one_a = 1.0 + a
        out = s2 * (one_a + a * a / 3.0)
        out -= pref * (p[:, None] + q[None, :]) * delta * one_a
        out -= pref * np.outer(p, q) * (one_a - a * a)
        out *= np.exp(-a)
        return out


class MaternRadiusBase(SpatialBaseKernel):
    """Radial base kernel k(y, y') = m52(|y-x0| - |y'-x0|).

    The plain radial Matern prior of the position component.
    """

    def __init__(self, center, rho, sigma2):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.rho = float(rho)
        self.sigma2 = float(sigma2)

    def _radii(self, y):
        return np.maximum(np.linalg.norm(y - self.center, axis=1), RADIUS_CLAMP)

    def value(self, y1, y2):
        delta = self._radii(y1)[:, None] - self._radii(y2)[None, :]
        return matern52(delta, self.rho, self.sigma2)

    def grad1_dot(self, y1, y2, d1):
        r1 = self._radii(y1)
        ahat = np.einsum("ij,ij->i", y1 - self.center, d1) / r1
        delta = r1[:, None] - self._radii(y2)[None, :]
        return ahat[:, None] * matern52_d1(delta, self.rho, self.sigma2)

    def grad2_dot(self, y1, y2, d2):
        r2 = self._radii(y2)
        bhat = np.einsum("ij,ij->i", y2 - self.center, d2) / r2
        delta = self._radii(y1)[:, None] - r2[None, :]
        return -matern52_d1(delta, self.rho, self.sigma2) * bhat[None, :]

    def cross_dot(self, y1, y2, d1, d2):
        r1, r2 = self._radii(y1), self._radii(y2)
        ahat = np.einsum("ij,ij->i", y1 - self.center, d1) / r1
        bhat = np.einsum("ij,ij->i", y2 - self.center, d2) / r2
        delta = r1[:, None] - r2[None, :]
        return -np.outer(ahat, bhat) * matern52_d2(delta, self.rho, self.sigma2)

    def shell_integrand(self, y1, y2, d1, d2, ct, ctp):
        # Same fused structure as the squared-radius base with row factor
        # P = -ct (y1-x0).d1/r1 and column factor Q = ctp (y2-x0).d2/r2.
        rho, s2 = self.rho, self.sigma2
        r1, r2 = self._radii(y1), self._radii(y2)
        p = (-ct) * np.einsum("ij,ij->i", y1 - self.center, d1) / r1
        q = ctp * np.einsum("ij,ij->i", y2 - self.center, d2) / r2
        delta = r1[:, None] - r2[None, :]
        a = np.abs(delta) / rho
        one_a = 1.0 + a
        pref = s2 / (3.0 * rho**2)
        out = s2 * (one_a + a * a / 3.0)
        out -= pref * (p[:, None] + q[None, :]) * delta * one_a
        out -= pref * np.outer(p, q) * (one_a - a * a)
        out *= np.exp(-a)
        return out


class StationaryGaussianBase(SpatialBaseKernel):
    """Stationary Gaussian base kernel C * exp(-|y-y'|^2 / (2 L^2))."""

    def __init__(self, amplitude, length):
        self.amplitude = float(amplitude)
        self.length = float(length)

    def value(self, y1, y2):
        sq = (np.einsum("ij,ij->i", y1, y1)[:, None]
              + np.einsum("ij,ij->i", y2, y2)[None, :]
              - 2.0 * y1 @ y2.T)
        return self.amplitude * np.exp(-0.5 * np.maximum(sq, 0.0) / self.length**2)


def _unpack(z):
    x, t = z
    return np.asarray(x, dtype=float).reshape(3), float(t)


def kv_wave_quadrature(base, z, zp, c, rule, chunk=256):
    """Double spherical quadrature of the shell-measure convolution.

    t t' * sum_{g,g'} w w' k(x - c|t| g, x' - c|t'| g'); the independent
    reference for the speed-component closed form.
    """
    x, t = _unpack(z)
    xp, tp = _unpack(zp)
    y1 = x[None, :] - c * abs(t) * rule.nodes
    y2 = xp[None, :] - c * abs(tp) * rule.nodes
    w = rule.weights
    acc = 0.0
    for lo in range(0, rule.size, chunk):
        sl = slice(lo, lo + chunk)
        acc += w[sl] @ (base.value(y1[sl], y2) @ w)
    return t * tp * acc


def ku_wave_quadrature(base, z, zp, c, rule, chunk=256):
    """Double spherical quadrature of the differentiated-shell convolution.

    Integrand: k - c|t| (grad1 k . g) - c|t'| (grad2 k . g')
    + c^2 |t||t'| g^T (grad1 grad2 k) g'; the independent reference for the
    position-component closed form.
    """
    x, t = _unpack(z)
    xp, tp = _unpack(zp)
    ct, ctp = c * abs(t), c * abs(tp)
    y1 = x[None, :] - ct * rule.nodes
    y2 = xp[None, :] - ctp * rule.nodes
    w = rule.weights
    acc = 0.0
    for lo in range(0, rule.size, chunk):
        sl = slice(lo, lo + chunk)
        integrand = base.shell_integrand(y1[sl], y2, rule.nodes[sl], rule.nodes,
                                         ct, ctp)
        acc += w[sl] @ (integrand @ w)
    return acc


def spherical_mean_radial(antideriv, x, t, c):
    """Shell average of a radial function, exactly, from an antiderivative.

    For g(y) = f(|y|^2) with F an antiderivative of f, the shell convolution
    at radius c|t| equals sgn(t)/(4 c r) * (F((r+c|t|)^2) - F((r-c|t|)^2)).
    Positions are taken relative to the profile center.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    r = np.maximum(np.linalg.norm(x, axis=1), RADIUS_CLAMP)
    ct = c * abs(t)
    sgn = 0.0 if abs(t) < 1e-12 else math.copysign(1.0, t)
    vals = sgn * (antideriv((r + ct) ** 2) - antideriv((r - ct) ** 2)) / (4.0 * c * r)
    return vals


def spherical_mean_radial_dt(profile, x, t, c):
    """Time derivative of the shell average of a radial function.

    Equals (1/(2 r)) * sum_eps (r + eps c|t|) f((r + eps c|t|)^2) for
    g(y) = f(|y|^2); used for exact grid evaluation of the differentiated
    shell convolution of radial initial positions.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    r = np.maximum(np.linalg.norm(x, axis=1), RADIUS_CLAMP)
    ct = c * abs(t)
    bp = r + ct
    bm = r - ct
    return (bp * profile(bp * bp) + bm * profile(bm * bm)) / (2.0 * r)


def kirchhoff_eval(u0, grad_u0, v0, x, t, c, rule):
    """Kirchhoff solution formula at one space-time point.

    Surface average of t v0(x - c|t| g) + u0(x - c|t| g)
    - c|t| g . grad u0(x - c|t| g).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    y = x[None, :] - c * abs(t) * rule.nodes
    vals = u0(y).astype(float)
    if t != 0.0:
        vals = vals + t * v0(y)
        vals = vals - c * abs(t) * np.einsum("ij,ij->i", rule.nodes, grad_u0(y))
    return float(rule.weights @ vals)


def kirchhoff_trace(u0, grad_u0, v0, x, times, c, rule):
    """Kirchhoff formula evaluated along a time series at a fixed probe."""
    return np.array([kirchhoff_eval(u0, grad_u0, v0, x, t, c, rule) for t in times])


def dalembert_residuals(f, x, t, c, step):
    """Normalized central-difference d'Alembertian residuals, batched.

    ``f(X, T)`` must accept (m, 3) positions and (m,) times.  The raw
    residual (1/c^2) d2f/dt2 - lap f is normalized by the largest
    second-derivative magnitude in the stencil, making it scale-free.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    t = np.asarray(t, dtype=float).reshape(-1)
    m = x.shape[0]
    pts = [x]
    tms = [t]
    tms.append(t + step)
    pts.append(x)
    tms.append(t - step)
    pts.append(x)
    for axis in range(3):
        for sign in (1.0, -1.0):
            shifted = x.copy()
            shifted[:, axis] += sign * step
            pts.append(shifted)
            tms.append(t)
    allx = np.concatenate(pts, axis=0)
    allt = np.concatenate(tms, axis=0)
    vals = np.asarray(f(allx, allt), dtype=float).reshape(9, m)
    center = vals[0]
    d2t = (vals[1] - 2.0 * center + vals[2]) / step**2
    second = [d2t / c**2]
    for axis in range(3):
        plus = vals[3 + 2 * axis]
        minus = vals[4 + 2 * axis]
        second.append((plus - 2.0 * center + minus) / step**2)
    second = np.stack(second, axis=0)
    raw = second[0] - second[1:].sum(axis=0)
    scale = np.abs(second).max(axis=0)
    return np.where(scale > 0.0, np.abs(raw) / np.where(scale > 0, scale, 1.0), 0.0)


def verify_dalembert(f, z, c, step):
    """Scalar normalized d'Alembertian residual at one space-time point."""
    x, t = _unpack(z)
    return float(dalembert_residuals(f, x[None, :], [t], c, step)[0])


def is_smooth_point(params, x, t, step, r_margin=0.05, cone_margin=None):
    """Filter for PDE-residual checks near a wave kernel's kink sets.

    Excludes stencil centers within a few steps of the spheres
    |r +- c|t|| = R (indicator truncation of the speed component), of the
    cutoff knee of the position component, of the focusing cone r = c|t| of
    the position component (the plain radial prior admits cone-singular
    draws at the center, so the propagated kernel is not pointwise C2
    there), of r = 0 and of t = 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    t = np.asarray(t, dtype=float).reshape(-1)
    c = params.c
    margin = 3.0 * step * (1.0 + c)
    if cone_margin is None:
        cone_margin = max(margin, 0.01)
    ok = (np.abs(t) > 3.0 * step)
    for name in params.components:
        src = getattr(params, name)
        r = np.linalg.norm(x - src.x0, axis=1)
        ok &= r > r_margin
        qm = np.abs(r - c * np.abs(t))
        qp = r + c * np.abs(t)
        radii = [src.radius]
        if name == "u":
            radii.append(params.alpha_cut * src.radius)
            ok &= qm > cone_margin
        for kink in radii:
            ok &= np.abs(qm - kink) > margin
            ok &= np.abs(qp - kink) > margin
    return ok


def lp_relative_error(approx: ScalarField3D, truth: ScalarField3D, p):
    """Relative Lp error between two fields on identical grids."""
    if not truth.same_grid(approx):
        raise ValueError("fields must share the same grid")
    denom = truth.norm(p)
    if denom == 0.0:
        raise ZeroDivisionError("truth field has zero norm")
    diff = ScalarField3D(origin=truth.origin, dx=truth.dx, dims=truth.dims,
                         values=truth.values - approx.values)
    return diff.norm(p) / denom


def lp_stability_check(u0_ic, v0_ic, c, t, p, grid: ScalarField3D, tol=0.02):
    """Check the Lp stability bounds of the propagated initial conditions.

    Verifies ||shell_mean(v0)||_p <= |t| ||v0||_p and
    ||d/dt shell_mean(u0)||_p <= ||u0||_p + 3 c |t| ||grad u0||_p, each with
    a multiplicative grid tolerance.  Returns a report dict with both sides.
    """
    pts = grid.points()
    report = {"t": t, "p": p, "tol": tol}

    v_field = grid.like(spherical_mean_radial(
        v0_ic.profile_antideriv, pts - v0_ic.x0, t, c))
    v_truth = grid.like(v0_ic.eval(pts))
    lhs_v = v_field.norm(p)
    rhs_v = abs(t) * v_truth.norm(p)
    report["v_lhs"] = lhs_v
    report["v_rhs"] = rhs_v
    report["v_ok"] = bool(lhs_v <= rhs_v * (1.0 + tol) + 1e-12)

    u_field = grid.like(spherical_mean_radial_dt(
        u0_ic.profile, pts - u0_ic.x0, t, c))
    u_truth = grid.like(u0_ic.eval(pts))
    grad = u0_ic.grad(pts)
    if p == np.inf:
        grad_mag = np.abs(grad).max(axis=1)
    else:
        grad_mag = (np.abs(grad) ** p).sum(axis=1) ** (1.0 / p)
    grad_field = grid.like(grad_mag)
    lhs_u = u_field.norm(p)
    rhs_u = u_truth.norm(p) + 3.0 * c * abs(t) * grad_field.norm(p)
    report["u_lhs"] = lhs_u
    report["u_rhs"] = rhs_u
    report["u_ok"] = bool(lhs_u <= rhs_u * (1.0 + tol) + 1e-12)
    return report


def matern_radial_base(src, component, center=None):
    """Quadrature base kernel matching a closed-form component's prior.

    The position component is a plain radial Matern in the radius; the
    speed component is the mixed second derivative of the squared-radius
    Matern antiderivative surface, i.e. the negated second derivative of
    the profile taken in the squared radii.
    """
    where = src.x0 if center is None else center
    if component == "u":
        return MaternRadiusBase(center=where, rho=src.rho, sigma2=src.sigma2)
    if component == "v":
        return MaternSquaredBase(center=where, rho=src.rho, sigma2=src.sigma2,
                                 deriv_order=2)
    raise ValueError("component must be 'u' or 'v'")


def calibrate_gaussian_prefactor(rule=None):
    """Numerically calibrate the prefactor of the Gaussian stationary form.

    Matches the closed form against the shell quadrature of a unit Gaussian
    base at one reference geometry; the returned constant is dimensionless
    and scales linearly with the base amplitude.
    """
    from .kernels import stationary_gaussian_wave

    if rule is None:
        rule = SphericalRule.product(48)
    c, amp, length = 1.0, 1.0, 0.4
    t, tp = 0.7, 0.45
    h = np.array([0.35, 0.0, 0.0])
    base = StationaryGaussianBase(amp, length)
    reference = kv_wave_quadrature(base, (h, t), (np.zeros(3), tp), c, rule)
    unit = stationary_gaussian_wave(h, t, tp, c, amp, length, cprime=1.0)
    if unit == 0.0:
        raise KernelEvaluationError("degenerate calibration geometry")
    return reference / unit
