"""Closed-form space-time covariance kernels for wave-propagated GP priors.

A centered GP prior on the initial position (u component) and/or initial
speed (v component) of the 3D free-space wave equation induces a GP on the
full space-time solution.  When the base kernels are radial around a source
center and compactly supported, the induced space-time kernels have fast
closed forms: four-term sums over the in/outgoing characteristic radii
``r + eps*c*|t|``.  This module implements those closed forms, the
Matern-5/2 base profile they are built on, the smooth compact-support cutoff,
and the two stationary-prior closed forms (singular shell density and the
Gaussian-base formula).

Base-kernel conventions.  The position prior puts a plain radial Matern on
u0: correlation m52(r - r'), so ``rho_u`` is a length in meters.  The speed
prior models the integrated-profile surface as a Matern of the squared
radii: K_v(a, b) = m52(a - b) with a, b squared radii, so ``rho_v`` carries
units m^2.  (A radius-difference K_v would give the initial-speed prior a
1/r^2 variance divergence at the source center, which destabilizes the
time-derivative reconstruction there; the squared-radius form is regular.)

Everything here is a pure function of immutable parameters and is safe for
unrestricted concurrent evaluation.  Point batches are passed as arrays:
positions with shape (n, 3) and times with shape (n,).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import math

import numpy as np
from scipy.special import ndtr

# |t| below this is treated as t = 0 (sgn = 0, degenerate sphere).
TIME_TOL = 1e-12
# Small-r clamp for the 1/r quotients; the quotients are even in r so the
# clamp error is O(RADIUS_CLAMP**2).
RADIUS_CLAMP = 1e-4


class SpaceTimePoint(NamedTuple):
    """A spatial location plus a time, the index z = (x, t) of the GP."""

    x: np.ndarray
    t: float


def matern52(h, rho, sigma2):
    """Stationary Matern-5/2 kernel value at increment h.

    k(h) = sigma2 * (1 + a + a^2/3) * exp(-a) with a = |h|/rho.  Even in h.
    """
    a = np.abs(h) / rho
    return sigma2 * (1.0 + a * (1.0 + a / 3.0)) * np.exp(-a)


def matern52_d1(h, rho, sigma2):
    """First derivative of :func:`matern52` with respect to h (odd in h)."""
    a = np.abs(h) / rho
    return -sigma2 * h * (1.0 + a) * np.exp(-a) / (3.0 * rho**2)


def matern52_d2(h, rho, sigma2):
    """Second derivative of :func:`matern52` with respect to h (even in h)."""
    a = np.abs(h) / rho
    return -sigma2 * (1.0 + a - a * a) * np.exp(-a) / (3.0 * rho**2)


def smooth_cutoff(s, alpha=0.8):
    """C-infinity decreasing cutoff: 1 on [0, alpha), 0 on [1, inf).

    On [alpha, 1) uses the standard smooth partition
    psi(1-u) / (psi(u) + psi(1-u)) with psi(u) = exp(-1/u) and
    u = (s - alpha)/(1 - alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    s_arr = np.asarray(s, dtype=float)
    u = (s_arr - alpha) / (1.0 - alpha)
    out = np.where(u <= 0.0, 1.0, 0.0)
    inner = (u > 0.0) & (u < 1.0)
    if np.any(inner):
        ui = u[inner]
        pa = np.exp(-1.0 / ui)
        pb = np.exp(-1.0 / (1.0 - ui))
        out[inner] = pb / (pa + pb)
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SourceParams:
    """Radial base-kernel block for one component (position or speed).

    ``radius`` is the support radius of the initial condition (may be
    ``np.inf`` for an untruncated prior); ``rho`` is the Matern length scale
    (in meters for the position component, in m^2 for the speed component,
    whose Matern acts on squared radii); ``sigma2`` the prior variance.
    """

    x0: np.ndarray
    radius: float
    rho: float
    sigma2: float

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(3)
        object.__setattr__(self, "x0", x0)
        if not np.all(np.isfinite(x0)):
            raise ValueError("source center must be finite")
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not (np.isfinite(self.rho) and self.rho > 0.0):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0.0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class HyperParams:
    """All physical and kernel parameters plus the noise variance.

    A disabled component (u or v) is represented by ``None``.
    """

    c: float
    u: SourceParams | None = None
    v: SourceParams | None = None
    lam: float = 0.0
    alpha_cut: float = 0.8

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0.0):
            raise ValueError(f"wave speed must be positive, got {self.c}")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"noise variance must be >= 0, got {self.lam}")
        if not 0.0 < self.alpha_cut < 1.0:
            raise ValueError(f"alpha_cut must lie in (0,1), got {self.alpha_cut}")

    @property
    def components(self):
        names = []
        if self.u is not None:
            names.append("u")
        if self.v is not None:
            names.append("v")
        return tuple(names)

    def to_vector(self):
        """Flat encoding: [x0, R, rho, sigma2] per enabled component, then c, lam."""
        parts = []
        for name in self.components:
            src = getattr(self, name)
            parts.extend([*src.x0, src.radius, src.rho, src.sigma2])
        parts.extend([self.c, self.lam])
        return np.array(parts, dtype=float)

    @classmethod
    def from_vector(cls, vec, components, alpha_cut=0.8):
        vec = np.asarray(vec, dtype=float).reshape(-1)
        expected = 6 * len(components) + 2
        if vec.size != expected:
            raise ValueError(f"expected vector of length {expected}, got {vec.size}")
        blocks = {"u": None, "v": None}
        for i, name in enumerate(components):
            b = vec[6 * i : 6 * i + 6]
            blocks[name] = SourceParams(x0=b[:3], radius=b[3], rho=b[4], sigma2=b[5])
        return cls(c=vec[-2], u=blocks["u"], v=blocks["v"], lam=vec[-1],
                   alpha_cut=alpha_cut)

    @staticmethod
    def vector_names(components):
        names = []
        for comp in components:
            names.extend([f"x0{comp}_{ax}" for ax in "xyz"])
            names.extend([f"R_{comp}", f"rho_{comp}", f"sigma2_{comp}"])
        names.extend(["c", "lam"])
        return names

    def with_lam(self, lam):
        return replace(self, lam=lam)


def _as_points(x, t):
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    t = np.asarray(t, dtype=float).reshape(-1)
    if x.shape[0] != t.shape[0]:
        raise ValueError("positions and times must have matching lengths")
    return x, t


def _clamped_radii(x, x0):
    r = np.linalg.norm(x - x0, axis=1)
    return np.maximum(r, RADIUS_CLAMP)


def _time_sign(t):
    s = np.sign(t)
    s[np.abs(t) < TIME_TOL] = 0.0
    return s


def _kv_terms(r, t, c, src):
    """Clamped squared characteristic radii min((r + eps*c|t|)^2, R^2)."""
    ct = c * np.abs(t)
    r2cap = src.radius**2
    a_plus = np.minimum((r + ct) ** 2, r2cap)
    a_minus = np.minimum((r - ct) ** 2, r2cap)
    return a_minus, a_plus


def kv_wave_radial(x1, t1, x2, t2, c, src):
    """Speed-component wave kernel (truncated radial base), pairwise.

    Returns the (n, m) matrix of
    sgn(t t') / (16 c^2 r r') * sum_{eps,eps'} eps eps'
    Kv(min((r+eps c|t|)^2, R^2), min((r'+eps' c|t'|)^2, R^2))
    with Kv the Matern-5/2 profile of the difference of its squared-radius
    arguments.  Exactly zero outside the light cone of either argument.
    """
    x1, t1 = _as_points(x1, t1)
    x2, t2 = _as_points(x2, t2)
    r1 = _clamped_radii(x1, src.x0)
    r2 = _clamped_radii(x2, src.x0)
    am1, ap1 = _kv_terms(r1, t1, c, src)
    am2, ap2 = _kv_terms(r2, t2, c, src)
    rho, s2 = src.rho, src.sigma2
    # Grouped so that a clamped (out-of-cone) argument cancels exactly.
    inner_p = matern52(ap1[:, None] - ap2[None, :], rho, s2) \
        - matern52(am1[:, None] - ap2[None, :], rho, s2)
    inner_m = matern52(ap1[:, None] - am2[None, :], rho, s2) \
        - matern52(am1[:, None] - am2[None, :], rho, s2)
    acc = inner_p - inner_m
    sgn = np.outer(_time_sign(t1), _time_sign(t2))
    return sgn * acc / (16.0 * c * c * np.outer(r1, r2))


def kv_wave_diag(x, t, c, src):
    """Diagonal kv_wave_radial(z, z); exact zeros outside the light cone."""
    x, t = _as_points(x, t)
    r = _clamped_radii(x, src.x0)
    am, ap = _kv_terms(r, t, c, src)
    rho, s2 = src.rho, src.sigma2
    inner_p = matern52(ap - ap, rho, s2) - matern52(am - ap, rho, s2)
    inner_m = matern52(ap - am, rho, s2) - matern52(am - am, rho, s2)
    acc = inner_p - inner_m
    sgn = _time_sign(t) ** 2
    return sgn * acc / (16.0 * c * c * r * r)


def _ku_terms(r, t, c, src, alpha_cut):
    """Signed characteristic radii b_eps = r + eps*c|t| and their cutoffs."""
    ct = c * np.abs(t)
    b_minus = r - ct
    b_plus = r + ct
    w_minus = smooth_cutoff(np.abs(b_minus) / src.radius, alpha_cut)
    w_plus = smooth_cutoff(np.abs(b_plus) / src.radius, alpha_cut)
    return (b_minus, b_plus), (w_minus, w_plus)


def ku_wave_radial(x1, t1, x2, t2, c, src, alpha_cut=0.8):
    """Position-component wave kernel (smoothly truncated radial base), pairwise.

    Returns 1/(4 r r') * sum_{eps,eps'} (r+eps c|t|)(r'+eps' c|t'|) *
    ku0((r+eps c|t|)^2, (r'+eps' c|t'|)^2) where the truncated base is
    ku0(s, s') = matern52(sqrt(s) - sqrt(s')) * phi(sqrt(s)/R) *
    phi(sqrt(s')/R), i.e. a plain radial Matern prior on u0.
    """
    x1, t1 = _as_points(x1, t1)
    x2, t2 = _as_points(x2, t2)
    r1 = _clamped_radii(x1, src.x0)
    r2 = _clamped_radii(x2, src.x0)
    (b1m, b1p), (w1m, w1p) = _ku_terms(r1, t1, c, src, alpha_cut)
    (b2m, b2p), (w2m, w2p) = _ku_terms(r2, t2, c, src, alpha_cut)
    rho, s2 = src.rho, src.sigma2
    g1m, g1p = b1m * w1m, b1p * w1p
    g2m, g2p = b2m * w2m, b2p * w2p
    a1m, a1p = np.abs(b1m), np.abs(b1p)
    a2m, a2p = np.abs(b2m), np.abs(b2p)
    # All four terms add; the eps signs live inside the signed radii b_eps.
    acc = np.outer(g1p, g2p) * matern52(a1p[:, None] - a2p[None, :], rho, s2)
    acc += np.outer(g1m, g2m) * matern52(a1m[:, None] - a2m[None, :], rho, s2)
    acc += np.outer(g1p, g2m) * matern52(a1p[:, None] - a2m[None, :], rho, s2)
    acc += np.outer(g1m, g2p) * matern52(a1m[:, None] - a2p[None, :], rho, s2)
    return acc / (4.0 * np.outer(r1, r2))


def ku_wave_diag(x, t, c, src, alpha_cut=0.8):
    """Diagonal ku_wave_radial(z, z)."""
    x, t = _as_points(x, t)
    r = _clamped_radii(x, src.x0)
    (bm, bp), (wm, wp) = _ku_terms(r, t, c, src, alpha_cut)
    rho, s2 = src.rho, src.sigma2
    gm, gp = bm * wm, bp * wp
    acc = gp * gp * matern52(0.0, rho, s2)
    acc += gm * gm * matern52(0.0, rho, s2)
    acc += 2.0 * gp * gm * matern52(np.abs(bp) - np.abs(bm), rho, s2)
    return acc / (4.0 * r * r)


def wave_kernel(x1, t1, x2, t2, params: HyperParams):
    """Full space-time wave kernel: sum of the enabled u and v components."""
    x1, t1 = _as_points(x1, t1)
    x2, t2 = _as_points(x2, t2)
    out = np.zeros((x1.shape[0], x2.shape[0]))
    if params.u is not None:
        out += ku_wave_radial(x1, t1, x2, t2, params.c, params.u, params.alpha_cut)
    if params.v is not None:
        out += kv_wave_radial(x1, t1, x2, t2, params.c, params.v)
    return out


def wave_kernel_diag(x, t, params: HyperParams):
    """Diagonal of :func:`wave_kernel`; exact zeros outside both light cones."""
    x, t = _as_points(x, t)
    out = np.zeros(x.shape[0])
    if params.u is not None:
        out += ku_wave_diag(x, t, params.c, params.u, params.alpha_cut)
    if params.v is not None:
        out += kv_wave_diag(x, t, params.c, params.v)
    return out


class WaveKernel:
    """Space-time covariance object backed by :func:`wave_kernel`.

    Immutable apart from ``eval_count``, a diagnostic counter of how many
    kernel entries have been computed (used to check light-cone pruning).
    """

    def __init__(self, params: HyperParams):
        self.params = params
        self.eval_count = 0

    def pairwise(self, x1, t1, x2, t2):
        out = wave_kernel(x1, t1, x2, t2, self.params)
        self.eval_count += out.size
        return out

    def diag(self, x, t):
        out = wave_kernel_diag(x, t, self.params)
        self.eval_count += out.size
        return out

    def __call__(self, z1: SpaceTimePoint, z2: SpaceTimePoint) -> float:
        return float(self.pairwise([z1.x], [z1.t], [z2.x], [z2.t])[0, 0])


class FunctionKernel:
    """Adapter turning a scalar two-point function into a kernel object."""

    def __init__(self, func):
        self.func = func
        self.eval_count = 0

    def pairwise(self, x1, t1, x2, t2):
        x1, t1 = _as_points(x1, t1)
        x2, t2 = _as_points(x2, t2)
        out = np.empty((x1.shape[0], x2.shape[0]))
        for i in range(x1.shape[0]):
            for j in range(x2.shape[0]):
                out[i, j] = self.func(x1[i], t1[i], x2[j], t2[j])
        self.eval_count += out.size
        return out

    def diag(self, x, t):
        x, t = _as_points(x, t)
        out = np.array([self.func(x[i], t[i], x[i], t[i]) for i in range(len(t))])
        self.eval_count += out.size
        return out


def stationary_ftft_density(hnorm, t, tp, c):
    """Density of the convolved spherical shell measures at radius hnorm.

    sgn(t) sgn(t') / (8 pi c^2 hnorm) on the band
    [c||t|-|t'||, c(|t|+|t'|)], zero outside.  Evaluating at hnorm = 0
    inside the band is singular.
    """
    from .exceptions import SingularEvaluationError

    if hnorm < 0.0:
        raise ValueError("hnorm must be >= 0")
    st = 0.0 if abs(t) < TIME_TOL else math.copysign(1.0, t)
    stp = 0.0 if abs(tp) < TIME_TOL else math.copysign(1.0, tp)
    sgn = st * stp
    if sgn == 0.0:
        return 0.0
    lo = c * abs(abs(t) - abs(tp))
    hi = c * (abs(t) + abs(tp))
    if hnorm < lo or hnorm > hi:
        return 0.0
    if hnorm == 0.0:
        raise SingularEvaluationError(
            "shell convolution density diverges at hnorm = 0 inside the band")
    return sgn / (8.0 * math.pi * c * c * hnorm)


_GAUSSIAN_PREFACTOR_CACHE = []


def stationary_gaussian_wave(h, t, tp, c, C, L, cprime=None):
    """Closed form for a stationary Gaussian base kernel C*exp(-|h|^2/(2L^2)).

    sgn(t t') * cprime * L^3 / c^2 * (q(R1) - q(R2)) with
    q(R) = (Phi((R+|h|)/L) - Phi((R-|h|)/L)) / (2|h|),
    R1 = c||t|-|t'||, R2 = c(|t|+|t'|), Phi the standard normal CDF.
    ``cprime`` is the dimensionless calibration constant (scales linearly
    with C); when omitted it is calibrated once against the shell
    quadrature (waveinform.oracle.calibrate_gaussian_prefactor) and cached.
    Near |h| = 0 the difference quotient is replaced by its analytic limit.
    """
    if cprime is None:
        if not _GAUSSIAN_PREFACTOR_CACHE:
            from .oracle import calibrate_gaussian_prefactor

            _GAUSSIAN_PREFACTOR_CACHE.append(calibrate_gaussian_prefactor())
        cprime = _GAUSSIAN_PREFACTOR_CACHE[0]
    st = 0.0 if abs(t) < TIME_TOL else math.copysign(1.0, t)
    stp = 0.0 if abs(tp) < TIME_TOL else math.copysign(1.0, tp)
    sgn = st * stp
    if sgn == 0.0:
        return 0.0
    hn = float(np.linalg.norm(np.asarray(h, dtype=float).reshape(-1)))
    r1 = c * abs(abs(t) - abs(tp))
    r2 = c * (abs(t) + abs(tp))

    def quotient(radius):
        if hn < 1e-8:
            return math.exp(-0.5 * (radius / L) ** 2) / (L * math.sqrt(2.0 * math.pi))
        return (ndtr((radius + hn) / L) - ndtr((radius - hn) / L)) / (2.0 * hn)

    return sgn * cprime * C * L**3 / c**2 * (quotient(r1) - quotient(r2))
