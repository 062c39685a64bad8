"""Radial dispersal kernels: validation, moments, rescaling, discretization.

A kernel is a radially non-increasing density with compact support and unit
mass.  Everything downstream (operators, energies, fronts) consumes either
the continuous profile or its mass-renormalized grid stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConfigError, InvalidProfileError, ResolutionError

__all__ = [
    "KernelProfile",
    "KernelMoments",
    "KernelStencil",
    "tent_profile",
    "plateau_profile",
    "indicator_profile",
    "sphere_area",
    "validate_kernel",
    "compute_moments",
    "rescale",
    "discretize",
]


def sphere_area(dimension):
    """Surface measure of the unit sphere in ``dimension`` dimensions."""
    return 2.0 * math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0)


@dataclass(frozen=True)
class KernelProfile:
    """Radial density ``z -> radial(|z|)`` supported in the ball of radius
    ``support_radius``.

    ``radial`` must accept numpy arrays.  ``normalization`` records the
    multiplicative constant already folded into ``radial`` so rescaled
    profiles can report it; it plays no computational role beyond that.
    """

    radial: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    dimension: int
    normalization: float = 1.0
    name: str = "custom"

    def __call__(self, t):
        return self.radial(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class KernelMoments:
    """Scalar functionals of a kernel/nonlinearity pair.

    ``c_nj = pi^2 m2 / (32 N)`` and ``r0_star = sqrt(theta c_nj / (5 c0))``
    where ``c0`` is the maximum of the reaction term on [0, 1].
    """

    m1: float
    m2: float
    grad_l1: float
    c_nj: float
    r0_star: float
    c0: float
    argmax_f: float


@dataclass(frozen=True)
class KernelStencil:
    """Grid quadrature of a kernel: integer offsets and weights summing to 1.

    Offsets are sorted by Euclidean length (ties lexicographically), so
    ``offsets[0]`` is the center and ``weights[0]`` the largest weight.
    """

    offsets: np.ndarray          # (m, N) int
    weights: np.ndarray          # (m,) float, sum == 1
    spacing: float
    scale_epsilon: float = 1.0
    support_radius: float = 0.0  # physical support of the discretized profile

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=int))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @property
    def radius_cells(self):
        """Largest per-axis offset present in the stencil."""
        return int(np.max(np.abs(self.offsets)))

    def as_dense(self):
        """Weights as a dense (2r+1)^N cube, center weight in the middle."""
        r = self.radius_cells
        n = self.offsets.shape[1]
        cube = np.zeros((2 * r + 1,) * n)
        cube[tuple((self.offsets + r).T)] = self.weights
        return cube

    def second_moment(self):
        """Discrete second moment sum(w |offset*h|^2)."""
        d2 = np.sum((self.offsets * self.spacing) ** 2, axis=1)
        return float(np.dot(self.weights, d2))

    def marginal_1d(self):
        """Collapse onto the first axis: weights per integer x1-offset.

        Exact for fields depending on the first coordinate only.
        """
        j = self.offsets[:, 0]
        lo, hi = j.min(), j.max()
        out = np.zeros(hi - lo + 1)
        np.add.at(out, j - lo, self.weights)
        return np.arange(lo, hi + 1), out


def tent_profile(dimension=2, support_radius=0.5):
    """Cone profile c (1 - t/r)_+ normalized to unit mass.

    In 2d with r = 1/2 the constant is 12/pi.
    """
    r = float(support_radius)
    if r <= 0:
        raise ConfigError("tent profile needs a positive support radius")
    n = dimension
    # int_{B_r} c (1 - t/r) dz = c * area(S^{n-1}) * r^n / (n (n+1))
    c = n * (n + 1) / (sphere_area(n) * r ** n)

    def radial(t):
        t = np.asarray(t, dtype=float)
        return c * np.clip(1.0 - t / r, 0.0, None)

    return KernelProfile(radial, r, n, normalization=c, name="tent")


def plateau_profile(dimension=2, support_radius=0.5, shoulder=0.5):
    """Flat core up to ``shoulder * r`` then a linear ramp to zero.

    Still radially non-increasing, W^{1,1} and L^2; its second moment is
    larger than the tent's for the same support.
    """
    r = float(support_radius)
    b = float(shoulder)
    if not 0.0 < b < 1.0:
        raise ConfigError("plateau shoulder must lie in (0, 1)")
    n = dimension
    sa = sphere_area(n)
    # mass = c sa [ int_0^{br} t^{n-1} dt + int_{br}^r (r-t)/(r-br) t^{n-1} dt ]
    t = np.linspace(b * r, r, 20001)
    ramp = np.trapezoid((r - t) / (r - b * r) * t ** (n - 1), t)
    mass_shape = sa * ((b * r) ** n / n + ramp)
    c = 1.0 / mass_shape

    def radial(t):
        t = np.asarray(t, dtype=float)
        out = np.where(t <= b * r, 1.0, (r - t) / (r - b * r))
        return c * np.clip(out, 0.0, None)

    return KernelProfile(radial, r, n, normalization=c, name="plateau")


def indicator_profile(dimension=2, support_radius=0.5):
    """Normalized indicator of the ball; fails the W^{1,1} check on purpose."""
    r = float(support_radius)
    n = dimension
    ball_volume = sphere_area(n) * r ** n / n
    c = 1.0 / ball_volume

    def radial(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < r, c, 0.0)

    return KernelProfile(radial, r, n, normalization=c, name="indicator")


def _radial_integral(profile, power, rmax=None):
    """int_0^r radial(t) t^(N-1+power) dt times the sphere area."""
    n = profile.dimension
    r = profile.support_radius if rmax is None else rmax
    val, _ = integrate.quad(
        lambda t: profile.radial(t) * t ** (n - 1 + power),
        0.0,
        r,
        limit=400,
    )
    return sphere_area(n) * val


def gradient_l1(profile, samples=200001):
    """int |grad J| dz for a radial profile, via the radial slope.

    |grad J(z)| = |radial'(|z|)|, integrated with the polar weight.  The
    slope is taken by central differences on a fine grid, which is accurate
    for piecewise-smooth profiles (the only kind constructed here).
    """
    r = profile.support_radius
    t = np.linspace(0.0, r, samples)
    rho = profile(t)
    drho = np.gradient(rho, t)
    w = np.abs(drho) * t ** (profile.dimension - 1)
    return sphere_area(profile.dimension) * np.trapezoid(w, t)


def _jump_scale(profile, samples):
    """Largest adjacent-sample jump of the radial function at a given grid."""
    t = np.linspace(0.0, profile.support_radius, samples)
    return float(np.max(np.abs(np.diff(profile(t)))))


def validate_kernel(profile, quad_tol=1e-6, monotone_samples=4001):
    """Check every kernel assumption; return {check name: bool}.

    Checks: unit mass, radial monotone decay, compact support, finite first
    moment, W^{1,1} membership (total variation finite and no jump under
    refinement), and square integrability.
    """
    if profile.support_radius <= 0:
        raise InvalidProfileError("support radius must be positive")
    t = np.linspace(0.0, profile.support_radius, monotone_samples)
    vals = profile(t)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise InvalidProfileError("profile takes non-finite or negative values")

    report = {}
    mass = _radial_integral(profile, 0)
    report["unit_mass"] = abs(mass - 1.0) <= quad_tol
    report["radially_non_increasing"] = bool(np.all(np.diff(vals) <= 1e-12))
    beyond = profile(np.linspace(profile.support_radius,
                                 2 * profile.support_radius, 64))
    report["compact_support"] = bool(np.max(np.abs(beyond)) == 0.0)
    m1 = _radial_integral(profile, 1)
    report["finite_first_moment"] = math.isfinite(m1) and m1 > 0
    # W^{1,1}: finite variation plus jump size that shrinks under refinement.
    # A genuine jump keeps the same adjacent-sample difference at any grid.
    j1 = _jump_scale(profile, 2001)
    j2 = _jump_scale(profile, 4001)
    continuous = j2 <= 0.75 * j1 or j2 <= 1e-12
    report["weak_derivative_integrable"] = (
        continuous and math.isfinite(gradient_l1(profile, 20001))
    )
    l2 = integrate.quad(
        lambda s: profile.radial(s) ** 2 * s ** (profile.dimension - 1),
        0.0,
        profile.support_radius,
        limit=400,
    )[0]
    report["square_integrable"] = math.isfinite(l2)
    return report


def compute_moments(profile, f):
    """Kernel moments plus the reaction-dependent constants.

    ``f`` is a Nonlinearity (needs ``theta`` and a scalar ``evaluate``).
    """
    report = validate_kernel(profile)
    if not all(report.values()):
        bad = [k for k, v in report.items() if not v]
        raise InvalidProfileError(f"kernel fails checks: {bad}")
    m1 = _radial_integral(profile, 1)
    m2 = _radial_integral(profile, 2)
    grad_l1_val = gradient_l1(profile)
    n = profile.dimension
    c_nj = math.pi ** 2 * m2 / (32.0 * n)

    from scipy.optimize import minimize_scalar

    res = minimize_scalar(
        lambda s: -f.evaluate(s), bounds=(0.0, 1.0), method="bounded",
        options={"xatol": 1e-13},
    )
    c0 = float(-res.fun)
    if c0 <= 0:
        raise ConfigError("reaction maximum on [0,1] must be positive")
    r0_star = math.sqrt(f.theta * c_nj / (5.0 * c0))
    return KernelMoments(
        m1=m1, m2=m2, grad_l1=grad_l1_val, c_nj=c_nj, r0_star=r0_star,
        c0=c0, argmax_f=float(res.x),
    )


def rescale(profile, epsilon):
    """Mass-preserving rescale: support shrinks to eps*r, m2 scales by eps^2.

    ``epsilon = 1`` returns an identical profile; values outside (0, 1] are
    rejected.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1], got {epsilon}")
    if epsilon == 1.0:
        return profile
    eps = float(epsilon)
    base = profile.radial
    n = profile.dimension
    scale = eps ** (-n)

    def radial(t):
        return scale * base(np.asarray(t, dtype=float) / eps)

    return KernelProfile(
        radial,
        eps * profile.support_radius,
        n,
        normalization=scale * profile.normalization,
        name=profile.name,
    )


def discretize(profile, spacing, scale_epsilon=1.0):
    """Midpoint-rule stencil on cell centers, renormalized to unit mass.

    Requires at least three cells per support radius so the stencil can
    carry the radial shape.  The tiny renormalization residue is folded into
    the center weight, keeping the sum exactly 1.0 and preserving the
    non-increasing ordering.  ``scale_epsilon`` only records which rescaled
    profile was discretized.
    """
    h = float(spacing)
    r = profile.support_radius
    if h <= 0:
        raise ConfigError("spacing must be positive")
    if h > r / 3.0:
        raise ResolutionError(
            f"spacing {h} too coarse for support radius {r}; need h <= r/3"
        )
    n = profile.dimension
    m = int(math.floor(r / h))
    axes = [np.arange(-m, m + 1)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    dist = np.sqrt(np.sum((grid * h) ** 2, axis=1))
    inside = dist < r
    offsets = grid[inside]
    w = profile(dist[inside]) * h ** n
    keep = w > 0
    offsets, w = offsets[keep], w[keep]
    if offsets.shape[0] == 0:
        raise ResolutionError("empty stencil: support radius below one cell")
    order = np.lexsort(tuple(offsets.T[::-1]) + (np.sum((offsets * h) ** 2, axis=1),))
    offsets, w = offsets[order], w[order]
    w = w / w.sum()
    w[0] += 1.0 - w.sum()
    return KernelStencil(
        offsets=offsets, weights=w, spacing=h,
        scale_epsilon=float(scale_epsilon), support_radius=r,
    )
