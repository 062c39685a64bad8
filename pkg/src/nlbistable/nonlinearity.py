"""Bistable reaction terms and their derived variants.

Provides the parametric cubic family a*s(1-s)(s-theta) with linear tails,
its epsilon^2 rescaling, the auxiliary extension that is linear with slope
-kappa below 3*theta/4 (bridged back to the cubic by a C^1 Hermite piece),
the exact piecewise antiderivative data used by the energy functional, and
the downward-shifted variant whose left zero sits at -delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConstructionError, InvalidNonlinearityError

__all__ = [
    "Nonlinearity",
    "ExtendedNonlinearity",
    "PotentialData",
    "make_cubic_bistable",
    "validate_bistable",
    "rescale_reaction",
    "extend_tilde",
    "default_kappa",
    "make_potential",
    "make_shifted",
    "delta1_search",
    "sup_abs_derivative",
]


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar reaction term with its derivative and middle zero."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    theta: float
    kind: str = "base"
    amplitude: float = float("nan")
    scale: float = 1.0  # epsilon^2 factor for rescaled variants
    shift_delta: float = 0.0  # left-zero shift of "shifted" variants

    def __call__(self, s):
        return self.evaluate(np.asarray(s, dtype=float))


def make_cubic_bistable(theta, amplitude):
    """a*s(1-s)(s-theta) on [0,1], extended by its end slopes outside.

    The extension uses f'(0)*s for s <= 0 and f'(1)(s-1) for s >= 1, which
    keeps the function C^1 on the whole line.
    """
    th = float(theta)
    a = float(amplitude)
    if not 0.0 < th < 0.5:
        raise InvalidNonlinearityError(
            f"theta must lie in (0, 1/2) so the integral is positive, got {th}"
        )
    if a <= 0:
        raise InvalidNonlinearityError("amplitude must be positive")
    dm0 = -a * th            # f'(0)
    dm1 = a * (th - 1.0)     # f'(1)

    def evaluate(s):
        s = np.asarray(s, dtype=float)
        core = a * s * (1.0 - s) * (s - th)
        return np.where(s < 0.0, dm0 * s, np.where(s > 1.0, dm1 * (s - 1.0), core))

    def derivative(s):
        s = np.asarray(s, dtype=float)
        core = a * (-3.0 * s * s + 2.0 * (1.0 + th) * s - th)
        return np.where(s < 0.0, dm0, np.where(s > 1.0, dm1, core))

    f = Nonlinearity(evaluate, derivative, th, kind="base", amplitude=a)
    ok, failures = validate_bistable(f)
    if not ok:
        raise InvalidNonlinearityError(f"cubic fails bistable checks: {failures}")
    return f


def validate_bistable(f, samples=10001):
    """Sampled check of the bistable requirements on [0, 1].

    Zeros at 0, theta, 1; negative on (0, theta); positive on (theta, 1);
    positive integral; f'(0) < 0 < f'(theta), f'(1) < 0; f' < 1.
    Returns (ok, list_of_failures).
    """
    th = f.theta
    failures = []
    s = np.linspace(0.0, 1.0, samples)
    vals = f.evaluate(s)
    if not np.all(np.isfinite(vals)):
        failures.append("non-finite values")
    for z in (0.0, th, 1.0):
        if abs(float(f.evaluate(z))) > 1e-12:
            failures.append(f"f({z}) != 0")
    left = s[(s > 1e-9) & (s < th - 1e-9)]
    right = s[(s > th + 1e-9) & (s < 1 - 1e-9)]
    if left.size and not np.all(f.evaluate(left) < 0):
        failures.append("f not negative on (0, theta)")
    if right.size and not np.all(f.evaluate(right) > 0):
        failures.append("f not positive on (theta, 1)")
    total = integrate.quad(lambda x: float(f.evaluate(x)), 0.0, 1.0, limit=200)[0]
    if total <= 0:
        failures.append("integral of f over [0,1] not positive")
    if float(f.derivative(0.0)) >= 0:
        failures.append("f'(0) not negative")
    if float(f.derivative(th)) <= 0:
        failures.append("f'(theta) not positive")
    if float(f.derivative(1.0)) >= 0:
        failures.append("f'(1) not negative")
    if np.max(f.derivative(s)) >= 1.0:
        failures.append("f' reaches 1 on [0,1]")
    return (not failures), failures


def rescale_reaction(f, epsilon):
    """epsilon^2 * f, with the same zeros."""
    eps2 = float(epsilon) ** 2
    base_eval, base_der = f.evaluate, f.derivative
    return Nonlinearity(
        evaluate=lambda s: eps2 * base_eval(s),
        derivative=lambda s: eps2 * base_der(s),
        theta=f.theta,
        kind="rescaled",
        amplitude=f.amplitude,
        scale=eps2 * f.scale,
        shift_delta=f.shift_delta,
    )


def sup_abs_derivative(f, lo=0.0, hi=1.0, samples=20001):
    s = np.linspace(lo, hi, samples)
    return float(np.max(np.abs(f.derivative(s))))


class _HermiteBridge:
    """Cubic Hermite segment with analytic derivative and antiderivative."""

    def __init__(self, x0, x1, p0, p1, m0, m1):
        self.x0, self.x1 = float(x0), float(x1)
        self.p0, self.p1 = float(p0), float(p1)
        self.m0, self.m1 = float(m0), float(m1)
        self.dx = self.x1 - self.x0

    def _tau(self, s):
        return (np.asarray(s, dtype=float) - self.x0) / self.dx

    def evaluate(self, s):
        t = self._tau(s)
        h00 = 2 * t ** 3 - 3 * t ** 2 + 1
        h10 = t ** 3 - 2 * t ** 2 + t
        h01 = -2 * t ** 3 + 3 * t ** 2
        h11 = t ** 3 - t ** 2
        return (self.p0 * h00 + self.m0 * self.dx * h10
                + self.p1 * h01 + self.m1 * self.dx * h11)

    def derivative(self, s):
        t = self._tau(s)
        d00 = 6 * t ** 2 - 6 * t
        d10 = 3 * t ** 2 - 4 * t + 1
        d01 = -6 * t ** 2 + 6 * t
        d11 = 3 * t ** 2 - 2 * t
        return (self.p0 * d00 + self.m0 * self.dx * d10
                + self.p1 * d01 + self.m1 * self.dx * d11) / self.dx

    def antiderivative(self, s):
        """int_{x0}^{s} bridge, exact."""
        t = self._tau(s)
        a00 = t ** 4 / 2 - t ** 3 + t
        a10 = t ** 4 / 4 - 2 * t ** 3 / 3 + t ** 2 / 2
        a01 = -t ** 4 / 2 + t ** 3
        a11 = t ** 4 / 4 - t ** 3 / 3
        return self.dx * (self.p0 * a00 + self.m0 * self.dx * a10
                          + self.p1 * a01 + self.m1 * self.dx * a11)


@dataclass(frozen=True)
class ExtendedNonlinearity:
    """Auxiliary reaction: -kappa*s below 3*theta/4, the base term above
    theta, a C^1 cubic bridge in between, and the slope f'(1) beyond 1.

    Quacks like a Nonlinearity (evaluate / derivative / theta) so operators
    and energies can consume either."""

    base: Nonlinearity
    kappa: float
    bridge: _HermiteBridge = field(repr=False)
    theta: float = 0.0
    kind: str = "extended"
    scale: float = 1.0

    def evaluate(self, s):
        s = np.asarray(s, dtype=float)
        th = self.theta
        f1 = float(self.base.derivative(1.0))
        out = np.where(
            s <= 0.75 * th,
            -self.kappa * s,
            np.where(
                s < th,
                self.bridge.evaluate(np.clip(s, 0.75 * th, th)),
                np.where(s <= 1.0, self.base.evaluate(np.clip(s, th, 1.0)),
                         f1 * (s - 1.0)),
            ),
        )
        return self.scale * out

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        th = self.theta
        f1 = float(self.base.derivative(1.0))
        out = np.where(
            s <= 0.75 * th,
            -self.kappa,
            np.where(
                s < th,
                self.bridge.derivative(np.clip(s, 0.75 * th, th)),
                np.where(s <= 1.0, self.base.derivative(np.clip(s, th, 1.0)), f1),
            ),
        )
        return self.scale * out

    def __call__(self, s):
        return self.evaluate(s)

    def rescaled(self, epsilon):
        eps2 = float(epsilon) ** 2
        return ExtendedNonlinearity(
            base=self.base, kappa=self.kappa, bridge=self.bridge,
            theta=self.theta, kind="extended-rescaled",
            scale=self.scale * eps2,
        )

    def antiderivative(self, s):
        """int_0^s of the (unscaled-then-scaled) extension, exact piecewise."""
        s = np.asarray(s, dtype=float)
        th = self.theta
        a = self.base.amplitude
        f1 = float(self.base.derivative(1.0))
        x0 = 0.75 * th

        def quartic(u):
            # antiderivative of a*u(1-u)(u-th) = a*(-u^3 + (1+th)u^2 - th*u)
            return a * (-u ** 4 / 4 + (1 + th) * u ** 3 / 3 - th * u ** 2 / 2)

        F_x0 = -self.kappa * x0 ** 2 / 2.0
        F_th = F_x0 + float(self.bridge.antiderivative(th))
        F_1 = F_th + (quartic(1.0) - quartic(th))
        lin = -self.kappa * s ** 2 / 2.0
        brid = F_x0 + self.bridge.antiderivative(np.clip(s, x0, th))
        cub = F_th + quartic(np.clip(s, th, 1.0)) - quartic(th)
        tail = F_1 + f1 * (np.clip(s, 1.0, None) - 1.0) ** 2 / 2.0
        out = np.where(s <= x0, lin,
                       np.where(s < th, brid, np.where(s <= 1.0, cub, tail)))
        return self.scale * out


def _check_extension(ext, samples=10001):
    """The three control inequalities plus sign/junction checks, sampled."""
    f = ext.base
    th = ext.theta
    failures = []
    s = np.linspace(0.0, 1.0, samples)
    if np.any(f.evaluate(s) - ext.evaluate(s) > 1e-12):
        failures.append("ordering f <= f~ fails on [0,1]")
    c0 = np.max(f.evaluate(s))
    if np.max(ext.evaluate(s)) > c0 + 1e-12:
        failures.append("max of f~ exceeds max of f on [0,1]")
    wide = np.linspace(-3.0, 4.0, 4 * samples)
    if np.max(ext.derivative(wide)) > np.max(f.derivative(s)) + 1e-12:
        failures.append("sup of f~' exceeds sup of f' on [0,1]")
    inner = s[(s > 1e-9) & (s < th - 1e-9)]
    if np.any(ext.evaluate(inner) > 0.0):
        failures.append("f~ positive somewhere on (0, theta)")
    for x in (0.75 * th, th):
        lv = float(ext.evaluate(x - 1e-9))
        rv = float(ext.evaluate(x + 1e-9))
        ld = float(ext.derivative(x - 1e-9))
        rd = float(ext.derivative(x + 1e-9))
        if abs(lv - rv) > 1e-7 or abs(ld - rd) > 1e-5:
            failures.append(f"C1 junction mismatch at {x}")
    return failures


def extend_tilde(f, kappa):
    """Build the auxiliary extension for a given kappa, or raise.

    kappa must keep -kappa*s above f on (0, 3*theta/4] and the bridge below
    zero with controlled slope; callers that only want *a* valid extension
    should use :func:`default_kappa` first.
    """
    kap = float(kappa)
    if kap <= 0:
        raise ConstructionError("kappa must be positive")
    if kap > abs(float(f.derivative(0.0))) / 2.0 + 1e-15:
        raise ConstructionError("kappa exceeds |f'(0)|/2")
    th = f.theta
    x0 = 0.75 * th
    bridge = _HermiteBridge(
        x0, th, p0=-kap * x0, p1=0.0, m0=-kap, m1=float(f.derivative(th))
    )
    ext = ExtendedNonlinearity(base=f, kappa=kap, bridge=bridge, theta=th)
    failures = _check_extension(ext)
    if failures:
        raise ConstructionError(
            f"extension invalid for kappa={kap}: {failures}; reduce kappa"
        )
    return ext


def default_kappa(f):
    """Largest convenient kappa passing every extension check.

    Starts from |f'(0)|/2 capped by the ordering constraint
    -kappa*s >= f(s) on (0, 3*theta/4], then shrinks geometrically until the
    bridge checks pass.
    """
    th = f.theta
    s = np.linspace(1e-6, 0.75 * th, 8001)
    order_cap = float(np.min(-f.evaluate(s) / s))
    kap = min(abs(float(f.derivative(0.0))) / 2.0, 0.95 * order_cap)
    for _ in range(60):
        try:
            extend_tilde(f, kap)
            return kap
        except ConstructionError:
            kap *= 0.8
    raise ConstructionError("no admissible kappa found")


@dataclass(frozen=True)
class PotentialData:
    """Potential pieces for the auxiliary energy.

    g(s) = -f~(1-s); G is its exact antiderivative with G(0) = 0;
    G_eps = eps^2 G.  kappa1 is the measured coercivity constant of -G and
    tau0 the radius around t=1 where G is exactly quadratic.
    """

    extension: ExtendedNonlinearity
    epsilon: float
    kappa1: float
    tau0: float

    def g(self, s):
        return -self.extension.evaluate(1.0 - np.asarray(s, dtype=float))

    def g_prime(self, s):
        return self.extension.derivative(1.0 - np.asarray(s, dtype=float))

    def G(self, t):
        t = np.asarray(t, dtype=float)
        anti = self.extension.antiderivative
        return anti(1.0 - t) - anti(1.0)

    def g_eps(self, s):
        return self.epsilon ** 2 * self.g(s)

    def G_eps(self, t):
        return self.epsilon ** 2 * self.G(t)

    @property
    def kappa(self):
        return self.extension.kappa


def make_potential(ext, epsilon, working_range=(-2.0, 2.0), samples=40001):
    """Assemble PotentialData; fails if -G is not coercive.

    kappa1 = min over sampled t != 0 of -G(t)/t^2 (must be positive);
    tau0 = largest radius around 1 where G(t) = G(1) - kappa (t-1)^2 / 2
    holds to 1e-10.
    """
    if ext.scale != 1.0:
        raise ConstructionError("make_potential expects the unscaled extension")
    pot = PotentialData(extension=ext, epsilon=float(epsilon), kappa1=0.0, tau0=0.0)
    t = np.linspace(working_range[0], working_range[1], samples)
    t = t[np.abs(t) > 1e-6]
    ratios = -pot.G(t) / t ** 2
    kappa1 = float(np.min(ratios))
    if kappa1 <= 0:
        raise ConstructionError(
            "potential not coercive (integral of the extension is not positive)"
        )
    kap = ext.kappa
    G1 = float(pot.G(1.0))

    def quad_ok(radius):
        tt = np.linspace(1.0 - radius, 1.0 + radius, 512)
        model = G1 - kap * (tt - 1.0) ** 2 / 2.0
        return np.max(np.abs(pot.G(tt) - model)) <= 1e-10

    lo_r, hi_r = 0.0, 2.0
    if quad_ok(hi_r):
        tau0 = hi_r
    else:
        for _ in range(60):
            mid = 0.5 * (lo_r + hi_r)
            if quad_ok(mid):
                lo_r = mid
            else:
                hi_r = mid
        tau0 = lo_r
    return PotentialData(extension=ext, epsilon=float(epsilon),
                         kappa1=kappa1, tau0=tau0)


def make_shifted(f, delta):
    """Downward-shifted reaction with zeros at -delta, theta, 1.

    f_delta(s) = f(s) - c (theta - s)^2 for s <= theta with c chosen so that
    f_delta(-delta) = 0; unchanged above theta.  Raises if any of the five
    admissibility conditions fails at this delta.
    """
    d = float(delta)
    if not 0.0 < d < 1.0:
        raise ConstructionError("delta must lie in (0, 1)")
    th = f.theta
    f_md = float(f.evaluate(-d))
    c = f_md / (th + d) ** 2
    base_eval, base_der = f.evaluate, f.derivative

    def evaluate(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= th, base_eval(s) - c * (th - s) ** 2, base_eval(s))

    def derivative(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= th, base_der(s) + 2.0 * c * (th - s), base_der(s))

    fd = Nonlinearity(evaluate, derivative, th, kind="shifted",
                      amplitude=f.amplitude, shift_delta=d)
    failures = []
    if abs(float(fd.evaluate(-d))) > 1e-12 or abs(float(fd.evaluate(1.0))) > 1e-12:
        failures.append("endpoint zeros missing")
    s = np.linspace(-d, 1.0, 20001)
    inner = s[(s > -d + 1e-9) & (s < th - 1e-9)]
    upper = s[(s > th + 1e-9) & (s < 1.0 - 1e-9)]
    if np.any(fd.evaluate(inner) >= 0) or np.any(fd.evaluate(upper) <= 0):
        failures.append("zero set in (-delta, 1) is not exactly {theta}")
    if float(fd.derivative(-d)) >= 0 or float(fd.derivative(1.0)) >= 0:
        failures.append("end slopes not negative")
    if np.max(fd.derivative(s)) >= 1.0:
        failures.append("f_delta' reaches 1")
    total = integrate.quad(lambda x: float(fd.evaluate(x)), -d, 1.0, limit=200)[0]
    if total <= 0:
        failures.append("integral over [-delta, 1] not positive")
    wide = np.linspace(-2.0, 3.0, 20001)
    if np.any(fd.evaluate(wide) - f.evaluate(wide) > 1e-12):
        failures.append("f_delta exceeds f somewhere")
    if failures:
        raise ConstructionError(f"no admissible shift at delta={d}: {failures}")
    return fd


def delta1_search(f, hi=0.5, iters=50):
    """Bisect for the supremum of admissible shift sizes."""

    def ok(d):
        try:
            make_shifted(f, d)
            return True
        except ConstructionError:
            return False

    lo = 0.0
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
