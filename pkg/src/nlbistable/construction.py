"""Ordered sub/super-solution pair for the obstacle problem.

Super-solution: solve the auxiliary problem on the truncation ball (state
pinned to 1 beyond it) through the constrained energy minimizer, then
extend outward with a steep controlled ramp  min{u(P(x)) + |x-P(x)|/sigma, 1}
where P projects onto the ball.  Sub-solution: compute the 1-d traveling
front of the shifted reaction and clip its profile to the half-space
{x1 > r0} that clears the obstacle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ConfigError,
    ConstructionError,
    ConvergenceError,
    WaveDirectionError,
)
from .energy import (
    delta0_from_data,
    minimize_in_ball,
    stationarity_residual,
    w0_indicator,
)
from .nonlocal_op import Field, apply_operator, residual

__all__ = [
    "AuxiliarySolution",
    "SuperSolution",
    "TravelingFront",
    "SubSolution",
    "coercivity_margin",
    "sigma_threshold",
    "solve_auxiliary",
    "extend_super_solution",
    "solve_front_1d",
    "embed_sub_solution",
    "residual_tolerance",
    "front_extent_estimate",
]


def residual_tolerance(spacing, grad_l1, epsilon):
    """Discretization slack for one-signed residual checks.

    2 h int|grad J| / eps + 1e-8: the translation bound on kernel shifts
    incurred by rasterizing the ramp extension; halves when h halves.
    """
    return 2.0 * spacing * grad_l1 / epsilon + 1e-8


def coercivity_margin(ctx, f_tilde_eps):
    """min over active cells and s in [0,1] of d/ds [ J(x) s - f~_eps(s) ].

    Positive exactly when the continuity condition holds; it feeds the
    admissible ramp slope of the extension.
    """
    s = np.linspace(0.0, 1.0, 2001)
    sup_fp = float(np.max(f_tilde_eps.derivative(s)))
    return ctx.min_mass() - sup_fp


def sigma_threshold(ctx, f_tilde_eps, grad_l1, epsilon):
    """Largest admissible ramp parameter sigma_eps = eps * margin / |grad J|_1."""
    margin = coercivity_margin(ctx, f_tilde_eps)
    if margin <= 0:
        raise ConstructionError(
            f"coercivity margin {margin:.3e} not positive: continuity "
            f"condition fails at epsilon={epsilon}"
        )
    return epsilon * margin / grad_l1


@dataclass
class AuxiliarySolution:
    """Solution of the truncated auxiliary problem and its provenance."""

    u: Field
    minimizer_report: object
    ktr_residual: float
    ball_radius: float


def solve_auxiliary(ectx, grad_tol=None, max_iter=100_000, residual_tol=None):
    """Solve the auxiliary problem via the constrained minimizer.

    Returns u = 1 - v.  Checks that v stayed strictly below 1 wherever the
    domain communicates with the pinned far region, strictly above 0 on the
    inner ball, and that the truncated-equation residual is small.
    """
    report = minimize_in_ball(ectx, w0_indicator(ectx), delta0_from_data(ectx),
                              grad_tol=grad_tol, max_iter=max_iter)
    v = report.minimizer.values
    op = ectx.op
    mask = op.mask
    r = ectx.domain.radius_field()
    ball = mask & (r < ectx.inner_radius)
    if np.any(v[ball] <= 0.0):
        raise ConstructionError("auxiliary state lost the inner ball")
    # strict v < 1 is only forced on components that see the far mass;
    # sealed components (multiply connected obstacles) may sit at 1 exactly
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    talks = np.unique(labels[mask & (op.cfar > 0)])
    communicating = np.isin(labels, talks) & mask
    if np.any(v[communicating] >= 1.0):
        raise ConstructionError(
            "auxiliary state touched 1 on a component that sees the far field"
        )
    u = np.where(mask, 1.0 - v, 0.0)
    stat = stationarity_residual(ectx, v)
    if residual_tol is None:
        residual_tol = max(100.0 * (report.grad_norm / ectx.cell_volume), 1e-7)
    if stat > residual_tol:
        raise ConstructionError(
            f"auxiliary residual {stat:.3e} exceeds tolerance {residual_tol:.3e}"
        )
    return AuxiliarySolution(
        u=Field(ectx.domain, u), minimizer_report=report,
        ktr_residual=stat, ball_radius=op.ball_radius,
    )


@dataclass
class SuperSolution:
    field: Field
    sigma: float
    sigma_eps: float
    ball_radius: float
    aux: AuxiliarySolution
    projected_values: np.ndarray = None

    def verify(self, ctx, f_eps, tol):
        """Max residual over reporting cells; must stay below +tol."""
        r = residual(ctx, self.field.values, f_eps)
        worst = float(np.max(r))
        return worst, worst <= tol


def extend_super_solution(aux, ctx, f_tilde_eps, grad_l1, epsilon, sigma=None):
    """Ramp the auxiliary solution up to 1 outside the truncation ball."""
    sig_eps = sigma_threshold(ctx, f_tilde_eps, grad_l1, epsilon)
    if sigma is None:
        sigma = 0.5 * sig_eps
    if not 0.0 < sigma < sig_eps:
        raise ConstructionError(
            f"sigma {sigma} outside the admissible range (0, {sig_eps:.6g})"
        )
    dom = ctx.domain
    R = aux.ball_radius
    h = dom.spacing
    rfield = dom.radius_field()
    uvals = aux.u.values
    out = np.where(dom.active, 1.0, 0.0)
    inside = dom.active & (rfield < R)
    out[inside] = uvals[inside]
    ring = dom.active & (rfield >= R)
    proj_vals = np.zeros(dom.shape)
    if np.any(ring):
        mesh = np.meshgrid(*dom.axes, indexing="ij")
        rr = rfield[ring]
        # project to just inside the truncation sphere, then snap to a cell
        scale = (R - h) / rr
        lo_idx = dom.lo_index
        idx = []
        for d in range(dom.dimension):
            coord = mesh[d][ring] * scale
            k = np.rint(coord / h - 0.5 - lo_idx[d]).astype(int)
            idx.append(np.clip(k, 0, dom.shape[d] - 1))
        pvals = uvals[tuple(idx)]
        proj_vals[ring] = pvals
        dist = rr - R
        out[ring] = np.minimum(pvals + dist / sigma, 1.0)
    return SuperSolution(
        field=Field(dom, out), sigma=float(sigma), sigma_eps=float(sig_eps),
        ball_radius=R, aux=aux, projected_values=proj_vals,
    )


@dataclass
class TravelingFront:
    """Monotone 1-d profile connecting -delta to 1 with measured speed."""

    x: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)
    speed: float = 0.0
    delta: float = 0.0
    phase_index: int = 0
    residual_max: float = 0.0

    def __call__(self, xq):
        return np.interp(xq, self.x, self.profile,
                         left=self.profile[0], right=self.profile[-1])


def marginal_kernel(stencil):
    """Collapse an N-d stencil onto the first axis (exact for 1-d states)."""
    return stencil.marginal_1d()


def _front_apply(psi, k_off, k_w):
    n = psi.size
    r = int(np.max(np.abs(k_off)))
    padded = np.empty(n + 2 * r)
    padded[r:r + n] = psi
    padded[:r] = psi[0]
    padded[r + n:] = psi[-1]
    out = np.zeros(n)
    for o, w in zip(k_off, k_w):
        out += w * padded[r + o:r + o + n]
    return out - psi


def solve_front_1d(f_delta_eps, stencil, half_width, profile_tol=1e-12,
                   max_steps=400_000, residual_tol=None):
    """Phase-pinned relaxation for the 1-d wave profile.

    ``f_delta_eps`` is the rescaled shifted reaction (zeros -delta, theta, 1);
    the 1-d kernel is the marginal of the N-d stencil.  The profile is
    re-centered every step so its zero crossing stays at x = 0; the speed is
    the average re-centering drift per unit time.  Raises WaveDirectionError
    when that drift is not positive.
    """
    h = stencil.spacing
    k_off, k_w = marginal_kernel(stencil)
    delta = float(getattr(f_delta_eps, "shift_delta", 0.0))
    if delta <= 0.0:
        raise ConstructionError("front solver needs a shifted reaction")
    m = int(math.ceil(half_width / h))
    x = np.arange(-m, m + 1) * h
    rad = int(np.max(np.abs(k_off)))
    psi = -delta + (1.0 + delta) * 0.5 * (1.0 + np.tanh(x))
    sup_dfp = float(np.max(np.abs(
        f_delta_eps.derivative(np.linspace(-delta - 0.1, 1.1, 3001))
    )))
    dt = 0.9 / (1.0 + sup_dfp)

    def repin(p):
        sign = p >= 0.0
        if not sign.any() or sign.all():
            return p, 0.0
        i = int(np.argmax(sign))
        if i == 0 or p[i] - p[i - 1] <= 0.0:
            return p, 0.0
        x0 = x[i - 1] - p[i - 1] * h / (p[i] - p[i - 1])
        if x0 == 0.0:
            return p, 0.0
        newp = np.interp(x + x0, x, p, left=-delta, right=1.0)
        return newp, x0

    drift = 0.0
    time_abs = 0.0
    stable = 0
    converged = False
    for step in range(max_steps):
        upd = psi + dt * (_front_apply(psi, k_off, k_w)
                          + f_delta_eps.evaluate(psi))
        upd[:rad + 1] = -delta
        upd[-rad - 1:] = 1.0
        upd, x0 = repin(upd)
        drift += x0
        time_abs += dt
        change = float(np.max(np.abs(upd - psi)))
        psi = upd
        if change < profile_tol:
            stable += 1
            if stable >= 10:
                converged = True
                break
        else:
            stable = 0
    if not converged:
        raise ConvergenceError("front relaxation did not converge")
    speed = -drift / time_abs
    if speed <= 0.0:
        raise WaveDirectionError(
            f"front speed estimate {speed:.3e} not positive: the shifted "
            "reaction has no invading wave (integral not positive enough)"
        )
    dpsi = np.gradient(psi, x)
    res = _front_apply(psi, k_off, k_w) + f_delta_eps.evaluate(psi) - speed * dpsi
    interior = slice(rad + 2, psi.size - rad - 2)
    res_max = float(np.max(np.abs(res[interior])))
    if residual_tol is None:
        residual_tol = max(1e-6, 10.0 * speed * h)
    if res_max > residual_tol:
        raise ConstructionError(
            f"front residual {res_max:.3e} exceeds tolerance {residual_tol:.3e}"
        )
    if np.any(np.diff(psi) < -1e-12):
        raise ConstructionError("front profile lost monotonicity")
    if abs(psi[0] + delta) > 1e-3 or abs(psi[-1] - 1.0) > 1e-3:
        raise ConstructionError("front endpoints missed their limits")
    return TravelingFront(
        x=x, profile=psi, speed=float(speed), delta=float(delta),
        phase_index=m, residual_max=res_max,
    )


@dataclass
class SubSolution:
    field: Field
    r0: float
    front: TravelingFront

    def verify(self, ctx, f_eps, tol):
        """Min residual over reporting cells; must stay above -tol."""
        r = residual(ctx, self.field.values, f_eps)
        worst = float(np.min(r))
        return worst, worst >= -tol


def front_extent_estimate(theta, amplitude, m2, tail=1e-3):
    """Distance from the front's zero crossing to the 1 - tail level.

    Exponential tail rate sqrt(2 a (1-theta) / m2) plus two core widths;
    used to size boxes so the clipped front reaches its limit inside them.
    """
    lam = math.sqrt(2.0 * amplitude * (1.0 - theta) / m2)
    width = math.sqrt(m2 / (2.0 * amplitude * theta * (1.0 - theta)))
    return math.log(0.5 / tail) / lam + 2.0 * width


def embed_sub_solution(front, ctx, super_solution, f_eps, r0=None,
                       r0_step=0.25, edge_tol=1e-3):
    """Clip the shifted front into the domain: u(x) = max{0, phi(x1 - r0)}.

    r0 must clear the obstacle by one kernel support (so the positive part
    of the state never talks to obstructed cells) and is swept upward until
    the clipped front sits below the super-solution everywhere.
    """
    dom = ctx.domain
    h = dom.spacing
    stencil = ctx.stencil
    support = stencil.support_radius
    x1 = dom.axes[0]
    inactive_x1_max = -math.inf
    if np.any(~dom.active):
        cols = np.any(~dom.active, axis=tuple(range(1, dom.dimension)))
        inactive_x1_max = float(np.max(x1[cols]))
    r0_min = inactive_x1_max + support + h
    lo, hi = dom.bounds
    if r0 is None:
        r0 = r0_min
    if r0 < r0_min:
        raise ConstructionError(
            f"r0={r0} leaves the dilated half-space touching the obstacle "
            f"(need r0 >= {r0_min:.6g})"
        )
    sup_vals = super_solution.field.values
    while True:
        # snap up to the cell-center lattice so front values transfer exactly
        # without eroding the obstacle clearance
        r0_snapped = (math.ceil(r0 / h - 0.5 - 1e-12) + 0.5) * h
        prof = front(x1 - r0_snapped)
        col = np.maximum(0.0, prof)
        vals = np.broadcast_to(
            col.reshape((-1,) + (1,) * (dom.dimension - 1)), dom.shape
        ).copy()
        vals[~dom.active] = 0.0
        gap = sup_vals - vals
        if np.all(gap[dom.active] >= 0.0):
            break
        r0 += r0_step
        if r0 > hi[0] - support:
            raise ConfigError(
                "no r0 places the clipped front below the super-solution "
                "inside this box"
            )
    edge_vals = vals[-1][dom.active[-1]] if dom.active[-1].any() else None
    if edge_vals is None or np.min(edge_vals) < 1.0 - edge_tol:
        raise ConfigError(
            "box too short along the channel axis: the clipped front does "
            f"not reach 1 - {edge_tol} at the far edge"
        )
    return SubSolution(field=Field(dom, vals), r0=float(r0_snapped), front=front)
