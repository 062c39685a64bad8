"""Auxiliary energy on the truncated domain and its constrained minimizer.

The functional is
    E(w) = 1/4 sum_xy w(x,y) (w_x - w_y)^2 h^N
         + 1/2 sum_x c(x) w_x^2 h^N  -  sum_x G_eps(w_x) h^N
over the truncation ball minus the obstacle.  Its stationary points solve
the auxiliary problem; a local minimizer is sought inside an L^2 ball of
radius delta0 around the inner-ball indicator w0, by projected gradient
descent (clamp to [0,1], then radial projection).  A minimizer that ends on
the constraint sphere invalidates the construction and raises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BarrierViolationError,
    ConfigError,
    ConstructionError,
    ConvergenceError,
)
from .nonlocal_op import Field, apply_best, apply_operator, _values

__all__ = [
    "EnergyContext",
    "MinimizerReport",
    "make_energy_context",
    "w0_indicator",
    "delta0_from_data",
    "energy",
    "energy_gradient",
    "stationarity_residual",
    "minimize_in_ball",
    "poincare_diagnostic",
]


@dataclass
class EnergyContext:
    """Truncated operator context plus potential data.

    ``op`` must come from :func:`nonlocal_op.restrict_to_ball` (it carries
    the far-mass field c).  ``inner_radius`` is the radius of the ball whose
    indicator seeds the minimization.
    """

    op: object
    potential: object
    epsilon: float
    inner_radius: float

    @property
    def domain(self):
        return self.op.domain

    @property
    def cell_volume(self):
        return self.op.domain.spacing ** self.op.domain.dimension

    def l2_norm(self, w):
        vals = _values(w)
        return math.sqrt(float(np.sum(vals[self.op.mask] ** 2)) * self.cell_volume)


def make_energy_context(truncated_ctx, potential, inner_radius):
    if truncated_ctx.cfar is None:
        raise ConfigError("energy context needs a ball-truncated operator")
    eps = potential.epsilon
    # continuity condition: the nonlinear part must stay below the mass
    # function, otherwise solutions of the auxiliary problem need not be
    # continuous and the convexity trick in the minimization breaks.
    sup_gp = float(np.max(potential.g_prime(np.linspace(-1.0, 2.0, 4001))))
    min_mass = truncated_ctx.min_mass()
    if eps ** 2 * sup_gp >= min_mass:
        raise ConfigError(
            f"continuity condition violated: eps^2 sup g' = "
            f"{eps ** 2 * sup_gp:.3e} >= min mass {min_mass:.3e}"
        )
    return EnergyContext(
        op=truncated_ctx, potential=potential,
        epsilon=float(eps), inner_radius=float(inner_radius),
    )


def w0_indicator(ectx):
    """Indicator of the inner ball, as a field on the truncated domain."""
    r = ectx.domain.radius_field()
    vals = np.where(ectx.op.mask & (r < ectx.inner_radius), 1.0, 0.0)
    return Field(ectx.domain, vals)


def ball_measure(ectx):
    r = ectx.domain.radius_field()
    count = int(np.sum(ectx.op.mask & (r < ectx.inner_radius)))
    return count * ectx.cell_volume


def delta0_from_data(ectx):
    """Constraint radius min{theta/4, C0/kappa, tau0/2} |B|^(1/2).

    C0 is the maximum of the base reaction on [0,1]; the discrete ball
    measure is used so the radius is consistent with the grid norms.
    """
    pot = ectx.potential
    base = pot.extension.base
    s = np.linspace(0.0, 1.0, 20001)
    c0 = float(np.max(base.evaluate(s)))
    factor = min(base.theta / 4.0, c0 / pot.kappa, pot.tau0 / 2.0)
    return factor * math.sqrt(ball_measure(ectx))


def _dirichlet(ectx, vals):
    """1/4 sum_xy w (w_x - w_y)^2 h^N  ==  1/2 (sum J w^2 - sum w (W w)) h^N."""
    op = ectx.op
    masked = np.where(op.mask, vals, 0.0)
    gathered = apply_best(op, masked) + op.jmass * masked  # = (W w)(x)
    quad = float(np.sum(op.jmass * masked ** 2) - np.sum(masked * gathered))
    return 0.5 * quad * ectx.cell_volume


def energy(ectx, w):
    """Total energy of a state on the truncated domain."""
    op = ectx.op
    vals = _values(w)
    masked = np.where(op.mask, vals, 0.0)
    e = _dirichlet(ectx, vals)
    e += 0.5 * float(np.sum(op.cfar[op.mask] * masked[op.mask] ** 2)) * ectx.cell_volume
    e -= float(np.sum(ectx.potential.G_eps(masked[op.mask]))) * ectx.cell_volume
    return e


def _gradient_core(ectx, vals):
    """-(Lw) + c w - g_eps(w) on the truncated set (unscaled by volume)."""
    op = ectx.op
    lw = apply_best(op, vals)
    out = -lw + op.cfar * vals - ectx.potential.g_eps(vals)
    out[~op.mask] = 0.0
    return out


def energy_gradient(ectx, w):
    """Cell-volume-scaled gradient; zero exactly at auxiliary solutions."""
    vals = _values(w)
    out = _gradient_core(ectx, vals) * ectx.cell_volume
    return Field(ectx.domain, out) if isinstance(w, Field) else out


def stationarity_residual(ectx, w):
    """Max-norm of the unscaled stationarity defect on the truncated set."""
    vals = _values(w)
    return float(np.max(np.abs(_gradient_core(ectx, vals))))


@dataclass
class MinimizerReport:
    minimizer: Field
    energy_value: float
    dist_to_w0: float
    iterations: int
    converged: bool
    boundary_contact: bool
    grad_norm: float
    diagnostics: dict = field(default_factory=dict)


def _project(ectx, vals, w0_vals, delta0):
    """Clamp to [0,1], then radial projection onto the delta0-ball."""
    vals = np.clip(vals, 0.0, 1.0)
    diff = vals - w0_vals
    dist = math.sqrt(float(np.sum(diff[ectx.op.mask] ** 2)) * ectx.cell_volume)
    on_sphere = False
    if dist > delta0:
        vals = w0_vals + diff * (delta0 / dist)
        on_sphere = True
    return vals, min(dist, delta0), on_sphere


def minimize_in_ball(ectx, w0, delta0, grad_tol=None, max_iter=100_000,
                     stall_window=200):
    """Projected gradient descent trapped in the delta0-ball around w0.

    Stops when the projected stationarity defect falls below ``grad_tol``
    (default 1e-9 eps^2, matching the eps^2 scaling of the gradient).
    Raises BarrierViolationError when the iterate converges on the
    constraint sphere: the local-minimizer construction is invalid there,
    which signals that the scale parameter is too large for this geometry.
    """
    op = ectx.op
    eps = ectx.epsilon
    if grad_tol is None:
        grad_tol = 1e-9 * eps ** 2
    if delta0 >= math.sqrt(ball_measure(ectx)):
        raise ConfigError("delta0 must stay below the ball-indicator norm")
    w0_vals = _values(w0)
    vals = w0_vals.copy()
    sup_gp = float(
        np.max(np.abs(ectx.potential.g_prime(np.linspace(-1.0, 2.0, 4001))))
    )
    base_step = 1.0 / (2.0 + eps ** 2 * sup_gp)
    e_cur = energy(ectx, vals)
    sphere_streak = 0
    on_sphere = False
    dist = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        core = _gradient_core(ectx, vals)
        # projected defect: clamped cells only count when pushing inward
        pg = core.copy()
        low = vals <= 0.0
        high = vals >= 1.0
        pg[low] = np.minimum(pg[low], 0.0)
        pg[high] = np.maximum(pg[high], 0.0)
        gnorm = float(np.max(np.abs(pg[op.mask]))) if np.any(op.mask) else 0.0
        if gnorm <= grad_tol and not on_sphere:
            report = _finish(ectx, vals, w0_vals, e_cur, dist, it, True,
                             False, gnorm, delta0)
            return report
        step = base_step
        accepted = False
        for _ in range(40):
            cand, dist_c, sphere_c = _project(
                ectx, vals - step * core, w0_vals, delta0
            )
            e_new = energy(ectx, cand)
            if e_new <= e_cur + 1e-12:
                accepted = True
                break
            step *= 0.5
        if not accepted or not math.isfinite(e_new):
            raise ConvergenceError(
                "energy descent stalled without reaching stationarity"
            )
        moved = float(np.max(np.abs(cand - vals)))
        decrease = e_cur - e_new
        vals, e_cur, dist, on_sphere = cand, e_new, dist_c, sphere_c
        if on_sphere:
            sphere_streak += 1
            if sphere_streak >= stall_window and (
                decrease < 1e-15 or moved < 1e-14
            ):
                _raise_barrier(ectx, dist, delta0, it)
        else:
            sphere_streak = 0
    if on_sphere:
        _raise_barrier(ectx, dist, delta0, it)
    raise ConvergenceError(
        f"minimizer did not converge in {max_iter} iterations "
        f"(grad norm {gnorm:.3e} > {grad_tol:.3e})"
    )


def _raise_barrier(ectx, dist, delta0, it):
    raise BarrierViolationError(
        f"constrained minimizer pinned on the sphere |w - w0| = {delta0:.6g} "
        f"after {it} iterations: no interior local minimizer at "
        f"epsilon = {ectx.epsilon} (scale too large for this obstacle)"
    )


def _finish(ectx, vals, w0_vals, e_cur, dist, it, converged, contact,
            gnorm, delta0):
    pot = ectx.potential
    base = pot.extension.base
    s = np.linspace(0.0, 1.0, 20001)
    c0 = float(np.max(base.evaluate(s)))
    kappa0 = min(pot.kappa / 2.0, c0 / base.theta)
    kbar = min(kappa0, pot.kappa1)
    diag = {
        "kappa0": kappa0,
        "kappa1": pot.kappa1,
        "delta0": delta0,
        "tau0": pot.tau0,
        "c_star": 0.5 * kbar * delta0 ** 2,
        "coupling_w0": _coupling(ectx, w0_vals),
        "retention": ectx.epsilon ** 2 * pot.kappa * ball_measure(ectx),
    }
    return MinimizerReport(
        minimizer=Field(ectx.domain, vals), energy_value=e_cur,
        dist_to_w0=dist, iterations=it, converged=converged,
        boundary_contact=contact, grad_norm=gnorm, diagnostics=diag,
    )


def _coupling(ectx, w0_vals):
    """Dirichlet interaction of the ball indicator with its complement."""
    op = ectx.op
    r = ectx.domain.radius_field()
    inner = op.mask & (r < ectx.inner_radius) & (w0_vals > 0.5)
    outer = op.mask & ~inner
    ind = np.where(inner, 1.0, 0.0)
    reach = apply_best(op, ind) + op.jmass * ind
    return 0.5 * float(np.sum(reach[outer])) * ectx.cell_volume


def poincare_diagnostic(ectx, r0, n_fields=50, rng=None, include_bound_factor=1.1):
    """Spectral-gap check of the kernel Dirichlet form on the inner ball.

    For zero-mean fields h on the ball, compares |h|^2 against the
    quadratic form II = 1/4 sum w (h_x - h_y)^2 h^N restricted to the ball;
    the admissible bound is 8 A0 / (K M2 eps^2) with A0 = 4 r0^2 / pi^2 and
    K = 1/N.  Returns the measured max ratio and the bound.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    op = ectx.op
    dom = ectx.domain
    r = dom.radius_field()
    ball = op.mask & (r < r0)
    nb = int(ball.sum())
    if nb < 8:
        raise ConfigError("inner ball too coarse for the diagnostic")
    hvol = ectx.cell_volume
    stencil = ectx.op.stencil
    m2_eps = stencil.second_moment()
    eps = ectx.epsilon
    m2_base = m2_eps / eps ** 2
    n = dom.dimension
    a0 = 4.0 * r0 ** 2 / math.pi ** 2
    bound = 8.0 * a0 / ((1.0 / n) * m2_base * eps ** 2)

    ratios = []
    sub_ctx = ectx.op
    jball = _reach_within(sub_ctx, ball)
    for k in range(n_fields):
        h = np.zeros(dom.shape)
        h[ball] = rng.standard_normal(nb)
        h[ball] -= h[ball].mean()
        # Dirichlet form over the ball only
        masked = np.where(ball, h, 0.0)
        gathered = apply_best(sub_ctx, masked) + sub_ctx.jmass * masked
        quad = float(np.sum(jball * masked ** 2) - np.sum(masked * gathered * ball))
        ii = 0.5 * quad * hvol
        l2 = float(np.sum(masked[ball] ** 2)) * hvol
        if ii > 0:
            ratios.append(l2 / ii)
    measured = float(np.max(ratios))
    return {
        "measured_max_ratio": measured,
        "bound": bound,
        "passes": measured <= include_bound_factor * bound,
        "n_fields": len(ratios),
        "r0": r0,
        "epsilon": eps,
    }


def _reach_within(op_ctx, region):
    """Per-cell weight reaching ``region``, zeroed outside it."""
    from .nonlocal_op import _indicator_gather

    out = _indicator_gather(region, op_ctx.stencil)
    if op_ctx.correction is not None:
        flat = region.ravel().astype(float)
        out = out + (op_ctx.correction @ flat).reshape(region.shape)
    out[~region] = 0.0
    return out
