"""Monotone iteration between ordered sub/super-solutions and certification.

Each outer step solves  (J(x) + k) u_+(x) - sum_y w(x,y) u_+(y)
                          = k u(x) + f_eps(u(x))      on free cells,
a strictly diagonally dominant system, by damped Jacobi sweeps warm-started
at the current iterate.  Truncating the sweeps early is safe: starting from
a super-solution every partial Jacobi state remains a super-solution and
the outer sequence stays monotone, so the sandwich
    sub <= u_{j+1} <= u_j <= super
holds exactly at every iteration regardless of inner tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import CertificationError, ConfigError, ConvergenceError
from .nonlocal_op import Field, _values, apply_best, residual

__all__ = [
    "IterationState",
    "SteadyStateReport",
    "ComparisonVerdict",
    "monotone_iterate",
    "comparison_check",
    "certify_solution",
    "jacobi_solve",
]


@dataclass
class IterationState:
    k: float
    iteration: int = 0
    decrements: list = field(default_factory=list)
    inner_sweeps: list = field(default_factory=list)


@dataclass
class SteadyStateReport:
    residual_max: float
    iterations: int
    converged: bool
    min_value: float
    max_value: float
    far_ring_mean: float
    liouville_flag: bool
    classification_tol: float
    continuity_margin: float
    max_adjacent_jump: float
    region_stats: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _check_k(k, f_eps):
    s = np.linspace(0.0, 1.0, 4001)
    dvals = f_eps.derivative(s)
    need = float(np.max(np.abs(dvals)))
    if k <= 0 or k < need:
        raise ConfigError(
            f"monotone shift k={k} must be positive and at least "
            f"sup |f_eps'| = {need:.6g} so s -> -ks - f(s) is decreasing"
        )


def monotone_iterate(ctx, f_eps, sub, super_, k=1.0, outer_tol=None,
                     lin_tol=1e-12, max_outer=200_000, max_inner=60,
                     sandwich_tol=1e-10, callback=None):
    """Iterate downward from the super-solution; returns (u, state).

    The sandwich is asserted cellwise at every outer step.  Convergence:
    max-norm decrement below ``outer_tol`` (default 1e-10 times the field
    range).  The final state is *not* certified here; call
    :func:`certify_solution`.
    """
    _check_k(k, f_eps)
    sub_v = _values(sub)
    sup_v = _values(super_)
    free = ctx.report_mask
    pinned = ctx.mask & ~free
    if np.any(sub_v[ctx.mask] > sup_v[ctx.mask] + 1e-14):
        raise ConfigError("sub/super pair is not ordered")
    rng_scale = max(float(np.max(sup_v[ctx.mask]) - np.min(sub_v[ctx.mask])), 1e-30)
    if outer_tol is None:
        outer_tol = 1e-10 * rng_scale
    u = sup_v.copy()
    u[~ctx.mask] = 0.0
    state = IterationState(k=float(k))
    denom = ctx.jmass + k
    prev_decrement = math.inf
    for j in range(1, max_outer + 1):
        rhs = k * u + f_eps.evaluate(u)
        v = u.copy()
        sweeps = 0
        # Damped Jacobi on (J + k) v - W v = rhs, warm start at u.  Early
        # truncation is admissible (every partial state stays a
        # super-solution), so the inner tolerance tracks the outer progress.
        inner_goal = max(lin_tol, 0.05 * min(prev_decrement, 1.0))
        while sweeps < max_inner:
            gather = apply_best(ctx, v) + ctx.jmass * v   # = (W v)(x)
            v_new = (rhs + gather) / denom
            v_new[pinned] = u[pinned]
            v_new[~ctx.mask] = 0.0
            sweeps += 1
            delta_in = float(np.max(np.abs(v_new - v)[free])) if free.any() else 0.0
            v = v_new
            if delta_in <= inner_goal:
                break
        decrement = float(np.max(np.abs(v - u)[free])) if free.any() else 0.0
        low = np.min((v - sub_v)[ctx.mask]) if ctx.mask.any() else 0.0
        high = np.min((u - v)[ctx.mask]) if ctx.mask.any() else 0.0
        if low < -sandwich_tol or high < -sandwich_tol:
            raise ConvergenceError(
                f"monotone sandwich violated at iteration {j} "
                f"(below sub by {max(0.0, -low):.3e}, "
                f"above previous by {max(0.0, -high):.3e})"
            )
        u = v
        prev_decrement = decrement
        state.iteration = j
        state.decrements.append(decrement)
        state.inner_sweeps.append(sweeps)
        if callback is not None:
            callback(j, u, decrement)
        if decrement <= outer_tol:
            return Field(ctx.domain, u), state
    raise ConvergenceError(
        f"monotone iteration did not converge in {max_outer} outer steps "
        f"(last decrement {state.decrements[-1]:.3e})"
    )


def jacobi_solve(ctx, rhs, k, tol=1e-12, max_sweeps=10_000, record=None):
    """Solve (J + k) v - W v = rhs on the mask by plain Jacobi from zero.

    Returns the solution; when ``record`` is a list the max-norm residual
    after each sweep is appended (used to measure the contraction factor).
    """
    denom = ctx.jmass + k
    v = np.zeros(ctx.domain.shape)
    for _ in range(max_sweeps):
        gather = apply_best(ctx, v) + ctx.jmass * v
        v_new = (rhs + gather) / denom
        v_new[~ctx.mask] = 0.0
        res = float(np.max(np.abs((v_new - v) * denom)[ctx.mask]))
        if record is not None:
            record.append(res)
        v = v_new
        if res <= tol:
            return v
    raise ConvergenceError("Jacobi solve did not reach tolerance")


@dataclass
class ComparisonVerdict:
    hypothesis_ok: bool
    conclusion_ok: bool
    witness: tuple = None
    max_w: float = 0.0
    min_operator: float = 0.0

    @property
    def consistent(self):
        return (not self.hypothesis_ok) or self.conclusion_ok


def comparison_check(ctx, w, k, hypothesis_tol=-1e-12, conclusion_tol=1e-10):
    """Comparison-principle check: Lw - kw >= 0 plus w <= 0 on the far
    collar must force w <= 0 everywhere.

    Returns a verdict; when the operator hypothesis fails, ``witness`` names
    a violating cell.
    """
    if k <= 0:
        raise ConfigError("comparison shift k must be positive")
    vals = _values(w)
    far = ctx.mask & ~ctx.report_mask
    if far.any() and float(np.max(vals[far])) > 1e-12:
        raise ConfigError("comparison check requires w <= 0 on the far collar")
    lw = apply_best(ctx, vals) - k * vals
    lw[~ctx.report_mask] = 0.0
    min_op = float(np.min(lw[ctx.report_mask]))
    hypothesis_ok = min_op >= hypothesis_tol
    witness = None
    if not hypothesis_ok:
        flat = np.where(ctx.report_mask, lw, np.inf)
        witness = tuple(int(i) for i in
                        np.unravel_index(np.argmin(flat), flat.shape))
    max_w = float(np.max(vals[ctx.mask]))
    conclusion_ok = max_w <= conclusion_tol
    return ComparisonVerdict(
        hypothesis_ok=hypothesis_ok, conclusion_ok=conclusion_ok,
        witness=witness, max_w=max_w, min_operator=min_op,
    )


def _far_ring(ctx):
    """Outermost layer of free (active, non-pinned) cells."""
    dom = ctx.domain
    free = ctx.report_mask
    mesh = np.meshgrid(*dom.axes, indexing="ij")
    blo, bhi = dom.bounds
    edge_dist = np.min(
        [m - blo[d] for d, m in enumerate(mesh)]
        + [bhi[d] - m for d, m in enumerate(mesh)],
        axis=0,
    )
    masked = np.where(free, edge_dist, np.inf)
    dmin = float(np.min(masked))
    return free & (edge_dist < dmin + dom.spacing * 0.75)


def certify_solution(ctx, u, f_eps, tol, classification_tol=1e-3,
                     labels=None, converged=True, require=False):
    """Residual, far-field attainment, continuity margin, region stats.

    ``tol`` is the discretization-scaled residual tolerance.  The flag
    ``liouville_flag`` records whether the state is indistinguishable from
    the constant 1 at ``classification_tol``.
    """
    vals = _values(u)
    r = residual(ctx, vals, f_eps)
    res_max = float(np.max(np.abs(r)))
    free = ctx.report_mask
    ring = _far_ring(ctx)
    ring_mean = float(np.mean(vals[ring])) if ring.any() else math.nan
    min_v = float(np.min(vals[free]))
    max_v = float(np.max(vals[free]))
    s = np.linspace(0.0, 1.0, 4001)
    margin = ctx.min_mass() - float(np.max(f_eps.derivative(s)))
    jump = 0.0
    for axis in range(ctx.domain.dimension):
        fw = np.take(free, range(1, free.shape[axis]), axis=axis) & \
            np.take(free, range(0, free.shape[axis] - 1), axis=axis)
        dv = np.abs(np.diff(vals, axis=axis))
        if fw.any():
            jump = max(jump, float(np.max(dv[fw])))
    stats = {}
    if labels is not None:
        for code, name in ((1, "inner_ball"), (2, "channel"), (3, "outer_field")):
            zone = (labels == code) & free
            if zone.any():
                stats[name] = {
                    "min": float(np.min(vals[zone])),
                    "mean": float(np.mean(vals[zone])),
                    "max": float(np.max(vals[zone])),
                }
    report = SteadyStateReport(
        residual_max=res_max,
        iterations=0,
        converged=bool(converged),
        min_value=min_v,
        max_value=max_v,
        far_ring_mean=ring_mean,
        liouville_flag=bool(min_v >= 1.0 - classification_tol),
        classification_tol=float(classification_tol),
        continuity_margin=float(margin),
        max_adjacent_jump=float(jump),
        region_stats=stats,
    )
    if require and res_max > tol:
        raise CertificationError(
            f"residual {res_max:.3e} exceeds certification tolerance {tol:.3e}"
        )
    report.notes["certification_tol"] = float(tol)
    report.notes["residual_ok"] = bool(res_max <= tol)
    return report
