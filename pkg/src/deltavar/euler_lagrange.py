"""First-order stationarity residuals and the exact finite-dimensional gradient.

For a composite functional H(F_1, ..., F_n) on a finite scale the value is a
smooth function of the sample values x_0..x_{N-1}; the decision variables
are all interior samples plus any free endpoint.  The chain rule gives the
exact gradient, and the classical residuals follow from it:

* interior point t_j:  d(value)/dx_j = -mu(rho(t_j)) * EL(rho(t_j)), where
  EL(t) = sum_i H'_i(F) * (f_iv^Delta(t) - f_iy(t)) is the Euler-Lagrange
  expression sampled along the trajectory;
* free left endpoint:  d(value)/dx_a = -sum_i H'_i(F) * f_iv(a);
* free right endpoint: d(value)/dx_b = +sum_i H'_i(F) *
  (f_iv(rho(b)) + mu(rho(b)) * f_iy(rho(b))).

Those identities make a vanishing gradient a certificate for the
Euler-Lagrange equation at every interior point together with the natural
boundary conditions at free endpoints.  The constancy-of-motion quantity
E(t) = sum_i H'_i * (f_iv(t) - integral_a^t f_iy) is exposed as a further
stationarity diagnostic: its spread over the kappa points vanishes at
stationary trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .functional import (
    BoundarySpec,
    CompositeFunctional,
    Trajectory,
    inner_values,
)
from .timescale import TimeScale

__all__ = [
    "IsoConstraint",
    "ProblemSpec",
    "ResidualReport",
    "EndpointNotFree",
    "BothMultipliersZero",
    "decision_indices",
    "embed_decision",
    "extract_decision",
    "el_residual",
    "natural_bc_left",
    "natural_bc_right",
    "functional_gradient",
    "functional_hessian",
    "hessian_parts",
    "constraint_gradient",
    "constraint_hessian",
    "dubois_reymond_quantity",
    "isoperimetric_residual",
    "residual_report",
]


class EndpointNotFree(ValueError):
    """A natural boundary condition was requested at a fixed endpoint."""


class BothMultipliersZero(ValueError):
    """The multiplier pair (lambda0, lambda) must not be identically zero."""


@dataclass(frozen=True)
class IsoConstraint:
    """An isoperimetric side condition: P(G_1[x], ..., G_m[x]) = target."""

    functional: CompositeFunctional
    target: float


@dataclass(frozen=True)
class ProblemSpec:
    """A variational problem: scale, objective, boundary data, optional constraint."""

    ts: TimeScale
    lagrangian: CompositeFunctional
    bc: BoundarySpec
    constraint: Optional[IsoConstraint] = None

    def __post_init__(self):
        if self.constraint is not None and not (
            self.bc.left_fixed and self.bc.right_fixed
        ):
            raise ValueError(
                "isoperimetric problems require both endpoint values fixed"
            )


@dataclass(frozen=True)
class ResidualReport:
    """Stationarity residuals for one trajectory.

    ``el`` holds the Euler-Lagrange residual at the first kappa_count - 1
    points (the last kappa point is dropped because the residual there would
    reference the delta derivative at the maximum, which does not exist on a
    finite scale).  ``nat_left``/``nat_right`` are None at fixed endpoints.
    """

    el: np.ndarray
    nat_left: Optional[float]
    nat_right: Optional[float]
    dr_constancy_spread: float

    @property
    def el_max(self) -> float:
        return float(np.max(np.abs(self.el))) if self.el.size else 0.0

    @property
    def max_residual(self) -> float:
        worst = self.el_max
        for v in (self.nat_left, self.nat_right):
            if v is not None:
                worst = max(worst, abs(v))
        return worst


# -- decision-variable bookkeeping -------------------------------------------


def decision_indices(spec: ProblemSpec) -> np.ndarray:
    """Indices of the sample values the solver may move (always contiguous)."""
    n = len(spec.ts)
    lo = 0 if not spec.bc.left_fixed else 1
    hi = n - 1 if not spec.bc.right_fixed else n - 2
    return np.arange(lo, hi + 1)


def embed_decision(spec: ProblemSpec, z) -> Trajectory:
    """Expand a decision vector into a full trajectory (fixed ends filled in)."""
    idx = decision_indices(spec)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != idx.size:
        raise ValueError(f"expected {idx.size} decision values, got {z.size}")
    x = np.empty(len(spec.ts))
    x[idx] = z
    if spec.bc.left_fixed:
        x[0] = spec.bc.left
    if spec.bc.right_fixed:
        x[-1] = spec.bc.right
    return Trajectory(spec.ts, x)


def extract_decision(spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    """The decision sub-vector of a trajectory's samples."""
    return tr.x[decision_indices(spec)].copy()


# -- sampled partial derivatives ----------------------------------------------


def _first_partials(F: CompositeFunctional, tr: Trajectory):
    """(F values, H' weights, f_iy samples, f_iv samples) along the trajectory."""
    from .functional import _integrand_bindings, _sampled
    from .expr import evaluate

    b = _integrand_bindings(tr)
    t = b["t"]
    us = inner_values(F, tr)
    w = F.outer_gradient(us)
    fy = [_sampled(evaluate(g, b), t) for g in F.inner_y]
    fv = [_sampled(evaluate(g, b), t) for g in F.inner_v]
    return us, w, fy, fv


def _second_partials(F: CompositeFunctional, tr: Trajectory):
    from .functional import _integrand_bindings, _sampled
    from .expr import evaluate

    b = _integrand_bindings(tr)
    t = b["t"]
    inner_yy, inner_yv, inner_vv, _ = F.second_partials
    fyy = [_sampled(evaluate(g, b), t) for g in inner_yy]
    fyv = [_sampled(evaluate(g, b), t) for g in inner_yv]
    fvv = [_sampled(evaluate(g, b), t) for g in inner_vv]
    return fyy, fyv, fvv


# -- residuals ------------------------------------------------------------------


def el_residual(
    spec: ProblemSpec, tr: Trajectory, functional: CompositeFunctional | None = None
) -> np.ndarray:
    """Euler-Lagrange residual sum_i H'_i (f_iv^Delta - f_iy) on the kappa points.

    The delta derivative of f_iv is taken along the trajectory, so the
    residual is computable at indices 0..N-3 of an N-point scale; the vector
    has ``kappa_count() - 1`` entries.
    """
    F = functional if functional is not None else spec.lagrangian
    _, w, fy, fv = _first_partials(F, tr)
    steps = tr.ts.steps
    n_eval = len(spec.ts) - 2
    res = np.zeros(n_eval)
    for i in range(F.n):
        res += w[i] * ((fv[i][1:] - fv[i][:-1]) / steps[:-1] - fy[i][:-1])
    return res


def natural_bc_left(spec: ProblemSpec, tr: Trajectory) -> float:
    """Transversality residual sum_i H'_i f_iv(a) for a free left endpoint."""
    if spec.bc.left_fixed:
        raise EndpointNotFree("left endpoint is fixed; no natural condition applies")
    _, w, _, fv = _first_partials(spec.lagrangian, tr)
    return float(sum(w[i] * fv[i][0] for i in range(spec.lagrangian.n)))


def natural_bc_right(spec: ProblemSpec, tr: Trajectory) -> float:
    """Transversality residual sum_i H'_i (f_iv(rho(b)) + mu(rho(b)) f_iy(rho(b)))."""
    if spec.bc.right_fixed:
        raise EndpointNotFree("right endpoint is fixed; no natural condition applies")
    _, w, fy, fv = _first_partials(spec.lagrangian, tr)
    j = len(spec.ts) - 2
    mu = spec.ts.steps[j]
    return float(
        sum(w[i] * (fv[i][j] + mu * fy[i][j]) for i in range(spec.lagrangian.n))
    )


def _gradient_of(F: CompositeFunctional, spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    _, w, fy, fv = _first_partials(F, tr)
    steps = tr.ts.steps
    n_pts = len(spec.ts)
    g_full = np.zeros(n_pts)
    for i in range(F.n):
        gi = np.zeros(n_pts)
        gi[1:] += steps * fy[i] + fv[i]
        gi[:-1] -= fv[i]
        g_full += w[i] * gi
    return g_full[decision_indices(spec)]


def functional_gradient(spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    """Exact partial derivatives of the objective value w.r.t. each decision sample."""
    return _gradient_of(spec.lagrangian, spec, tr)


def constraint_gradient(spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    """Exact gradient of the constraint functional w.r.t. the decision samples."""
    if spec.constraint is None:
        raise ValueError("problem has no isoperimetric constraint")
    return _gradient_of(spec.constraint.functional, spec, tr)


def hessian_parts(
    F: CompositeFunctional, spec: ProblemSpec, tr: Trajectory
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Structured pieces of the exact Hessian over the decision samples.

    Returns ``(diag, off, rows, outer_hess)`` with the Hessian equal to
    ``tridiag(diag, off) + rows.T @ outer_hess @ rows``: each interval j
    couples only the samples x_j and x_{j+1} through y = x_{j+1} and
    v = (x_{j+1} - x_j)/mu_j, while the outer map contributes curvature of
    rank at most n through the inner-integral gradients (the rows).
    """
    us, w, fy, fv = _first_partials(F, tr)
    fyy, fyv, fvv = _second_partials(F, tr)
    outer_hess = F.outer_hessian(us)
    steps = tr.ts.steps
    n_pts = len(spec.ts)

    diag = np.zeros(n_pts)
    off = np.zeros(n_pts - 1)
    for i in range(F.n):
        fvv_over_mu = fvv[i] / steps
        diag[:-1] += w[i] * fvv_over_mu
        diag[1:] += w[i] * (steps * fyy[i] + 2.0 * fyv[i] + fvv_over_mu)
        off += -w[i] * (fyv[i] + fvv_over_mu)

    rows = np.zeros((F.n, n_pts))
    for i in range(F.n):
        rows[i, 1:] += steps * fy[i] + fv[i]
        rows[i, :-1] -= fv[i]

    idx = decision_indices(spec)
    lo, hi = int(idx[0]), int(idx[-1])
    return (
        diag[lo : hi + 1],
        off[lo:hi] if idx.size > 1 else np.zeros(0),
        rows[:, idx],
        outer_hess,
    )


def _hessian_of(F: CompositeFunctional, spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    diag, off, rows, outer_hess = hessian_parts(F, spec, tr)
    d = diag.size
    hess = np.zeros((d, d))
    np.fill_diagonal(hess, diag)
    if d > 1:
        hess[np.arange(d - 1), np.arange(1, d)] = off
        hess[np.arange(1, d), np.arange(d - 1)] = off
    hess += rows.T @ outer_hess @ rows
    return hess


def functional_hessian(spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    """Exact second derivative matrix of the objective over the decision samples."""
    return _hessian_of(spec.lagrangian, spec, tr)


def constraint_hessian(spec: ProblemSpec, tr: Trajectory) -> np.ndarray:
    if spec.constraint is None:
        raise ValueError("problem has no isoperimetric constraint")
    return _hessian_of(spec.constraint.functional, spec, tr)


def _dr_quantity_of(F: CompositeFunctional, tr: Trajectory) -> np.ndarray:
    _, w, fy, fv = _first_partials(F, tr)
    steps = tr.ts.steps
    out = np.zeros(len(tr.ts) - 1)
    for i in range(F.n):
        running = np.concatenate([[0.0], np.cumsum(steps * fy[i])])[:-1]
        out += w[i] * (fv[i] - running)
    return out


def dubois_reymond_quantity(
    spec: ProblemSpec,
    tr: Trajectory,
    lam0: float = 1.0,
    lam: float | None = None,
) -> np.ndarray:
    """Constancy quantity E(t) = sum_i H'_i (f_iv(t) - integral_a^t f_iy) per kappa point.

    At a stationary trajectory E is constant; its spread (max - min) is the
    reported diagnostic.  For constrained problems pass the multipliers to
    get the combined quantity lam0 * E_objective - lam * E_constraint.
    """
    E = lam0 * _dr_quantity_of(spec.lagrangian, tr)
    if lam is not None and spec.constraint is not None and lam != 0.0:
        E = E - lam * _dr_quantity_of(spec.constraint.functional, tr)
    return E


def isoperimetric_residual(
    spec: ProblemSpec, tr: Trajectory, lam0: float, lam: float
) -> np.ndarray:
    """Pointwise residual lam0 * EL(objective) - lam * EL(constraint)."""
    if spec.constraint is None:
        raise ValueError("problem has no isoperimetric constraint")
    if lam0 == 0.0 and lam == 0.0:
        raise BothMultipliersZero("lambda0 and lambda must not both vanish")
    res = lam0 * el_residual(spec, tr)
    if lam != 0.0:
        res = res - lam * el_residual(spec, tr, functional=spec.constraint.functional)
    return res


def residual_report(
    spec: ProblemSpec,
    tr: Trajectory,
    lam0: float = 1.0,
    lam: float | None = None,
) -> ResidualReport:
    """Bundle of all stationarity residuals for one trajectory."""
    if spec.constraint is not None and lam is not None:
        el = isoperimetric_residual(spec, tr, lam0, lam)
    else:
        el = el_residual(spec, tr)
    nat_left = None if spec.bc.left_fixed else natural_bc_left(spec, tr)
    nat_right = None if spec.bc.right_fixed else natural_bc_right(spec, tr)
    E = dubois_reymond_quantity(spec, tr, lam0, lam)
    spread = float(E.max() - E.min()) if E.size else 0.0
    return ResidualReport(
        el=el, nat_left=nat_left, nat_right=nat_right, dr_constancy_spread=spread
    )
