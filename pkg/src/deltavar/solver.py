"""Stationary-trajectory search by multi-start damped Newton iteration.

Unconstrained problems are solved as the nonlinear system "exact functional
gradient = 0" over the decision samples; by the gradient identities of
:mod:`deltavar.euler_lagrange` a root certifies the Euler-Lagrange equation
at every interior point and the natural conditions at free endpoints.
Isoperimetric problems append the multiplier lambda as an unknown and the
constraint defect as an equation.  Restarts are seeded with a counter-based
generator so runs are reproducible regardless of execution order, and the
returned list is deduplicated in the weak trajectory norm.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.linalg import lapack
from scipy.sparse.linalg import splu

from .expr import DivisionByZero, DomainError
from .euler_lagrange import (
    ProblemSpec,
    constraint_gradient,
    constraint_hessian,
    decision_indices,
    dubois_reymond_quantity,
    embed_decision,
    functional_gradient,
    functional_hessian,
    hessian_parts,
)
from .functional import (
    DenominatorVanished,
    Trajectory,
    c1rd_distance,
    inner_values,
    value,
)

__all__ = [
    "SolveOptions",
    "StationaryPoint",
    "NoStationaryPointFound",
    "ConstraintInfeasible",
    "solve_unconstrained",
    "solve_isoperimetric",
    "classify",
    "refine_study",
    "RefinePoint",
    "RefineRow",
    "RefineStudy",
    "LOCAL_MIN",
    "LOCAL_MAX",
    "SADDLE",
    "DEGENERATE",
]

LOCAL_MIN = "local_min"
LOCAL_MAX = "local_max"
SADDLE = "saddle"
DEGENERATE = "degenerate"

# Newton matrices with a 1-norm condition estimate beyond 1/RCOND_LIMIT are
# treated as near-singular; the step then comes from the minimum-norm
# least-squares solution, with a small damped gradient step as last resort.
RCOND_LIMIT = 1e-12
DAMPED_STEP = 1e-3
ARMIJO_SLOPE = 1e-4
MAX_BACKTRACKS = 30

# A root is only accepted when the Newton step at it is small relative to
# the iterate.  Quotient objectives flatten out toward infinity, where the
# gradient drops below any tolerance while the Newton step stays of the
# order of the iterate itself; the contraction test rejects those drifts.
CONTRACTION_LIMIT = 1e-2

# An accepted step whose relative merit improvement falls below this marks a
# stalled iteration (a local minimum of ||residual||^2).
STALL_RELATIVE_PROGRESS = 1e-8

_EVAL_ERRORS = (DenominatorVanished, DomainError, DivisionByZero)


class NoStationaryPointFound(RuntimeError):
    """Every restart failed to converge; a legitimate outcome for some problems."""


class ConstraintInfeasible(RuntimeError):
    """No restart produced a trajectory meeting the isoperimetric constraint."""


@dataclass(frozen=True)
class SolveOptions:
    """Tuning knobs for the multi-start Newton search."""

    restarts: int = 64
    seed: int = 0
    tol_residual: float = 1e-9
    tol_step: float = 1e-12
    max_iters: int = 100
    init_spread: float = 1.0
    dedup_distance: float = 1e-6
    tol_abnormal: float = 1e-8

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        for name in ("tol_residual", "tol_step", "init_spread", "dedup_distance",
                     "tol_abnormal"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class StationaryPoint:
    """One converged stationary trajectory with its certificates."""

    trajectory: Trajectory
    inner: np.ndarray
    value: float
    residual: float
    lam0: float = 1.0
    lam: Optional[float] = None
    constraint_inner: Optional[np.ndarray] = None
    constraint_value: Optional[float] = None
    classification: str = DEGENERATE
    basin_count: int = 1
    dr_spread: float = 0.0

    @property
    def normal(self) -> bool:
        return self.lam0 != 0.0


# -- restart initialization ---------------------------------------------------


def _restart_rng(seed: int, restart: int) -> np.random.Generator:
    # Philox is counter based: keying the counter by the restart index gives
    # identical streams no matter in which order restarts execute.
    return np.random.Generator(np.random.Philox(key=seed, counter=restart << 128))


def _initial_decision(spec: ProblemSpec, opts: SolveOptions, restart: int) -> np.ndarray:
    ts = spec.ts
    x_a = spec.bc.left if spec.bc.left_fixed else 0.0
    x_b = spec.bc.right if spec.bc.right_fixed else 0.0
    s = (ts.points - ts.a) / ts.span
    base = x_a + (x_b - x_a) * s
    if restart > 0:
        rng = _restart_rng(opts.seed, restart)
        scale = opts.init_spread * (1.0 + abs(x_a) + abs(x_b))
        # Smooth perturbation: one Gaussian amplitude applied to a random
        # low-frequency unit shape (zero at both ends), plus a random affine
        # offset at any free endpoint.  Keeping the amplitude in a single
        # Gaussian rather than per mode keeps the derivative energy of the
        # start trajectory comparable to its height, so restarts sample
        # basins instead of the flat far field.
        weights = rng.standard_normal(4) / np.arange(1.0, 5.0) ** 2
        shape = np.zeros_like(s)
        for m, wm in enumerate(weights, start=1):
            shape = shape + wm * np.sin(m * np.pi * s)
        peak = float(np.max(np.abs(shape)))
        if peak > 0.0:
            shape = shape / peak
        base = base + (rng.standard_normal() * scale) * shape
        ramp = rng.standard_normal(2) * scale
        if not spec.bc.left_fixed:
            base = base + ramp[0] * (1.0 - s)
        if not spec.bc.right_fixed:
            base = base + ramp[1] * s
    return base[decision_indices(spec)]


# -- damped Newton core ---------------------------------------------------------


@dataclass
class _NewtonResult:
    w: np.ndarray
    residual: np.ndarray
    converged: bool
    iterations: int
    failure: Optional[BaseException] = None


class _StructuredHessian:
    """Exact Hessian as tridiagonal plus a rank-n outer-map correction.

    Linear solves go through the sparse augmented system

        [ T   U^T C ] [x]   [rhs]
        [ U    -I   ] [y] = [ 0 ]

    whose Schur complement on the identity block is exactly
    H = T + U^T C U, so the factorization stays valid even where the
    tridiagonal part alone is singular (as it is at Rayleigh-quotient
    solutions).  Solutions are verified against a matvec; on failure the
    caller falls back to the dense path.
    """

    def __init__(self, diag: np.ndarray, off: np.ndarray, rows: np.ndarray,
                 outer_hess: np.ndarray):
        self.diag = diag
        self.off = off
        self.rows = rows
        self.outer = outer_hess
        self.dim = diag.size
        self.finite = bool(
            np.all(np.isfinite(diag))
            and np.all(np.isfinite(off))
            and np.all(np.isfinite(rows))
            and np.all(np.isfinite(outer_hess))
        )
        self._lu = None
        self._lu_failed = False

    # The Hessian is symmetric; expose matvec via both J @ v and J.T @ v.
    @property
    def T(self) -> "_StructuredHessian":
        return self

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        if self.dim > 1:
            out[:-1] += self.off * v[1:]
            out[1:] += self.off * v[:-1]
        out += self.rows.T @ (self.outer @ (self.rows @ v))
        return out

    def _factor(self):
        if self._lu is None and not self._lu_failed:
            d = self.dim
            k = self.rows.shape[0]
            tri = scipy.sparse.diags(
                [self.off, self.diag, self.off], [-1, 0, 1], shape=(d, d)
            )
            aug = scipy.sparse.bmat(
                [
                    [tri, scipy.sparse.csc_matrix(self.rows.T @ self.outer)],
                    [scipy.sparse.csc_matrix(self.rows), -scipy.sparse.identity(k)],
                ],
                format="csc",
            )
            try:
                self._lu = splu(aug)
            except RuntimeError:
                self._lu_failed = True
        return self._lu

    def solve(self, rhs: np.ndarray):
        """H x = rhs, or None when the factorization is unusable."""
        lu = self._factor()
        if lu is None:
            return None
        k = self.rows.shape[0]
        sol = lu.solve(np.concatenate([rhs, np.zeros(k)]))
        x = sol[: self.dim]
        if not np.all(np.isfinite(x)):
            return None
        defect = float(np.linalg.norm(self @ x - rhs))
        if defect > 1e-8 * (np.linalg.norm(rhs) + np.linalg.norm(x)):
            return None
        return x

    def solve_bordered(self, rhs: np.ndarray, border: np.ndarray):
        """[[H, b], [b^T, 0]] [x; nu] = [rhs; 0], or None on failure."""
        d = self.dim
        k = self.rows.shape[0]
        tri = scipy.sparse.diags(
            [self.off, self.diag, self.off], [-1, 0, 1], shape=(d, d)
        )
        aug = scipy.sparse.bmat(
            [
                [
                    tri,
                    scipy.sparse.csc_matrix(self.rows.T @ self.outer),
                    scipy.sparse.csc_matrix(border[:, None]),
                ],
                [scipy.sparse.csc_matrix(self.rows), -scipy.sparse.identity(k), None],
                [scipy.sparse.csc_matrix(border[None, :]), None, None],
            ],
            format="csc",
        )
        try:
            lu = splu(aug)
        except RuntimeError:
            return None
        sol = lu.solve(np.concatenate([rhs, np.zeros(k + 1)]))
        x = sol[:d]
        nu = sol[d + k]
        if not np.all(np.isfinite(sol)):
            return None
        defect = np.linalg.norm(self @ x + nu * border - rhs) + abs(border @ x)
        if defect > 1e-8 * (np.linalg.norm(rhs) + np.linalg.norm(x) + 1.0):
            return None
        return x

    def to_dense(self) -> np.ndarray:
        d = self.dim
        hess = np.zeros((d, d))
        np.fill_diagonal(hess, self.diag)
        if d > 1:
            hess[np.arange(d - 1), np.arange(1, d)] = self.off
            hess[np.arange(1, d), np.arange(d - 1)] = self.off
        hess += self.rows.T @ self.outer @ self.rows
        return hess


def _newton_direction(J, r: np.ndarray) -> np.ndarray:
    if isinstance(J, _StructuredHessian):
        step = J.solve(-r)
        if step is not None:
            return step
        J = J.to_dense()
    if J.shape[0] == J.shape[1]:
        try:
            with warnings.catch_warnings():
                # Singular factorizations are expected here; the rcond gate
                # decides whether the factors are used.
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
            anorm = np.linalg.norm(J, 1)
            rcond, info = lapack.dgecon(lu, anorm, norm="1")
            if info == 0 and rcond > RCOND_LIMIT:
                return scipy.linalg.lu_solve((lu, piv), -r, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            pass
    # Near-singular or rectangular: least-squares direction (QR with pivoting;
    # rank-deficient systems get the minimum-norm solution of the truncated
    # problem, which projects out near-null components).
    step, *_ = scipy.linalg.lstsq(
        J, -r, cond=1e-10, lapack_driver="gelsy", check_finite=False
    )
    return step


def _is_scale_invariant(r: np.ndarray, w: np.ndarray) -> bool:
    """Detect gradient systems with r(c*w) = r(w)/c (value invariant under scaling).

    Such systems satisfy Euler's identity r(w).w = 0 identically; their
    stationary sets are rays, and an unconstrained Newton step escapes along
    the scaling direction instead of converging.
    """
    if r.shape != w.shape:
        return False
    norm_w = float(np.linalg.norm(w))
    norm_r = float(np.linalg.norm(r))
    if norm_w <= 1e-12 or norm_r == 0.0:
        return False
    return abs(float(r @ w)) <= 1e-10 * norm_r * norm_w


def _sphere_newton_direction(J, r: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Newton step constrained to the sphere ||w|| = const (scale pinned)."""
    if isinstance(J, _StructuredHessian):
        step = J.solve_bordered(-r, w)
        if step is not None:
            return step
        J = J.to_dense()
    n = w.size
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = J
    bordered[:n, n] = w
    bordered[n, :n] = w
    # _newton_direction solves bordered * s = -[r; 0]; the multiplier
    # component of s is discarded.
    step = _newton_direction(bordered, np.concatenate([r, [0.0]]))
    return step[:n]


def _run_newton(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray],
    w0: np.ndarray,
    opts: SolveOptions,
) -> _NewtonResult:
    w = np.asarray(w0, dtype=float).copy()
    try:
        r = residual_fn(w)
    except _EVAL_ERRORS as exc:
        return _NewtonResult(w, np.full_like(w, np.inf), False, 0, failure=exc)
    if not np.all(np.isfinite(r)):
        return _NewtonResult(w, r, False, 0)

    def contracting(d: np.ndarray, w: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(d))) and float(np.linalg.norm(d)) <= (
            CONTRACTION_LIMIT * (1.0 + float(np.linalg.norm(w)))
        )

    # A point is accepted as a root in two ways: the residual is below
    # tolerance and the Newton step there contracts (a genuine root), or the
    # line search stalls with the residual below tolerance (a merit minimum,
    # reaching the smallest residual the discretization admits).  Running out
    # of iterations while the merit is still descending does NOT qualify:
    # that is the signature of a drift toward an asymptotic flat, where the
    # gradient shrinks without any stationary point nearby.
    last_failure: Optional[BaseException] = None
    stalled = False
    it = 0
    escape_norm = 1e3 * (1.0 + float(np.linalg.norm(w)))
    for it in range(opts.max_iters):
        r_inf = float(np.max(np.abs(r)))
        try:
            J = jacobian_fn(w)
        except _EVAL_ERRORS as exc:
            # Residual is known but the matrix is not evaluable here.
            return _NewtonResult(w, r, r_inf <= opts.tol_residual, it, failure=exc)
        J_finite = J.finite if isinstance(J, _StructuredHessian) else bool(
            np.all(np.isfinite(J))
        )
        if not J_finite:
            return _NewtonResult(w, r, False, it)

        if _is_scale_invariant(r, w):
            d_newton = _sphere_newton_direction(J, r, w)
        else:
            d_newton = _newton_direction(J, r)
        if r_inf <= opts.tol_residual and contracting(d_newton, w):
            return _NewtonResult(w, r, True, it)

        merit0 = float(r @ r)
        accepted = False
        for d in (d_newton, -DAMPED_STEP * (J.T @ r)):
            if not np.all(np.isfinite(d)) or not np.any(d):
                continue
            alpha = 1.0
            for _ in range(MAX_BACKTRACKS):
                try:
                    r_trial = residual_fn(w + alpha * d)
                except _EVAL_ERRORS as exc:
                    last_failure = exc
                    r_trial = None
                if r_trial is not None and np.all(np.isfinite(r_trial)):
                    merit = float(r_trial @ r_trial)
                    if merit <= merit0 * (1.0 - ARMIJO_SLOPE * alpha):
                        accepted = True
                        break
                alpha *= 0.5
            if accepted:
                step_norm = float(np.linalg.norm(alpha * d))
                w = w + alpha * d
                merit_new = float(r_trial @ r_trial)
                r = r_trial
                break
        if not accepted:
            stalled = True
            break
        if merit0 - merit_new <= STALL_RELATIVE_PROGRESS * merit0:
            stalled = True
            break
        if step_norm <= opts.tol_step * (1.0 + float(np.linalg.norm(w))):
            stalled = True
            break
        if float(np.linalg.norm(w)) > escape_norm:
            # Runaway amplitude: the iterate is escaping toward the flat far
            # field where no stationary point exists.
            return _NewtonResult(w, r, False, it, failure=last_failure)

    r_inf = float(np.max(np.abs(r)))
    converged = r_inf <= opts.tol_residual and stalled
    return _NewtonResult(w, r, converged, it, failure=last_failure)


# -- assembling and deduplicating stationary points ------------------------------


def _sort_key(traj_values: np.ndarray, residual: float):
    return (residual, tuple(traj_values.tolist()))


def _detect_scale_invariance(spec: ProblemSpec) -> bool:
    """True when the objective value is invariant under scaling trajectories.

    Scale-invariant objectives satisfy Euler's identity gradient(x) . x = 0
    at every x, so two generic probes suffice.  Their stationary sets are
    rays; the solver then pins the iterate norm and deduplicates rays by
    their normalized representatives.
    """
    idx = decision_indices(spec)
    s = np.linspace(0.3, 1.0, idx.size)
    for probe in (np.sin(2.0 + 3.0 * s) + 0.5, 0.25 * s * s - 0.75):
        try:
            tr = embed_decision(spec, probe)
            g = functional_gradient(spec, tr)
        except _EVAL_ERRORS:
            return False
        norm = float(np.linalg.norm(g)) * float(np.linalg.norm(probe))
        if norm == 0.0 or abs(float(g @ probe)) > 1e-10 * norm:
            return False
    return True


def _ray_normalized(tr: Trajectory) -> Trajectory:
    """Scale- and sign-normalized representative of a trajectory's ray."""
    norm = float(np.linalg.norm(tr.x))
    if norm == 0.0:
        return tr
    xn = tr.x / norm
    lead = xn[int(np.argmax(np.abs(xn)))]
    if lead < 0:
        xn = -xn
    return Trajectory(tr.ts, xn)


def _dedup(
    raw: list[tuple[np.ndarray, float]],
    spec: ProblemSpec,
    opts: SolveOptions,
    ray_normalize: bool = False,
) -> list[tuple[Trajectory, float, int]]:
    """Greedy clustering of converged decision vectors in the weak norm."""
    raw_sorted = sorted(raw, key=lambda zr: _sort_key(zr[0], zr[1]))
    clusters: list[list] = []  # [representative, key trajectory, residual, count]
    for z, res in raw_sorted:
        tr = embed_decision(spec, z)
        key = _ray_normalized(tr) if ray_normalize else tr
        merged = False
        for cluster in clusters:
            if c1rd_distance(cluster[1], key) < opts.dedup_distance:
                cluster[3] += 1
                merged = True
                break
        if not merged:
            clusters.append([tr, key, res, 1])
    return [(rep, res, count) for rep, _key, res, count in clusters]


def _finish_point(
    spec: ProblemSpec,
    tr: Trajectory,
    residual: float,
    basin: int,
    lam0: float = 1.0,
    lam: Optional[float] = None,
) -> StationaryPoint:
    F = inner_values(spec.lagrangian, tr)
    val = value(spec.lagrangian, tr)
    g_inner = None
    g_val = None
    if spec.constraint is not None:
        g_inner = inner_values(spec.constraint.functional, tr)
        g_val = value(spec.constraint.functional, tr)
    E = dubois_reymond_quantity(spec, tr, lam0, lam)
    spread = float(E.max() - E.min()) if E.size else 0.0
    point = StationaryPoint(
        trajectory=tr,
        inner=F,
        value=val,
        residual=residual,
        lam0=lam0,
        lam=lam,
        constraint_inner=g_inner,
        constraint_value=g_val,
        basin_count=basin,
        dr_spread=spread,
    )
    point.classification = classify(spec, point)
    return point


# -- public solvers ---------------------------------------------------------------


def solve_unconstrained(
    spec: ProblemSpec, opts: SolveOptions | None = None
) -> list[StationaryPoint]:
    """All distinct stationary trajectories found by multi-start Newton.

    Every returned point satisfies ||gradient||_inf <= opts.tol_residual.
    Raises :class:`NoStationaryPointFound` when no restart converges and
    :class:`DenominatorVanished` when every restart dies on a vanishing
    outer-map denominator.
    """
    if spec.constraint is not None:
        raise ValueError("spec has a constraint; use solve_isoperimetric")
    opts = opts or SolveOptions()

    def residual_fn(z):
        return functional_gradient(spec, embed_decision(spec, z))

    structured = decision_indices(spec).size > 200

    def jacobian_fn(z):
        tr = embed_decision(spec, z)
        if structured:
            return _StructuredHessian(*hessian_parts(spec.lagrangian, spec, tr))
        return functional_hessian(spec, tr)

    converged: list[tuple[np.ndarray, float]] = []
    denominator_failures = 0
    for restart in range(opts.restarts):
        z0 = _initial_decision(spec, opts, restart)
        out = _run_newton(residual_fn, jacobian_fn, z0, opts)
        if out.converged:
            converged.append((out.w, float(np.max(np.abs(out.residual)))))
        elif isinstance(out.failure, DenominatorVanished):
            denominator_failures += 1

    if not converged:
        if denominator_failures == opts.restarts:
            raise DenominatorVanished(
                f"every one of {opts.restarts} restarts hit a vanishing denominator"
            )
        raise NoStationaryPointFound(
            f"no stationary trajectory found in {opts.restarts} restarts"
        )

    clusters = _dedup(
        converged, spec, opts, ray_normalize=_detect_scale_invariance(spec)
    )
    return [
        _finish_point(spec, tr, res, count) for tr, res, count in clusters
    ]


def _fit_multiplier(gL: np.ndarray, gK: np.ndarray) -> float:
    denom = float(gK @ gK)
    if denom <= 0.0 or not np.isfinite(denom):
        return 0.0
    return float(gL @ gK) / denom


def solve_isoperimetric(
    spec: ProblemSpec, opts: SolveOptions | None = None
) -> list[StationaryPoint]:
    """Stationary trajectories of the constrained problem, normal and abnormal.

    The normal branch (lambda0 = 1) solves the square system

        [ gradient(objective) - lambda * gradient(constraint) ;
          constraint value - target ] = 0

    in (decision samples, lambda).  Whenever a candidate has a nearly
    vanishing constraint gradient the abnormal branch (lambda0 = 0) is also
    attempted: an extremal of the constraint functional itself that meets
    the constraint value.  Points are labeled through ``lam0``.
    """
    if spec.constraint is None:
        raise ValueError("spec has no constraint; use solve_unconstrained")
    opts = opts or SolveOptions()
    target = spec.constraint.target
    d = decision_indices(spec).size

    def residual_fn(wz):
        z, lam = wz[:-1], wz[-1]
        tr = embed_decision(spec, z)
        gL = functional_gradient(spec, tr)
        gK = constraint_gradient(spec, tr)
        defect = value(spec.constraint.functional, tr) - target
        return np.concatenate([gL - lam * gK, [defect]])

    def jacobian_fn(wz):
        z, lam = wz[:-1], wz[-1]
        tr = embed_decision(spec, z)
        HL = functional_hessian(spec, tr)
        HK = constraint_hessian(spec, tr)
        gK = constraint_gradient(spec, tr)
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = HL - lam * HK
        J[:d, d] = -gK
        J[d, :d] = gK
        return J

    def abnormal_residual_fn(z):
        tr = embed_decision(spec, z)
        gK = constraint_gradient(spec, tr)
        defect = value(spec.constraint.functional, tr) - target
        return np.concatenate([gK, [defect]])

    def abnormal_jacobian_fn(z):
        tr = embed_decision(spec, z)
        J = np.zeros((d + 1, d))
        J[:d, :] = constraint_hessian(spec, tr)
        J[d, :] = constraint_gradient(spec, tr)
        return J

    normal: list[tuple[np.ndarray, float]] = []  # (z + [lam], residual)
    abnormal_seeds: list[np.ndarray] = []
    inits: list[np.ndarray] = []
    denominator_failures = 0
    best_defect = np.inf
    for restart in range(opts.restarts):
        z0 = _initial_decision(spec, opts, restart)
        inits.append(z0)
        try:
            tr0 = embed_decision(spec, z0)
            lam0_guess = _fit_multiplier(
                functional_gradient(spec, tr0), constraint_gradient(spec, tr0)
            )
        except _EVAL_ERRORS:
            lam0_guess = 0.0
        w0 = np.concatenate([z0, [lam0_guess]])
        out = _run_newton(residual_fn, jacobian_fn, w0, opts)
        if np.all(np.isfinite(out.residual)):
            best_defect = min(best_defect, abs(float(out.residual[-1])))
        if out.converged:
            normal.append((out.w, float(np.max(np.abs(out.residual)))))
            try:
                gK = constraint_gradient(spec, embed_decision(spec, out.w[:-1]))
                if float(np.max(np.abs(gK))) < opts.tol_abnormal:
                    abnormal_seeds.append(out.w[:-1])
            except _EVAL_ERRORS:
                pass
        elif isinstance(out.failure, DenominatorVanished):
            denominator_failures += 1

    if not normal:
        # The normal system's Jacobian degenerates exactly when abnormal
        # extremals exist, so retry the lambda0 = 0 branch from every start.
        abnormal_seeds.extend(inits)

    abnormal: list[tuple[np.ndarray, float]] = []
    for z0 in abnormal_seeds:
        out = _run_newton(abnormal_residual_fn, abnormal_jacobian_fn, z0, opts)
        if out.converged:
            abnormal.append((out.w, float(np.max(np.abs(out.residual)))))

    if not normal and not abnormal:
        if denominator_failures == opts.restarts:
            raise DenominatorVanished(
                f"every one of {opts.restarts} restarts hit a vanishing denominator"
            )
        feas_tol = max(1e-6, 10.0 * opts.tol_residual) * (1.0 + abs(target))
        if best_defect > feas_tol:
            raise ConstraintInfeasible(
                f"no restart reached the constraint value {target!r} "
                f"(best defect {best_defect:.3g})"
            )
        raise NoStationaryPointFound(
            f"no stationary trajectory found in {opts.restarts} restarts"
        )

    points: list[StationaryPoint] = []
    normal_sorted = sorted(normal, key=lambda wr: _sort_key(wr[0][:-1], wr[1]))
    clusters: list[list] = []  # [trajectory, lam, residual, count]
    for w, res in normal_sorted:
        tr = embed_decision(spec, w[:-1])
        for cluster in clusters:
            if c1rd_distance(cluster[0], tr) < opts.dedup_distance:
                cluster[3] += 1
                break
        else:
            clusters.append([tr, float(w[-1]), res, 1])
    for tr, lam, res, count in clusters:
        points.append(_finish_point(spec, tr, res, count, lam0=1.0, lam=lam))
    for tr, res, count in _dedup(abnormal, spec, opts):
        points.append(_finish_point(spec, tr, res, count, lam0=0.0, lam=1.0))
    return points


# -- classification -----------------------------------------------------------------


def classify(spec: ProblemSpec, point: StationaryPoint, fd_step: float = 1e-6) -> str:
    """Advisory min/max/saddle/degenerate label from a finite-difference Hessian.

    The Hessian of the (multiplier-corrected) value is estimated by central
    differences of the exact gradient and, for constrained problems,
    projected onto the tangent space of the constraint.  Eigenvalues within
    1e-6 * ||H|| of zero mark the point degenerate.
    """
    try:
        z = point.trajectory.x[decision_indices(spec)].copy()
        lam = point.lam if point.lam is not None else 0.0
        lam0 = point.lam0

        def grad(zz):
            tr = embed_decision(spec, zz)
            g = lam0 * functional_gradient(spec, tr)
            if spec.constraint is not None and lam != 0.0:
                g = g - lam * constraint_gradient(spec, tr)
            return g

        dim = z.size
        hess = np.empty((dim, dim))
        for j in range(dim):
            h = fd_step * (1.0 + abs(z[j]))
            zp = z.copy()
            zp[j] += h
            zm = z.copy()
            zm[j] -= h
            hess[:, j] = (grad(zp) - grad(zm)) / (2.0 * h)
        hess = 0.5 * (hess + hess.T)

        if spec.constraint is not None:
            gK = constraint_gradient(spec, point.trajectory)
            norm = np.linalg.norm(gK)
            if norm > 0.0:
                q, _ = np.linalg.qr(gK[:, None], mode="complete")
                tangent = q[:, 1:]
                hess = tangent.T @ hess @ tangent
        if hess.shape[0] == 0:
            return DEGENERATE

        eigs = np.linalg.eigvalsh(hess)
        scale = float(np.max(np.abs(eigs)))
        if scale == 0.0 or not np.isfinite(scale):
            return DEGENERATE
        threshold = 1e-6 * scale
        if np.any(np.abs(eigs) <= threshold):
            return DEGENERATE
        if np.all(eigs > threshold):
            return LOCAL_MIN
        if np.all(eigs < -threshold):
            return LOCAL_MAX
        return SADDLE
    except _EVAL_ERRORS:
        return DEGENERATE


# -- grid refinement study -------------------------------------------------------------


@dataclass(frozen=True)
class RefinePoint:
    value: float
    inner: tuple
    reference_distance: Optional[float]


@dataclass(frozen=True)
class RefineRow:
    h: float
    points: tuple
    error: Optional[str] = None


@dataclass(frozen=True)
class RefineStudy:
    """Solve results across a decreasing list of grid steps.

    Stationary points in each row are sorted by functional value so that
    branch k of one row continues branch k of the next.  ``branch_orders``
    estimates the convergence order of branch values from successive
    differences; ``distance_orders`` does the same for the distance to a
    reference trajectory when one was supplied.
    """

    rows: tuple

    def branch_count(self) -> int:
        return max((len(r.points) for r in self.rows), default=0)

    def branch_values(self, branch: int) -> list[tuple[float, float]]:
        out = []
        for row in self.rows:
            if row.error is None and len(row.points) > branch:
                out.append((row.h, row.points[branch].value))
        return out

    def branch_orders(self, branch: int) -> list[float]:
        vals = self.branch_values(branch)
        diffs = [
            (vals[i][0], abs(vals[i][1] - vals[i + 1][1]))
            for i in range(len(vals) - 1)
        ]
        orders = []
        for i in range(len(diffs) - 1):
            h1, d1 = diffs[i]
            h2, d2 = diffs[i + 1]
            if d1 > 0 and d2 > 0 and h1 != h2:
                orders.append(float(np.log(d1 / d2) / np.log(h1 / h2)))
        return orders

    def distance_orders(self, branch: int) -> list[float]:
        pts = []
        for row in self.rows:
            if row.error is None and len(row.points) > branch:
                dist = row.points[branch].reference_distance
                if dist is not None and dist > 0:
                    pts.append((row.h, dist))
        orders = []
        for i in range(len(pts) - 1):
            h1, d1 = pts[i]
            h2, d2 = pts[i + 1]
            if h1 != h2:
                orders.append(float(np.log(d1 / d2) / np.log(h1 / h2)))
        return orders

    def format_table(self) -> str:
        lines = ["h          branch  value                 F values / note"]
        for row in self.rows:
            if row.error is not None:
                lines.append(f"{row.h:<10.4g} -       FAILED: {row.error}")
                continue
            for b, pt in enumerate(row.points):
                inner = ", ".join(f"{v:.10g}" for v in pt.inner)
                dist = (
                    f"  dist={pt.reference_distance:.3g}"
                    if pt.reference_distance is not None
                    else ""
                )
                lines.append(
                    f"{row.h:<10.4g} {b:<7d} {pt.value:<21.12g} F=[{inner}]{dist}"
                )
        for b in range(self.branch_count()):
            orders = self.branch_orders(b)
            if orders:
                lines.append(
                    f"branch {b}: observed value order(s) "
                    + ", ".join(f"{o:.2f}" for o in orders)
                )
        return "\n".join(lines)


def refine_study(
    make_spec: Callable[[float], ProblemSpec],
    h_list: Sequence[float],
    opts: SolveOptions | None = None,
    reference: Callable[[np.ndarray], np.ndarray] | None = None,
) -> RefineStudy:
    """Solve the same problem family on successively finer grids.

    ``make_spec(h)`` builds the problem for step ``h``; ``reference`` is an
    optional callable mapping scale points to reference trajectory values.
    Failures are recorded per row, leaving the rest of the table intact.
    """
    rows = []
    for h in h_list:
        spec = make_spec(float(h))
        try:
            if spec.constraint is not None:
                pts = solve_isoperimetric(spec, opts)
            else:
                pts = solve_unconstrained(spec, opts)
        except (NoStationaryPointFound, ConstraintInfeasible, DenominatorVanished) as exc:
            rows.append(RefineRow(h=float(h), points=(), error=str(exc)))
            continue
        pts = sorted(pts, key=lambda p: p.value)
        row_points = []
        for p in pts:
            dist = None
            if reference is not None:
                ref_vals = np.asarray(reference(spec.ts.points), dtype=float)
                dist = float(np.max(np.abs(p.trajectory.x - ref_vals)))
            row_points.append(
                RefinePoint(
                    value=p.value,
                    inner=tuple(float(v) for v in p.inner),
                    reference_distance=dist,
                )
            )
        rows.append(RefineRow(h=float(h), points=tuple(row_points)))
    return RefineStudy(rows=tuple(rows))
