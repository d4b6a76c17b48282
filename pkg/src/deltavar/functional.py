"""Composite functionals H(F_1[x], ..., F_n[x]) on time-scale trajectories.

Each inner value F_i[x] is the delta integral over [a, b) of an integrand
f_i(t, y, v) sampled with y = x^sigma (the forward-shifted trajectory) and
v = x^delta (the delta derivative).  The outer map H combines the inner
values into the scalar objective.  The same type doubles for constraint
functionals P(G_1[x], ..., G_m[x]).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .expr import Expr, differentiate, evaluate, expr_variables, parse
from .timescale import TimeScale, delta_derivative, delta_integral

__all__ = [
    "INNER_VARS",
    "CompositeFunctional",
    "Trajectory",
    "BoundarySpec",
    "DenominatorVanished",
    "ScaleMismatch",
    "inner_values",
    "value",
    "c1rd_distance",
]

INNER_VARS = ("t", "y", "v")

# Relative threshold below which an outer-map denominator counts as
# vanished.  Quotient objectives are only meaningful away from that set, so
# evaluation fails loudly instead of returning a huge number.
EPS_DENOMINATOR = 1e-9


class DenominatorVanished(ArithmeticError):
    """An outer-map division was evaluated too close to a zero denominator."""


class ScaleMismatch(ValueError):
    """Two trajectories live on different time scales."""


def _outer_division_guard(num, den) -> None:
    if np.any(np.abs(den) < EPS_DENOMINATOR * (1.0 + np.abs(num))):
        raise DenominatorVanished(
            f"outer-map denominator {den!r} vanishes (|den| < "
            f"{EPS_DENOMINATOR:g}*(1+|num|) with num={num!r})"
        )


class CompositeFunctional:
    """Inner integrands over (t, y, v) plus an outer map over (u1..un).

    First partial derivatives of the integrands with respect to y and v and
    of the outer map with respect to each u_i are differentiated once at
    construction and cached; second partials (needed for exact Newton
    matrices) are derived lazily on first use.
    """

    __slots__ = (
        "inner",
        "outer",
        "n",
        "outer_vars",
        "inner_y",
        "inner_v",
        "outer_grad_exprs",
        "_second",
    )

    def __init__(self, inner: Sequence[Expr], outer: Expr):
        inner = tuple(inner)
        if not inner:
            raise ValueError("need at least one inner integrand")
        self.inner = inner
        self.outer = outer
        self.n = len(inner)
        self.outer_vars = tuple(f"u{i + 1}" for i in range(self.n))
        for f in inner:
            extra = expr_variables(f) - set(INNER_VARS)
            if extra:
                raise ValueError(
                    f"inner integrand uses unknown variables {sorted(extra)}"
                )
        extra = expr_variables(outer) - set(self.outer_vars)
        if extra:
            raise ValueError(
                f"outer map uses variables {sorted(extra)} outside u1..u{self.n}"
            )
        self.inner_y = tuple(differentiate(f, "y") for f in inner)
        self.inner_v = tuple(differentiate(f, "v") for f in inner)
        self.outer_grad_exprs = tuple(
            differentiate(outer, u) for u in self.outer_vars
        )
        self._second = None

    @classmethod
    def from_strings(cls, inner: Sequence[str], outer: str) -> "CompositeFunctional":
        inner_exprs = [parse(text, INNER_VARS) for text in inner]
        outer_vars = tuple(f"u{i + 1}" for i in range(len(inner_exprs)))
        return cls(inner_exprs, parse(outer, outer_vars))

    # -- cached second partials -------------------------------------------

    @property
    def second_partials(self):
        """(f_yy, f_yv, f_vv, outer Hessian exprs), derived on first use."""
        if self._second is None:
            inner_yy = tuple(differentiate(g, "y") for g in self.inner_y)
            inner_yv = tuple(differentiate(g, "v") for g in self.inner_y)
            inner_vv = tuple(differentiate(g, "v") for g in self.inner_v)
            outer_hess = tuple(
                tuple(differentiate(g, u) for u in self.outer_vars)
                for g in self.outer_grad_exprs
            )
            self._second = (inner_yy, inner_yv, inner_vv, outer_hess)
        return self._second

    # -- outer-map evaluation (guarded) -------------------------------------

    def _outer_bindings(self, us) -> dict:
        return {name: us[i] for i, name in enumerate(self.outer_vars)}

    def outer_value(self, us) -> float:
        b = self._outer_bindings(us)
        return float(evaluate(self.outer, b, division_guard=_outer_division_guard))

    def outer_gradient(self, us) -> np.ndarray:
        b = self._outer_bindings(us)
        return np.array(
            [
                float(evaluate(g, b, division_guard=_outer_division_guard))
                for g in self.outer_grad_exprs
            ]
        )

    def outer_hessian(self, us) -> np.ndarray:
        b = self._outer_bindings(us)
        hess_exprs = self.second_partials[3]
        return np.array(
            [
                [
                    float(evaluate(g, b, division_guard=_outer_division_guard))
                    for g in row
                ]
                for row in hess_exprs
            ]
        )

    def __repr__(self) -> str:
        inner = ", ".join(str(f) for f in self.inner)
        return f"CompositeFunctional([{inner}], {self.outer})"


class Trajectory:
    """Candidate trajectory: one value per scale point plus derived caches.

    ``x_sigma[i] = x[sigma(i)]`` and ``x_delta`` is the delta derivative on
    the kappa points.  All arrays are read-only, so trajectories can be
    shared freely.
    """

    __slots__ = ("ts", "x", "x_sigma", "x_delta")

    def __init__(self, ts: TimeScale, values):
        x = np.asarray(values, dtype=float).ravel().copy()
        if x.size != len(ts):
            raise ValueError(
                f"trajectory has {x.size} samples, scale has {len(ts)} points"
            )
        x_sigma = np.concatenate([x[1:], x[-1:]])
        x_delta = delta_derivative(ts, x)
        for arr in (x, x_sigma, x_delta):
            arr.setflags(write=False)
        self.ts = ts
        self.x = x
        self.x_sigma = x_sigma
        self.x_delta = x_delta

    def __repr__(self) -> str:
        return f"Trajectory(n={len(self.ts)}, x[0]={self.x[0]:g}, x[-1]={self.x[-1]:g})"


@dataclass(frozen=True)
class BoundarySpec:
    """End-point conditions: a float pins the value, None leaves it free."""

    left: Optional[float] = None
    right: Optional[float] = None

    def __post_init__(self):
        for side, v in (("left", self.left), ("right", self.right)):
            if v is not None and not np.isfinite(v):
                raise ValueError(f"{side} boundary value must be finite, got {v!r}")

    @classmethod
    def fixed(cls, x_a: float, x_b: float) -> "BoundarySpec":
        return cls(left=float(x_a), right=float(x_b))

    @property
    def left_fixed(self) -> bool:
        return self.left is not None

    @property
    def right_fixed(self) -> bool:
        return self.right is not None


def _integrand_bindings(tr: Trajectory) -> dict:
    # Integration runs over [a, b): drop the maximal point everywhere.
    return {
        "t": tr.ts.points[:-1],
        "y": tr.x_sigma[:-1],
        "v": tr.x_delta,
    }


def _sampled(expr_value, template: np.ndarray) -> np.ndarray:
    # Constant integrands evaluate to scalars; broadcast them to the grid.
    arr = np.asarray(expr_value, dtype=float)
    if arr.shape != template.shape:
        arr = np.broadcast_to(arr, template.shape)
    return arr


def inner_values(functional: CompositeFunctional, tr: Trajectory) -> np.ndarray:
    """The vector of inner integrals F_i[x], summed left to right."""
    b = _integrand_bindings(tr)
    t = b["t"]
    out = np.empty(functional.n)
    for i, f in enumerate(functional.inner):
        samples = _sampled(evaluate(f, b), t)
        out[i] = delta_integral(tr.ts, samples)
    return out


def value(functional: CompositeFunctional, tr: Trajectory) -> float:
    """The composite value H(F_1[x], ..., F_n[x]).

    Raises :class:`DenominatorVanished` when a division inside the outer
    map is evaluated with a near-zero denominator, and propagates the
    expression evaluator's domain errors otherwise.
    """
    us = inner_values(functional, tr)
    return functional.outer_value(us)


def c1rd_distance(tr1: Trajectory, tr2: Trajectory) -> float:
    """Distance in the weak norm: sup |x1^sigma - x2^sigma| + sup |x1^delta - x2^delta|.

    The sigma part ranges over all points, the delta part over the kappa
    points (the delta derivative does not exist at the maximal point).
    """
    if tr1.ts is not tr2.ts and tr1.ts != tr2.ts:
        raise ScaleMismatch("trajectories live on different time scales")
    d_sigma = float(np.max(np.abs(tr1.x_sigma - tr2.x_sigma)))
    d_delta = float(np.max(np.abs(tr1.x_delta - tr2.x_delta)))
    return d_sigma + d_delta
