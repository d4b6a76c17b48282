"""Shared helpers: random problem generation for the property suites."""
from __future__ import annotations

import numpy as np

from deltavar import (
    BoundarySpec,
    CompositeFunctional,
    ProblemSpec,
    Trajectory,
    inner_values,
    make_timescale,
)


def random_polynomial(rng: np.random.Generator, vars: tuple[str, ...],
                      max_terms: int = 3, max_degree: int = 2) -> str:
    """A random polynomial over `vars` as parseable text, e.g. '1.25*t^2*v - 0.5'."""
    terms = []
    n_terms = int(rng.integers(1, max_terms + 1))
    for _ in range(n_terms):
        coeff = round(float(rng.uniform(-2.0, 2.0)), 3)
        if coeff == 0.0:
            coeff = 0.5
        factors = [f"{coeff}"]
        for name in vars:
            deg = int(rng.integers(0, max_degree + 1))
            if deg == 1:
                factors.append(name)
            elif deg > 1:
                factors.append(f"{name}^{deg}")
        terms.append("*".join(factors))
    return " + ".join(terms)


def random_timescale(rng: np.random.Generator, min_points: int = 3,
                     max_points: int = 20):
    kind = rng.choice(["points", "uniform", "qscale"])
    n = int(rng.integers(min_points, max_points + 1))
    if kind == "points":
        pts = np.sort(rng.uniform(-1.0, 2.0, size=n))
        while np.any(np.diff(pts) < 1e-3):
            pts = np.sort(rng.uniform(-1.0, 2.0, size=n))
        return make_timescale("points", values=pts)
    if kind == "uniform":
        a = float(rng.uniform(-1.0, 0.0))
        h = float(rng.uniform(0.05, 0.4))
        return make_timescale("uniform", a=a, b=a + (n - 1) * h, h=h)
    # Keep q**kmax modest so random polynomial integrands stay well scaled.
    n = min(n, 10)
    q = float(rng.uniform(1.1, 1.4))
    return make_timescale("qscale", q=q, kmin=0, kmax=max(n - 1, 2))


def random_problem(rng: np.random.Generator, allow_free_ends: bool = True):
    """A random (spec, trajectory) pair safe for gradient identities.

    Quotient outer maps are retried until the denominator integral is well
    away from zero at the sampled trajectory.
    """
    ts = random_timescale(rng)
    family = rng.choice(["identity", "product", "quotient", "poly"])
    for _ in range(40):
        if family == "identity":
            inner = [random_polynomial(rng, ("t", "y", "v"))]
            outer = "u1"
        elif family == "product":
            inner = [random_polynomial(rng, ("t", "y", "v")) for _ in range(2)]
            outer = "u1 * u2"
        elif family == "quotient":
            inner = [random_polynomial(rng, ("t", "y", "v")) for _ in range(2)]
            outer = "u1 / u2"
        else:
            n = int(rng.integers(1, 4))
            inner = [random_polynomial(rng, ("t", "y", "v")) for _ in range(n)]
            outer = random_polynomial(rng, tuple(f"u{i + 1}" for i in range(n)))
        functional = CompositeFunctional.from_strings(inner, outer)

        x = rng.uniform(-1.0, 1.0, size=len(ts))
        if allow_free_ends:
            left = None if rng.random() < 0.3 else float(x[0])
            right = None if rng.random() < 0.3 else float(x[-1])
        else:
            left, right = float(x[0]), float(x[-1])
        spec = ProblemSpec(
            ts=ts, lagrangian=functional, bc=BoundarySpec(left=left, right=right)
        )
        tr = Trajectory(ts, x)
        if family == "quotient":
            us = inner_values(functional, tr)
            if abs(us[1]) < 0.2:
                continue
        try:
            from deltavar import value

            value(functional, tr)
        except Exception:
            continue
        return spec, tr
    raise RuntimeError("could not generate a well-posed random problem")
