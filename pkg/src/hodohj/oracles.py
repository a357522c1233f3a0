"""Independent reference computations for validating the implicit engine.

Three routes that never touch the Newton solver:

* brute-force extremization of x.y - lambda*t*|y|^2 + Phi(y) over a y
  lattice with local golden-section refinement (stationarity of that
  expression is exactly the selection condition);
* the method of characteristics for u_t + lambda*|grad u|^2 = 0: rays
  x(t) = x0 + 2*lambda*t*grad g(x0) carrying u = g(x0) + lambda*t*|grad g|^2;
* a first-order monotone Lax-Friedrichs grid solver with a global
  dissipation coefficient.

The tolerances used against these oracles come from standard scheme theory
(O(h) for Lax-Friedrichs, O(h^2) stencils) and are confirmed by the
convergence-ratio tests, not assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fields import ScalarField
from .grid import GridField, lattice_points
from .hjcore import HJSetup, ImplicitSolution

__all__ = [
    "ComparisonReport",
    "hopf_bruteforce",
    "characteristics_solve",
    "lax_friedrichs_solve",
    "compare_fields",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ComparisonReport:
    linf: float
    l2: float
    points_compared: int
    worst_point: Optional[np.ndarray]
    notes: str


def hopf_bruteforce(
    sol: ImplicitSolution,
    x,
    t: float,
    lower,
    upper,
    counts,
    policy: str = "min",
    refine_steps: int = 3,
) -> tuple[float, np.ndarray]:
    """Extremize the solution objective over a y lattice, then refine locally.

    policy 'min' (or 'max') returns the lattice minimum (maximum) of
    q(y) = x.y - lambda*t*|y|^2 + Phi(y), polished by coordinate-wise
    golden-section search inside +-1 lattice spacing.  On a lattice large
    enough to contain the relevant stationary points this is ground truth
    for extremal branch selection.
    """
    if policy not in ("min", "max"):
        raise ValueError("policy must be 'min' or 'max'")
    n, lam = sol.setup.n, sol.setup.lam
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
    sign = 1.0 if policy == "min" else -1.0

    def q(y: np.ndarray) -> float:
        return sign * float(x @ y - lam * t * (y @ y) + sol.phi.value(y))

    pts = lattice_points(lower, upper, counts)
    vals = np.array([q(p) for p in pts])
    best = int(np.argmin(vals))
    y = pts[best].copy()
    spacing = (upper - lower) / (counts - 1)

    for _ in range(max(0, refine_steps)):
        for a in range(n):
            y[a] = _golden_min(lambda s: q(_with(y, a, s)), y[a] - spacing[a], y[a] + spacing[a])
    return sign * q(y), y


def _with(y: np.ndarray, a: int, s: float) -> np.ndarray:
    z = y.copy()
    z[a] = s
    return z


def _golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def characteristics_solve(
    g: ScalarField, setup: HJSetup, x0_points, t: float
) -> tuple[np.ndarray, np.ndarray]:
    """Straight rays from initial data g: one scattered (x, u) sample per ray.

    p = grad g(x0) is constant along a ray, x(t) = x0 + 2*lambda*t*p and
    u(x(t), t) = g(x0) + lambda*t*|p|^2.  Valid before characteristics cross.
    """
    lam = setup.lam
    x0_points = np.atleast_2d(np.asarray(x0_points, dtype=float))
    xs = np.empty_like(x0_points)
    us = np.empty(x0_points.shape[0])
    for i, x0 in enumerate(x0_points):
        p = g.gradient(x0)
        xs[i] = x0 + 2.0 * lam * t * p
        us[i] = g.value(x0) + lam * t * float(p @ p)
    return xs, us


def lax_friedrichs_solve(
    g: GridField,
    setup: HJSetup,
    T: float,
    cfl: float = 0.4,
    sigma: Optional[np.ndarray] = None,
) -> GridField:
    """March u_t + lambda*|grad u|^2 = 0 to time T with global Lax-Friedrichs.

    Numerical Hamiltonian H(p-, p+) = lambda*|(p- + p+)/2|^2
    - sum_a (sigma_a/2)(p_a+ - p_a-), with sigma_a = 2*|lambda|*max|p_a|
    measured on the initial data (gradients of this family do not grow; an
    instability guard backs that up).  One ghost layer per side comes from
    linear extrapolation.  dt = cfl*min(h)/sum(sigma), with the step count
    rounded up so the march lands on T exactly.  Pass ``sigma`` explicitly
    to run two comparable fields with identical dissipation.
    """
    if T <= 0.0:
        raise ValueError("final time T must be positive")
    if not 0.0 < cfl < 1.0:
        raise ValueError("cfl must lie in (0, 1)")
    if g.n != setup.n:
        raise ValueError("grid dimension does not match the setup")
    lam = setup.lam
    h = g.spacing
    u = g.values.copy()

    if sigma is None:
        sigma = np.empty(g.n)
        for a in range(g.n):
            quot = np.abs(np.diff(u, axis=a)) / h[a]
            sigma[a] = 2.0 * abs(lam) * float(np.max(quot)) if quot.size else 0.0
    else:
        sigma = np.asarray(sigma, dtype=float).reshape(g.n)

    sigma_sum = float(np.sum(sigma))
    if sigma_sum <= 0.0:
        # flat data: the flux vanishes identically, one trivial step suffices
        return GridField(g.lower, g.upper, g.counts, u)

    dt_cap = cfl * float(np.min(h)) / sigma_sum
    steps = max(1, int(math.ceil(T / dt_cap)))
    dt = T / steps
    guard = 1e6 * max(1.0, float(np.max(np.abs(u))))

    for _ in range(steps):
        ham = np.zeros_like(u)
        for a in range(g.n):
            padded = _pad_linear(u, a)
            fwd = (np.take(padded, range(2, u.shape[a] + 2), axis=a) - u) / h[a]
            bwd = (u - np.take(padded, range(0, u.shape[a]), axis=a)) / h[a]
            ham += lam * (0.5 * (fwd + bwd)) ** 2
            ham -= 0.5 * sigma[a] * (fwd - bwd)
        u = u - dt * ham
        if float(np.max(np.abs(u))) > guard:
            raise RuntimeError("Lax-Friedrichs march became unstable (max |u| blew up)")
    return GridField(g.lower, g.upper, g.counts, u)


def _pad_linear(u: np.ndarray, axis: int) -> np.ndarray:
    first = np.take(u, [0], axis=axis)
    second = np.take(u, [1], axis=axis)
    last = np.take(u, [u.shape[axis] - 1], axis=axis)
    penult = np.take(u, [u.shape[axis] - 2], axis=axis)
    return np.concatenate([2.0 * first - second, u, 2.0 * last - penult], axis=axis)


def compare_fields(
    a: Callable[[np.ndarray], float],
    b: Callable[[np.ndarray], float],
    lower,
    upper,
    counts,
) -> ComparisonReport:
    """L-infinity and RMS difference of two point evaluators over a lattice.

    Points where either evaluator raises are excluded from the norms and
    counted in the notes.
    """
    pts = lattice_points(lower, upper, counts)
    diffs = []
    kept_points = []
    failed = 0
    for p in pts:
        try:
            diffs.append(abs(float(a(p)) - float(b(p))))
            kept_points.append(p)
        except Exception:  # noqa: BLE001 - oracle comparison tolerates holes
            failed += 1
    if not diffs:
        return ComparisonReport(
            linf=float("nan"),
            l2=float("nan"),
            points_compared=0,
            worst_point=None,
            notes=f"no comparable points ({failed} evaluation failures)",
        )
    diffs = np.asarray(diffs)
    worst = int(np.argmax(diffs))
    notes = "ok" if failed == 0 else f"{failed} evaluation failures excluded"
    return ComparisonReport(
        linf=float(diffs[worst]),
        l2=float(np.sqrt(np.mean(diffs**2))),
        points_compared=len(diffs),
        worst_point=np.asarray(kept_points[worst]),
        notes=notes,
    )
