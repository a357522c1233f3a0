"""Hodograph transforms: pointwise, grid-global, and the transformed H side.

Pointwise (valid wherever the maps are locally invertible)::

    forward:  y_a = du/dx_a,  H = x.grad u - u      (time passes through, y_0 = t)
    inverse:  x_a = dH/dy_a,  u = x.y - H

Grid-global: the Legendre-Fenchel conjugate g*(y) = max_x [x.y - g(x)] over
sampled data, the multivalued-safe counterpart of the pointwise map (the two
agree exactly only for convex g).  The conjugate is computed per axis with a
linear-time lower-envelope scan; a naive quadratic scan of the same
per-axis factorization is provided as the independent cross-check and the
fast kernel is required to match it float-for-float.

For the parametrized solution family, H takes the closed form

    H(t, y) = lambda*t*|y|^2 - Phi(y)

which is affine in t, and the transformed equation reads
dH/dy_0 - lambda*|y|^2 = 0 (with lambda = -1 this is dH/dy_0 = -y.y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ScalarField
from .grid import GridField
from .hjcore import ImplicitSolution

__all__ = [
    "HodographImage",
    "forward_point",
    "inverse_point",
    "conjugate_grid",
    "conjugate_grid_bruteforce",
    "default_dual_box",
    "phi_from_initial_data",
    "H_general",
    "h_field",
    "transformed_pde_residual",
]

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class HodographImage:
    """Image (y, H) of one spatial point under the forward transform."""

    y: np.ndarray
    H: float


def forward_point(u: ScalarField, x) -> HodographImage:
    """Map a point to hodograph coordinates: y = grad u(x), H = x.y - u(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = u.gradient(x)
    return HodographImage(y=y, H=float(x @ y - u.value(x)))


def inverse_point(H: ScalarField, y) -> tuple[np.ndarray, float]:
    """Map hodograph coordinates back: x = grad H(y), u = x.y - H(y)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = H.gradient(y)
    return x, float(x @ y - H.value(y))


# ---------------------------------------------------------------------------
# Grid conjugate
# ---------------------------------------------------------------------------

def _conjugate_1d_direct(xs: np.ndarray, gs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Reference kernel: direct O(N*M) scan of max_j (x_j*y - g_j)."""
    out = np.empty(ys.size)
    for k in range(ys.size):
        out[k] = np.max(xs * ys[k] - gs)
    return out


def _hull_candidates(xs: np.ndarray, gs: np.ndarray) -> np.ndarray:
    """Lower convex hull with a rounding-slack tolerance.

    Points above the hull by more than a few ulps can never realize the
    floating-point maximum of x*y - g at any y, so they are pruned; points
    within the slack are kept so the walk sees every float-level contender.
    """
    keep: list[int] = []
    for j in range(xs.size):
        while len(keep) >= 2:
            i0, i1 = keep[-2], keep[-1]
            lhs = (gs[i1] - gs[i0]) * (xs[j] - xs[i0])
            rhs = (gs[j] - gs[i0]) * (xs[i1] - xs[i0])
            slack = 64.0 * _EPS * (abs(lhs) + abs(rhs) + 1e-300)
            if lhs - rhs > slack:
                keep.pop()
            else:
                break
        keep.append(j)
    return np.asarray(keep, dtype=np.intp)


def _conjugate_1d_fast(xs: np.ndarray, gs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Linear-time kernel: monotone argmax walk over lower-envelope candidates.

    Produces results identical float-for-float with the direct scan: the
    candidate values use the same expression x_j*y - g_j, the walk advances
    through non-decreasing values, and a slack-bounded lookahead absorbs
    ulp-level wobble around the peak (including whole-plateau ties for
    affine data).  ys must be ascending.
    """
    cand = _hull_candidates(xs, gs)
    cx = xs[cand]
    cg = gs[cand]
    m = cx.size
    out = np.empty(ys.size)
    j = 0
    for k in range(ys.size):
        y = ys[k]
        while j + 1 < m and cx[j + 1] * y - cg[j + 1] >= cx[j] * y - cg[j]:
            j += 1
        best = cx[j] * y - cg[j]
        look = j + 1
        while look < m:
            v = cx[look] * y - cg[look]
            if v > best:
                best = v
                j = look
            elif v < best - 64.0 * _EPS * (abs(v) + abs(best) + abs(cg[look])):
                break
            look += 1
        out[k] = best
    return out


def _conjugate_values(grid: GridField, dual: GridField, kernel) -> np.ndarray:
    # Factorized conjugate: transform the last axis first, negating between
    # axes (max_x [x.y - g] = max_{x'} [x'.y' - (-max_{x_n} [x_n y_n - g])]).
    cur = grid.values
    n = grid.n
    for a in reversed(range(n)):
        cur = _apply_axis(cur, a, grid.axis(a), dual.axis(a), kernel)
        if a != 0:
            cur = -cur
    return cur


def _apply_axis(arr: np.ndarray, axis: int, xs: np.ndarray, ys: np.ndarray, kernel) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    lead = moved.shape[:-1]
    flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
    out = np.empty((flat.shape[0], ys.size))
    for r in range(flat.shape[0]):
        out[r] = kernel(xs, flat[r], ys)
    return np.moveaxis(out.reshape(lead + (ys.size,)), -1, axis)


def _dual_grid_shell(g: GridField, dual_lower, dual_upper, dual_counts) -> GridField:
    dual_lower = np.atleast_1d(np.asarray(dual_lower, dtype=float))
    dual_upper = np.atleast_1d(np.asarray(dual_upper, dtype=float))
    dual_counts = np.atleast_1d(np.asarray(dual_counts, dtype=np.int64))
    if dual_lower.size != g.n:
        raise ValueError(f"dual box has {dual_lower.size} axes, field has {g.n}")
    # placeholder values; replaced by the kernel output
    return GridField(dual_lower, dual_upper, dual_counts, np.zeros(tuple(dual_counts)))


def conjugate_grid(g: GridField, dual_lower, dual_upper, dual_counts) -> GridField:
    """Legendre-Fenchel conjugate of sampled g on a caller-chosen dual box.

    The maximum ranges over the sample lattice of g, so the result equals the
    direct scan exactly; for convex smooth g it approximates the continuum
    conjugate to O(spacing^2).
    """
    dual = _dual_grid_shell(g, dual_lower, dual_upper, dual_counts)
    values = _conjugate_values(g, dual, _conjugate_1d_fast)
    return GridField(dual.lower, dual.upper, dual.counts, values)


def conjugate_grid_bruteforce(g: GridField, dual_lower, dual_upper, dual_counts) -> GridField:
    """Independent cross-check: same per-axis factorization, naive O(N^2) kernel."""
    dual = _dual_grid_shell(g, dual_lower, dual_upper, dual_counts)
    values = _conjugate_values(g, dual, _conjugate_1d_direct)
    return GridField(dual.lower, dual.upper, dual.counts, values)


def default_dual_box(g: GridField, pad: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis range of the sampled difference quotients, padded by ``pad``."""
    lo = np.empty(g.n)
    hi = np.empty(g.n)
    for a in range(g.n):
        quot = np.diff(g.values, axis=a) / g.spacing[a]
        lo[a], hi[a] = float(np.min(quot)), float(np.max(quot))
        width = hi[a] - lo[a]
        margin = pad * width if width > 0.0 else max(1.0, pad * abs(lo[a]))
        lo[a] -= margin
        hi[a] += margin
    return lo, hi


def phi_from_initial_data(
    g,
    dual_lower,
    dual_upper,
    dual_counts,
    box_lower=None,
    box_upper=None,
    box_counts=None,
) -> GridField:
    """Parameter function from initial data u(x, 0) = g(x): Phi = -g*.

    At t = 0 the implicit solution reduces to u = x.y + Phi(y) with
    x = -grad Phi(y), which is the Legendre structure u(x, 0) = g(x) with
    Phi the negated conjugate (exact for convex g, convexified otherwise).
    ``g`` may be a GridField or a ScalarField; the latter needs the sampling
    box and counts.
    """
    if isinstance(g, ScalarField):
        if box_lower is None or box_upper is None or box_counts is None:
            raise ValueError("sampling box and counts are required for a ScalarField input")
        g = GridField.sample(g.value, box_lower, box_upper, box_counts)
    star = conjugate_grid(g, dual_lower, dual_upper, dual_counts)
    return GridField(star.lower, star.upper, star.counts, -star.values)


# ---------------------------------------------------------------------------
# H side of the transform
# ---------------------------------------------------------------------------

def H_general(sol: ImplicitSolution, t: float, y) -> float:
    """H(t, y) = lambda*t*|y|^2 - Phi(y) (with lambda = -1: H = -t*y.y - Phi)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lam = sol.setup.lam
    return float(lam * t * (y @ y) - sol.phi.value(y))


class _HSlice(ScalarField):
    """H(t fixed, .) as a field over y with analytic derivatives from Phi."""

    def __init__(self, sol: ImplicitSolution, t: float):
        self.sol = sol
        self.t = float(t)
        self.n = sol.setup.n

    def value(self, point) -> float:
        return H_general(self.sol, self.t, self._point(point))

    def gradient(self, point) -> np.ndarray:
        y = self._point(point)
        return 2.0 * self.sol.setup.lam * self.t * y - self.sol.phi.gradient(y)

    def hessian(self, point) -> np.ndarray:
        y = self._point(point)
        n = self.n
        return 2.0 * self.sol.setup.lam * self.t * np.eye(n) - self.sol.phi.hessian(y)


def h_field(sol: ImplicitSolution, t: float) -> ScalarField:
    """The y-field H(t, .); inverse_point on it reproduces the implicit solution."""
    return _HSlice(sol, t)


def transformed_pde_residual(sol: ImplicitSolution, t: float, y, h: float = 1e-3) -> float:
    """Residual dH/dy_0 - lambda*|y|^2 with dH/dy_0 by a central difference.

    H_general is affine in t, so the stencil is exact and the residual is
    zero to rounding for any Phi and any step.
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dH_dt = (H_general(sol, t + h, y) - H_general(sol, t - h, y)) / (2.0 * h)
    return float(dH_dt - sol.setup.lam * (y @ y))
