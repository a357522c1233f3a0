"""Implicit general solutions of u_t + lambda*|grad u|^2 = 0.

The solution family is parametrized by a function Phi of auxiliary variables
y = (y_1..y_n):

    u(x, t)  = x.y - lambda*t*|y|^2 + Phi(y)          (value)
    F_a(y)   = x_a - 2*lambda*t*y_a + dPhi/dy_a = 0   (selection condition)

At a root y* of F the gradient identity grad_x u = y* holds, so

    Hess_x u = (2*lambda*t*I - Hess Phi(y*))^{-1}

by implicit differentiation of F.  The two sign conventions found in the
source material are exposed as presets: ``paper-eq1`` (lambda = -1, the
equation as printed) and ``paper-sol`` (lambda = +1/2, the convention the
printed solution formulas actually satisfy; the residual test suite
documents the reconciliation).

Degenerate (rank-0) solutions are the plane waves u = b.x - lambda*|b|^2*t + c,
implemented in closed form.  Solutions of intermediate rank 1..n-1 have no
parametrization here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .fields import ScalarField

__all__ = [
    "HJSetup",
    "ImplicitSolution",
    "BranchResult",
    "PlaneWaveSolution",
    "SingularHessian",
    "StencilError",
    "PRESETS",
    "DEFAULT_RANK_TOL",
    "DEFAULT_CAUSTIC_TOL",
    "condition_residual",
    "condition_jacobian",
    "u_from_y",
    "hessian_u",
    "rank_classify",
    "plane_wave_eval",
    "pde_residual_numeric",
]

PRESETS = {"paper-eq1": -1.0, "paper-sol": 0.5}

DEFAULT_RANK_TOL = 1e-9
DEFAULT_CAUSTIC_TOL = 1e-12


@dataclass(frozen=True)
class HJSetup:
    """Spatial dimension n and the coefficient lambda of u_t + lambda*|grad u|^2 = 0."""

    n: int
    lam: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be at least 1")
        if self.lam == 0.0:
            raise ValueError("lambda must be nonzero")

    @classmethod
    def preset(cls, name: str, n: int) -> "HJSetup":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        return cls(n=n, lam=PRESETS[name])


@dataclass(frozen=True)
class ImplicitSolution:
    """A setup together with the parameter function Phi."""

    setup: HJSetup
    phi: ScalarField

    def __post_init__(self):
        if self.phi.n != self.setup.n:
            raise ValueError(
                f"Phi has {self.phi.n} variables but the setup has n={self.setup.n}"
            )


@dataclass(frozen=True)
class SingularHessian:
    """Marker for Hess u at a caustic, where 2*lambda*t*I - Hess Phi is singular."""

    n: int


@dataclass(frozen=True)
class BranchResult:
    """One root of the selection condition at a query point, with diagnostics."""

    y: np.ndarray
    u: float
    hess_u: Union[np.ndarray, SingularHessian]
    rank: int
    converged: bool
    iterations: int
    condition_residual_norm: float
    det_jacobian: float
    status: str  # converged | max_iter | singular_jacobian | domain_escape | stalled

    @property
    def at_caustic(self) -> bool:
        return isinstance(self.hess_u, SingularHessian)


@dataclass(frozen=True)
class PlaneWaveSolution:
    """Rank-0 solution u = b.x - lambda*|b|^2*t + c (exact for any b, c)."""

    setup: HJSetup
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if b.shape != (self.setup.n,):
            raise ValueError("b must have n components")
        object.__setattr__(self, "b", b)

    def gradient(self) -> np.ndarray:
        return self.b.copy()

    def hessian(self) -> np.ndarray:
        return np.zeros((self.setup.n, self.setup.n))


class StencilError(RuntimeError):
    """A finite-difference stencil point could not be evaluated."""

    def __init__(self, point: np.ndarray, t: float, cause: Exception):
        super().__init__(f"stencil evaluation failed at x={point}, t={t}: {cause}")
        self.point = point
        self.t = t
        self.cause = cause


def _as_point(x, n: int) -> np.ndarray:
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    if pt.shape != (n,):
        raise ValueError(f"expected a point with {n} coordinates, got shape {pt.shape}")
    return pt


def condition_residual(sol: ImplicitSolution, x, t: float, y) -> np.ndarray:
    """F(y) = x - 2*lambda*t*y + grad Phi(y); roots are admissible parameters."""
    n, lam = sol.setup.n, sol.setup.lam
    x = _as_point(x, n)
    y = _as_point(y, n)
    return x - 2.0 * lam * t * y + sol.phi.gradient(y)


def condition_jacobian(sol: ImplicitSolution, t: float, y) -> np.ndarray:
    """dF/dy = -2*lambda*t*I + Hess Phi(y); symmetric, vanishing at caustics."""
    n, lam = sol.setup.n, sol.setup.lam
    y = _as_point(y, n)
    return -2.0 * lam * t * np.eye(n) + sol.phi.hessian(y)


def u_from_y(sol: ImplicitSolution, x, t: float, y) -> float:
    """u = x.y - lambda*t*|y|^2 + Phi(y); y need not be a root of the condition."""
    n, lam = sol.setup.n, sol.setup.lam
    x = _as_point(x, n)
    y = _as_point(y, n)
    return float(x @ y - lam * t * (y @ y) + sol.phi.value(y))


def _det_threshold(m: np.ndarray, tol: float) -> float:
    # |det| scales like ||M||^n; keep the cutoff relative to that scale
    scale = max(1.0, float(np.max(np.abs(m))))
    return tol * scale ** m.shape[0]


def hessian_u(
    sol: ImplicitSolution, t: float, y, caustic_tol: float = DEFAULT_CAUSTIC_TOL
) -> Union[np.ndarray, SingularHessian]:
    """Hess_x u = (2*lambda*t*I - Hess Phi(y))^{-1} at a condition root y.

    Returns a SingularHessian marker instead of raising when the matrix to
    invert is singular to within ``caustic_tol`` (relative to its scale);
    that locus is the caustic where solution branches fold.
    """
    n, lam = sol.setup.n, sol.setup.lam
    y = _as_point(y, n)
    m = 2.0 * lam * t * np.eye(n) - sol.phi.hessian(y)
    det = float(np.linalg.det(m))
    if abs(det) <= _det_threshold(m, caustic_tol):
        return SingularHessian(n)
    try:
        return np.linalg.inv(m)
    except np.linalg.LinAlgError:
        return SingularHessian(n)


def rank_classify(
    hess: Union[np.ndarray, SingularHessian], tol: float = DEFAULT_RANK_TOL
) -> int:
    """Numerical rank: singular values exceeding tol * (largest singular value).

    The zero matrix has rank 0 by convention.  The SingularHessian marker is
    the caustic limit of a full-rank branch (all curvatures diverging), so it
    classifies as full rank n; use the caustic flag, not the rank, to detect
    the degeneracy.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if isinstance(hess, SingularHessian):
        return hess.n
    m = np.asarray(hess, dtype=float)
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def plane_wave_eval(pw: PlaneWaveSolution, x, t: float) -> float:
    lam = pw.setup.lam
    x = _as_point(x, pw.setup.n)
    return float(pw.b @ x - lam * (pw.b @ pw.b) * t + pw.c)


def pde_residual_numeric(
    u: Callable[[np.ndarray, float], float],
    setup: HJSetup,
    x,
    t: float,
    h: float = 1e-3,
) -> float:
    """Residual u_t + lambda*|grad u|^2 by central differences of step h.

    ``u`` is a black box (x, t) -> value.  For an exact solution the result
    is O(h^2); for affine-in-(x,t) fields the stencil is exact up to
    rounding.  Stencil evaluation failures (a caustic inside the stencil,
    a domain error of Phi) surface as StencilError naming the failing point.
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")
    x = _as_point(x, setup.n)

    def ev(px: np.ndarray, pt: float) -> float:
        try:
            return float(u(px, pt))
        except Exception as exc:  # noqa: BLE001 - reported with location
            raise StencilError(px, pt, exc) from exc

    u_t = (ev(x, t + h) - ev(x, t - h)) / (2.0 * h)
    grad_sq = 0.0
    for a in range(setup.n):
        e = np.zeros(setup.n)
        e[a] = h
        g = (ev(x + e, t) - ev(x - e, t)) / (2.0 * h)
        grad_sq += g * g
    return u_t + setup.lam * grad_sq
