"""Branch solving for the implicit condition F(y) = x - 2*lambda*t*y + grad Phi(y).

The condition is generically multivalued; every root is one branch of the
solution surface.  This module finds them with damped Newton iteration from
a lattice of seeds, deduplicates and orders the results, selects branches by
policy, and sweeps (x, t) grids with warm starts and caustic flagging.

Everything is deterministic: fixed seed lattices, deterministic dedup order,
and value ties broken lexicographically in y.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import ExprError
from .grid import lattice_points
from .hjcore import (
    DEFAULT_CAUSTIC_TOL,
    BranchResult,
    ImplicitSolution,
    SingularHessian,
    _det_threshold,
    condition_jacobian,
    condition_residual,
    hessian_u,
    rank_classify,
    u_from_y,
)

__all__ = [
    "SolveOptions",
    "BranchSet",
    "SweepResult",
    "BranchTrackingError",
    "newton_solve",
    "multistart_branches",
    "select_branch",
    "sweep_grid",
    "branch_evaluator",
]

_DOMAIN_ERRORS = (ExprError, ZeroDivisionError, OverflowError)

POLICIES = ("all", "min-u", "max-u")


@dataclass(frozen=True)
class SolveOptions:
    """Newton/multistart controls; defaults are sized for desk-scale problems."""

    newton_tol: float = 1e-10
    max_iter: int = 50
    damping: float = 0.5
    min_step: float = 1e-6
    multistart_lower: Optional[np.ndarray] = None  # default -4 per axis
    multistart_upper: Optional[np.ndarray] = None  # default +4 per axis
    multistart_count: int = 7
    dedup_tol: float = 1e-6
    branch_policy: str = "all"
    u_tie_tol: float = 1e-9

    def __post_init__(self):
        if self.newton_tol <= 0 or self.damping <= 0 or self.min_step <= 0:
            raise ValueError("tolerances and step controls must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")
        if self.dedup_tol <= 0 or self.u_tie_tol <= 0:
            raise ValueError("dedup_tol and u_tie_tol must be positive")
        if self.branch_policy not in POLICIES:
            raise ValueError(f"branch_policy must be one of {POLICIES}")

    def seed_box(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lower = (
            np.full(n, -4.0)
            if self.multistart_lower is None
            else np.atleast_1d(np.asarray(self.multistart_lower, dtype=float))
        )
        upper = (
            np.full(n, 4.0)
            if self.multistart_upper is None
            else np.atleast_1d(np.asarray(self.multistart_upper, dtype=float))
        )
        if lower.shape != (n,) or upper.shape != (n,) or np.any(upper <= lower):
            raise ValueError("multistart box must be a nonempty n-dimensional box")
        return lower, upper


@dataclass(frozen=True)
class BranchSet:
    """Deduplicated converged branches at one query point, sorted by u."""

    x: np.ndarray
    t: float
    branches: tuple[BranchResult, ...]

    def __len__(self) -> int:
        return len(self.branches)

    @property
    def empty(self) -> bool:
        return not self.branches


class BranchTrackingError(RuntimeError):
    """Newton failed to follow a branch from the provided seed."""


def newton_solve(
    sol: ImplicitSolution, x, t: float, y0, opts: Optional[SolveOptions] = None
) -> BranchResult:
    """Damped Newton on the condition from a single seed.

    Backtracking halves the step until the residual norm decreases or the
    minimum step is hit.  A singular Jacobian is regularized once with
    +mu*I (mu = 1e-8 * scale); if that still makes no progress the result
    reports status ``singular_jacobian``.  Iterates that leave the domain of
    Phi report ``domain_escape``.  Non-converged results carry the last
    iterate and diagnostics rather than raising.
    """
    opts = opts or SolveOptions()
    n = sol.setup.n
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()

    try:
        fv = condition_residual(sol, x, t, y)
    except _DOMAIN_ERRORS:
        return _finish(sol, x, t, y, converged=False, iterations=0,
                       res_norm=float("nan"), status="domain_escape")
    res_norm = float(np.linalg.norm(fv))
    iterations = 0
    status = "converged" if res_norm <= opts.newton_tol else ""

    while res_norm > opts.newton_tol and iterations < opts.max_iter:
        try:
            jac = condition_jacobian(sol, t, y)
        except _DOMAIN_ERRORS:
            status = "domain_escape"
            break
        dy, regularized = _newton_step(jac, -fv)
        if dy is None:
            status = "singular_jacobian"
            break

        step = 1.0
        accepted = False
        domain_blocked = False
        while step >= opts.min_step:
            y_try = y + step * dy
            try:
                f_try = condition_residual(sol, x, t, y_try)
            except _DOMAIN_ERRORS:
                domain_blocked = True
                step *= opts.damping
                continue
            r_try = float(np.linalg.norm(f_try))
            if np.isfinite(r_try) and r_try < res_norm:
                y, fv, res_norm = y_try, f_try, r_try
                accepted = True
                break
            step *= opts.damping
        if not accepted:
            if regularized:
                status = "singular_jacobian"
            elif domain_blocked:
                status = "domain_escape"
            else:
                status = "stalled"
            break
        iterations += 1

    converged = res_norm <= opts.newton_tol
    if converged:
        status = "converged"
    elif not status:
        status = "max_iter"
    return _finish(sol, x, t, y, converged, iterations, res_norm, status)


def _newton_step(jac: np.ndarray, rhs: np.ndarray) -> tuple[Optional[np.ndarray], bool]:
    try:
        dy = np.linalg.solve(jac, rhs)
        if np.all(np.isfinite(dy)):
            return dy, False
    except np.linalg.LinAlgError:
        pass
    mu = 1e-8 * max(1.0, float(np.max(np.abs(jac))))
    try:
        dy = np.linalg.solve(jac + mu * np.eye(jac.shape[0]), rhs)
        if np.all(np.isfinite(dy)):
            return dy, True
    except np.linalg.LinAlgError:
        pass
    return None, True


def _finish(
    sol: ImplicitSolution,
    x: np.ndarray,
    t: float,
    y: np.ndarray,
    converged: bool,
    iterations: int,
    res_norm: float,
    status: str,
) -> BranchResult:
    n = sol.setup.n
    try:
        u = u_from_y(sol, x, t, y)
    except _DOMAIN_ERRORS:
        u = float("nan")
    try:
        det_j = float(np.linalg.det(condition_jacobian(sol, t, y)))
    except _DOMAIN_ERRORS:
        det_j = float("nan")
    try:
        hess = hessian_u(sol, t, y)
    except _DOMAIN_ERRORS:
        hess = SingularHessian(n)
    return BranchResult(
        y=y,
        u=u,
        hess_u=hess,
        rank=rank_classify(hess),
        converged=converged,
        iterations=iterations,
        condition_residual_norm=res_norm,
        det_jacobian=det_j,
        status=status,
    )


# ---------------------------------------------------------------------------
# Multistart and ordering
# ---------------------------------------------------------------------------

def _tie_groups(branches: list[BranchResult], tie_tol: float) -> list[list[BranchResult]]:
    """Partition u-sorted branches into near-tie groups (abs+rel tolerance)."""
    groups: list[list[BranchResult]] = []
    for br in branches:
        if groups and abs(br.u - groups[-1][-1].u) <= tie_tol * max(1.0, abs(br.u)):
            groups[-1].append(br)
        else:
            groups.append([br])
    return groups


def _sort_branches(found: list[BranchResult], tie_tol: float) -> tuple[BranchResult, ...]:
    ranked = sorted(found, key=lambda b: b.u)
    ordered: list[BranchResult] = []
    for group in _tie_groups(ranked, tie_tol):
        ordered.extend(sorted(group, key=lambda b: tuple(b.y)))
    return tuple(ordered)


def multistart_branches(
    sol: ImplicitSolution,
    x,
    t: float,
    opts: Optional[SolveOptions] = None,
    extra_seeds: Sequence[np.ndarray] = (),
) -> BranchSet:
    """All branches reachable from a seed lattice (plus optional warm seeds).

    Converged roots are deduplicated by y-distance (the first found in seed
    order wins) and sorted by u ascending with lexicographic y tie-breaks.
    An empty branch set is a reportable outcome, not an error.
    """
    opts = opts or SolveOptions()
    n = sol.setup.n
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lower, upper = opts.seed_box(n)
    seeds = list(extra_seeds) + list(
        lattice_points(lower, upper, np.full(n, opts.multistart_count, dtype=np.int64))
    )
    kept: list[BranchResult] = []
    for seed in seeds:
        res = newton_solve(sol, x, t, np.asarray(seed, dtype=float), opts)
        if not res.converged:
            continue
        if any(np.linalg.norm(res.y - k.y) <= opts.dedup_tol for k in kept):
            continue
        kept.append(res)
    return BranchSet(x=x, t=float(t), branches=_sort_branches(kept, opts.u_tie_tol))


def select_branch(branch_set: BranchSet, policy: str) -> BranchResult:
    """Pick the extremal-u branch; ties go to the lexicographically smallest y."""
    if policy == "all":
        raise ValueError("policy 'all' keeps the whole set; pick min-u or max-u")
    if policy not in POLICIES:
        raise ValueError(f"unknown branch policy {policy!r}")
    if branch_set.empty:
        raise ValueError("cannot select from an empty branch set")
    if policy == "min-u":
        return branch_set.branches[0]
    groups = _tie_groups(list(branch_set.branches), SolveOptions().u_tie_tol)
    return groups[-1][0]


# ---------------------------------------------------------------------------
# Continuation sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """Branch tables over an x-lattice and sorted t-list, with a caustic map."""

    x_points: np.ndarray  # (m, n), row-major over x_shape
    x_shape: tuple[int, ...]
    t_list: tuple[float, ...]
    branch_sets: tuple[tuple[BranchSet, ...], ...]  # [it][ix]
    det_ref: np.ndarray  # (n_t, m) signed det J of the least-|det| branch
    caustic_flags: np.ndarray  # (n_t, m) bool
    failures: tuple[tuple[int, int], ...]  # (it, ix) with no converged branch

    def branch_counts(self) -> np.ndarray:
        return np.array(
            [[len(bs) for bs in row] for row in self.branch_sets], dtype=int
        )

    def caustic_points(self) -> list[tuple[np.ndarray, float]]:
        out = []
        for it in range(len(self.t_list)):
            for ix in range(self.x_points.shape[0]):
                if self.caustic_flags[it, ix]:
                    out.append((self.x_points[ix], self.t_list[it]))
        return out


def sweep_grid(
    sol: ImplicitSolution,
    x_lower,
    x_upper,
    x_counts,
    t_list: Sequence[float],
    opts: Optional[SolveOptions] = None,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> SweepResult:
    """Continuation sweep over an x-lattice and sorted t-list.

    Each point is solved from its row-major x-predecessors' and previous
    t-slice's branches (warm starts) plus the fresh seed lattice, so warm
    and cold runs agree wherever Newton converges.  A point is flagged as
    caustic when the signed det J of its least-|det| branch changes sign
    against a neighbor, or falls below the singularity threshold.  Points
    where no seed converges are recorded as failures and the sweep continues.
    """
    opts = opts or SolveOptions()
    t_values = [float(t) for t in t_list]
    if not t_values or sorted(t_values) != t_values:
        raise ValueError("t_list must be nonempty and sorted ascending")
    x_counts = np.atleast_1d(np.asarray(x_counts, dtype=np.int64))
    pts = lattice_points(x_lower, x_upper, x_counts)
    m = pts.shape[0]
    strides = [int(np.prod(x_counts[a + 1:])) for a in range(x_counts.size)]

    det_ref = np.full((len(t_values), m), np.nan)
    flags = np.zeros((len(t_values), m), dtype=bool)
    tables: list[tuple[BranchSet, ...]] = []
    failures: list[tuple[int, int]] = []

    for it, t in enumerate(t_values):
        row: list[BranchSet] = []
        for ix in range(m):
            warm: list[np.ndarray] = []
            for a in range(x_counts.size):
                if (ix // strides[a]) % x_counts[a] > 0:
                    warm.extend(b.y for b in row[ix - strides[a]].branches)
            if it > 0:
                warm.extend(b.y for b in tables[it - 1][ix].branches)
            bset = multistart_branches(sol, pts[ix], t, opts, extra_seeds=warm)
            row.append(bset)
            if bset.empty:
                failures.append((it, ix))
                continue
            ref = min(bset.branches, key=lambda b: abs(b.det_jacobian))
            det_ref[it, ix] = ref.det_jacobian
            try:
                jac = condition_jacobian(sol, t, ref.y)
                threshold = _det_threshold(jac, caustic_tol)
            except _DOMAIN_ERRORS:
                threshold = caustic_tol
            if abs(ref.det_jacobian) <= threshold:
                flags[it, ix] = True
            for a in range(x_counts.size):
                if (ix // strides[a]) % x_counts[a] > 0:
                    prev = det_ref[it, ix - strides[a]]
                    if np.isfinite(prev) and prev * det_ref[it, ix] < 0.0:
                        flags[it, ix] = True
            if it > 0:
                prev = det_ref[it - 1, ix]
                if np.isfinite(prev) and prev * det_ref[it, ix] < 0.0:
                    flags[it, ix] = True
        tables.append(tuple(row))

    return SweepResult(
        x_points=pts,
        x_shape=tuple(int(c) for c in x_counts),
        t_list=tuple(t_values),
        branch_sets=tuple(tables),
        det_ref=det_ref,
        caustic_flags=flags,
        failures=tuple(failures),
    )


def branch_evaluator(
    sol: ImplicitSolution, y_seed, opts: Optional[SolveOptions] = None
) -> Callable[[np.ndarray, float], float]:
    """A (x, t) -> u black box that follows the branch seeded at y_seed.

    Each call runs Newton from the same seed, so nearby queries stay on the
    same smooth sheet; raises BranchTrackingError if Newton fails, which
    pde_residual_numeric reports as a stencil failure.
    """
    opts = opts or SolveOptions()
    seed = np.atleast_1d(np.asarray(y_seed, dtype=float)).copy()

    def u_of(x, t: float) -> float:
        res = newton_solve(sol, x, t, seed, opts)
        if not res.converged:
            raise BranchTrackingError(
                f"branch lost at x={x}, t={t} (status {res.status})"
            )
        return res.u

    return u_of
