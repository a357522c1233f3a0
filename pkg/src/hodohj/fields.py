"""Differentiable scalar fields: the common carrier for parameter functions
and initial data.

Three backends cover the practical supply routes: parsed expression text,
the closed-form quadratic family, and uniformly sampled grids (multilinear
interpolation with central-difference derivatives).  All fields are
immutable and safe for concurrent evaluation.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

from .expr import Expression, parse
from .grid import GridField

__all__ = ["ScalarField", "ExpressionField", "QuadraticField", "GridInterpolantField"]


class ScalarField(ABC):
    """A twice-differentiable real function of n real variables."""

    n: int

    @abstractmethod
    def value(self, point) -> float: ...

    @abstractmethod
    def gradient(self, point) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, point) -> np.ndarray: ...

    def _point(self, point) -> np.ndarray:
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.shape != (self.n,):
            raise ValueError(f"expected a point with {self.n} coordinates, got {pt.shape}")
        return pt


class ExpressionField(ScalarField):
    """Field backed by a parsed expression; derivatives via forward-mode duals."""

    def __init__(self, expression: Expression | str, variables: Optional[Sequence[str]] = None):
        if isinstance(expression, str):
            if variables is None:
                raise ValueError("variables are required when passing expression text")
            expression = parse(expression, variables)
        self.expression = expression
        self.n = expression.n

    def value(self, point) -> float:
        return self.expression.value(self._point(point))

    def gradient(self, point) -> np.ndarray:
        return self.expression.jet(self._point(point)).gradient

    def hessian(self, point) -> np.ndarray:
        return self.expression.jet(self._point(point)).hessian


class QuadraticField(ScalarField):
    """The closed-form family 0.5 * y'Ay + b.y + c (A = alpha*I by default)."""

    def __init__(
        self,
        n: int,
        alpha: float = 1.0,
        matrix: Optional[np.ndarray] = None,
        linear: Optional[np.ndarray] = None,
        offset: float = 0.0,
    ):
        self.n = int(n)
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.shape != (self.n, self.n):
                raise ValueError("matrix must be n x n")
            if not np.allclose(matrix, matrix.T):
                raise ValueError("matrix must be symmetric")
            self.matrix = matrix
        else:
            self.matrix = float(alpha) * np.eye(self.n)
        self.linear = (
            np.zeros(self.n) if linear is None else np.asarray(linear, dtype=float).reshape(self.n)
        )
        self.offset = float(offset)

    def value(self, point) -> float:
        y = self._point(point)
        return float(0.5 * y @ self.matrix @ y + self.linear @ y + self.offset)

    def gradient(self, point) -> np.ndarray:
        y = self._point(point)
        return self.matrix @ y + self.linear

    def hessian(self, point) -> np.ndarray:
        self._point(point)
        return self.matrix.copy()


class GridInterpolantField(ScalarField):
    """Multilinear interpolation of a GridField.

    Values come from the piecewise-multilinear interpolant (the local form is
    extended outside the box, so evaluation stays continuous for iterates
    that step slightly past the bounds).  Derivatives are central differences
    of the interpolant with a default step of one grid spacing per axis.
    """

    def __init__(self, grid: GridField, fd_step: Optional[np.ndarray] = None):
        self.grid = grid
        self.n = grid.n
        self._h = grid.spacing if fd_step is None else np.asarray(fd_step, dtype=float)

    def value(self, point) -> float:
        return self._interp(self._point(point))

    def gradient(self, point) -> np.ndarray:
        p = self._point(point)
        g = np.empty(self.n)
        for a in range(self.n):
            e = np.zeros(self.n)
            e[a] = self._h[a]
            g[a] = (self._interp(p + e) - self._interp(p - e)) / (2.0 * self._h[a])
        return g

    def hessian(self, point) -> np.ndarray:
        p = self._point(point)
        h = np.empty((self.n, self.n))
        f0 = self._interp(p)
        for a in range(self.n):
            ea = np.zeros(self.n)
            ea[a] = self._h[a]
            h[a, a] = (self._interp(p + ea) - 2.0 * f0 + self._interp(p - ea)) / self._h[a] ** 2
            for b in range(a + 1, self.n):
                eb = np.zeros(self.n)
                eb[b] = self._h[b]
                cross = (
                    self._interp(p + ea + eb)
                    - self._interp(p + ea - eb)
                    - self._interp(p - ea + eb)
                    + self._interp(p - ea - eb)
                ) / (4.0 * self._h[a] * self._h[b])
                h[a, b] = cross
                h[b, a] = cross
        return h

    def _interp(self, p: np.ndarray) -> float:
        g = self.grid
        spacing = g.spacing
        # cell index clamped into range; the cell's multilinear form extends
        # past the boundary
        rel = (p - g.lower) / spacing
        base = np.clip(np.floor(rel).astype(int), 0, g.counts - 2)
        frac = rel - base
        total = 0.0
        for corner in range(1 << self.n):
            weight = 1.0
            idx = []
            for a in range(self.n):
                if corner >> a & 1:
                    weight *= frac[a]
                    idx.append(base[a] + 1)
                else:
                    weight *= 1.0 - frac[a]
                    idx.append(base[a])
            if weight != 0.0:
                total += weight * float(self.grid.values[tuple(idx)])
        return total
