"""Uniform-knot B-spline bases and univariate spline functions.

Every KAN edge carries one of these. The knot vector has ``G`` uniform
interior intervals on ``[lo, hi]`` and ``k`` extra uniform knots past each
end, so a degree-``k`` grid has ``G + k`` basis functions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError

RCOND = 1e-10


class DegenerateFitWarning(UserWarning):
    """Least-squares design matrix was rank deficient."""


@dataclass(frozen=True)
class SplineGrid:
    interior_count: int
    degree_k: int
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.interior_count < 1:
            raise InvalidArgumentError(f"interior_count must be >= 1, got {self.interior_count}")
        if self.degree_k < 0:
            raise InvalidArgumentError(f"degree_k must be >= 0, got {self.degree_k}")
        if not (np.isfinite(self.domain_lo) and np.isfinite(self.domain_hi)):
            raise InvalidArgumentError("domain bounds must be finite")
        if not self.domain_lo < self.domain_hi:
            raise InvalidArgumentError(
                f"domain_lo must be < domain_hi, got [{self.domain_lo}, {self.domain_hi}]"
            )
        G, k = self.interior_count, self.degree_k
        h = (self.domain_hi - self.domain_lo) / G
        knots = self.domain_lo + h * np.arange(-k, G + k + 1, dtype=float)
        # pin the breakpoints bounding the domain exactly
        knots[k] = self.domain_lo
        knots[k + G] = self.domain_hi
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def basis_count(self) -> int:
        return self.interior_count + self.degree_k

    @property
    def step(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.interior_count

    def with_domain(self, lo: float, hi: float) -> "SplineGrid":
        return SplineGrid(self.interior_count, self.degree_k, float(lo), float(hi))

    def with_interior_count(self, G: int) -> "SplineGrid":
        return SplineGrid(G, self.degree_k, self.domain_lo, self.domain_hi)

    def to_dict(self) -> dict:
        return {
            "interior_count": self.interior_count,
            "degree_k": self.degree_k,
            "domain_lo": self.domain_lo,
            "domain_hi": self.domain_hi,
        }


def _checked(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("spline input must be finite")
    return x


def _cox_de_boor(grid: SplineGrid, xc: np.ndarray, degree: int) -> np.ndarray:
    """Degree-``degree`` basis on ``grid.knots`` at already-clamped points.

    Returns shape ``xc.shape + (len(knots) - 1 - degree,)``.
    """
    t = grid.knots
    k, G = grid.degree_k, grid.interior_count
    n0 = len(t) - 1
    # half-open intervals, except the last interior one is closed at domain_hi
    idx = np.searchsorted(t, xc, side="right") - 1
    idx = np.clip(idx, k, k + G - 1)
    B = np.zeros(xc.shape + (n0,))
    np.put_along_axis(B, idx[..., None], 1.0, axis=-1)
    xe = xc[..., None]
    for d in range(1, degree + 1):
        nb = n0 - d
        left = (xe - t[:nb]) / (t[d:d + nb] - t[:nb]) * B[..., :nb]
        right = (t[d + 1:d + 1 + nb] - xe) / (t[d + 1:d + 1 + nb] - t[1:nb + 1]) * B[..., 1:nb + 1]
        B = left + right
    return B


def basis_eval(grid: SplineGrid, x) -> np.ndarray:
    """Evaluate all ``G + k`` basis functions at ``x`` (scalar or array).

    Inputs outside the domain are clamped to the nearest boundary.
    """
    x = _checked(x)
    xc = np.clip(x, grid.domain_lo, grid.domain_hi)
    return _cox_de_boor(grid, xc, grid.degree_k)


def basis_derivative(grid: SplineGrid, x) -> np.ndarray:
    """d/dx of every basis function; zero outside the domain (clamped region)."""
    x = _checked(x)
    k = grid.degree_k
    if k == 0:
        return np.zeros(x.shape + (grid.basis_count,))
    xc = np.clip(x, grid.domain_lo, grid.domain_hi)
    t = grid.knots
    lower = _cox_de_boor(grid, xc, k - 1)
    nb = grid.basis_count
    dB = k * (lower[..., :nb] / (t[k:k + nb] - t[:nb])
              - lower[..., 1:nb + 1] / (t[k + 1:k + 1 + nb] - t[1:nb + 1]))
    outside = (x < grid.domain_lo) | (x > grid.domain_hi)
    return np.where(outside[..., None], 0.0, dB)


@dataclass
class SplineFunction:
    grid: SplineGrid
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.grid.basis_count,):
            raise InvalidArgumentError(
                f"expected {self.grid.basis_count} coefficients, got shape {self.coefficients.shape}"
            )
        if not np.all(np.isfinite(self.coefficients)):
            raise InvalidArgumentError("spline coefficients must be finite")

    def __call__(self, x) -> np.ndarray:
        return basis_eval(self.grid, x) @ self.coefficients

    def derivative(self, x) -> np.ndarray:
        return basis_derivative(self.grid, x) @ self.coefficients


def lstsq_coefficients(design: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Least-norm least-squares solve with a relative singular-value cutoff.

    ``ys`` may carry extra trailing columns (one fit per column).
    """
    coef, _, rank, _ = np.linalg.lstsq(design, ys, rcond=RCOND)
    if rank < design.shape[1]:
        warnings.warn(
            f"rank-deficient spline design ({rank} < {design.shape[1]}); using least-norm solution",
            DegenerateFitWarning,
            stacklevel=3,
        )
    return coef


def fit_coefficients(grid: SplineGrid, xs, ys) -> SplineFunction:
    xs = _checked(xs).ravel()
    ys = _checked(ys).ravel()
    if xs.shape != ys.shape:
        raise InvalidArgumentError("xs and ys must have the same length")
    if len(xs) < grid.basis_count:
        raise InvalidArgumentError(
            f"need at least {grid.basis_count} samples, got {len(xs)}"
        )
    return SplineFunction(grid, lstsq_coefficients(basis_eval(grid, xs), ys))


def extend_grid(fn: SplineFunction, new_interior_count: int) -> SplineFunction:
    """Re-express ``fn`` on a finer grid over the same domain.

    Uniform refinements by an integer factor contain the coarse space, so
    the coarse function is reproduced exactly in that case.
    """
    G = fn.grid.interior_count
    if new_interior_count < G:
        raise InvalidArgumentError(
            f"new_interior_count ({new_interior_count}) must be >= current G ({G})"
        )
    if new_interior_count == G:
        return SplineFunction(fn.grid, fn.coefficients.copy())
    fine = fn.grid.with_interior_count(new_interior_count)
    xs = np.linspace(fine.domain_lo, fine.domain_hi, 10 * fine.basis_count)
    return fit_coefficients(fine, xs, fn(xs))
