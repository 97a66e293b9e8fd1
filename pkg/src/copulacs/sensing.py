"""Sparse sign-based sensing matrices and the measurement operator.

The measurement matrix Theta has entries in {-1, 0, +1} with a fixed number
of nonzeros per column (the column weight); row weights are whatever falls
out. Because the reading basis is orthonormal, projecting readings with
Phi = Theta @ basis_matrix.T is the same as measuring the coefficients with
Theta directly, which is what the decoder exploits.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .transform import OrthonormalBasis

DEFAULT_COLUMN_WEIGHT = 20


@dataclass(frozen=True)
class SparseSignMatrix:
    """A {-1, 0, +1} measurement matrix plus the recipe that generated it."""

    n: int
    m: int
    column_weight: int
    seed: int
    matrix: np.ndarray = field(repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def row_support(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and signs of row j's nonzeros."""
        cols = np.nonzero(self.matrix[j])[0]
        return cols, self.matrix[j, cols].astype(np.int64)


def generate_theta(n: int, m: int, column_weight: int = DEFAULT_COLUMN_WEIGHT,
                   seed: int = 0) -> SparseSignMatrix:
    """Draw a sparse sign matrix: per column, `column_weight` distinct rows
    chosen uniformly, each entry an equiprobable +-1."""
    if n <= 0 or m <= 0:
        raise ParameterError("n and m must be positive")
    if column_weight <= 0:
        raise ParameterError("column weight must be positive")
    if column_weight > m:
        warnings.warn(
            f"column weight {column_weight} exceeds m={m}; clamping to {m}",
            stacklevel=2,
        )
        column_weight = m
    rng = np.random.default_rng(seed)
    mat = np.zeros((m, n), dtype=np.int8)
    for col in range(n):
        rows = rng.choice(m, size=column_weight, replace=False)
        signs = rng.integers(0, 2, size=column_weight, dtype=np.int8) * 2 - 1
        mat[rows, col] = signs
    return SparseSignMatrix(n=n, m=m, column_weight=column_weight, seed=seed, matrix=mat)


def measure(theta: SparseSignMatrix, coefficients, noise_std: float = 0.0,
            noise_seed=None) -> np.ndarray:
    """y = Theta s (+ white Gaussian noise of the given standard deviation)."""
    s = np.asarray(coefficients, dtype=float)
    if s.shape != (theta.n,):
        raise DimensionError(f"coefficients must have shape ({theta.n},), got {s.shape}")
    if noise_std < 0.0:
        raise ParameterError("noise_std must be nonnegative")
    y = theta.matrix @ s
    if noise_std > 0.0:
        rng = np.random.default_rng(noise_seed)
        y = y + noise_std * rng.standard_normal(theta.m)
    return y


class EffectivePhi:
    """Measurement operator on raw readings: x -> Theta @ forward(x)."""

    def __init__(self, theta: SparseSignMatrix, basis: OrthonormalBasis):
        self.theta = theta
        self.basis = basis

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.theta.n,):
            raise DimensionError(f"readings must have shape ({self.theta.n},)")
        return self.theta.matrix @ self.basis.forward(x)

    __call__ = apply

    def dense(self) -> np.ndarray:
        """Dense Phi = Theta @ basis_matrix.T, for small-n checks."""
        return self.theta.matrix @ self.basis.matrix(self.theta.n).T


def save_theta(theta: SparseSignMatrix, path) -> None:
    """Persist the generation header only; the matrix is re-derived on load."""
    header = {
        "n": theta.n,
        "m": theta.m,
        "column_weight": theta.column_weight,
        "seed": theta.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_theta(path) -> SparseSignMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    return generate_theta(
        n=header["n"],
        m=header["m"],
        column_weight=header["column_weight"],
        seed=header["seed"],
    )
