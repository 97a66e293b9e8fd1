"""Orthonormal analysis/synthesis transforms for sensor readings.

Readings are modeled as ``x = basis_matrix @ s`` with an orthonormal basis,
so analysis is the matrix transpose and Parseval holds. The DCT variant uses
the orthonormalized type-II transform (type-III as its inverse).
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from .errors import ParameterError

_KINDS = ("dct", "identity")


class OrthonormalBasis:
    """Orthonormal basis with forward (analysis) and inverse (synthesis) maps.

    Parameters
    ----------
    kind : str
        "dct" for the orthonormal discrete cosine basis, "identity" for the
        canonical basis (readings already sparse in place).
    """

    def __init__(self, kind: str = "dct"):
        if kind not in _KINDS:
            raise ParameterError(f"unknown basis kind {kind!r}; expected one of {_KINDS}")
        self.kind = kind

    def forward(self, x):
        """Analysis: coefficients s such that x = inverse(s)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "dct":
            return scipy.fft.dct(x, type=2, norm="ortho")
        return x.copy()

    def inverse(self, s):
        """Synthesis: reading vector from coefficients."""
        s = np.asarray(s, dtype=float)
        if self.kind == "dct":
            return scipy.fft.idct(s, type=2, norm="ortho")
        return s.copy()

    def matrix(self, n: int) -> np.ndarray:
        """Dense synthesis matrix (columns are basis vectors), for small n."""
        if n <= 0:
            raise ParameterError("n must be positive")
        return np.column_stack([self.inverse(e) for e in np.eye(n)])

    def __repr__(self):
        return f"OrthonormalBasis(kind={self.kind!r})"


def sparsity_profile(coefficients, tau: float) -> float:
    """Percentage of coefficients with magnitude strictly below tau."""
    if tau < 0:
        raise ParameterError("tau must be nonnegative")
    s = np.asarray(coefficients, dtype=float)
    if s.size == 0:
        raise ParameterError("coefficient vector is empty")
    return 100.0 * float(np.count_nonzero(np.abs(s) < tau)) / s.size
