"""Dense linear algebra: products, symmetric eigendecomposition, spectrum truncation.

Matrices are plain C-ordered ``float64`` numpy arrays; :func:`as_matrix`
enforces that contract at module boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels

__all__ = [
    "ConvergenceError",
    "EigenSystem",
    "TruncatedEigenSystem",
    "as_matrix",
    "matmul",
    "symmetric_eig",
    "truncate_spectrum",
    "spectral_apply",
]

SYMMETRY_TOL = 1e-10
_GAUGE_TOL = 1e-12


class ConvergenceError(ArithmeticError):
    def __init__(self, index: int, iterations: int):
        super().__init__(
            f"implicit QL did not converge within {iterations} iterations; "
            f"stuck at eigenvalue index {index}"
        )
        self.index = index
        self.iterations = iterations


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, 2-D, C-ordered float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues and orthonormal eigenvectors (as columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        for arr in (self.eigenvalues, self.eigenvectors):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def q(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class TruncatedEigenSystem(EigenSystem):
    num_smallest: int = 0
    num_largest: int = 0


Spectrum = Union[EigenSystem, TruncatedEigenSystem]


def _fix_gauge(vectors: np.ndarray) -> None:
    # first component with |v| > tol is made non-negative, column by column
    significant = np.abs(vectors) > _GAUGE_TOL
    first = np.argmax(significant, axis=0)
    pivots = vectors[first, np.arange(vectors.shape[1])]
    vectors[:, pivots < 0.0] *= -1.0


def symmetric_eig(m) -> EigenSystem:
    """Eigendecomposition of a real symmetric matrix.

    Householder tridiagonalization followed by implicit-shift QL with
    Wilkinson shifts. Eigenvalues come back ascending and each eigenvector's
    first component above 1e-12 in magnitude is non-negative.

    Raises ValueError for non-square or non-symmetric input and
    ConvergenceError if QL exceeds ``64 * n`` iterations.
    """
    m = as_matrix(m)
    n, cols = m.shape
    if n != cols:
        raise ValueError(f"symmetric_eig needs a square matrix, got shape {m.shape}")
    if n == 0:
        return EigenSystem(np.zeros(0), np.zeros((0, 0)))
    scale = max(1.0, float(np.abs(m).max()))
    asym = float(np.abs(m - m.T).max())
    if asym > SYMMETRY_TOL * scale:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    sym = np.ascontiguousarray(0.5 * (m + m.T))

    d, e, q = kernels.tridiagonalize(sym)
    zt = np.ascontiguousarray(q.T)
    d = np.ascontiguousarray(d)
    max_iter = 64 * n
    stuck = kernels.ql_implicit(d, e, zt, max_iter)
    if stuck >= 0:
        raise ConvergenceError(int(stuck), max_iter)

    order = np.argsort(d, kind="stable")
    values = d[order].copy()
    vectors = np.ascontiguousarray(zt[order].T)
    _fix_gauge(vectors)
    return EigenSystem(values, vectors)


def truncate_spectrum(e: EigenSystem, num_smallest: int, num_largest: int) -> TruncatedEigenSystem:
    """Keep the ``num_smallest`` lowest and ``num_largest`` highest eigenpairs."""
    if num_smallest < 0 or num_largest < 0:
        raise ValueError("selection counts must be non-negative")
    n = e.q
    if num_smallest + num_largest > n:
        raise ValueError(
            f"cannot select {num_smallest} smallest + {num_largest} largest of {n} eigenpairs"
        )
    idx = np.concatenate([np.arange(num_smallest), np.arange(n - num_largest, n)]).astype(np.int64)
    return TruncatedEigenSystem(
        e.eigenvalues[idx].copy(),
        np.ascontiguousarray(e.eigenvectors[:, idx]),
        num_smallest=num_smallest,
        num_largest=num_largest,
    )


def spectral_apply(e: Spectrum, new_eigenvalues, x) -> np.ndarray:
    """Compute ``U diag(new_eigenvalues) U^T x`` without forming the n x n operator."""
    g = np.asarray(new_eigenvalues, dtype=np.float64).reshape(-1)
    if g.shape[0] != e.q:
        raise ValueError(f"expected {e.q} filter values, got {g.shape[0]}")
    x = np.asarray(x, dtype=np.float64)
    vector = x.ndim == 1
    xm = x.reshape(-1, 1) if vector else x
    if xm.ndim != 2 or xm.shape[0] != e.n:
        raise ValueError(f"signal must have {e.n} rows, got shape {x.shape}")
    u = e.eigenvectors
    out = u @ (g[:, None] * (u.T @ xm))
    return out.reshape(-1) if vector else out
