"""Condensing an eigenvalue attention map into a 3 x 3 frequency-band dependency map."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

__all__ = ["BANDS", "BAND_EDGES", "CondensedAttention", "band_of", "condense_attention"]

BANDS = ("low", "medium", "high")
BAND_EDGES = (2.0 / 3.0, 4.0 / 3.0)
_SPECTRUM_SLACK = 1e-10


@dataclass(frozen=True)
class CondensedAttention:
    """Band-to-band attention mass. Undefined cells (empty source or target
    band) hold 0.0 and are marked False in ``defined``."""

    matrix: np.ndarray
    counts: tuple[int, int, int]
    defined: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band", *BANDS, "count"])
        for i, name in enumerate(BANDS):
            cells = [
                f"{self.matrix[i, j]:.17g}" if self.defined[i, j] else "undefined" for j in range(3)
            ]
            w.writerow([name, *cells, self.counts[i]])
        return buf.getvalue()


def band_of(lambdas) -> np.ndarray:
    """0 for [0, 2/3), 1 for [2/3, 4/3), 2 for [4/3, 2]."""
    lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if lam.size and (lam.min() < -_SPECTRUM_SLACK or lam.max() > 2.0 + _SPECTRUM_SLACK):
        raise ValueError("eigenvalues must lie in [0, 2]")
    return np.searchsorted(np.array(BAND_EDGES), lam, side="right")


def condense_attention(b, lambdas) -> CondensedAttention:
    """``B_hat[i, j] = sum_{p in band i} sum_{q in band j} B[p, q] / |band i|``."""
    b = np.asarray(b, dtype=np.float64)
    q = b.shape[0]
    if b.shape != (q, q):
        raise ValueError(f"attention must be square, got shape {b.shape}")
    if not np.allclose(b.sum(axis=1), 1.0, rtol=0.0, atol=1e-6):
        raise ValueError("attention rows must sum to 1")
    bands = band_of(lambdas)
    if bands.shape[0] != q:
        raise ValueError(f"{bands.shape[0]} eigenvalues for a {q}x{q} attention map")
    onehot = np.zeros((q, 3))
    onehot[np.arange(q), bands] = 1.0
    counts = onehot.sum(axis=0)
    mass = onehot.T @ b @ onehot
    present = counts > 0
    defined = present[:, None] & present[None, :]
    matrix = np.where(defined, mass / np.where(present, counts, 1.0)[:, None], 0.0)
    return CondensedAttention(matrix, tuple(int(c) for c in counts), defined)
