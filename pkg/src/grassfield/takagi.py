"""Takagi factorisation ``Q = K K^T`` of complex symmetric matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import FactorizationError, ValidationError


@dataclass(frozen=True)
class TakagiFactor:
    """``K`` (``d x r``), singular values (descending) and relative residual."""

    K: np.ndarray
    singular_values: np.ndarray
    residual: float

    @property
    def rank(self):
        return self.K.shape[1]


def takagi_factor(Q, tol=1e-10):
    """Factor a complex symmetric ``Q`` as ``K K^T``.

    Uses the singular value decomposition ``Q = U S W^H``.  Within each group
    of (numerically) degenerate singular values the left vectors are rotated
    by the symmetric square root of the unitary ``conj(U_b^T W_b)`` so that
    ``Q = U' S U'^T``.  Singular values below ``tol * max`` are dropped.

    Raises
    ------
    ValidationError
        If ``Q`` is not square or ``|Q - Q^T|_F > tol |Q|_F``.
    FactorizationError
        If the reconstruction residual exceeds ``tol``.
    """
    Q = np.asarray(Q, dtype=complex)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {Q.shape}")
    d = Q.shape[0]
    norm = np.linalg.norm(Q)
    if norm == 0 or d == 0:
        return TakagiFactor(np.zeros((d, 0), dtype=complex), np.zeros(0), 0.0)
    asym = np.linalg.norm(Q - Q.T)
    if asym > tol * norm:
        raise ValidationError(f"matrix is not symmetric: |Q - Q^T|/|Q| = {asym / norm:.3e}")
    Q = 0.5 * (Q + Q.T)

    U, s, Wh = np.linalg.svd(Q)
    W = Wh.conj().T
    keep = s > tol * s[0]
    r = int(keep.sum())
    K = np.empty((d, r), dtype=complex)
    # group degenerate singular values (relative spacing below 1e-9)
    gap = 1e-9 * s[0]
    start = 0
    while start < r:
        stop = start + 1
        while stop < r and s[stop - 1] - s[stop] <= gap:
            stop += 1
        blk = slice(start, stop)
        Z = U[:, blk].T @ W[:, blk]
        root = scipy.linalg.sqrtm(Z) if stop - start > 1 else np.sqrt(Z)
        K[:, blk] = (U[:, blk] @ np.conj(root)) * np.sqrt(s[blk])
        start = stop

    residual = float(np.linalg.norm(K @ K.T - Q) / norm)
    if residual > tol:
        raise FactorizationError(f"Takagi reconstruction residual {residual:.3e} exceeds {tol:.1e}")
    return TakagiFactor(K, s[:r].copy(), residual)
