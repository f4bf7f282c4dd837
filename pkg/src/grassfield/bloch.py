"""Band structure of the 1D optical lattice ``V(x) = V0 sin^2(k_L x)`` in a plane-wave basis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError


@dataclass(frozen=True)
class BlochBands:
    """``omega[q, a] = E / hbar`` ascending in ``a``; ``vectors[q]`` columns are
    plane-wave coefficients over wavevectors ``q + n G`` with ``n = -cutoff..cutoff``."""

    quasimomenta: np.ndarray
    omega: np.ndarray
    vectors: np.ndarray
    reciprocal: float
    cutoff: int
    residual: float


def _band_matrix(q, V0, G, cutoff, mass, hbar):
    n = np.arange(-cutoff, cutoff + 1)
    kin = hbar**2 * (q + n * G) ** 2 / (2 * mass)
    # V0 sin^2(k_L x) = V0/2 - V0/4 (e^{2 i k_L x} + e^{-2 i k_L x})
    H = np.diag(kin + V0 / 2)
    off = -V0 / 4 * np.ones(2 * cutoff)
    return H + np.diag(off, 1) + np.diag(off, -1)


def bloch_bands(V0, k_L, bands, cutoff, quasimomenta=None, n_q=64, mass=1.0, hbar=1.0, conv_tol=1e-8):
    """Lowest ``bands`` Bloch bands on a quasimomentum grid of the first zone ``[-k_L, k_L)``.

    The plane-wave truncation keeps ``2*cutoff + 1`` waves.  The top requested
    band is recomputed with ``cutoff + 2`` waves; a change above ``conv_tol``
    (relative to the band energy scale) triggers a warning reporting it.
    """
    if not k_L > 0:
        raise ConfigurationError(f"k_L must be positive, got {k_L}")
    if bands < 1 or cutoff < 0:
        raise ConfigurationError("need bands >= 1 and cutoff >= 0")
    if 2 * cutoff + 1 < bands:
        raise ConfigurationError(f"cutoff {cutoff} gives {2 * cutoff + 1} plane waves, fewer than {bands} bands")
    G = 2 * k_L
    if quasimomenta is None:
        quasimomenta = -k_L + G * np.arange(n_q) / n_q
    qs = np.asarray(quasimomenta, dtype=float)
    omega = np.zeros((qs.size, bands))
    vecs = np.zeros((qs.size, 2 * cutoff + 1, bands), dtype=complex)
    residual = 0.0
    for i, q in enumerate(qs):
        w, v = scipy.linalg.eigh(_band_matrix(q, V0, G, cutoff, mass, hbar))
        omega[i] = w[:bands] / hbar
        vecs[i] = v[:, :bands]
        w2 = scipy.linalg.eigvalsh(_band_matrix(q, V0, G, cutoff + 2, mass, hbar))
        scale = max(1.0, abs(w2[bands - 1]))
        residual = max(residual, float(np.max(np.abs(w[:bands] - w2[:bands]))) / scale)
    if residual > conv_tol:
        warnings.warn(
            f"plane-wave cutoff {cutoff} not converged: band energies move by {residual:.3e} (relative) "
            f"when the cutoff is increased",
            RuntimeWarning,
            stacklevel=2,
        )
    return BlochBands(qs, omega, vecs, G, int(cutoff), residual)


def bandwidth(bands, index=0):
    """Width ``max - min`` of band ``index`` over the sampled quasimomenta (energy units of omega)."""
    return float(np.ptp(bands.omega[:, index]))
