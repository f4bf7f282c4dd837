"""Exact Fock-space reference for up to eight fermionic modes.

Basis states are occupation bitmasks: bit ``i`` of the index is the
occupation of mode ``i``.  Mode operators follow the Jordan-Wigner sign rule
``c_i |..1_i..> = (-1)^{eta_i} |..0_i..>`` where ``eta_i`` counts occupied
modes ``j < i``, so that ``|nu> = (c_1^†)^{nu_1} .. (c_n^†)^{nu_n} |0>``
is exactly the basis vector ``e_nu``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, StructuralError

MAX_MODES = 8


@dataclass(frozen=True)
class FockOperators:
    """Annihilation matrices ``c[i]`` (creation is the conjugate transpose)."""

    n_modes: int
    c: tuple

    @property
    def dim(self):
        return 1 << self.n_modes

    def cdag(self, i):
        return self.c[i].conj().T

    def number(self):
        return sum(self.cdag(i) @ self.c[i] for i in range(self.n_modes))


@lru_cache(maxsize=None)
def build_fock_operators(n_modes):
    """Jordan-Wigner annihilation operators for ``n_modes`` modes (dense)."""
    if not 0 <= n_modes <= MAX_MODES:
        raise ConfigurationError(f"oracle supports 0..{MAX_MODES} modes, got {n_modes}")
    dim = 1 << n_modes
    states = np.arange(dim)
    ops = []
    for i in range(n_modes):
        c = np.zeros((dim, dim))
        occ = (states >> i) & 1 == 1
        src = states[occ]
        eta = np.array([bin(s & ((1 << i) - 1)).count("1") for s in src], dtype=int)
        c[src ^ (1 << i), src] = (-1.0) ** eta
        c.setflags(write=False)
        ops.append(c)
    return FockOperators(n_modes, tuple(ops))


def fock_state(n_modes, occupied):
    """Ket ``c^†_{k_1} .. c^†_{k_p} |0>`` for the mode list ``occupied`` (in that order).

    Returns the zero vector if a mode repeats.
    """
    ops = build_fock_operators(n_modes)
    vec = np.zeros(ops.dim, dtype=complex)
    vec[0] = 1.0
    for k in reversed(list(occupied)):
        if not 0 <= k < n_modes:
            raise ConfigurationError(f"mode {k} outside 0..{n_modes - 1}")
        vec = ops.cdag(k) @ vec
    return vec


def fock_hamiltonian(h, v=None, hermitian_tol=1e-12):
    """``H = sum h[a,b] c_a^† c_b + 1/2 sum v[a,b,c,d] c_a^† c_b^† c_d c_c``."""
    h = np.asarray(h, dtype=complex)
    n = h.shape[0]
    ops = build_fock_operators(n)
    H = np.zeros((ops.dim, ops.dim), dtype=complex)
    for a, b in zip(*np.nonzero(h)):
        H += h[a, b] * (ops.cdag(a) @ ops.c[b])
    if v is not None:
        v = np.asarray(v, dtype=complex)
        for a, b, c, d in zip(*np.nonzero(v)):
            H += 0.5 * v[a, b, c, d] * (ops.cdag(a) @ ops.cdag(b) @ ops.c[d] @ ops.c[c])
    err = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if err > hermitian_tol * max(1.0, np.max(np.abs(H))):
        raise StructuralError(f"assembled Hamiltonian is not Hermitian (|H - H^†| = {err:.3e})")
    return 0.5 * (H + H.conj().T)


class ExactEvolution:
    """Unitary evolution under a fixed Hamiltonian via one eigendecomposition."""

    def __init__(self, H, hbar=1.0):
        self.H = np.asarray(H, dtype=complex)
        self.hbar = hbar
        self.energies, self.vectors = scipy.linalg.eigh(self.H)

    def unitary(self, t):
        phase = np.exp(-1j * self.energies * t / self.hbar)
        return (self.vectors * phase) @ self.vectors.conj().T

    def evolve(self, rho0, t):
        U = self.unitary(t)
        rho = U @ np.asarray(rho0, dtype=complex) @ U.conj().T
        return 0.5 * (rho + rho.conj().T)


def evolve_exact(hamiltonian, rho0, t, hbar=1.0):
    """``rho(t) = exp(-iHt/hbar) rho0 exp(+iHt/hbar)``.

    ``hamiltonian`` is a dense Fock matrix or any object with ``h``, ``v`` and
    ``hbar`` attributes (see :class:`grassfield.models.ModeHamiltonian`).
    """
    if hasattr(hamiltonian, "h"):
        hbar = hamiltonian.hbar
        H = fock_hamiltonian(hamiltonian.h, hamiltonian.v)
    else:
        H = np.asarray(hamiltonian, dtype=complex)
        err = np.max(np.abs(H - H.conj().T))
        if err > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise StructuralError(f"Hamiltonian is not Hermitian (|H - H^†| = {err:.3e})")
    return ExactEvolution(H, hbar).evolve(rho0, t)


def exact_coherence(rho, bra_modes, ket_modes):
    """``Tr(|ket><bra| rho) = <bra|rho|ket>`` for mode-ordered Fock states.

    ``|ket> = c^†_{k_1}..c^†_{k_p}|0>`` and ``<bra| = <0|c_{m_p}..c_{m_1}``.
    A repeated mode gives 0.
    """
    rho = np.asarray(rho, dtype=complex)
    n = rho.shape[0].bit_length() - 1
    if len(bra_modes) != len(ket_modes):
        raise ConfigurationError("bra and ket must contain the same number of modes")
    if len(ket_modes) > n:
        raise ConfigurationError(f"order {len(ket_modes)} exceeds {n} modes")
    bra = fock_state(n, bra_modes)
    ket = fock_state(n, ket_modes)
    return complex(bra.conj() @ rho @ ket)


def orbital_state(n_modes, orbitals):
    """Ket ``c^†(phi_1) .. c^†(phi_p)|0>`` with ``c^†(phi) = sum_j phi[j] c_j^†``."""
    ops = build_fock_operators(n_modes)
    phi = np.asarray(orbitals, dtype=complex)
    if phi.ndim != 2 or phi.shape[1] != n_modes:
        raise ConfigurationError(f"orbitals must have shape (p, {n_modes}), got {phi.shape}")
    vec = np.zeros(ops.dim, dtype=complex)
    vec[0] = 1.0
    for row in phi[::-1]:
        create = sum(row[j] * ops.cdag(j) for j in range(n_modes) if row[j] != 0)
        vec = create @ vec if not np.isscalar(create) else 0 * vec
    return vec


def number_sector_trace(rho, p):
    """``Tr(rho * binom(N, p))``: total order-``p`` population summed over distinct mode sets."""
    rho = np.asarray(rho, dtype=complex)
    occ = np.array([bin(s).count("1") for s in range(rho.shape[0])])
    weights = np.array([float(math.comb(int(o), p)) if o >= p else 0.0 for o in occ])
    return complex(np.sum(weights * np.diag(rho)))


SECTOR_MAX_DIM = 4096


def _apply(ops, state):
    """Apply ``ops`` (rightmost first) to a basis bitmask; returns ``(sign, state)`` or ``(0, None)``.

    ``ops`` holds ``(mode, create)`` pairs in written order.
    """
    sign = 1
    for mode, create in reversed(ops):
        bit = 1 << mode
        if bool(state & bit) == create:
            return 0, None
        if bin(state & (bit - 1)).count("1") & 1:
            sign = -sign
        state ^= bit
    return sign, state


class NumberSector:
    """Exact reference restricted to states with exactly ``p`` particles in ``n_modes`` modes.

    Uses the same mode ordering and sign rule as the full Fock space but
    never forms ``2^n`` matrices, so it reaches grids beyond eight modes for
    few particles.
    """

    def __init__(self, n_modes, p):
        if not 0 <= p <= n_modes:
            raise ConfigurationError(f"particle number {p} outside 0..{n_modes}")
        dim = math.comb(n_modes, p)
        if dim > SECTOR_MAX_DIM:
            raise ConfigurationError(f"sector dimension {dim} exceeds {SECTOR_MAX_DIM}")
        self.n_modes, self.p = n_modes, p
        self.states = [sum(1 << m for m in occ) for occ in itertools.combinations(range(n_modes), p)]
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def dim(self):
        return len(self.states)

    def hamiltonian(self, h, v=None, hermitian_tol=1e-12):
        """Sector block of ``sum h c_a^† c_b + 1/2 sum v c_a^† c_b^† c_d c_c``."""
        h = np.asarray(h, dtype=complex)
        if h.shape != (self.n_modes,) * 2:
            raise ConfigurationError(f"h must be {self.n_modes}x{self.n_modes}")
        H = np.zeros((self.dim,) * 2, dtype=complex)
        terms = [((a, True), (b, False), h[a, b]) for a, b in zip(*np.nonzero(h))]
        if v is not None:
            v = np.asarray(v, dtype=complex)
            terms += [((a, True), (b, True), (d, False), (c, False), 0.5 * v[a, b, c, d])
                      for a, b, c, d in zip(*np.nonzero(v))]
        for term in terms:
            ops, coeff = term[:-1], term[-1]
            for j, s in enumerate(self.states):
                sign, out = _apply(ops, s)
                if sign:
                    H[self.index[out], j] += sign * coeff
        err = np.max(np.abs(H - H.conj().T), initial=0.0)
        if err > hermitian_tol * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise StructuralError(f"assembled Hamiltonian is not Hermitian (|H - H^†| = {err:.3e})")
        return 0.5 * (H + H.conj().T)

    def fock_vector(self, occupied):
        """Sector ket of ``c^†_{k_1} .. c^†_{k_p}|0>``; zero if a mode repeats."""
        occupied = list(occupied)
        if len(occupied) != self.p:
            raise ConfigurationError(f"expected {self.p} modes, got {len(occupied)}")
        vec = np.zeros(self.dim, dtype=complex)
        sign, out = _apply([(k, True) for k in occupied], 0)
        if sign:
            vec[self.index[out]] = sign
        return vec

    def orbital_vector(self, orbitals):
        """Sector ket of ``c^†(phi_1) .. c^†(phi_p)|0>``: amplitudes are orbital minors."""
        phi = np.asarray(orbitals, dtype=complex)
        if phi.shape != (self.p, self.n_modes):
            raise ConfigurationError(f"orbitals must have shape ({self.p}, {self.n_modes})")
        vec = np.zeros(self.dim, dtype=complex)
        for i, occ in enumerate(itertools.combinations(range(self.n_modes), self.p)):
            vec[i] = np.linalg.det(phi[:, list(occ)]) if self.p else 1.0
        return vec
