"""Exact finite Grassmann algebra with Berezin calculus.

Generators are indexed ``0 .. 2n-1`` with the fixed total order
``g_1 < g_1^+ < g_2 < g_2^+ < ...``, i.e. mode ``i`` owns generator ``2i``
(annihilation-like, ``g_i``) and ``2i + 1`` (creation-like, ``g_i^+``).
A monomial is a bitmask over generators, always read in ascending order.

Besides the algebra itself this module provides

* the B-distribution of a Fock-space density matrix, built from the vacuum
  projector with the operator correspondence rules,
* canonical moments ``∫ g_{m_p}..g_{m_1} B g^+_{l_1}..g^+_{l_p}`` of that
  distribution (:func:`moments_from_state`),
* :func:`symbolic_ffpe`, which extracts drift and diffusion coefficients of
  the Fokker-Planck equation from a mode Hamiltonian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, StructuralError

MAX_MODES = 8

_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.int64)


def _popcount(x):
    x = np.asarray(x, dtype=np.int64)
    return _POPCOUNT16[x & 0xFFFF] + _POPCOUNT16[(x >> 16) & 0xFFFF]


@dataclass(frozen=True)
class GeneratorSet:
    """``n_modes`` paired generators ``g_i, g_i^+``."""

    n_modes: int

    def __post_init__(self):
        if not 0 <= self.n_modes <= MAX_MODES:
            raise ConfigurationError(
                f"n_modes must be in [0, {MAX_MODES}], got {self.n_modes}"
            )

    @property
    def size(self):
        return 2 * self.n_modes

    @property
    def full_mask(self):
        return (1 << self.size) - 1

    def g(self, mode):
        """Index of ``g_mode``."""
        self._check_mode(mode)
        return 2 * mode

    def gplus(self, mode):
        """Index of ``g_mode^+``."""
        self._check_mode(mode)
        return 2 * mode + 1

    def name(self, gen):
        mode, plus = divmod(gen, 2)
        return f"g{mode + 1}+" if plus else f"g{mode + 1}"

    def integration_order(self):
        """Generators in the order the full phase-space integral applies them.

        The measure ``dg_n^+ .. dg_1^+ dg_n .. dg_1`` acts innermost first,
        so ``g_1 .. g_n`` are integrated before ``g_1^+ .. g_n^+``.
        """
        return [self.g(i) for i in range(self.n_modes)] + [
            self.gplus(i) for i in range(self.n_modes)
        ]

    def _check_mode(self, mode):
        if not 0 <= mode < self.n_modes:
            raise ConfigurationError(f"mode {mode} outside 0..{self.n_modes - 1}")


def _product_arrays(ka, va, kb, vb):
    """Monomial-wise product of two sorted term lists."""
    if ka.size == 0 or kb.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex)
    a = ka[:, None]
    b = kb[None, :]
    keep = (a & b) == 0
    # sign = (-1)^(number of pairs x in a, y in b with x > y)
    swaps = np.zeros(keep.shape, dtype=np.int64)
    bmax = int(kb.max()).bit_length()
    for y in range(bmax):
        has = (b >> y) & 1
        if not has.any():
            continue
        swaps = swaps + has * _popcount(a >> (y + 1))
    sign = 1 - 2 * (swaps & 1)
    coeff = (va[:, None] * vb[None, :]) * sign
    keys = (a | b)[keep]
    vals = coeff[keep]
    return _canonical(keys, vals)


def _canonical(keys, vals):
    if keys.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex)
    uniq, inv = np.unique(keys, return_inverse=True)
    acc = np.zeros(uniq.size, dtype=complex)
    np.add.at(acc, inv, vals)
    nz = acc != 0
    return uniq[nz].astype(np.int64), acc[nz]


class GrassmannElement:
    """Immutable element of the Grassmann algebra over a :class:`GeneratorSet`.

    Coefficients are kept for canonical (ascending) monomials only and exact
    zeros are pruned; no epsilon pruning is applied.
    """

    __slots__ = ("gens", "_keys", "_vals")

    def __init__(self, gens, keys=None, vals=None):
        if isinstance(gens, int):
            gens = GeneratorSet(gens)
        self.gens = gens
        if keys is None:
            keys = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0, dtype=complex)
        keys = np.asarray(keys, dtype=np.int64)
        vals = np.asarray(vals, dtype=complex)
        if keys.size and (keys.min() < 0 or keys.max() > gens.full_mask):
            raise ConfigurationError("monomial mask outside generator set")
        self._keys, self._vals = _canonical(keys, vals)

    # construction -------------------------------------------------------

    @classmethod
    def scalar(cls, gens, value=1.0):
        return cls(gens, [0], [value])

    @classmethod
    def generator(cls, gens, index, coeff=1.0):
        gens = GeneratorSet(gens) if isinstance(gens, int) else gens
        if not 0 <= index < gens.size:
            raise ConfigurationError(f"generator {index} outside 0..{gens.size - 1}")
        return cls(gens, [1 << index], [coeff])

    @classmethod
    def monomial(cls, gens, indices, coeff=1.0):
        """Ordered product ``coeff * g_{i_1} g_{i_2} ...`` (any order, signs applied)."""
        gens = GeneratorSet(gens) if isinstance(gens, int) else gens
        out = cls.scalar(gens, coeff)
        for i in indices:
            out = out * cls.generator(gens, i)
        return out

    @classmethod
    def from_terms(cls, gens, terms):
        """Build from ``{mask: coefficient}`` with masks in canonical order."""
        keys = np.fromiter(terms.keys(), dtype=np.int64, count=len(terms))
        vals = np.fromiter(terms.values(), dtype=complex, count=len(terms))
        return cls(gens, keys, vals)

    @classmethod
    def from_vector(cls, gens, vec):
        vec = np.asarray(vec, dtype=complex)
        keys = np.nonzero(vec)[0]
        return cls(gens, keys, vec[keys])

    # inspection ---------------------------------------------------------

    @property
    def terms(self):
        return {int(k): complex(v) for k, v in zip(self._keys, self._vals)}

    @property
    def keys(self):
        return self._keys

    @property
    def values(self):
        return self._vals

    def to_vector(self):
        vec = np.zeros(1 << self.gens.size, dtype=complex)
        vec[self._keys] = self._vals
        return vec

    def coefficient(self, mask):
        i = np.searchsorted(self._keys, mask)
        if i < self._keys.size and self._keys[i] == mask:
            return complex(self._vals[i])
        return 0j

    def is_zero(self):
        return self._keys.size == 0

    def parity(self):
        """+1 (even), -1 (odd); ``None`` if the element is not homogeneous."""
        if self.is_zero():
            return 1
        odd = _popcount(self._keys) & 1
        if np.all(odd == 0):
            return 1
        if np.all(odd == 1):
            return -1
        return None

    def even_part(self):
        keep = (_popcount(self._keys) & 1) == 0
        return GrassmannElement(self.gens, self._keys[keep], self._vals[keep])

    def odd_part(self):
        keep = (_popcount(self._keys) & 1) == 1
        return GrassmannElement(self.gens, self._keys[keep], self._vals[keep])

    def body(self):
        """Coefficient of the empty monomial (the c-number part)."""
        return self.coefficient(0)

    def allclose(self, other, atol=0.0):
        diff = self - other
        return diff.is_zero() or float(np.max(np.abs(diff._vals))) <= atol

    # algebra ------------------------------------------------------------

    def _check(self, other):
        if not isinstance(other, GrassmannElement):
            return False
        if other.gens != self.gens:
            raise ConfigurationError(
                f"generator sets differ: {self.gens.n_modes} vs {other.gens.n_modes} modes"
            )
        return True

    def __add__(self, other):
        if not self._check(other):
            other = GrassmannElement.scalar(self.gens, other)
        return GrassmannElement(
            self.gens,
            np.concatenate([self._keys, other._keys]),
            np.concatenate([self._vals, other._vals]),
        )

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.gens, self._keys, -self._vals)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if self._check(other):
            return product(self, other)
        return GrassmannElement(self.gens, self._keys, self._vals * complex(other))

    def __rmul__(self, other):
        return GrassmannElement(self.gens, self._keys, self._vals * complex(other))

    def __eq__(self, other):
        if not isinstance(other, GrassmannElement) or other.gens != self.gens:
            return NotImplemented
        return bool(
            np.array_equal(self._keys, other._keys)
            and np.array_equal(self._vals, other._vals)
        )

    __hash__ = None

    def __repr__(self):
        if self.is_zero():
            return "GrassmannElement(0)"
        parts = []
        for k, v in zip(self._keys, self._vals):
            names = [self.gens.name(i) for i in range(self.gens.size) if (k >> i) & 1]
            parts.append(f"({v:.6g})" + ("*" + "*".join(names) if names else ""))
        return "GrassmannElement(" + " + ".join(parts) + ")"


def product(a, b):
    """Grassmann product ``a b``; signs count transpositions into canonical order."""
    if a.gens != b.gens:
        raise ConfigurationError("product of elements over different generator sets")
    keys, vals = _product_arrays(a._keys, a._vals, b._keys, b._vals)
    out = GrassmannElement.__new__(GrassmannElement)
    out.gens, out._keys, out._vals = a.gens, keys, vals
    return out


def berezin_derivative(a, gen, side="left"):
    """Left or right Grassmann derivative with respect to generator ``gen``.

    The left derivative anticommutes ``gen`` to the front of each monomial
    (sign ``(-1)^{#generators before gen}``) and removes it; the right
    derivative moves it to the back instead.
    """
    if not 0 <= gen < a.gens.size:
        raise ConfigurationError(f"generator {gen} outside 0..{a.gens.size - 1}")
    bit = 1 << gen
    has = (a._keys & bit) != 0
    keys = a._keys[has]
    if side == "left":
        n_pass = _popcount(keys & (bit - 1))
    elif side == "right":
        n_pass = _popcount(keys >> (gen + 1))
    else:
        raise ConfigurationError(f"side must be 'left' or 'right', got {side!r}")
    sign = 1 - 2 * (n_pass & 1)
    return GrassmannElement(a.gens, keys ^ bit, a._vals[has] * sign)


def berezin_integrate(a, gens):
    """Iterated Berezin integral, applying ``∫dg`` for each entry of ``gens`` in turn.

    ``gens`` lists generators in order of application (innermost measure
    first), so ``∫dg_1^+ dg_1 f`` is ``berezin_integrate(f, [g_1, g_1^+])``.
    Integration over every generator leaves a scalar element.
    """
    gens = list(gens)
    if len(set(gens)) != len(gens):
        raise ConfigurationError(f"repeated generator in integration list {gens}")
    out = a
    for g in gens:
        out = berezin_derivative(out, g, "left")
    return out


def phase_space_integral(a):
    """Full integral ``∫ dg^+ dg a`` as a complex number."""
    return berezin_integrate(a, a.gens.integration_order()).body()


# --- super-operators ------------------------------------------------------


@dataclass(frozen=True)
class LinearSuperOperator:
    """Linear map on the ``4**n`` coefficient vectors of a generator set."""

    gens: GeneratorSet
    matrix: np.ndarray

    @classmethod
    def from_map(cls, gens, fn, basis=None):
        """Tabulate ``fn`` (element -> element) on the monomial basis."""
        dim = 1 << gens.size
        basis = range(dim) if basis is None else basis
        mat = np.zeros((dim, dim), dtype=complex)
        for k in basis:
            out = fn(GrassmannElement(gens, [k], [1.0]))
            mat[out.keys, k] = out.values
        return cls(gens, mat)

    @classmethod
    def identity(cls, gens):
        return cls(gens, np.eye(1 << gens.size, dtype=complex))

    def __call__(self, element):
        return GrassmannElement.from_vector(self.gens, self.matrix @ element.to_vector())

    def __matmul__(self, other):
        return LinearSuperOperator(self.gens, self.matrix @ other.matrix)

    def __add__(self, other):
        return LinearSuperOperator(self.gens, self.matrix + other.matrix)

    def __sub__(self, other):
        return LinearSuperOperator(self.gens, self.matrix - other.matrix)

    def __rmul__(self, c):
        return LinearSuperOperator(self.gens, complex(c) * self.matrix)


@lru_cache(maxsize=None)
def _rule_matrices(n_modes):
    gens = GeneratorSet(n_modes)
    out = {}
    for gen in range(gens.size):
        g = GrassmannElement.generator(gens, gen)
        out["lmul", gen] = LinearSuperOperator.from_map(gens, lambda x, g=g: g * x).matrix
        out["rmul", gen] = LinearSuperOperator.from_map(gens, lambda x, g=g: x * g).matrix
        out["lder", gen] = LinearSuperOperator.from_map(
            gens, lambda x, gen=gen: berezin_derivative(x, gen, "left")
        ).matrix
        out["rder", gen] = LinearSuperOperator.from_map(
            gens, lambda x, gen=gen: berezin_derivative(x, gen, "right")
        ).matrix
    return out


class CorrespondenceRules:
    """B-distribution images of one-sided mode-operator actions on ``rho``.

    ``c_i rho -> g_i B``, ``rho c_i^† -> B g_i^+``,
    ``c_i^† rho -> (d/dg_i from the left) B``, ``rho c_i -> B (d/dg_i^+ from the right)``.
    """

    def __init__(self, n_modes):
        self.gens = GeneratorSet(n_modes)
        self._m = _rule_matrices(n_modes)

    def _op(self, kind, gen):
        return LinearSuperOperator(self.gens, self._m[kind, gen])

    def annihilate_left(self, i):
        return self._op("lmul", self.gens.g(i))

    def create_right(self, i):
        return self._op("rmul", self.gens.gplus(i))

    def create_left(self, i):
        return self._op("lder", self.gens.g(i))

    def annihilate_right(self, i):
        return self._op("rder", self.gens.gplus(i))

    def left_product(self, ops):
        """Image of ``X rho`` for ``X`` = product of ``ops`` written left to right.

        ``ops`` is a sequence of ``('c' | 'cdag', mode)``.
        """
        out = LinearSuperOperator.identity(self.gens)
        for kind, mode in reversed(list(ops)):
            step = self.annihilate_left(mode) if kind == "c" else self.create_left(mode)
            out = step @ out
        return out

    def right_product(self, ops):
        """Image of ``rho X`` for ``X`` = product of ``ops`` written left to right."""
        out = LinearSuperOperator.identity(self.gens)
        for kind, mode in ops:
            step = self.annihilate_right(mode) if kind == "c" else self.create_right(mode)
            out = step @ out
        return out


# --- B distribution of Fock-space operators --------------------------------


def _occupied(mask, n):
    return [i for i in range(n) if (mask >> i) & 1]


@lru_cache(maxsize=None)
def _vacuum_b(n_modes):
    """B distribution of ``|0><0|``: the unique element with unit full integral."""
    gens = GeneratorSet(n_modes)
    top = GrassmannElement(gens, [gens.full_mask], [1.0])
    sign = phase_space_integral(top)
    return GrassmannElement(gens, [gens.full_mask], [1.0 / sign])


@lru_cache(maxsize=None)
def _projector_b_terms(n_modes):
    """Single-monomial B images of ``|M><L|`` for every pair of Fock masks.

    Returns ``(keys, vals)`` arrays indexed ``[M, L]``.  Built by applying
    ``c^†`` (left) and ``c`` (right) correspondence rules to the vacuum.
    """
    gens = GeneratorSet(n_modes)
    dim = 1 << n_modes
    vac = _vacuum_b(n_modes)
    keys = np.zeros((dim, dim), dtype=np.int64)
    vals = np.zeros((dim, dim), dtype=complex)
    for m in range(dim):
        left = vac
        # |M> = c^†_{m1} .. c^†_{mp}|0>: innermost (rightmost) creation first
        for i in reversed(_occupied(m, n_modes)):
            left = berezin_derivative(left, gens.g(i), "left")
        for l in range(dim):
            el = left
            # <L| = <0| c_{lq} .. c_{l1}: apply c_{lq} first, c_{l1} last
            for i in reversed(_occupied(l, n_modes)):
                el = berezin_derivative(el, gens.gplus(i), "right")
            (k,), (v,) = el.keys, el.values
            keys[m, l], vals[m, l] = k, v
    return keys, vals


def b_distribution(rho):
    """B distribution of a Fock-space operator ``rho`` (``2^n x 2^n``, bitmask basis).

    Linear in ``rho``; each Fock dyad maps to one monomial of the algebra.
    """
    rho = np.asarray(rho, dtype=complex)
    n = _n_modes_of(rho)
    keys, vals = _projector_b_terms(n)
    nz = rho != 0
    return GrassmannElement(GeneratorSet(n), keys[nz], vals[nz] * rho[nz])


def density_from_b(b):
    """Inverse of :func:`b_distribution`."""
    n = b.gens.n_modes
    keys, vals = _projector_b_terms(n)
    vec = b.to_vector()
    return vec[keys] / vals


def _n_modes_of(rho):
    dim = rho.shape[0]
    if rho.shape != (dim, dim) or dim & (dim - 1):
        raise ConfigurationError(f"density matrix must be 2^n square, got {rho.shape}")
    n = dim.bit_length() - 1
    if n > MAX_MODES:
        raise ConfigurationError(f"at most {MAX_MODES} modes supported, got {n}")
    return n


def canonical_moment(b, psi_modes, plus_modes):
    """``∫ g_{m_p} .. g_{m_1} B g^+_{l_1} .. g^+_{l_p}`` for ``psi_modes = (m_1..m_p)``."""
    gens = b.gens
    left = GrassmannElement.monomial(gens, [gens.g(m) for m in reversed(psi_modes)])
    right = GrassmannElement.monomial(gens, [gens.gplus(l) for l in plus_modes])
    if left.is_zero() or right.is_zero():
        return 0j
    # only the complementary monomial of B contributes to the full integral
    need = gens.full_mask ^ int(left.keys[0]) ^ int(right.keys[0])
    coeff = b.coefficient(need)
    if coeff == 0:
        return 0j
    piece = GrassmannElement(gens, [need], [coeff])
    return phase_space_integral(left * piece * right)


def moments_from_state(rho, p, mode_functions=None, cell_volume=1.0):
    """Initial canonical moment tensor of order ``p`` for a density matrix.

    The mode-basis entry at ``(m_1..m_p | l_1..l_p)`` is the Berezin integral
    of the B distribution against ``g_{m_p}..g_{m_1}`` and
    ``g^+_{l_1}..g^+_{l_p}``, which equals ``Tr(|l><m| rho)``.  Mode
    functions (shape ``(n_modes, n_points)``, normalised so that
    ``sum_r |phi_k(r)|^2 cell_volume = 1``) map it to field (density) units;
    the default is the grid-cell basis ``phi_k(r) = delta_kr / sqrt(cell_volume)``.

    A ``p`` with no populated sector returns the zero tensor.
    """
    from .observables import MomentTensor

    rho = np.asarray(rho, dtype=complex)
    n = _n_modes_of(rho)
    if p < 0:
        raise ConfigurationError("order p must be non-negative")
    b = b_distribution(rho)
    mode_tensor = np.zeros((n,) * (2 * p), dtype=complex)
    if p <= n:
        combos = list(itertools.combinations(range(n), p))
        for ms in combos:
            for ls in combos:
                val = canonical_moment(b, ms, ls)
                if val == 0:
                    continue
                for pm in itertools.permutations(range(p)):
                    sm = _perm_sign(pm)
                    mi = tuple(ms[i] for i in pm)
                    for pl in itertools.permutations(range(p)):
                        li = tuple(ls[i] for i in pl)
                        mode_tensor[mi + li] = sm * _perm_sign(pl) * val
    if mode_functions is None:
        field = mode_tensor / cell_volume**p
    else:
        phi = np.asarray(mode_functions, dtype=complex)
        if phi.shape[0] != n:
            raise ConfigurationError(
                f"mode_functions has {phi.shape[0]} rows, state has {n} modes"
            )
        field = mode_tensor
        for slot in range(p):
            field = np.moveaxis(np.tensordot(phi.T, field, axes=([1], [slot])), 0, slot)
        for slot in range(p, 2 * p):
            field = np.moveaxis(
                np.tensordot(phi.conj().T, field, axes=([1], [slot])), 0, slot
            )
    return MomentTensor(field, order=p, cell_volume=cell_volume)


def _perm_sign(perm):
    sign = 1
    seen = list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


# --- Fokker-Planck coefficients from a Hamiltonian -------------------------


@dataclass(frozen=True)
class FFPECoefficients:
    """Coefficients of ``dB/dt = -sum_p (A_p B) d<_p + 1/2 sum_pq (D_pq B) d<_q d<_p``.

    ``drift[p, r]`` gives ``A_p = sum_r drift[p, r] g_r``; ``diffusion[p, q, r, s]``
    gives ``D_pq = sum_rs diffusion[p, q, r, s] g_r g_s`` and is antisymmetric in
    ``(p, q)`` and ``(r, s)``.  ``L = -drift`` is the linear Ito drift matrix.
    """

    gens: GeneratorSet
    drift: np.ndarray
    diffusion: np.ndarray
    residual: float

    @property
    def L(self):
        return -self.drift

    def sector_blocks(self):
        """Split into (psi, psi^+) mode-indexed blocks.

        Returns ``L_psi, L_plus, D_psi, D_plus`` where ``L_psi[i, j]`` couples
        ``g_j`` into ``dg_i/dt`` and ``D_psi[i, j, k, l]`` multiplies
        ``g_k g_l`` in ``D_{g_i g_j}``.
        """
        n = self.gens.n_modes
        gi = [self.gens.g(i) for i in range(n)]
        pi = [self.gens.gplus(i) for i in range(n)]
        L = self.L
        D = self.diffusion
        return (
            L[np.ix_(gi, gi)],
            L[np.ix_(pi, pi)],
            D[np.ix_(gi, gi, gi, gi)],
            D[np.ix_(pi, pi, pi, pi)],
        )


def hamiltonian_superoperator(h, v=None, hbar=1.0):
    """B-distribution image of ``-(i/hbar)[H, rho]`` for a mode Hamiltonian.

    ``H = sum_ab h[a,b] c_a^† c_b + 1/2 sum_abcd v[a,b,c,d] c_a^† c_b^† c_d c_c``.
    """
    h = np.asarray(h, dtype=complex)
    n = h.shape[0]
    rules = CorrespondenceRules(n)
    gens = rules.gens
    total = np.zeros((1 << gens.size,) * 2, dtype=complex)
    for a, b in zip(*np.nonzero(h)):
        ops = [("cdag", a), ("c", b)]
        term = rules.left_product(ops) - rules.right_product(ops)
        total += h[a, b] * term.matrix
    if v is not None:
        v = np.asarray(v, dtype=complex)
        for a, b, c, d in zip(*np.nonzero(v)):
            ops = [("cdag", a), ("cdag", b), ("c", d), ("c", c)]
            term = rules.left_product(ops) - rules.right_product(ops)
            total += 0.5 * v[a, b, c, d] * term.matrix
    return LinearSuperOperator(gens, (-1j / hbar) * total)


def _mono_times(left, keys):
    """``(out_keys, sign)`` of ``m_left * m_k`` for each monomial mask ``k`` (sign 0: vanishes)."""
    keys = np.asarray(keys, dtype=np.int64)
    swaps = np.zeros(keys.shape, dtype=np.int64)
    for y in range(int(left).bit_length()):
        if (left >> y) & 1:
            swaps += _popcount(keys & ((1 << y) - 1))
    sign = (1 - 2 * (swaps & 1)) * ((keys & left) == 0)
    return keys | left, sign


def _mono_rder(keys, gen):
    """``(out_keys, sign)`` of the right derivative by ``gen`` of each monomial."""
    keys = np.asarray(keys, dtype=np.int64)
    has = (keys >> gen) & 1
    sign = (1 - 2 * (_popcount(keys >> (gen + 1)) & 1)) * has
    return keys & ~(1 << gen), sign


def _ffpe_columns(gens):
    """Sparse columns of the generic Fokker-Planck superoperator, one per parameter.

    The drift term enters with the parity ``sigma(B)`` of the basis element:
    rewriting the left derivatives produced by the correspondence rules as right
    derivatives costs one sign per derivative of an odd product.
    """
    size = gens.size
    keys = np.arange(1 << size, dtype=np.int64)
    parity = 1 - 2 * (_popcount(keys) & 1)
    labels, rows, cols, vals = [], [], [], []
    for p in range(size):
        for r in range(size):
            k1, s1 = _mono_times(1 << r, keys)
            k2, s2 = _mono_rder(k1, p)
            s = -s1 * s2 * parity
            nz = s != 0
            rows.append(k2[nz] * keys.size + keys[nz])
            cols.append(np.full(nz.sum(), len(labels)))
            vals.append(s[nz].astype(complex))
            labels.append(("drift", p, r))
    for p, q in itertools.combinations(range(size), 2):
        for r, s_ in itertools.combinations(range(size), 2):
            k1, s1 = _mono_times((1 << r) | (1 << s_), keys)
            k2, s2 = _mono_rder(k1, q)
            k3, s3 = _mono_rder(k2, p)
            # 1/2 of the generic form times the four antisymmetric index partners
            s = 2 * s1 * s2 * s3
            nz = s != 0
            rows.append(k3[nz] * keys.size + keys[nz])
            cols.append(np.full(nz.sum(), len(labels)))
            vals.append(s[nz].astype(complex))
            labels.append(("diffusion", p, q, r, s_))
    mat = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(keys.size**2, len(labels)),
    )
    return labels, mat


def symbolic_ffpe(h, v=None, hbar=1.0, tol=1e-12):
    """Drift and diffusion coefficients for the B distribution of a mode Hamiltonian.

    Builds the superoperator of ``-(i/hbar)[H, rho]`` from the correspondence
    rules, then solves for the unique linear drift and bilinear diffusion whose
    generic Fokker-Planck superoperator reproduces it on the full coefficient
    basis.  The drift term carries the parity of the distribution it acts on,
    so the returned coefficients are those of even (physical) distributions.

    Raises :class:`StructuralError` when the residual exceeds ``tol``, which
    signals a Hamiltonian outside the quadratic-plus-quartic form.
    """
    h = np.asarray(h, dtype=complex)
    n = h.shape[0]
    if n > 4:
        raise ConfigurationError(f"symbolic_ffpe supports at most 4 modes, got {n}")
    gens = GeneratorSet(n)
    target = hamiltonian_superoperator(h, v, hbar).matrix.ravel()
    labels, A = _ffpe_columns(gens)
    gram = (A.conj().T @ A).toarray()
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise StructuralError("drift/diffusion parametrisation is not identifiable")
    sol = np.linalg.solve(gram, A.conj().T @ target)
    scale = max(1.0, float(np.max(np.abs(target))))
    residual = float(np.max(np.abs(A @ sol - target))) / scale
    if residual > tol:
        raise StructuralError(
            f"Hamiltonian not representable by linear drift + bilinear diffusion "
            f"(residual {residual:.3e})"
        )
    size = gens.size
    drift = np.zeros((size, size), dtype=complex)
    diffusion = np.zeros((size,) * 4, dtype=complex)
    for label, c in zip(labels, sol):
        if label[0] == "drift":
            drift[label[1], label[2]] = c
            continue
        p, q, r, s = label[1:]
        diffusion[p, q, r, s] = c
        diffusion[q, p, r, s] = -c
        diffusion[p, q, s, r] = -c
        diffusion[q, p, s, r] = c
    drift[np.abs(drift) < tol * scale] = 0
    diffusion[np.abs(diffusion) < tol * scale] = 0
    return FFPECoefficients(gens, drift, diffusion, residual)


# --- randomized identity checks -------------------------------------------


def random_element(gens, rng, density=0.5, parity=None):
    """Random element with Gaussian complex coefficients on a random monomial subset."""
    gens = GeneratorSet(gens) if isinstance(gens, int) else gens
    keys = np.arange(1 << gens.size)
    if parity is not None:
        odd = _popcount(keys) & 1
        keys = keys[odd == (0 if parity == 1 else 1)]
    keys = keys[rng.random(keys.size) < density]
    vals = rng.normal(size=keys.size) + 1j * rng.normal(size=keys.size)
    return GrassmannElement(gens, keys, vals)


def _max_abs(a):
    return float(np.max(np.abs(a.values), initial=0.0))


def algebra_identity_errors(n_modes, n_cases, seed=0):
    """Largest violation of each basic identity over ``n_cases`` random draws.

    Checks anticommutation and nilpotency of odd elements, graded
    commutativity, parity of products, the graded product rule, integration
    by parts and anticommutation of derivatives.  Every value should be at
    rounding level.
    """
    gens = GeneratorSet(n_modes)
    rng = np.random.default_rng(seed)
    err = dict.fromkeys(
        ("anticommutation", "nilpotency", "parity", "product_rule", "integration_by_parts", "derivative_antisymmetry"),
        0.0,
    )
    for _ in range(int(n_cases)):
        pa, pb = rng.choice([1, -1], size=2)
        a = random_element(gens, rng, parity=pa)
        b = random_element(gens, rng, parity=pb)
        scale = max(1.0, _max_abs(a) * _max_abs(b) * 2**gens.size)
        oa, ob = a.odd_part(), b.odd_part()
        err["anticommutation"] = max(err["anticommutation"], _max_abs(oa * ob + ob * oa) / scale)
        err["nilpotency"] = max(err["nilpotency"], _max_abs(oa * oa) / scale)
        ab = a * b
        graded = ab - (-1 if pa == pb == -1 else 1) * (b * a)
        err["parity"] = max(err["parity"], _max_abs(graded) / scale)
        if not ab.is_zero() and ab.parity() != pa * pb:
            err["parity"] = np.inf
        gen = int(rng.integers(gens.size))
        lhs = berezin_derivative(ab, gen, "left")
        rhs = berezin_derivative(a, gen, "left") * b + pa * (a * berezin_derivative(b, gen, "left"))
        err["product_rule"] = max(err["product_rule"], _max_abs(lhs - rhs) / scale)
        # ∫dg (∂a) b = -pa ∫dg a (∂b); both sides integrate over the same generator
        lhs = berezin_integrate(berezin_derivative(a, gen, "left") * b, [gen])
        rhs = -pa * berezin_integrate(a * berezin_derivative(b, gen, "left"), [gen])
        err["integration_by_parts"] = max(err["integration_by_parts"], _max_abs(lhs - rhs) / scale)
        other = int(rng.integers(gens.size))
        for side in ("left", "right"):
            d12 = berezin_derivative(berezin_derivative(a, gen, side), other, side)
            d21 = berezin_derivative(berezin_derivative(a, other, side), gen, side)
            err["derivative_antisymmetry"] = max(err["derivative_antisymmetry"], _max_abs(d12 + d21) / scale)
    return err
