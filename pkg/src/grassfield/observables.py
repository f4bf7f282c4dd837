"""Moment tensors, their evolution through trajectories, and read-out of observables.

Storage convention: ``MomentTensor.data[m_1..m_p, l_1..l_p]`` is the average
of ``psi(m_p)..psi(m_1) psi^+(l_1)..psi^+(l_p)`` in field-density units, with
slots given as composite ``(component, grid point)`` indices.  Times
``dV^p`` it equals ``Tr(|l><m| rho) = <m|rho|l>`` for grid-cell Fock states
``|l> = c^†_{l_1}..c^†_{l_p}|0>``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

MAX_TENSOR_ELEMENTS = 50_000_000


@dataclass
class MomentTensor:
    """Canonical-order moment tensor of order ``p`` (``2p`` axes of equal length)."""

    data: np.ndarray
    order: int
    cell_volume: float = 1.0
    n_points: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        p = self.order
        if self.data.ndim != 2 * p or len(set(self.data.shape)) > 1:
            raise ConfigurationError(f"order-{p} tensor needs {2 * p} equal axes, got shape {self.data.shape}")
        if self.n_points is None:
            self.n_points = self.n_slots

    @property
    def n_slots(self):
        return self.data.shape[0] if self.data.ndim else 0

    def slot(self, s):
        """Composite index of ``s`` (int or ``(component, point)``)."""
        if isinstance(s, (tuple, list)):
            comp, point = s
            if not 0 <= point < self.n_points:
                raise ValidationError(f"grid point {point} outside 0..{self.n_points - 1}")
            s = comp * self.n_points + point
        s = int(s)
        if not 0 <= s < self.n_slots:
            raise ValidationError(f"slot {s} outside 0..{self.n_slots - 1}")
        return s

    def mode_units(self):
        """Entries as grid-mode coherences (``data * dV^p``)."""
        return self.data * self.cell_volume**self.order

    def antisymmetry_error(self):
        """Largest deviation from antisymmetry under swaps within either index group."""
        p = self.order
        err = 0.0
        for base in (0, p):
            for i, j in itertools.combinations(range(p), 2):
                axes = list(range(2 * p))
                axes[base + i], axes[base + j] = axes[base + j], axes[base + i]
                err = max(err, float(np.max(np.abs(self.data + self.data.transpose(axes)), initial=0)))
        return err

    def nonzeros(self):
        idx = np.argwhere(self.data != 0)
        return idx[:, : self.order], idx[:, self.order :], self.data[tuple(idx.T)]


def antisymmetrize(data, p):
    """Project a ``2p``-axis tensor onto the antisymmetric class of each index group."""
    data = np.asarray(data, dtype=complex)
    out = np.zeros_like(data)
    perms = list(itertools.permutations(range(p)))
    for pm in perms:
        for pl in perms:
            sign = _perm_sign(pm) * _perm_sign(pl)
            out += sign * data.transpose(list(pm) + [p + i for i in pl])
    return out / len(perms) ** 2


def _perm_sign(perm):
    sign, seen = 1, list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def fock_state_moments(amplitudes, n_slots, cell_volume=1.0, n_points=None):
    """Moment tensor of the pure state ``sum_k a_k c^†_{k_1}..c^†_{k_p}|0>``.

    ``amplitudes`` maps tuples of composite slots to complex amplitudes; all
    tuples must have the same length ``p``.
    """
    amps = {tuple(int(x) for x in k): complex(v) for k, v in dict(amplitudes).items()}
    orders = {len(k) for k in amps}
    if len(orders) != 1:
        raise ConfigurationError("all Fock components must have the same particle number")
    (p,) = orders
    A = np.zeros((n_slots,) * p, dtype=complex)
    for slots, a in amps.items():
        if len(set(slots)) < p:
            continue
        if max(slots, default=-1) >= n_slots or min(slots, default=0) < 0:
            raise ValidationError(f"slot tuple {slots} outside 0..{n_slots - 1}")
        for perm in itertools.permutations(range(p)):
            A[tuple(slots[i] for i in perm)] += _perm_sign(perm) * a
    return _moments_from_amplitude(A, p, cell_volume, n_points)


def slater_moments(orbitals, cell_volume=1.0, n_points=None):
    """Moment tensor of ``prod_j c^†(phi_j)|0>`` for orbital rows ``orbitals[j, slot]``."""
    phi = np.asarray(orbitals, dtype=complex)
    p, n = phi.shape
    A = np.zeros((n,) * p, dtype=complex)
    for m in itertools.permutations(range(n), p):
        A[m] = np.linalg.det(phi[:, list(m)].T)
    return _moments_from_amplitude(A, p, cell_volume, n_points)


def _moments_from_amplitude(A, p, cell_volume, n_points):
    # <m|Psi><Psi|l> in mode units, divided by dV^p for field-density units
    data = np.multiply.outer(A, A.conj()) / cell_volume**p
    return MomentTensor(data, p, cell_volume, n_points)


# --- evolution --------------------------------------------------------------


@dataclass
class EnsembleEstimate:
    """Ensemble mean with separate standard errors of the real and imaginary parts."""

    mean: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    n_traj: int
    n_excluded: int = 0

    @property
    def stderr(self):
        return np.hypot(self.stderr_re, self.stderr_im)


def _apply_slots(X, mats, first_slot, n_slots):
    """Contract per-trajectory ``mats[b]`` into axes ``first_slot..`` of ``X[b, ...]``."""
    for s in range(first_slot, first_slot + n_slots):
        X = np.moveaxis(np.einsum("bij,bj...->bi...", mats, np.moveaxis(X, s + 1, 1)), 1, s + 1)
    return X


def evolve_moment(M0, trajectories, block=256):
    """Average of the per-trajectory transformed tensors.

    Each trajectory maps the tensor by ``T`` on every psi slot and ``T^+`` on
    every psi^+ slot.  ``trajectories`` is a sequence of
    :class:`~grassfield.propagator.TrajectoryPropagator` or a pair of stacked
    arrays ``(T[b], T_plus[b])``.  Divergent trajectories are excluded.
    """
    if isinstance(trajectories, tuple) and len(trajectories) == 2 and np.ndim(trajectories[0]) == 3:
        T, Tp = (np.asarray(x, dtype=complex) for x in trajectories)
        bad = ~(np.isfinite(T).all(axis=(1, 2)) & np.isfinite(Tp).all(axis=(1, 2)))
    else:
        trajectories = list(trajectories)
        if not trajectories:
            raise ConfigurationError("evolve_moment needs at least one trajectory")
        T = np.stack([t.T for t in trajectories])
        Tp = np.stack([t.T_plus for t in trajectories])
        bad = np.array([t.divergent or not (np.isfinite(t.T).all() and np.isfinite(t.T_plus).all()) for t in trajectories])
    if T.shape[0] == 0:
        raise ConfigurationError("evolve_moment needs at least one trajectory")
    n, p = M0.n_slots, M0.order
    if T.shape[1:] != (n, n):
        raise ConfigurationError(f"propagators are {T.shape[1:]}, moment tensor has {n} slots")
    if block * n ** (2 * p) > MAX_TENSOR_ELEMENTS:
        block = max(1, MAX_TENSOR_ELEMENTS // max(1, n ** (2 * p)))
    T, Tp = T[~bad], Tp[~bad]
    total = np.zeros(M0.data.shape, dtype=complex)
    sq_re = np.zeros(M0.data.shape)
    sq_im = np.zeros(M0.data.shape)
    for start in range(0, T.shape[0], block):
        Tb, Tpb = T[start : start + block], Tp[start : start + block]
        X = np.broadcast_to(M0.data, (Tb.shape[0],) + M0.data.shape)
        X = _apply_slots(X, Tb, 0, p)
        X = _apply_slots(X, Tpb, p, p)
        total += X.sum(axis=0)
        sq_re += (X.real**2).sum(axis=0)
        sq_im += (X.imag**2).sum(axis=0)
    N = T.shape[0]
    if N == 0:
        raise ConfigurationError("every trajectory diverged")
    mean = total / N
    if N > 1:
        se_re = np.sqrt(np.maximum(sq_re - N * mean.real**2, 0) / (N - 1) / N)
        se_im = np.sqrt(np.maximum(sq_im - N * mean.imag**2, 0) / (N - 1) / N)
    else:
        se_re = np.zeros(mean.shape)
        se_im = np.zeros(mean.shape)
    return EnsembleEstimate(
        MomentTensor(mean, p, M0.cell_volume, M0.n_points), se_re, se_im, int(N), int(bad.sum())
    )


# --- read-out ---------------------------------------------------------------


def _value(M):
    return M.mean if isinstance(M, EnsembleEstimate) else M


def _entry(M, psi, plus):
    """Mode-unit entry and its standard errors (zero for a plain tensor)."""
    T = _value(M)
    psi = [T.slot(s) for s in psi]
    plus = [T.slot(s) for s in plus]
    if len(psi) != T.order or len(plus) != T.order:
        raise ConfigurationError(f"tensor of order {T.order} needs {T.order} slots per side")
    if len(set(psi)) < len(psi) or len(set(plus)) < len(plus):
        return 0j, 0.0, 0.0
    idx = tuple(psi + plus)
    scale = T.cell_volume**T.order
    if isinstance(M, EnsembleEstimate):
        return T.data[idx] * scale, M.stderr_re[idx] * scale, M.stderr_im[idx] * scale
    return T.data[idx] * scale, 0.0, 0.0


def position_population(M, points):
    """Probability of finding particles in the cells ``points`` (one per slot).

    Returns ``(value, imaginary_residue)``; duplicate slots give exactly 0.
    """
    val, _, _ = _entry(M, points, points)
    return float(val.real), float(val.imag)


def position_coherence(M, bra_points, ket_points):
    """``<Phi{bra}| rho |Phi{ket}>`` for position Fock states of single cells.

    ``bra_points`` index the psi slots and ``ket_points`` the psi^+ slots.
    """
    val, _, _ = _entry(M, bra_points, ket_points)
    return complex(val)


def momentum_mode_rows(grid, n_components, labels, conj=False):
    """Plane-wave row vectors over composite slots for ``(component, momentum label)`` pairs."""
    U = grid.plane_waves()
    p = grid.n_points
    rows = []
    for comp, label in labels:
        if not 0 <= comp < n_components:
            raise ValidationError(f"component {comp} outside 0..{n_components - 1}")
        row = np.zeros(n_components * p, dtype=complex)
        row[comp * p : (comp + 1) * p] = U[grid.momentum_index(label)]
        rows.append(row.conj() if conj else row)
    return np.array(rows)


def momentum_fock_coherence(M, grid, bra_modes, ket_modes):
    """``<k-bra| rho |k-ket>`` for Fock states of discrete plane-wave modes.

    Modes are ``(component, label)`` with integer reciprocal-lattice labels
    (wavevector ``2 pi label / (points * spacing)``).
    """
    T = _value(M)
    n_comp = T.n_slots // grid.n_points
    a = momentum_mode_rows(grid, n_comp, bra_modes, conj=True)
    b = momentum_mode_rows(grid, n_comp, ket_modes)
    X = T.mode_units()
    for row in a:
        X = np.tensordot(row, X, axes=([0], [0]))
    for row in b:
        X = np.tensordot(row, X, axes=([0], [0]))
    return complex(X)


def total_population(M):
    """Sum of the order-``p`` population over all distinct cell sets."""
    T = _value(M)
    p = T.order
    X = T.mode_units()
    for _ in range(p):
        X = np.trace(X, axis1=0, axis2=X.ndim // 2)
    return complex(X) / math.factorial(p)


# --- functionals evaluated per trajectory ----------------------------------


@dataclass(frozen=True)
class MomentFunctional:
    """Linear read-out of the evolved moment tensor.

    ``kind='entry'``: ``scale * sum_{m,l} M(t)[m;l] prod a_i[m_i] prod b_i[l_i]``
    with row vectors ``psi_rows`` (a) and ``plus_rows`` (b).
    ``kind='trace'``: ``scale * sum_m M(t)[m;m]``.
    """

    kind: str
    psi_rows: np.ndarray = None
    plus_rows: np.ndarray = None
    scale: float = 1.0


def entry_functional(M0, bra, ket):
    """Position-coherence functional for composite slots ``bra`` / ``ket``."""
    n = M0.n_slots
    eye = np.eye(n)
    return MomentFunctional(
        "entry",
        eye[[M0.slot(s) for s in bra]],
        eye[[M0.slot(s) for s in ket]],
        M0.cell_volume**M0.order,
    )


def momentum_functional(M0, grid, bra_modes, ket_modes):
    n_comp = M0.n_slots // grid.n_points
    return MomentFunctional(
        "entry",
        momentum_mode_rows(grid, n_comp, bra_modes, conj=True),
        momentum_mode_rows(grid, n_comp, ket_modes),
        M0.cell_volume**M0.order,
    )


def trace_functional(M0):
    return MomentFunctional("trace", scale=M0.cell_volume**M0.order / math.factorial(M0.order))


def evaluate_functionals(M0, functionals, T, T_plus):
    """Per-trajectory values ``[..., n_functionals]`` for stacked ``T[..., n, n]``."""
    idx_m, idx_l, vals = M0.nonzeros()
    p = M0.order
    lead = T.shape[:-2]
    out = np.zeros(lead + (len(functionals),), dtype=complex)
    if vals.size == 0:
        return out
    for f_i, f in enumerate(functionals):
        if f.kind == "trace":
            # sum_m prod_i T[m_i, a_i] T^+[m_i, c_i] = prod_i (T^T T^+)[a_i, c_i]
            G = np.einsum("...ma,...mc->...ac", T, T_plus)
            prod = np.ones(lead + (vals.size,), dtype=complex)
            for i in range(p):
                prod = prod * G[..., idx_m[:, i], idx_l[:, i]]
        else:
            prod = np.ones(lead + (vals.size,), dtype=complex)
            for i in range(p):
                A = np.einsum("j,...jm->...m", f.psi_rows[i], T)
                B = np.einsum("j,...jm->...m", f.plus_rows[i], T_plus)
                prod = prod * A[..., idx_m[:, i]] * B[..., idx_l[:, i]]
        out[..., f_i] = f.scale * (prod @ vals)
    return out


def jackknife(estimator, chunk_sums, chunk_counts):
    """Delete-one-group jackknife of ``estimator(mean vector)`` over trajectory chunks.

    Returns ``(estimate, standard_error)``; ``chunk_sums[g]`` holds the summed
    per-trajectory vectors of group ``g``.
    """
    sums = np.asarray(chunk_sums)
    counts = np.asarray(chunk_counts, dtype=float)
    G = len(counts)
    if G < 2:
        raise ConfigurationError("jackknife needs at least two groups")
    total, n = sums.sum(axis=0), counts.sum()
    full = estimator(total / n)
    leave = np.array([estimator((total - sums[g]) / (n - counts[g])) for g in range(G)])
    mean_leave = leave.mean(axis=0)
    var = (G - 1) / G * ((leave - mean_leave) * np.conj(leave - mean_leave)).real.sum(axis=0)
    return full, np.sqrt(var)
