"""Grid discretisation of the two-component and multi-component Fermi gases.

Composite index of field slot ``(component a, grid point r)`` is
``a * n_points + r``.  Fields are sampled as ``psi(r_j) = g_j / sqrt(dV)`` in
the grid-cell mode basis, so the drift and noise matrices below act on field
samples and grid-mode amplitudes alike.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, ValidationError
from .takagi import takagi_factor

MAX_KERNEL_DIM = 48


@dataclass(frozen=True)
class GridSpec:
    """Periodic cubic grid with ``points`` per axis and spacing ``spacing``."""

    points: int
    spacing: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 2:
            raise ValidationError(f"points must be an integer >= 2, got {self.points}", "grid.points")
        if not self.spacing > 0:
            raise ValidationError(f"spacing must be positive, got {self.spacing}", "grid.spacing")
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"dim must be 1, 2 or 3, got {self.dim}", "grid.dim")

    @property
    def n_points(self):
        return self.points**self.dim

    @property
    def cell_volume(self):
        return self.spacing**self.dim

    def coordinates(self):
        """Array ``(n_points, dim)`` of grid positions, C order over axes."""
        axis = np.arange(self.points) * self.spacing
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def axis_wavenumbers(self):
        """Reciprocal-lattice wavenumbers of one axis in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)

    def wavevectors(self):
        """Array ``(n_points, dim)`` of wavevectors matching :meth:`plane_waves` rows."""
        k = self.axis_wavenumbers()
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def plane_waves(self):
        """Unitary ``U[k, j] = exp(i k.x_j) / sqrt(n_points)``."""
        phase = self.wavevectors() @ self.coordinates().T
        return np.exp(1j * phase) / np.sqrt(self.n_points)

    def momentum_index(self, n):
        """Row of :meth:`plane_waves` for integer reciprocal-lattice label(s) ``n``."""
        n = np.atleast_1d(np.asarray(n))
        if n.shape != (self.dim,) or not np.all(np.equal(np.mod(n, 1), 0)):
            raise ValidationError(f"momentum label {n.tolist()} is not on the reciprocal lattice")
        idx = 0
        for ni in n.astype(int):
            idx = idx * self.points + int(ni) % self.points
        return idx

    def laplacian(self):
        """3-point periodic stencil per axis, sparse ``(n_points, n_points)``."""
        m = self.points
        one = sparse.lil_matrix((m, m))
        for j in range(m):
            one[j, j] += -2.0
            one[j, (j + 1) % m] += 1.0
            one[j, (j - 1) % m] += 1.0
        one = sparse.csr_matrix(one) / self.spacing**2
        eye = sparse.identity(m, format="csr")
        total = sparse.csr_matrix((self.n_points, self.n_points))
        for axis in range(self.dim):
            mats = [eye] * self.dim
            mats[axis] = one
            term = mats[0]
            for mat in mats[1:]:
                term = sparse.kron(term, mat, format="csr")
            total = total + term
        return sparse.csr_matrix(total)

    def stencil_dispersion(self, mass, hbar=1.0):
        """Kinetic energies of the stencil operator for each plane wave."""
        k = self.wavevectors()
        lam = (2 - 2 * np.cos(k * self.spacing)).sum(axis=1) / self.spacing**2
        return hbar**2 * lam / (2 * mass)

    def spectral_dispersion(self, mass, hbar=1.0):
        k = self.wavevectors()
        return hbar**2 * (k**2).sum(axis=1) / (2 * mass)

    def min_image_distance(self):
        """Periodic distance between every pair of grid points."""
        x = self.coordinates()
        box = self.points * self.spacing
        d = x[:, None, :] - x[None, :, :]
        d = d - box * np.round(d / box)
        return np.sqrt((d**2).sum(axis=-1))


def _check_units(hbar, mass):
    if not hbar > 0:
        raise ValidationError(f"hbar must be positive, got {hbar}", "model.hbar")
    if not mass > 0:
        raise ValidationError(f"mass must be positive, got {mass}", "model.mass")


@dataclass(frozen=True)
class TwoComponentModel:
    """Spin-1/2 Fermi gas with contact coupling between up and down."""

    mass: float
    coupling: float
    potential_up: np.ndarray
    potential_down: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        _check_units(self.hbar, self.mass)
        for name in ("potential_up", "potential_down"):
            arr = np.asarray(getattr(self, name))
            if np.iscomplexobj(arr) and np.any(arr.imag != 0):
                raise ValidationError("potential must be real", f"model.{name}")
            object.__setattr__(self, name, np.asarray(arr, dtype=float))
        if np.iscomplexobj(self.coupling):
            raise ValidationError("coupling must be real", "model.coupling")


@dataclass(frozen=True)
class MultiComponentModel:
    """Fermi gas with ``n_components`` species, local one-body and finite-range two-body kernels.

    ``one_body[a, b, r]`` is ``V^{a;b}(r)``; ``two_body[a, b, c, d, r, s]`` is the
    sampled kernel ``V^{ab;cd}(r, s)`` in energy units (a contact coupling ``g``
    is sampled as ``g delta_rs / dV``).
    """

    n_components: int
    mass: float
    one_body: np.ndarray
    two_body: np.ndarray
    hbar: float = 1.0
    tol: float = 1e-12

    def __post_init__(self):
        _check_units(self.hbar, self.mass)
        c = self.n_components
        one = np.asarray(self.one_body)
        two = np.asarray(self.two_body)
        if one.ndim != 3 or one.shape[:2] != (c, c):
            raise ValidationError(f"one_body must have shape ({c}, {c}, P), got {one.shape}", "model.one_body")
        p = one.shape[2]
        if two.shape != (c, c, c, c, p, p):
            raise ValidationError(f"two_body must have shape {(c,) * 4 + (p, p)}, got {two.shape}", "model.two_body")
        for name, arr in (("one_body", one), ("two_body", two)):
            if np.iscomplexobj(arr) and np.any(arr.imag != 0):
                raise ValidationError("kernel must be real", f"model.{name}")
        one = one.real.astype(float)
        two = two.real.astype(float)
        scale = max(1.0, np.max(np.abs(two)) if two.size else 0.0)
        if np.max(np.abs(one - one.transpose(1, 0, 2)), initial=0) > self.tol * max(1.0, np.max(np.abs(one), initial=0)):
            raise ValidationError("one-body kernel violates V^{a;b} = V^{b;a}", "model.one_body")
        swap = two.transpose(1, 0, 3, 2, 5, 4)
        if np.max(np.abs(two - swap), initial=0) > self.tol * scale:
            raise ValidationError("two-body kernel violates V^{ab;cd}(r,s) = V^{ba;dc}(s,r)", "model.two_body")
        exch = two.transpose(2, 3, 0, 1, 4, 5)
        if np.max(np.abs(two - exch), initial=0) > self.tol * scale:
            raise ValidationError("two-body kernel violates V^{ab;cd}(r,s) = V^{cd;ab}(r,s)", "model.two_body")
        object.__setattr__(self, "one_body", one)
        object.__setattr__(self, "two_body", two)

    @property
    def n_points(self):
        return self.one_body.shape[2]


def contact_two_body(n_components, grid, coupling):
    """Zero-range kernel ``g delta_rs / dV`` between distinct components."""
    c, p = n_components, grid.n_points
    two = np.zeros((c, c, c, c, p, p))
    for a, b in itertools.permutations(range(c), 2):
        for r in range(p):
            two[a, b, a, b, r, r] = coupling / grid.cell_volume
    return two


def gaussian_two_body(n_components, grid, strength, width):
    """Finite-range kernel ``U exp(-d(r,s)^2 / 2 w^2)`` for every component pair."""
    c, p = n_components, grid.n_points
    prof = strength * np.exp(-grid.min_image_distance() ** 2 / (2 * width**2))
    two = np.zeros((c, c, c, c, p, p))
    for a, b in itertools.product(range(c), repeat=2):
        two[a, b, a, b] = prof
    return two


def two_component_as_multi(model, grid):
    """The same physics written as a two-species :class:`MultiComponentModel`."""
    p = grid.n_points
    one = np.zeros((2, 2, p))
    one[0, 0] = model.potential_up
    one[1, 1] = model.potential_down
    return MultiComponentModel(2, model.mass, one, contact_two_body(2, grid, model.coupling), model.hbar)


@dataclass(frozen=True)
class DriftNoiseCoefficients:
    """Drift matrices and noise matrices per sector for one discretised model.

    ``noise_psi[a]`` multiplies the Wiener increment of global channel
    ``channels_psi[a]``; likewise for the psi^+ sector.  The two sectors use
    disjoint channel ids.
    """

    grid: GridSpec
    n_components: int
    hbar: float
    mass: float
    drift_psi: sparse.csr_matrix
    drift_plus: sparse.csr_matrix
    kinetic: sparse.csr_matrix
    potential: np.ndarray
    noise_psi: tuple = ()
    noise_plus: tuple = ()
    channels_psi: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    channels_plus: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def dimension(self):
        return self.n_components * self.grid.n_points

    @property
    def n_channels(self):
        ids = np.concatenate([self.channels_psi, self.channels_plus])
        return int(ids.max()) + 1 if ids.size else 0

    def one_body(self):
        """Dense one-body energy matrix ``h`` over composite indices."""
        p = self.grid.n_points
        h = np.kron(np.eye(self.n_components), self.kinetic.toarray()).astype(complex)
        for a, b in itertools.product(range(self.n_components), repeat=2):
            h[a * p : (a + 1) * p, b * p : (b + 1) * p] += np.diag(self.potential[:, a, b])
        return h

    def noise(self, sector):
        if sector == "psi":
            return self.noise_psi, self.channels_psi
        if sector == "plus":
            return self.noise_plus, self.channels_plus
        raise ConfigurationError(f"sector must be 'psi' or 'plus', got {sector!r}")

    def drift(self, sector):
        return self.drift_psi if sector == "psi" else self.drift_plus

    def noise_triplets(self, sector):
        """``(channel, row, col, value)`` arrays listing every noise matrix entry."""
        mats, chans = self.noise(sector)
        ch, rows, cols, vals = [], [], [], []
        for mat, c in zip(mats, chans):
            coo = sparse.coo_matrix(mat)
            ch.append(np.full(coo.nnz, c, dtype=np.int64))
            rows.append(coo.row.astype(np.int64))
            cols.append(coo.col.astype(np.int64))
            vals.append(coo.data.astype(complex))
        if not ch:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z, np.zeros(0, dtype=complex)
        return np.concatenate(ch), np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def noise_matrix_sum(self, sector):
        """Plain ``sum_a K_a K_a^T`` (dense)."""
        mats, _ = self.noise(sector)
        out = np.zeros((self.dimension,) * 2, dtype=complex)
        for mat in mats:
            out += (mat @ mat.T).toarray()
        return out

    def diffusion_kernel(self, sector):
        """Antisymmetrised ``W[i,j,k,l] = sum_a K_a[i,k] K_a[j,l]`` with ``D_ij = sum W_ijkl g_k g_l``."""
        n = self.dimension
        if n > MAX_KERNEL_DIM:
            raise ConfigurationError(f"dense diffusion kernel limited to {MAX_KERNEL_DIM} slots, got {n}")
        mats, _ = self.noise(sector)
        W = np.zeros((n,) * 4, dtype=complex)
        for mat in mats:
            dense = mat.toarray()
            W += np.einsum("ik,jl->ijkl", dense, dense)
        return 0.5 * (W - W.transpose(0, 1, 3, 2))

    def with_noise(self, noise_psi, channels_psi, noise_plus, channels_plus):
        """Copy with replaced noise matrices and channel ids."""
        return DriftNoiseCoefficients(
            self.grid, self.n_components, self.hbar, self.mass, self.drift_psi, self.drift_plus,
            self.kinetic, self.potential,
            tuple(sparse.csr_matrix(m) for m in noise_psi), tuple(sparse.csr_matrix(m) for m in noise_plus),
            np.asarray(channels_psi, dtype=np.int64), np.asarray(channels_plus, dtype=np.int64),
        )


def _drift_pair(kinetic, potential, n_components, hbar):
    p = kinetic.shape[0]
    h = sparse.kron(sparse.identity(n_components), kinetic, format="csr").astype(complex)
    local = sparse.lil_matrix((n_components * p, n_components * p), dtype=complex)
    for a, b in itertools.product(range(n_components), repeat=2):
        vals = potential[:, a, b]
        for r in np.nonzero(vals)[0]:
            local[a * p + r, b * p + r] = vals[r]
    h = sparse.csr_matrix(h + local.tocsr())
    drift_psi = sparse.csr_matrix((-1j / hbar) * h)
    drift_plus = sparse.csr_matrix((1j / hbar) * h.conj())
    return drift_psi, drift_plus


def kinetic_operator(grid, mass, hbar):
    return sparse.csr_matrix(-(hbar**2) / (2 * mass) * grid.laplacian())


def discretize_two_component(model, grid):
    """Drift and contact-noise matrices of the two-component model.

    Per grid point ``r`` and ``c = sqrt(i g / (2 hbar dV))`` (principal branch)
    there are two channels per sector.  Channel ids are
    ``sector * 2P + pair * P + r`` with pair 0 = (u,d) and 1 = (d,u).
    """
    p = grid.n_points
    for name, arr in (("potential_up", model.potential_up), ("potential_down", model.potential_down)):
        if arr.shape != (p,):
            raise ValidationError(f"expected {p} samples, got shape {arr.shape}", f"model.{name}")
    kin = kinetic_operator(grid, model.mass, model.hbar)
    pot = np.zeros((p, 2, 2))
    pot[:, 0, 0] = model.potential_up
    pot[:, 1, 1] = model.potential_down
    drift_psi, drift_plus = _drift_pair(kin, pot, 2, model.hbar)
    noise_psi, noise_plus, ch_psi, ch_plus = [], [], [], []
    if model.coupling != 0:
        c = np.sqrt(1j * model.coupling / (2 * model.hbar * grid.cell_volume))
        # (psi coefficient on (u,d), on (d,u)), (psi^+ coefficient on (u,d), on (d,u))
        patterns = [((c, c), (c, -c)), ((1j * c, -1j * c), (1j * c, 1j * c))]
        for pair, (psi_coef, plus_coef) in enumerate(patterns):
            for r in range(p):
                u, d = r, p + r
                for coef, mats, chans, sector in (
                    (psi_coef, noise_psi, ch_psi, 0),
                    (plus_coef, noise_plus, ch_plus, 1),
                ):
                    mat = sparse.csr_matrix(
                        ([coef[0], coef[1]], ([u, d], [d, u])), shape=(2 * p, 2 * p), dtype=complex
                    )
                    mats.append(mat)
                    chans.append(sector * 2 * p + pair * p + r)
        order_psi = np.argsort(ch_psi)
        order_plus = np.argsort(ch_plus)
        noise_psi = [noise_psi[i] for i in order_psi]
        noise_plus = [noise_plus[i] for i in order_plus]
        ch_psi = sorted(ch_psi)
        ch_plus = sorted(ch_plus)
    return DriftNoiseCoefficients(
        grid, 2, model.hbar, model.mass, drift_psi, drift_plus, kin, pot,
        tuple(noise_psi), tuple(noise_plus),
        np.asarray(ch_psi, dtype=np.int64), np.asarray(ch_plus, dtype=np.int64),
    )


def assemble_q(model, grid, noise_form="direct"):
    """Complex symmetric matrix whose Takagi factor gives the noise matrices.

    ``direct``: ``Q[(a,c,r),(b,d,s)] = -(i/hbar) V^{ab;cd}(r,s)``.
    ``exchange``: ``Q'[(a,c,r),(b,d,r)] = +(i/hbar) V^{ab;dc}(r,r)``, valid only for
    kernels that vanish off ``r = s``; both give the same antisymmetrised
    diffusion kernel.  Row index is ``(a * C + c) * P + r``.
    """
    c, p = model.n_components, grid.n_points
    V = model.two_body
    if noise_form == "direct":
        Q = np.transpose(V, (0, 2, 4, 1, 3, 5)).reshape(c * c * p, c * c * p)
        return (-1j / model.hbar) * Q
    if noise_form == "exchange":
        off = V * (1 - np.eye(p))[None, None, None, None]
        if np.any(off != 0):
            raise ValidationError("exchange noise form requires a zero-range (r = s) kernel", "model.two_body")
        Vx = np.transpose(V, (0, 1, 3, 2, 4, 5))
        Q = np.transpose(Vx, (0, 2, 4, 1, 3, 5)).reshape(c * c * p, c * c * p)
        return (1j / model.hbar) * Q
    raise ConfigurationError(f"noise_form must be 'direct' or 'exchange', got {noise_form!r}")


def discretize_multi_component(model, grid, tol=1e-10, noise_form="direct"):
    """Drift and Takagi noise matrices of the multi-component model.

    Noise matrices are ``B_a[(a,r),(c,r)] = K[(a,c,r), a]`` for the psi sector and
    ``i B_a`` for the psi^+ sector.  Channel ids: ``a`` (psi) and ``rank + a`` (psi^+).
    """
    c, p = model.n_components, grid.n_points
    if model.n_points != p:
        raise ValidationError(f"kernels sampled on {model.n_points} points, grid has {p}", "model")
    if c * c * p > 4096:
        raise ConfigurationError(f"Q dimension {c * c * p} exceeds the bound 4096")
    kin = kinetic_operator(grid, model.mass, model.hbar)
    pot = np.transpose(model.one_body, (2, 0, 1))
    drift_psi, drift_plus = _drift_pair(kin, pot, c, model.hbar)
    Q = assemble_q(model, grid, noise_form)
    fac = takagi_factor(Q, tol=tol)
    K = fac.K.reshape(c, c, p, fac.rank)
    noise_psi, noise_plus = [], []
    for a in range(fac.rank):
        blk = K[..., a]
        nz = np.nonzero(np.abs(blk) > 0)
        rows = nz[0] * p + nz[2]
        cols = nz[1] * p + nz[2]
        mat = sparse.csr_matrix((blk[nz], (rows, cols)), shape=(c * p, c * p), dtype=complex)
        noise_psi.append(mat)
        noise_plus.append(sparse.csr_matrix(1j * mat))
    r = fac.rank
    return DriftNoiseCoefficients(
        grid, c, model.hbar, model.mass, drift_psi, drift_plus, kin, pot,
        tuple(noise_psi), tuple(noise_plus),
        np.arange(r, dtype=np.int64), np.arange(r, 2 * r, dtype=np.int64),
    )


def model_diffusion_kernel(model, grid, sector="psi"):
    """Antisymmetrised diffusion kernel implied directly by the two-body interaction.

    ``D_{(a r)(b s)} = -(i/hbar) sum V^{ab;cd}(r,s) g_{(c r)} g_{(d s)}`` for psi and
    the negative for psi^+.
    """
    if isinstance(model, TwoComponentModel):
        model = two_component_as_multi(model, grid)
    c, p = model.n_components, grid.n_points
    n = c * p
    if n > MAX_KERNEL_DIM:
        raise ConfigurationError(f"dense diffusion kernel limited to {MAX_KERNEL_DIM} slots, got {n}")
    sign = -1j if sector == "psi" else 1j
    W = np.zeros((c, p, c, p, c, p, c, p), dtype=complex)
    V = model.two_body
    for r, s in itertools.product(range(p), repeat=2):
        W[:, r, :, s, :, r, :, s] += sign / model.hbar * V[..., r, s]
    W = W.reshape(n, n, n, n)
    return 0.5 * (W - W.transpose(0, 1, 3, 2))


def channel_map(source, target, sector):
    """Real orthogonal ``O`` with ``sum_b K_target[b] O[b, a] = K_source[a]``.

    When both coefficient sets realise the same noise covariance, feeding the
    target's matrices with increments ``O @ dw`` reproduces the source's
    per-trajectory noise exactly.  Raises :class:`ValidationError` if no such
    real orthogonal map exists.
    """
    src, _ = source.noise(sector)
    tgt, _ = target.noise(sector)
    A = np.stack([m.toarray().ravel() for m in src], axis=1) if src else np.zeros((0, 0))
    B = np.stack([m.toarray().ravel() for m in tgt], axis=1) if tgt else np.zeros((0, 0))
    if A.shape[1] != B.shape[1]:
        raise ValidationError(f"channel counts differ: {A.shape[1]} vs {B.shape[1]}")
    O, *_ = np.linalg.lstsq(B, A, rcond=None)
    scale = max(1.0, np.max(np.abs(A)))
    if np.max(np.abs(B @ O - A)) > 1e-10 * scale:
        raise ValidationError("noise matrices span different spaces")
    if np.max(np.abs(O.imag)) > 1e-10 or np.max(np.abs(O.real @ O.real.T - np.eye(O.shape[0]))) > 1e-10:
        raise ValidationError("channel map is not a real orthogonal rotation")
    return O.real


def remap_channels(source, target):
    """Target model's noise re-expressed on the source model's Wiener channels."""
    mats = {}
    for sector in ("psi", "plus"):
        O = channel_map(source, target, sector)
        tgt, _ = target.noise(sector)
        mats[sector] = [
            sum(O[b, a] * tgt[b] for b in range(len(tgt))) for a in range(O.shape[1])
        ]
    return target.with_noise(mats["psi"], source.channels_psi, mats["plus"], source.channels_plus)


@dataclass(frozen=True)
class ModeHamiltonian:
    """``H = sum h[a,b] c_a^† c_b + 1/2 sum v[a,b,c,d] c_a^† c_b^† c_d c_c`` over grid modes."""

    h: np.ndarray
    v: np.ndarray
    hbar: float = 1.0

    @property
    def n_modes(self):
        return self.h.shape[0]


def mode_hamiltonian(model, grid, max_modes=8):
    """Grid-mode Hamiltonian built from the same discretisation as the drift."""
    if isinstance(model, TwoComponentModel):
        coeffs = discretize_two_component(model, grid)
        multi = two_component_as_multi(model, grid)
    else:
        coeffs = discretize_multi_component(model, grid)
        multi = model
    n = coeffs.dimension
    if n > max_modes:
        raise ConfigurationError(f"{n} modes exceed the exact-oracle bound {max_modes}")
    c, p = multi.n_components, grid.n_points
    v = np.zeros((c, p, c, p, c, p, c, p))
    for r, s in itertools.product(range(p), repeat=2):
        v[:, r, :, s, :, r, :, s] += multi.two_body[..., r, s]
    return ModeHamiltonian(coeffs.one_body(), v.reshape(n, n, n, n), model.hbar)
