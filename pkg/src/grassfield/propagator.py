"""Theta-matrix steps, per-trajectory propagators and the trajectory ensemble.

A trajectory carries two c-number matrices, ``T`` (psi sector) and ``T^+``
(psi^+ sector), built by left-multiplying per-step ``Theta`` matrices:

* ``euler-maruyama``: ``Theta = I + L dt + sum_a K_a dw_a``;
* ``split-step-fourier``: ``Theta = (I + sum_a K_a dw_a) P_V U_kin`` where
  ``U_kin`` is the exact kinetic phase in the plane-wave basis;
* ``bloch-basis``: ``Theta = (I + sum_a K_a dw_a) exp(L dt)`` with the
  exponential evaluated in the band basis of the periodic one-body operator.

Noise always acts in the position basis and is evaluated at the start of the
step (Ito).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import ConfigurationError, NumericalAbort
from .rng import normal_pair

VARIANTS = ("euler-maruyama", "split-step-fourier", "bloch-basis")
WORKERS_ENV = "GRASSFIELD_WORKERS"
DEFAULT_CHUNK = 1024


@dataclass(frozen=True)
class StepScheme:
    """Time-stepping variant, step size and step count.

    ``dispersion`` selects the kinetic phase of the split-step variant:
    ``stencil`` uses the eigenvalues of the 3-point stencil (exactly the grid
    operator of the drift), ``spectral`` uses ``hbar k^2 / 2m``.
    ``lattice_period`` (grid cells) is the period used by ``bloch-basis``.
    """

    variant: str = "euler-maruyama"
    dt: float = 1e-3
    steps: int = 1000
    dispersion: str = "stencil"
    lattice_period: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigurationError(f"steps must be a non-negative integer, got {self.steps}")
        if self.dispersion not in ("stencil", "spectral"):
            raise ConfigurationError(f"dispersion must be 'stencil' or 'spectral', got {self.dispersion!r}")

    @property
    def duration(self):
        return self.dt * self.steps


def stability_dt(coeffs):
    """Recommended upper bound ``0.1 * 2 m dx^2 / hbar`` for the explicit scheme."""
    return 0.1 * 2 * coeffs.mass * coeffs.grid.spacing**2 / coeffs.hbar


# --- single steps -----------------------------------------------------------


def theta_step(coeffs, dt, wiener):
    """Euler-Maruyama ``Theta = I + L dt + sum_a K_a dw_a`` for both sectors (sparse).

    ``wiener`` is a :class:`~grassfield.rng.WienerBatch` or an array indexed by
    global channel id.
    """
    dw = getattr(wiener, "increments", wiener)
    dw = np.asarray(dw, dtype=float)
    if dw.ndim != 1 or dw.size < coeffs.n_channels:
        raise ConfigurationError(f"need {coeffs.n_channels} increments, got shape {dw.shape}")
    wdt = getattr(wiener, "dt", dt)
    if not np.isclose(wdt, dt, rtol=1e-12, atol=0):
        raise ConfigurationError(f"increments drawn for dt={wdt}, step uses dt={dt}")
    n = coeffs.dimension
    out = []
    for sector in ("psi", "plus"):
        theta = sparse.identity(n, dtype=complex, format="csr") + dt * coeffs.drift(sector)
        mats, chans = coeffs.noise(sector)
        for mat, c in zip(mats, chans):
            theta = theta + dw[c] * mat
        out.append(sparse.csr_matrix(theta))
    return tuple(out)


def _kinetic_unitary(coeffs, dt, dispersion):
    grid = coeffs.grid
    U = grid.plane_waves()
    eps = grid.stencil_dispersion(coeffs.mass, coeffs.hbar) if dispersion == "stencil" else grid.spectral_dispersion(coeffs.mass, coeffs.hbar)
    one = U.conj().T @ (np.exp(-1j * eps * dt / coeffs.hbar)[:, None] * U)
    return np.kron(np.eye(coeffs.n_components), one)


def _potential_phase(coeffs, dt):
    p, c = coeffs.grid.n_points, coeffs.n_components
    out = np.zeros((c * p, c * p), dtype=complex)
    for r in range(p):
        blk = scipy.linalg.expm((-1j * dt / coeffs.hbar) * coeffs.potential[r])
        idx = np.arange(c) * p + r
        out[np.ix_(idx, idx)] = blk
    return out


@dataclass(frozen=True)
class GridBands:
    """Band decomposition of the grid one-body operator.

    ``quasimomenta[q]``; ``energies[q, a]`` ascending; ``vectors[q]`` columns are
    the Bloch eigenvectors over composite indices.
    """

    quasimomenta: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    hbar: float

    def propagator(self, dt):
        n = self.vectors.shape[1]
        out = np.zeros((n, n), dtype=complex)
        for q in range(self.quasimomenta.size):
            V = self.vectors[q]
            out += (V * np.exp(-1j * self.energies[q] * dt / self.hbar)) @ V.conj().T
        return out


def grid_bands(coeffs, period=None, tol=1e-10):
    """Block-diagonalise the periodic one-body operator by quasimomentum.

    The operator must commute with translation by ``period`` cells (1D grids);
    ``period=None`` uses the full grid (a single quasimomentum).
    """
    grid = coeffs.grid
    m, c = grid.points, coeffs.n_components
    h = coeffs.one_body()
    period = m if period is None else int(period)
    if grid.dim != 1 or m % period:
        raise ConfigurationError(f"lattice period {period} must divide a 1D grid of {m} points")
    shift = np.roll(np.eye(m), period, axis=0)
    S = np.kron(np.eye(c), shift)
    if np.max(np.abs(S @ h - h @ S)) > tol * max(1.0, np.max(np.abs(h))):
        raise ConfigurationError(f"one-body operator is not periodic with period {period}")
    n_cells = m // period
    x = np.arange(m) * grid.spacing
    qs = 2 * np.pi * np.fft.fftfreq(n_cells, d=period * grid.spacing)
    energies, vectors = [], []
    for q in qs:
        basis = np.zeros((c * m, c * period), dtype=complex)
        for a in range(c):
            for b in range(period):
                sites = np.arange(b, m, period)
                basis[a * m + sites, a * period + b] = np.exp(1j * q * x[sites]) / np.sqrt(n_cells)
        hq = basis.conj().T @ h @ basis
        w, v = scipy.linalg.eigh(0.5 * (hq + hq.conj().T))
        energies.append(w)
        vectors.append(basis @ v)
    return GridBands(qs, np.array(energies), np.array(vectors), coeffs.hbar)


def deterministic_step(coeffs, scheme, sector="psi"):
    """Dense noise-free part of one step for the chosen variant."""
    n = coeffs.dimension
    if scheme.variant == "euler-maruyama":
        D = np.eye(n, dtype=complex) + scheme.dt * coeffs.drift_psi.toarray()
    elif scheme.variant == "split-step-fourier":
        D = _potential_phase(coeffs, scheme.dt) @ _kinetic_unitary(coeffs, scheme.dt, scheme.dispersion)
    else:
        D = grid_bands(coeffs, scheme.lattice_period).propagator(scheme.dt)
    if sector == "psi":
        return D
    if scheme.variant == "euler-maruyama":
        return np.eye(n, dtype=complex) + scheme.dt * coeffs.drift_plus.toarray()
    # exact exponentials: L_plus = conj(L_psi)
    return D.conj()


# --- compiled kernel ----------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _propagate_kernel(d_ptr, d_idx, d_val, post_noise, ch, rows, cols, vals, pairs, n_chan, seed,
                      traj_ids, n_steps, sqrt_dt, check_steps, out, diverged):
    """Advance a batch of trajectories together; the batch is the innermost axis."""
    n = d_ptr.shape[0] - 1
    nb = traj_ids.shape[0]
    dw = np.zeros((max(n_chan, 1), nb))
    T = np.zeros((n, n, nb), dtype=np.complex128)
    X = np.empty((n, n, nb), dtype=np.complex128)
    for i in range(n):
        T[i, i, :] = 1.0
    ci = 0
    for step in range(n_steps + 1):
        while ci < check_steps.shape[0] and check_steps[ci] == step:
            for b in range(nb):
                out[b, ci] = T[:, :, b]
            ci += 1
        if step == n_steps:
            break
        for b in range(nb):
            tid = traj_ids[b]
            for k in range(pairs.shape[0]):
                z0, z1 = normal_pair(seed, tid, step, pairs[k])
                c0 = 2 * pairs[k]
                if c0 < n_chan:
                    dw[c0, b] = z0 * sqrt_dt
                if c0 + 1 < n_chan:
                    dw[c0 + 1, b] = z1 * sqrt_dt
        # X = D T with D in CSR form
        for i in range(n):
            X[i, :, :] = 0
            for e in range(d_ptr[i], d_ptr[i + 1]):
                dv = d_val[e]
                k = d_idx[e]
                for j in range(n):
                    for b in range(nb):
                        X[i, j, b] += dv * T[k, j, b]
        if post_noise:
            # noise multiplies the deterministically advanced matrix
            T[:, :, :] = X
        for e in range(ch.shape[0]):
            r = rows[e]
            c = cols[e]
            w = dw[ch[e]]
            v = vals[e]
            for j in range(n):
                for b in range(nb):
                    X[r, j, b] += v * w[b] * T[c, j, b]
        T, X = X, T
    # non-finite entries persist under linear updates: one final check suffices
    for b in range(nb):
        ok = True
        for i in range(n):
            for j in range(n):
                z = T[i, j, b]
                if not (np.isfinite(z.real) and np.isfinite(z.imag)):
                    ok = False
        diverged[b] = not ok


def _sector_inputs(coeffs, scheme, sector):
    D = sparse.csr_matrix(deterministic_step(coeffs, scheme, sector))
    D.sort_indices()
    ch, rows, cols, vals = coeffs.noise_triplets(sector)
    pairs = np.unique(ch // 2).astype(np.int64)
    post = scheme.variant != "euler-maruyama"
    return D, post, ch, rows, cols, vals, pairs


class _Sectors:
    """Precomputed kernel inputs for both sectors of one (coefficients, scheme)."""

    def __init__(self, coeffs, scheme):
        self.coeffs = coeffs
        self.scheme = scheme
        self.n_chan = coeffs.n_channels
        self.inputs = {s: _sector_inputs(coeffs, scheme, s) for s in ("psi", "plus")}

    def run(self, seed, traj_ids, check_steps):
        traj_ids = np.ascontiguousarray(traj_ids, dtype=np.uint64)
        check_steps = np.ascontiguousarray(check_steps, dtype=np.int64)
        n = self.coeffs.dimension
        res = {}
        bad = np.zeros(traj_ids.size, dtype=np.bool_)
        for sector, (D, post, ch, rows, cols, vals, pairs) in self.inputs.items():
            out = np.zeros((traj_ids.size, check_steps.size, n, n), dtype=complex)
            div = np.zeros(traj_ids.size, dtype=np.bool_)
            _propagate_kernel(D.indptr.astype(np.int64), D.indices.astype(np.int64),
                              D.data.astype(np.complex128), post, ch, rows, cols, vals, pairs, self.n_chan, np.uint64(seed),
                              traj_ids, int(self.scheme.steps), float(np.sqrt(self.scheme.dt)),
                              check_steps, out, div)
            res[sector] = out
            bad |= div
        return res["psi"], res["plus"], bad


@dataclass
class TrajectoryPropagator:
    """Accumulated ``T`` and ``T^+`` of one trajectory."""

    T: np.ndarray
    T_plus: np.ndarray
    elapsed: float
    steps: int
    trajectory: int = 0
    divergent: bool = False


def _check_steps(scheme, checkpoints):
    if checkpoints is None:
        return np.array([scheme.steps], dtype=np.int64)
    steps = np.asarray(checkpoints, dtype=np.int64)
    if steps.ndim != 1 or np.any(np.diff(steps) < 0) or np.any(steps < 0) or np.any(steps > scheme.steps):
        raise ConfigurationError("checkpoints must be sorted step counts within the scheme")
    return steps


def propagate_trajectory(coeffs, scheme, seed, trajectory_id, checkpoints=None):
    """Propagate one trajectory; returns one :class:`TrajectoryPropagator` per checkpoint.

    Without ``checkpoints`` a single propagator at the final step is returned.
    """
    steps = _check_steps(scheme, checkpoints)
    T, Tp, bad = _Sectors(coeffs, scheme).run(seed, [trajectory_id], steps)
    props = [
        TrajectoryPropagator(T[0, k], Tp[0, k], float(s * scheme.dt), int(s), int(trajectory_id), bool(bad[0]))
        for k, s in enumerate(steps)
    ]
    return props[0] if checkpoints is None else props


def propagate_batch(coeffs, scheme, seed, trajectory_ids, checkpoints=None):
    """Arrays ``T[traj, checkpoint]``, ``T^+[traj, checkpoint]`` and divergence flags."""
    steps = _check_steps(scheme, checkpoints)
    return _Sectors(coeffs, scheme).run(seed, trajectory_ids, steps)


def resolve_workers(workers=None):
    """Worker count: explicit value, else ``$GRASSFIELD_WORKERS``, else 1."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    workers = int(workers)
    if workers < 1:
        raise ConfigurationError(f"worker count must be >= 1, got {workers}")
    return workers


@dataclass
class ChunkStats:
    """Sums over the finite trajectories of one chunk.

    Arrays have the shape of one per-trajectory observable vector.
    """

    count: int
    excluded: int
    total: np.ndarray
    sq_re: np.ndarray
    sq_im: np.ndarray


@dataclass
class EnsembleRun:
    """Per-chunk statistics of a trajectory ensemble, in chunk order."""

    chunks: list
    chunk_size: int
    n_requested: int

    def combine(self, n_chunks=None):
        """Mean, standard errors (re, im), count, excluded over the first ``n_chunks``."""
        sel = self.chunks[: n_chunks if n_chunks is not None else len(self.chunks)]
        count = sum(c.count for c in sel)
        excluded = sum(c.excluded for c in sel)
        total = sum(c.total for c in sel)
        sq_re = sum(c.sq_re for c in sel)
        sq_im = sum(c.sq_im for c in sel)
        if count == 0:
            nan = np.full(np.shape(total), np.nan)
            return nan + 0j, nan, nan, 0, excluded
        mean = total / count
        if count > 1:
            var_re = np.maximum(sq_re - count * mean.real**2, 0) / (count - 1)
            var_im = np.maximum(sq_im - count * mean.imag**2, 0) / (count - 1)
        else:
            var_re = np.zeros(np.shape(mean))
            var_im = np.zeros(np.shape(mean))
        return mean, np.sqrt(var_re / count), np.sqrt(var_im / count), count, excluded

    def chunk_means(self):
        return np.array([c.total / c.count if c.count else np.nan * c.total for c in self.chunks])


def run_ensemble(coeffs, scheme, seed, n_trajectories, checkpoints, reducer,
                 chunk_size=DEFAULT_CHUNK, workers=None, divergence_ceiling=0.01,
                 first_trajectory=0, progress=None):
    """Propagate ``n_trajectories`` and reduce them chunk by chunk.

    ``reducer(T, T_plus)`` maps arrays ``[traj, checkpoint, n, n]`` to
    per-trajectory complex values ``[traj, ...]``.  Chunks have a fixed size
    and are combined in chunk order, so results are identical for any worker
    count.  Non-finite trajectories are excluded; if their fraction exceeds
    ``divergence_ceiling`` a :class:`NumericalAbort` carrying the partial run
    is raised.
    """
    if int(n_trajectories) != n_trajectories or n_trajectories < 1:
        raise ConfigurationError(f"trajectory count must be a positive integer, got {n_trajectories}")
    steps = _check_steps(scheme, checkpoints)
    sectors = _Sectors(coeffs, scheme)
    starts = list(range(0, int(n_trajectories), chunk_size))

    def work(start):
        ids = np.arange(first_trajectory + start, first_trajectory + min(start + chunk_size, n_trajectories), dtype=np.uint64)
        T, Tp, bad = sectors.run(seed, ids, steps)
        good = ~bad
        vals = np.asarray(reducer(T[good], Tp[good]))
        vals = vals.reshape((int(good.sum()),) + vals.shape[1:])
        return ChunkStats(
            int(good.sum()), int(bad.sum()), vals.sum(axis=0),
            (vals.real**2).sum(axis=0), (vals.imag**2).sum(axis=0),
        )

    workers = resolve_workers(workers)
    chunks = []
    if workers == 1:
        for i, s in enumerate(starts):
            chunks.append(work(s))
            if progress:
                progress(i + 1, len(starts))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(work, starts)):
                chunks.append(res)
                if progress:
                    progress(i + 1, len(starts))
    run = EnsembleRun(chunks, chunk_size, int(n_trajectories))
    excluded = sum(c.excluded for c in chunks)
    if excluded > divergence_ceiling * n_trajectories:
        err = NumericalAbort(
            f"{excluded} of {n_trajectories} trajectories diverged (ceiling {divergence_ceiling:.2%})",
            excluded, int(n_trajectories),
        )
        err.partial = run
        raise err
    return run


def mean_transfer(coeffs, scheme, sector="psi", order=2):
    """Exact ensemble average of ``Theta^{(x) order}`` for one step (``order`` 1 or 2).

    Applying its ``steps``-th power to a moment tensor gives the infinite-ensemble
    limit of the scheme, which isolates time-step bias from sampling error.
    """
    D = deterministic_step(coeffs, scheme, sector)
    if order == 1:
        return D
    if order != 2:
        raise ConfigurationError("mean_transfer supports order 1 or 2")
    E = np.kron(D, D)
    mats, _ = coeffs.noise(sector)
    for K in mats:
        K = K.toarray()
        KD = K if scheme.variant == "euler-maruyama" else K @ D
        E = E + scheme.dt * np.kron(KD, KD)
    return E


@dataclass
class NoiseMomentCheck:
    """Sampled vs expected second moments of the per-step noise matrices."""

    n_samples: int
    max_z_same: float
    max_z_cross: float
    expected: dict
    sampled: dict


def _z(diff, se, floor):
    # differences at rounding level count as zero
    big = np.abs(diff) > floor
    z = np.where(big, np.abs(diff) / np.where(se > 0, se, np.inf), 0.0)
    z = np.where(big & (se == 0), np.inf, z)
    return float(np.max(z, initial=0.0))


def noise_moment_check(coeffs, n_samples, seed=0, dt=1.0):
    """Sample ``N = sum_a K_a dw_a`` per sector and test its second moments.

    Same sector: ``E[N_ik N_jl] = dt * sum_a K_a[i,k] K_a[j,l]``, which
    contracts to ``sum_a K_a K_a^T dt``.  Across sectors the moments vanish.
    z-scores compare real and imaginary parts separately against their
    sampling standard errors.
    """
    from .rng import draw_wiener_many

    n_samples = int(n_samples)
    if n_samples < 2:
        raise ConfigurationError("need at least two samples")
    kvecs, chans = {}, {}
    for sector in ("psi", "plus"):
        ch, rows, cols, vals = coeffs.noise_triplets(sector)
        flat = rows * coeffs.dimension + cols
        support = np.unique(flat)
        chans[sector] = np.unique(ch)
        K = np.zeros((chans[sector].size, support.size), dtype=complex)
        np.add.at(K, (np.searchsorted(chans[sector], ch), np.searchsorted(support, flat)), vals)
        kvecs[sector] = K
    pairs = {"psi": ("psi", "psi"), "plus": ("plus", "plus"), "cross": ("psi", "plus")}
    sums = {k: [0, 0, 0] for k in pairs}
    block = 10_000
    for start in range(0, n_samples, block):
        ids = np.arange(start, min(start + block, n_samples))
        dw = draw_wiener_many(seed, ids, 0, coeffs.n_channels, dt)
        x = {s: dw[:, chans[s]] @ kvecs[s] for s in ("psi", "plus")}
        for key, (a, b) in pairs.items():
            prod = x[a][:, :, None] * x[b][:, None, :]
            acc = sums[key]
            acc[0] = acc[0] + prod.sum(axis=0)
            acc[1] = acc[1] + (prod.real**2).sum(axis=0)
            acc[2] = acc[2] + (prod.imag**2).sum(axis=0)

    def moment(key):
        total, sq_re, sq_im = sums[key]
        mean = total / n_samples
        var_re = np.maximum(sq_re - n_samples * mean.real**2, 0) / (n_samples - 1)
        var_im = np.maximum(sq_im - n_samples * mean.imag**2, 0) / (n_samples - 1)
        return mean, np.sqrt(var_re / n_samples), np.sqrt(var_im / n_samples)

    expected, sampled = {}, {}
    floor = 1e-12 * dt * max((float(np.max(np.abs(k) ** 2, initial=0.0)) for k in kvecs.values()), default=0.0)
    z_same = 0.0
    for sector in ("psi", "plus"):
        K = kvecs[sector]
        exp = dt * K.T @ K
        mean, se_re, se_im = moment(sector)
        expected[sector], sampled[sector] = exp, mean
        z_same = max(z_same, _z((mean - exp).real, se_re, floor), _z((mean - exp).imag, se_im, floor))
    mean, se_re, se_im = moment("cross")
    sampled["cross"], expected["cross"] = mean, np.zeros_like(mean)
    z_cross = max(_z(mean.real, se_re, floor), _z(mean.imag, se_im, floor))
    return NoiseMomentCheck(n_samples, z_same, z_cross, expected, sampled)
