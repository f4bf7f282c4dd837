from __future__ import annotations

import numpy as np
import pytest

from grassfield.errors import ConfigurationError, ValidationError
from grassfield.grassmann import moments_from_state
from grassfield.models import GridSpec
from grassfield.observables import (
    MomentTensor,
    antisymmetrize,
    entry_functional,
    evaluate_functionals,
    evolve_moment,
    fock_state_moments,
    jackknife,
    momentum_fock_coherence,
    momentum_functional,
    momentum_mode_rows,
    position_coherence,
    position_population,
    slater_moments,
    total_population,
    trace_functional,
)
from grassfield.oracle import exact_coherence, fock_state
from grassfield.propagator import TrajectoryPropagator


def test_vacuum_population_zero():
    M = MomentTensor(np.zeros((3, 3)), 1)
    assert position_population(M, [0]) == (0.0, 0.0)


def test_single_mode_population_matches_mode_function():
    grid = GridSpec(4, 0.5)
    U = grid.plane_waves()
    phi = U[1] / np.sqrt(grid.cell_volume)  # field-normalised mode function
    M = slater_moments(U[[1]], grid.cell_volume)
    for r in range(4):
        val, resid = position_population(M, [r])
        assert val == pytest.approx(abs(phi[r]) ** 2 * grid.cell_volume)
        assert resid == pytest.approx(0.0, abs=1e-15)


def test_duplicate_slot_gives_zero():
    M = fock_state_moments({(0, 1): 1.0}, 3)
    assert position_population(M, [1, 1]) == (0.0, 0.0)


def test_coherence_diagonal_and_swap():
    M = fock_state_moments({(0, 1): 1.0, (1, 2): 1.0j}, 3)
    assert position_coherence(M, [0, 1], [0, 1]) == pytest.approx(position_population(M, [0, 1])[0])
    assert position_coherence(M, [1, 0], [1, 2]) == pytest.approx(-position_coherence(M, [0, 1], [1, 2]))


def test_two_mode_superposition_coherence_against_oracle():
    psi = (fock_state(2, [0]) + fock_state(2, [1])) / np.sqrt(2)
    rho = np.outer(psi, psi.conj())
    M = moments_from_state(rho, 1)
    assert position_coherence(M, [0], [1]) == pytest.approx(0.5)
    assert position_coherence(M, [0], [1]) == pytest.approx(exact_coherence(rho, [0], [1]))


def test_fock_state_moments_match_moments_from_state():
    amps = {(0, 2): 0.6, (1, 3): 0.8j * np.exp(0.3j)}
    M = fock_state_moments(amps, 4, cell_volume=0.25)
    psi = sum(a * fock_state(4, list(k)) for k, a in amps.items())
    ref = moments_from_state(np.outer(psi, psi.conj()), 2, cell_volume=0.25)
    np.testing.assert_allclose(M.data, ref.data, atol=1e-13)
    assert M.antisymmetry_error() < 1e-14


def test_antisymmetrize_idempotent():
    rng = np.random.default_rng(1)
    X = antisymmetrize(rng.normal(size=(3,) * 4), 2)
    np.testing.assert_allclose(antisymmetrize(X, 2), X, atol=1e-14)
    assert MomentTensor(X, 2).antisymmetry_error() < 1e-14


def test_identity_propagators_return_m0():
    M0 = fock_state_moments({(0, 1): 1.0}, 3)
    props = [TrajectoryPropagator(np.eye(3), np.eye(3), 0.0, 0) for _ in range(4)]
    est = evolve_moment(M0, props)
    np.testing.assert_allclose(est.mean.data, M0.data)
    assert np.max(est.stderr) == 0 and est.n_traj == 4


def test_deterministic_rank_one_conjugation():
    rng = np.random.default_rng(2)
    T = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    Tp = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    M0 = MomentTensor(rng.normal(size=(3, 3)) + 0j, 1)
    est = evolve_moment(M0, (T[None], Tp[None]))
    np.testing.assert_allclose(est.mean.data, T @ M0.data @ Tp.T, atol=1e-13)


def test_evolution_preserves_antisymmetry():
    rng = np.random.default_rng(3)
    M0 = fock_state_moments({(0, 1): 1.0, (1, 2): 0.5}, 3)
    T = rng.normal(size=(5, 3, 3)) + 1j * rng.normal(size=(5, 3, 3))
    est = evolve_moment(M0, (T, T.conj()))
    assert est.mean.antisymmetry_error() < 1e-13


def test_evolve_moment_errors_and_exclusion():
    M0 = MomentTensor(np.eye(2), 1)
    with pytest.raises(ConfigurationError):
        evolve_moment(M0, [])
    with pytest.raises(ConfigurationError):
        evolve_moment(M0, (np.ones((1, 3, 3)), np.ones((1, 3, 3))))
    T = np.stack([np.eye(2), np.full((2, 2), np.nan)])
    est = evolve_moment(M0, (T, T))
    assert est.n_traj == 1 and est.n_excluded == 1


def test_momentum_coherence_normalisation():
    grid = GridSpec(5)
    rows = momentum_mode_rows(grid, 1, [(0, 2)])
    M = slater_moments(rows)
    assert momentum_fock_coherence(M, grid, [(0, 2)], [(0, 2)]) == pytest.approx(1.0)
    assert momentum_fock_coherence(M, grid, [(0, 1)], [(0, 1)]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValidationError):
        momentum_fock_coherence(M, grid, [(0, 0.5)], [(0, 2)])


def test_total_population_counts_particles_once():
    M = fock_state_moments({(0, 2): 1.0}, 4, cell_volume=0.5)
    assert total_population(M) == pytest.approx(1.0)


def test_functionals_agree_with_tensor_readout():
    rng = np.random.default_rng(4)
    grid = GridSpec(3)
    M0 = fock_state_moments({(0, 1): 0.8, (1, 2): 0.6j}, 3, n_points=3)
    T = rng.normal(size=(6, 3, 3)) + 1j * rng.normal(size=(6, 3, 3))
    Tp = rng.normal(size=(6, 3, 3)) + 1j * rng.normal(size=(6, 3, 3))
    funcs = [
        entry_functional(M0, [0, 1], [1, 2]),
        momentum_functional(M0, grid, [(0, 0), (0, 1)], [(0, 1), (0, 2)]),
        trace_functional(M0),
    ]
    vals = evaluate_functionals(M0, funcs, T, Tp).mean(axis=0)
    est = evolve_moment(M0, (T, Tp)).mean
    assert vals[0] == pytest.approx(position_coherence(est, [0, 1], [1, 2]))
    assert vals[1] == pytest.approx(momentum_fock_coherence(est, grid, [(0, 0), (0, 1)], [(0, 1), (0, 2)]))
    assert vals[2] == pytest.approx(total_population(est))


def test_jackknife_linear_matches_plain_error():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(40, 25))
    est, se = jackknife(lambda m: m, x.sum(axis=1)[:, None], np.full(40, 25))
    assert est[0] == pytest.approx(x.mean())
    assert se[0] == pytest.approx(x.sum(axis=1).std(ddof=1) / 25 / np.sqrt(40), rel=1e-10)
    with pytest.raises(ConfigurationError):
        jackknife(lambda m: m, x[:1], [1])
