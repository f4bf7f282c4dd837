from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from grassfield.errors import ConfigurationError, NumericalAbort
from grassfield.models import GridSpec, MultiComponentModel, TwoComponentModel, discretize_multi_component, discretize_two_component
from grassfield.propagator import (
    StepScheme,
    deterministic_step,
    grid_bands,
    mean_transfer,
    noise_moment_check,
    propagate_batch,
    propagate_trajectory,
    resolve_workers,
    run_ensemble,
    stability_dt,
    theta_step,
)
from grassfield.rng import draw_wiener


def coeffs(g=1.0, points=2, potential=None):
    pot = np.zeros(points) if potential is None else potential
    return discretize_two_component(TwoComponentModel(1.0, g, pot, pot), GridSpec(points))


def lattice(points=8, period=4, depth=1.5):
    x = np.arange(points)
    pot = depth * np.sin(np.pi * x / period) ** 2
    one = pot[None, None, :]
    return discretize_multi_component(MultiComponentModel(1, 1.0, one, np.zeros((1,) * 4 + (points, points))), GridSpec(points))


def test_scheme_validation():
    with pytest.raises(ConfigurationError):
        StepScheme("rk4")
    with pytest.raises(ConfigurationError):
        StepScheme(dt=0)
    with pytest.raises(ConfigurationError):
        StepScheme(dispersion="other")
    assert StepScheme(dt=0.1, steps=30).duration == pytest.approx(3.0)


def test_single_euler_step_matches_theta_step():
    co = coeffs()
    scheme = StepScheme("euler-maruyama", 1e-2, 1)
    prop = propagate_trajectory(co, scheme, seed=9, trajectory_id=4)
    th, thp = theta_step(co, 1e-2, draw_wiener(9, 4, 0, co.n_channels, 1e-2))
    np.testing.assert_allclose(prop.T, th.toarray(), atol=1e-15)
    np.testing.assert_allclose(prop.T_plus, thp.toarray(), atol=1e-15)


def test_theta_step_checks_inputs():
    co = coeffs()
    with pytest.raises(ConfigurationError):
        theta_step(co, 1e-2, np.zeros(2))
    with pytest.raises(ConfigurationError):
        theta_step(co, 1e-2, draw_wiener(0, 0, 0, co.n_channels, 1e-3))


def test_noise_free_euler_is_matrix_power():
    co = coeffs(g=0.0, points=4)
    scheme = StepScheme("euler-maruyama", 1e-2, 50)
    prop = propagate_trajectory(co, scheme, 0, 0)
    D = np.eye(co.dimension) + 1e-2 * co.drift_psi.toarray()
    np.testing.assert_allclose(prop.T, np.linalg.matrix_power(D, 50), atol=1e-13)


def test_split_step_is_exact_for_free_gas():
    co = coeffs(g=0.0, points=6)
    scheme = StepScheme("split-step-fourier", 0.05, 40)
    prop = propagate_trajectory(co, scheme, 0, 0)
    exact = scipy.linalg.expm(co.drift_psi.toarray() * scheme.duration)
    np.testing.assert_allclose(prop.T, exact, atol=1e-12)
    np.testing.assert_allclose(prop.T_plus, exact.conj(), atol=1e-12)


def test_bloch_basis_matches_matrix_exponential():
    co = lattice()
    scheme = StepScheme("bloch-basis", 0.1, 25, lattice_period=4)
    prop = propagate_trajectory(co, scheme, 0, 0)
    np.testing.assert_allclose(prop.T, scipy.linalg.expm(co.drift_psi.toarray() * 2.5), atol=1e-12)


def test_grid_bands_rejects_wrong_period():
    with pytest.raises(ConfigurationError):
        grid_bands(lattice(), period=3)
    with pytest.raises(ConfigurationError):
        grid_bands(lattice(), period=2)


def test_checkpoints_reuse_one_path():
    co = coeffs()
    scheme = StepScheme("split-step-fourier", 1e-2, 20)
    props = propagate_trajectory(co, scheme, 3, 1, checkpoints=[0, 10, 20])
    np.testing.assert_allclose(props[0].T, np.eye(4))
    final = propagate_trajectory(co, scheme, 3, 1)
    np.testing.assert_array_equal(props[2].T, final.T)
    with pytest.raises(ConfigurationError):
        propagate_trajectory(co, scheme, 3, 1, checkpoints=[10, 5])


def test_trajectories_independent_of_batching():
    co = coeffs()
    scheme = StepScheme("euler-maruyama", 1e-2, 30)
    T, Tp, _ = propagate_batch(co, scheme, 5, np.arange(6, dtype=np.uint64))
    single = propagate_trajectory(co, scheme, 5, 4)
    np.testing.assert_array_equal(T[4, 0], single.T)


def _reducer(T, Tp):
    return T[..., 0, 0] * Tp[..., 1, 1]


def test_ensemble_invariant_to_workers():
    co = coeffs()
    scheme = StepScheme("split-step-fourier", 1e-2, 40)
    runs = [run_ensemble(co, scheme, 11, 130, [20, 40], _reducer, chunk_size=16, workers=w) for w in (1, 3)]
    a, b = (r.combine() for r in runs)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_ensemble_divergence_abort_carries_partial():
    co = discretize_two_component(TwoComponentModel(1.0, 50.0, np.zeros(2), np.zeros(2)), GridSpec(2))
    scheme = StepScheme("euler-maruyama", 0.5, 3000)
    with pytest.raises(NumericalAbort) as info:
        run_ensemble(co, scheme, 1, 8, None, _reducer, chunk_size=4)
    assert info.value.n_excluded == 8 and info.value.partial.combine()[3] == 0


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv("GRASSFIELD_WORKERS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    with pytest.raises(ConfigurationError):
        resolve_workers(0)


def test_mean_transfer_first_order_is_deterministic_step():
    co = coeffs()
    scheme = StepScheme("euler-maruyama", 1e-2, 1)
    np.testing.assert_allclose(mean_transfer(co, scheme, order=1), deterministic_step(co, scheme))
    E = mean_transfer(co, scheme, order=2)
    assert E.shape == (16, 16)


def test_mean_transfer_matches_sampled_second_moment():
    co = coeffs()
    scheme = StepScheme("euler-maruyama", 0.05, 1)
    T, _, _ = propagate_batch(co, scheme, 2, np.arange(40000, dtype=np.uint64))
    sample = np.einsum("bij,bkl->ikjl", T[:, 0], T[:, 0]).reshape(16, 16) / T.shape[0]
    np.testing.assert_allclose(sample, mean_transfer(co, scheme, order=2), atol=0.01)


def test_noise_moment_check_small():
    chk = noise_moment_check(coeffs(g=2.0), 20000, seed=4, dt=1e-2)
    assert chk.max_z_same < 5 and chk.max_z_cross < 5


def test_stability_dt():
    assert stability_dt(coeffs()) == pytest.approx(0.2)
