from __future__ import annotations

import numpy as np
import pytest

from grassfield.errors import ConfigurationError, ValidationError
from grassfield.models import (
    GridSpec,
    MultiComponentModel,
    TwoComponentModel,
    assemble_q,
    channel_map,
    contact_two_body,
    discretize_multi_component,
    discretize_two_component,
    gaussian_two_body,
    mode_hamiltonian,
    model_diffusion_kernel,
    remap_channels,
    two_component_as_multi,
)


def two_comp(points=3, g=1.2, spacing=0.5):
    grid = GridSpec(points, spacing)
    rng = np.random.default_rng(points)
    return TwoComponentModel(1.3, g, rng.normal(size=points), rng.normal(size=points)), grid


def test_grid_plane_waves_unitary_and_stencil_eigenvalues():
    grid = GridSpec(6, 0.7)
    U = grid.plane_waves()
    np.testing.assert_allclose(U @ U.conj().T, np.eye(6), atol=1e-14)
    lap = grid.laplacian().toarray()
    eps = grid.stencil_dispersion(mass=2.0, hbar=1.5)
    kin = -(1.5**2) / (2 * 2.0) * lap
    np.testing.assert_allclose(U.conj() @ kin @ U.T, np.diag(eps), atol=1e-13)


def test_grid_validation():
    with pytest.raises(ValidationError, match="grid.points"):
        GridSpec(1)
    with pytest.raises(ValidationError, match="grid.spacing"):
        GridSpec(4, 0.0)
    with pytest.raises(ValidationError):
        GridSpec(4).momentum_index(0.5)


def test_two_component_drift_is_minus_i_h():
    model, grid = two_comp()
    co = discretize_two_component(model, grid)
    h = co.one_body()
    np.testing.assert_allclose(co.drift("psi").toarray(), -1j * h, atol=1e-14)
    np.testing.assert_allclose(co.drift("plus").toarray(), 1j * h.conj(), atol=1e-14)


def test_two_component_noise_reproduces_interaction_kernel():
    model, grid = two_comp()
    co = discretize_two_component(model, grid)
    for sector in ("psi", "plus"):
        np.testing.assert_allclose(co.diffusion_kernel(sector), model_diffusion_kernel(model, grid, sector), atol=1e-14)
    # channels are disjoint between sectors
    assert not set(co.channels_psi) & set(co.channels_plus)
    assert co.n_channels == 4 * grid.n_points


def test_zero_coupling_has_no_noise():
    model, grid = two_comp(g=0.0)
    co = discretize_two_component(model, grid)
    assert co.noise_psi == () and co.n_channels == 0


@pytest.mark.parametrize("form", ["direct", "exchange"])
def test_multi_contact_matches_two_component_kernel(form):
    model, grid = two_comp()
    a = discretize_two_component(model, grid)
    b = discretize_multi_component(two_component_as_multi(model, grid), grid, noise_form=form)
    for sector in ("psi", "plus"):
        assert np.linalg.norm(a.diffusion_kernel(sector) - b.diffusion_kernel(sector)) < 1e-12
    np.testing.assert_allclose(a.drift("psi").toarray(), b.drift("psi").toarray(), atol=1e-14)


def test_multi_plus_noise_is_i_times_psi_noise():
    grid = GridSpec(3)
    model = MultiComponentModel(2, 1.0, np.zeros((2, 2, 3)), gaussian_two_body(2, grid, 0.8, 0.9))
    co = discretize_multi_component(model, grid)
    for kp, kq in zip(co.noise_psi, co.noise_plus):
        np.testing.assert_allclose(kq.toarray(), 1j * kp.toarray(), atol=1e-15)
    np.testing.assert_allclose(co.diffusion_kernel("psi"), model_diffusion_kernel(model, grid, "psi"), atol=1e-12)
    np.testing.assert_allclose(co.diffusion_kernel("plus"), model_diffusion_kernel(model, grid, "plus"), atol=1e-12)


def test_q_is_symmetric_and_exchange_needs_zero_range():
    grid = GridSpec(3)
    model = MultiComponentModel(2, 1.0, np.zeros((2, 2, 3)), gaussian_two_body(2, grid, 0.8, 0.9))
    Q = assemble_q(model, grid)
    np.testing.assert_allclose(Q, Q.T)
    with pytest.raises(ValidationError):
        assemble_q(model, grid, "exchange")


def test_multi_component_symmetry_validation():
    grid = GridSpec(2)
    two = contact_two_body(2, grid, 1.0)
    bad = two.copy()
    bad[0, 1, 0, 1, 0, 0] += 0.5
    with pytest.raises(ValidationError, match="two_body"):
        MultiComponentModel(2, 1.0, np.zeros((2, 2, 2)), bad)
    one = np.zeros((2, 2, 2))
    one[0, 1] = 1.0
    with pytest.raises(ValidationError, match="one_body"):
        MultiComponentModel(2, 1.0, one, two)
    with pytest.raises(ValidationError, match="mass"):
        MultiComponentModel(2, -1.0, np.zeros((2, 2, 2)), two)


def test_channel_map_exchange_form_is_orthogonal():
    model, grid = two_comp()
    a = discretize_two_component(model, grid)
    b = discretize_multi_component(two_component_as_multi(model, grid), grid, noise_form="exchange")
    for sector in ("psi", "plus"):
        O = channel_map(a, b, sector)
        np.testing.assert_allclose(O @ O.T, np.eye(O.shape[0]), atol=1e-10)
    r = remap_channels(a, b)
    for ka, kr in zip(a.noise_psi, r.noise_psi):
        np.testing.assert_allclose(ka.toarray(), kr.toarray(), atol=1e-12)


def test_channel_map_direct_form_differs():
    # same covariance, different channel space: no rotation exists
    model, grid = two_comp()
    a = discretize_two_component(model, grid)
    b = discretize_multi_component(two_component_as_multi(model, grid), grid)
    with pytest.raises(ValidationError):
        channel_map(a, b, "psi")


def test_mode_hamiltonian_bound():
    model, grid = two_comp(points=5)
    with pytest.raises(ConfigurationError):
        mode_hamiltonian(model, grid)
    assert mode_hamiltonian(model, grid, max_modes=10).n_modes == 10
