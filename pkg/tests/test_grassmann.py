from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grassfield.errors import ConfigurationError, StructuralError
from grassfield.grassmann import (
    CorrespondenceRules,
    GeneratorSet,
    GrassmannElement,
    algebra_identity_errors,
    b_distribution,
    berezin_derivative,
    berezin_integrate,
    canonical_moment,
    density_from_b,
    hamiltonian_superoperator,
    moments_from_state,
    phase_space_integral,
    random_element,
    symbolic_ffpe,
)
from grassfield.oracle import build_fock_operators, exact_coherence, fock_state


def random_density(n, rng, number_conserving=True):
    dim = 1 << n
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = A @ A.conj().T
    if number_conserving:
        occ = np.array([bin(s).count("1") for s in range(dim)])
        rho = rho * (occ[:, None] == occ[None, :])
    return rho / np.trace(rho)


def test_generator_anticommutation():
    gens = GeneratorSet(2)
    for i in range(gens.size):
        for j in range(gens.size):
            gi = GrassmannElement.generator(gens, i)
            gj = GrassmannElement.generator(gens, j)
            assert (gi * gj + gj * gi).is_zero()


def test_monomial_sign_and_nilpotency():
    gens = GeneratorSet(2)
    a = GrassmannElement.monomial(gens, [1, 0])
    b = GrassmannElement.monomial(gens, [0, 1])
    assert (a + b).is_zero()
    assert GrassmannElement.monomial(gens, [2, 2]).is_zero()


def test_left_and_right_derivative_signs():
    gens = GeneratorSet(2)
    x = GrassmannElement.monomial(gens, [0, 1, 2])
    # d/dg1 from the left on g0 g1 g2 passes g0: sign -1
    assert berezin_derivative(x, 1, "left") == GrassmannElement.monomial(gens, [0, 2], -1.0)
    # from the right it passes g2: sign -1
    assert berezin_derivative(x, 1, "right") == GrassmannElement.monomial(gens, [0, 2], -1.0)
    assert berezin_derivative(x, 2, "right") == GrassmannElement.monomial(gens, [0, 1])


def test_integration_is_differentiation():
    gens = GeneratorSet(1)
    g, gp = gens.g(0), gens.gplus(0)
    f = GrassmannElement.monomial(gens, [g, gp], 2.0)
    # ∫dg+ dg (g g+) : g first gives g+, then 1
    assert berezin_integrate(f, [g, gp]).body() == 2.0
    assert phase_space_integral(GrassmannElement.scalar(gens, 5.0)) == 0


def test_bad_generator_raises():
    with pytest.raises(ConfigurationError):
        GrassmannElement.generator(GeneratorSet(1), 2)
    with pytest.raises(ConfigurationError):
        GeneratorSet(9)
    with pytest.raises(ConfigurationError):
        berezin_integrate(GrassmannElement.scalar(1), [0, 0])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_graded_identities_property(n, seed):
    errs = algebra_identity_errors(n, 3, seed)
    assert max(errs.values()) < 1e-13


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3))
def test_product_associative(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = (random_element(n, rng) for _ in range(3))
    lhs, rhs = (a * b) * c, a * (b * c)
    assert lhs.allclose(rhs, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_b_distribution_round_trip(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(2, rng, number_conserving=False)
    np.testing.assert_allclose(density_from_b(b_distribution(rho)), rho, atol=1e-14)


def test_b_integral_is_vacuum_population_and_b_even():
    rng = np.random.default_rng(1)
    rho = random_density(3, rng)
    b = b_distribution(rho)
    # only |0><0| maps onto the top monomial
    assert phase_space_integral(b) == pytest.approx(rho[0, 0])
    assert b.parity() == 1


def test_vacuum_b_is_top_monomial():
    rho = np.zeros((4, 4))
    rho[0, 0] = 1
    b = b_distribution(rho)
    assert list(b.keys) == [b.gens.full_mask]


def test_canonical_moment_matches_oracle_trace():
    rng = np.random.default_rng(3)
    rho = random_density(3, rng)
    b = b_distribution(rho)
    for m, l in [((0,), (1,)), ((0, 2), (1, 2)), ((2, 0), (0, 1))]:
        expected = exact_coherence(rho, m, l)
        assert canonical_moment(b, m, l) == pytest.approx(expected, abs=1e-13)


def test_moments_from_state_random_three_modes():
    rng = np.random.default_rng(4)
    rho = random_density(3, rng)
    M = moments_from_state(rho, 2)
    for m in [(0, 1), (1, 2), (2, 0)]:
        for l in [(0, 2), (1, 0)]:
            assert M.data[m + l] == pytest.approx(exact_coherence(rho, m, l), abs=1e-13)


def test_moments_from_state_cell_volume_scaling():
    psi = fock_state(2, [0])
    rho = np.outer(psi, psi.conj())
    M = moments_from_state(rho, 1, cell_volume=0.5)
    assert M.data[0, 0] == pytest.approx(2.0)


def test_correspondence_rules_reproduce_operator_products():
    n = 2
    ops = build_fock_operators(n)
    rules = CorrespondenceRules(n)
    rng = np.random.default_rng(5)
    rho = random_density(n, rng, number_conserving=False)
    b = b_distribution(rho)
    cases = [
        (rules.annihilate_left(1), ops.c[1] @ rho),
        (rules.create_left(0), ops.cdag(0) @ rho),
        (rules.create_right(1), rho @ ops.cdag(1)),
        (rules.annihilate_right(0), rho @ ops.c[0]),
        (rules.left_product([("cdag", 0), ("c", 1)]), ops.cdag(0) @ ops.c[1] @ rho),
        (rules.right_product([("cdag", 0), ("c", 1)]), rho @ ops.cdag(0) @ ops.c[1]),
    ]
    for sup, expected in cases:
        np.testing.assert_allclose(density_from_b(sup(b)), expected, atol=1e-13)


def test_hamiltonian_superoperator_generates_commutator():
    rng = np.random.default_rng(6)
    h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    h = h + h.conj().T
    from grassfield.oracle import fock_hamiltonian

    H = fock_hamiltonian(h)
    rho = random_density(2, rng)
    sup = hamiltonian_superoperator(h)
    np.testing.assert_allclose(density_from_b(sup(b_distribution(rho))), -1j * (H @ rho - rho @ H), atol=1e-12)


def test_symbolic_ffpe_single_mode():
    omega = 0.7
    f = symbolic_ffpe(np.array([[omega]]))
    Lp, Lq, Dp, Dq = f.sector_blocks()
    np.testing.assert_allclose(Lp, [[-1j * omega]], atol=1e-14)
    np.testing.assert_allclose(Lq, [[1j * omega]], atol=1e-14)
    assert np.max(np.abs(f.diffusion)) < 1e-14


def test_symbolic_ffpe_rejects_too_many_modes():
    with pytest.raises(ConfigurationError):
        symbolic_ffpe(np.eye(5))


def test_symbolic_ffpe_detects_unrepresentable_generator(monkeypatch):
    import grassfield.grassmann as gm

    real = gm.hamiltonian_superoperator

    def bad(h, v=None, hbar=1.0):
        sup = real(h, v, hbar)
        m = sup.matrix.copy()
        m[0, -1] += 1.0  # not generated by any drift/diffusion pair
        return gm.LinearSuperOperator(sup.gens, m)

    monkeypatch.setattr(gm, "hamiltonian_superoperator", bad)
    with pytest.raises(StructuralError):
        symbolic_ffpe(np.eye(1))
