import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multipenalty.model import (Factorization, InitializationError, SignalClassSpec,
                                certify_membership, effective_sparsity, hard_sparsity,
                                perturb_initialization, sample_ground_truth)

REFERENCE = SignalClassSpec(20, 300, 1, 20, 20)


def rel_err(a: Factorization, b: Factorization) -> float:
    X = a.product()
    return np.linalg.norm(X - b.product()) / np.linalg.norm(X)


def test_factorization_rejects_mismatched_rank():
    with pytest.raises(ValueError):
        Factorization(np.ones((3, 2)), np.ones((4, 1)))
    with pytest.raises(ValueError):
        Factorization(np.ones(3), np.ones((4, 1)))


def test_spec_validation():
    with pytest.raises(ValueError):
        SignalClassSpec(5, 5, 1, 6, 1)
    with pytest.raises(ValueError):
        SignalClassSpec(5, 5, 1, 1, 1, Gamma=0.0)


def test_ground_truth_shapes_and_norm(rng):
    F = sample_ground_truth(REFERENCE, 0.1, rng)
    assert F.U.shape == (20, 1) and F.V.shape == (300, 1)
    # sparse part has norm 1, dense part 0.1
    assert 0.9 <= np.linalg.norm(F.U) <= 1.1
    assert 0.9 <= np.linalg.norm(F.V) <= 1.1


def test_ground_truth_without_dense_part(rng):
    spec = SignalClassSpec(10, 40, 2, 3.4, 7.0)
    F = sample_ground_truth(spec, 0.0, rng)
    assert np.count_nonzero(F.U) == 7          # round(2 * 3.4) = 6.8 -> 7
    assert np.count_nonzero(F.V) == 14
    assert np.linalg.norm(F.U) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert np.linalg.norm(F.V) == pytest.approx(math.sqrt(2), rel=1e-12)


def test_ground_truth_deterministic():
    a = sample_ground_truth(REFERENCE, 0.1, np.random.default_rng(5))
    b = sample_ground_truth(REFERENCE, 0.1, np.random.default_rng(5))
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)


def test_ground_truth_rejects_bad_sparsity(rng):
    # R*s rounds to 0 only for s < 0.5, which SignalClassSpec rejects; use a raw call path
    from multipenalty.model import _sparse_component
    with pytest.raises(ValueError):
        _sparse_component(5, 1, 0.4, 0.0, rng)
    with pytest.raises(ValueError):
        _sparse_component(5, 1, 6, 0.0, rng)
    with pytest.raises(ValueError):
        sample_ground_truth(REFERENCE, -0.1, rng)


@pytest.mark.parametrize("seed", range(8))
def test_perturbation_hits_band(seed):
    rng = np.random.default_rng(seed)
    F = sample_ground_truth(REFERENCE, 0.1, rng)
    init = perturb_initialization(F, 0.6, rng)
    assert 0.57 <= rel_err(F, init) <= 0.63


def test_perturbation_differs_across_seeds():
    F = sample_ground_truth(REFERENCE, 0.1, np.random.default_rng(0))
    a = perturb_initialization(F, 0.6, np.random.default_rng(1))
    b = perturb_initialization(F, 0.6, np.random.default_rng(2))
    assert not np.allclose(a.U, b.U)
    for init in (a, b):
        assert 0.57 <= rel_err(F, init) <= 0.63


def test_perturbation_tiny_target_stays_close(rng):
    F = sample_ground_truth(REFERENCE, 0.1, rng)
    init = perturb_initialization(F, 1e-9, rng)
    assert np.allclose(init.U, F.U, atol=1e-8) and np.allclose(init.V, F.V, atol=1e-8)


def test_perturbation_errors(rng):
    F = sample_ground_truth(REFERENCE, 0.1, rng)
    with pytest.raises(ValueError):
        perturb_initialization(F, 0.0, rng)
    zero = Factorization(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ValueError):
        perturb_initialization(zero, 0.6, rng)
    # relative error of a rank-1 perturbation saturates; 1e6 is out of reach
    with pytest.raises(InitializationError):
        perturb_initialization(F, 1e6, rng, max_steps=5)


def test_certify_zero_and_basis_vector():
    zero = Factorization(np.zeros((4, 1)), np.zeros((5, 1)))
    assert certify_membership(zero, 1.0) == (0.0, 0.0, True)
    e = np.zeros((4, 1))
    e[2] = 1.0
    s1, _, ok = certify_membership(Factorization(e, e), 1.0)
    assert s1 == pytest.approx(1.0) and ok


@pytest.mark.parametrize("k", [1, 4, 9, 20])
def test_certify_equal_magnitudes(k):
    U = np.zeros((30, 1))
    U[:k] = 1 / math.sqrt(k)
    s1, _, _ = certify_membership(Factorization(U, U), 1.0)
    assert s1 == pytest.approx(k)


def test_certify_frobenius_flag():
    U = np.full((4, 1), 1.0)     # |U|_F^2 = 4
    assert not certify_membership(Factorization(U, U), 1.0)[2]
    assert certify_membership(Factorization(U, U), 4.0)[2]


@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 2 ** 16))
def test_certify_scale_covariance(c, seed):
    rng = np.random.default_rng(seed)
    F = Factorization(rng.standard_normal((6, 2)), rng.standard_normal((7, 2)))
    a = certify_membership(F, 1.3)
    b = certify_membership(Factorization(c * F.U, c * F.V), c * c * 1.3)
    assert b[0] == pytest.approx(a[0], rel=1e-9)
    assert b[1] == pytest.approx(a[1], rel=1e-9)


@given(s=st.integers(1, 30), seed=st.integers(0, 2 ** 16))
def test_hard_sparse_unit_vector_is_effectively_sparse(s, seed):
    rng = np.random.default_rng(seed)
    u = np.zeros((30, 1))
    u[rng.choice(30, s, replace=False), 0] = rng.standard_normal(s)
    u /= np.linalg.norm(u)
    assert certify_membership(Factorization(u, u), 1.0)[0] <= s * (1 + 1e-12)


def test_effective_sparsity_examples(rng):
    e = np.zeros((7, 1))
    e[3] = -2.5
    assert effective_sparsity(e, 1) == pytest.approx(1.0)
    assert effective_sparsity(np.full((12, 1), 0.3), 1) == pytest.approx(12.0)
    v = np.zeros((300, 1))
    v[rng.choice(300, 20, replace=False), 0] = rng.choice([-1.0, 1.0], 20) * 0.7
    assert effective_sparsity(v, 1) == pytest.approx(20.0)
    assert effective_sparsity(np.zeros((5, 2)), 2) == 0.0


@given(c=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-3), seed=st.integers(0, 2 ** 16))
def test_effective_sparsity_scale_invariant(c, seed):
    M = np.random.default_rng(seed).standard_normal((9, 2))
    assert effective_sparsity(c * M, 2) == pytest.approx(effective_sparsity(M, 2), rel=1e-10)


def test_hard_sparsity_counts_above_eps():
    M = np.zeros((10, 2))
    M[0, 0] = 1.0
    M[1, 1] = 1e-20
    assert hard_sparsity(M, 2) == pytest.approx(1 / 20)
