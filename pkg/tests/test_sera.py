import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectraladapt.core import DEFAULT_WAVELENGTHS, SpectralCube, l2_normalize_rows
from spectraladapt.errors import DimensionMismatch, EmptyInput, InsufficientRows, RankDeficient
from spectraladapt.sera import (
    Assignment,
    EndmemberBank,
    assign,
    atgp,
    atgp_indices,
    feature_backward,
    init_bank,
    momentum_update,
    sample_pixels,
    sera_loss,
    spectral_feature,
)


def atgp_oracle(s, k, tol=1e-9):
    """Selection by explicit orthogonal-complement projection P = I - U (U^T U)^-1 U^T."""
    s = np.asarray(s, dtype=np.float64)
    chosen = []
    for _ in range(k):
        if chosen:
            u = s[chosen].T  # C x j
            p = np.eye(s.shape[1]) - u @ np.linalg.inv(u.T @ u) @ u.T
        else:
            p = np.eye(s.shape[1])
        norms = [float(np.linalg.norm(p @ row)) for row in s]
        best = max(norms)
        chosen.append(next(i for i, v in enumerate(norms) if v >= best - tol))
    return chosen


def test_atgp_small_example():
    s = np.array([[3.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    assert atgp_indices(s, 2) == [0, 1]
    np.testing.assert_array_equal(atgp(s, 2), [[3.0, 0.0], [0.0, 2.0]])


def test_atgp_k1_is_max_norm(rng):
    s = rng.random((30, 6))
    assert atgp_indices(s, 1) == [int(np.argmax(np.linalg.norm(s, axis=1)))]


def test_atgp_tie_breaks_low_index():
    s = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert atgp_indices(s, 1) == [0]


@pytest.mark.parametrize("seed", range(20))
def test_atgp_matches_oracle(seed):
    s = np.random.default_rng(seed).random((20, 5))
    assert atgp_indices(s, 3) == atgp_oracle(s, 3)


def test_atgp_errors(rng):
    with pytest.raises(InsufficientRows):
        atgp_indices(rng.random((2, 5)), 3)
    with pytest.raises(RankDeficient):
        atgp_indices(rng.random((10, 3)), 4)
    with pytest.raises(RankDeficient):
        atgp_indices(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_atgp_selected_independent_and_permutation_stable(seed, k):
    rng = np.random.default_rng(seed)
    s = rng.random((15, 6))
    idx = atgp_indices(s, k)
    assert np.linalg.matrix_rank(s[idx]) == k
    perm = rng.permutation(15)
    idx_p = atgp_indices(s[perm], k)
    np.testing.assert_array_equal(s[perm][idx_p], s[idx])


def test_sample_pixels_single_pixel():
    cube = SpectralCube(np.array([[[3.0 / 5]], [[4.0 / 5]]]) * 0.5, [400, 410])
    out = sample_pixels([cube], 5, seed=0)
    np.testing.assert_allclose(out, np.tile([0.6, 0.8], (5, 1)), atol=1e-12)


def test_sample_pixels_deterministic(rng):
    cubes = [SpectralCube(rng.random((4, 5, 5)), [400, 410, 420, 430]) for _ in range(3)]
    a, b = sample_pixels(cubes, 50, seed=9), sample_pixels(cubes, 50, seed=9)
    assert np.array_equal(a, b)
    with pytest.raises(EmptyInput):
        sample_pixels([], 5)


def test_init_bank_constant_spectrum():
    spectrum = np.linspace(0.1, 0.9, 31)
    cube = SpectralCube(np.broadcast_to(spectrum[:, None, None], (31, 4, 4)).copy(), DEFAULT_WAVELENGTHS)
    bank = init_bank([cube, cube], k=1, n_sample=20, seed=0)
    np.testing.assert_allclose(bank.endmembers[0], spectrum / np.linalg.norm(spectrum), atol=1e-12)


def test_init_bank_deterministic_and_unit(rng):
    cubes = [SpectralCube(rng.random((31, 6, 6)), DEFAULT_WAVELENGTHS) for _ in range(2)]
    a = init_bank(cubes, k=8, n_sample=200, seed=4)
    b = init_bank(cubes, k=8, n_sample=200, seed=4)
    assert np.array_equal(a.endmembers, b.endmembers)
    np.testing.assert_allclose(np.linalg.norm(a.endmembers, axis=1), 1.0, atol=1e-12)
    assert a.k == 8 and a.bands == 31


def test_bank_is_read_only():
    bank = EndmemberBank(np.eye(3))
    with pytest.raises(ValueError):
        bank.endmembers[0, 0] = 2.0


def test_spectral_feature_constant_cube():
    z = spectral_feature(np.full((31, 4, 4), 0.5))
    np.testing.assert_allclose(z, np.full(31, 1 / np.sqrt(31)), atol=1e-12)


def test_sera_loss_zero_and_one():
    bank = EndmemberBank(np.eye(4)[:2])
    loss, _, a = sera_loss(np.eye(4)[[1, 0, 1]], bank)
    assert loss <= 1e-9 and a.index.tolist() == [1, 0, 1]
    loss, _, _ = sera_loss(np.eye(4)[[3]], bank)
    assert loss == pytest.approx(1.0)


def test_sera_loss_dimension_check():
    with pytest.raises(DimensionMismatch):
        sera_loss(np.ones((1, 3)), EndmemberBank(np.eye(4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_sera_loss_range(seed):
    rng = np.random.default_rng(seed)
    bank = EndmemberBank(l2_normalize_rows(rng.standard_normal((5, 7))))
    z = l2_normalize_rows(rng.standard_normal((6, 7)))
    loss, _, _ = sera_loss(z, bank)
    assert 0.0 <= loss <= 2.0


def test_sera_gradient_through_pooling_matches_fd(rng):
    """Finite differences of the loss w.r.t. the pre-normalization pooled vectors."""
    bank = EndmemberBank(l2_normalize_rows(rng.random((6, 31))))
    pooled = rng.random((4, 31)) + 0.1

    def loss_of(v):
        return sera_loss(l2_normalize_rows(v), bank)[0]

    _, g_feat, a = sera_loss(l2_normalize_rows(pooled), bank)
    analytic = feature_backward(pooled, g_feat)
    h = 1e-6
    for i in range(4):
        for c in range(0, 31, 3):
            up, dn = pooled.copy(), pooled.copy()
            up[i, c] += h
            dn[i, c] -= h
            # skip assignment boundaries
            if not (np.array_equal(assign(l2_normalize_rows(up), bank).index, a.index)
                    and np.array_equal(assign(l2_normalize_rows(dn), bank).index, a.index)):
                continue
            fd = (loss_of(up) - loss_of(dn)) / (2 * h)
            assert abs(fd - analytic[i, c]) <= 1e-4 * max(1e-3, abs(fd))


def test_feature_backward_zero_vector():
    assert not feature_backward(np.zeros((1, 3)), np.ones((1, 3))).any()


def test_momentum_update_examples():
    bank = EndmemberBank(np.array([[1.0, 0.0], [0.0, 1.0]]), momentum=1.0)
    z = np.array([[0.6, 0.8]])
    out = momentum_update(bank, z, assign(z, bank))
    assert np.array_equal(out.endmembers, bank.endmembers)

    bank0 = EndmemberBank(np.array([[1.0, 0.0], [0.0, 1.0]]), momentum=0.0)
    out = momentum_update(bank0, z, Assignment(np.array([0]), np.array([0.6])))
    np.testing.assert_allclose(out.endmembers[0], [0.6, 0.8], atol=1e-12)
    np.testing.assert_array_equal(out.endmembers[1], [0.0, 1.0])  # unassigned row untouched

    bank9 = EndmemberBank(np.array([[1.0, 0.0]]), momentum=0.9)
    out = momentum_update(bank9, np.array([[0.0, 1.0]]), Assignment(np.array([0]), np.array([0.0])))
    np.testing.assert_allclose(out.endmembers[0], [0.9939, 0.1104], atol=1e-4)


def test_momentum_update_monotone_toward_fixed_feature(rng):
    bank = EndmemberBank(l2_normalize_rows(rng.random((4, 10))), momentum=0.9)
    z = l2_normalize_rows(rng.random((1, 10)))
    prev = -2.0
    for _ in range(100):
        a = assign(z, bank)
        cos = float(a.similarity[0])
        assert cos >= prev - 1e-12
        prev = cos
        bank = momentum_update(bank, z, a)
    assert prev > 0.9999


def test_momentum_update_keeps_unit_norms(rng):
    bank = EndmemberBank(l2_normalize_rows(rng.standard_normal((8, 12))), momentum=0.9)
    for _ in range(200):
        z = l2_normalize_rows(rng.standard_normal((5, 12)))
        bank = momentum_update(bank, z, assign(z, bank))
    assert bank.endmembers.shape == (8, 12)
    np.testing.assert_allclose(np.linalg.norm(bank.endmembers, axis=1), 1.0, atol=1e-9)
