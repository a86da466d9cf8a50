from __future__ import annotations

import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import assume, given
from hypothesis import strategies as st

from nhmeasure.errors import DegenerateSpectrum, IndexOutOfRange, NonFinite
from nhmeasure.spectral import (
    BiorthogonalSystem,
    biorthogonality_residual,
    decompose,
    default_tol,
    perturbed_eigenvalue,
    reconstruct,
)

from conftest import parallel, random_hermitian, random_matrix, spin_example_H

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_spin_example_eigenstructure(H_spin, spins):
    B = decompose(H_spin)
    np.testing.assert_allclose(B.eigenvalues, [1, -1], atol=1e-14)
    assert parallel(B.ket(0), spins["up_x"])
    assert parallel(B.ket(1), spins["dn_y"])
    # bras as covectors: <up_y| has components conj(up_y)
    assert parallel(B.bra(0), spins["up_y"].conj())
    assert parallel(B.bra(1), spins["dn_x"].conj())


def test_hermitian_diagonal():
    B = decompose(np.diag([2.0, 1.0]))
    np.testing.assert_allclose(B.eigenvalues, [2, 1])
    np.testing.assert_allclose(B.bras, B.kets.conj().T, atol=1e-15)


def test_normalization_convention():
    rng = np.random.default_rng(1)
    B = decompose(random_matrix(rng, 5))
    np.testing.assert_allclose(np.linalg.norm(B.kets, axis=0), 1, atol=1e-14)
    np.testing.assert_allclose(np.diag(B.overlaps()), 1, atol=1e-13)
    for i in range(5):
        k = np.argmax(np.abs(B.ket(i)))
        assert abs(B.ket(i)[k].imag) < 1e-15 and B.ket(i)[k].real > 0


def test_sorted_by_real_then_imag():
    H = np.diag([1 - 1j, 2, 1 + 1j, -3j])
    B = decompose(H)
    np.testing.assert_array_equal(B.eigenvalues, [2, 1 + 1j, 1 - 1j, -3j])


def test_random_4x4_reconstruction():
    rng = np.random.default_rng(4)
    H = random_matrix(rng, 4)
    B = decompose(H)
    assert np.max(np.abs(reconstruct(B) - H)) < 1e-10
    # independent rebuild through the dense solver's eigenvector matrix
    w, R = scipy.linalg.eig(H)
    rebuilt = R @ np.diag(w) @ np.linalg.inv(R)
    assert np.max(np.abs(rebuilt - reconstruct(B))) < 1e-10


def test_bras_match_scipy_left_vectors():
    rng = np.random.default_rng(5)
    H = random_matrix(rng, 6)
    B = decompose(H)
    w, VL, VR = scipy.linalg.eig(H, left=True, right=True)
    for i, omega in enumerate(B.eigenvalues):
        k = int(np.argmin(np.abs(w - omega)))
        assert abs(w[k] - omega) < 1e-10
        # scipy: VL[:, k]^H H = w VL[:, k]^H, so the covector is conj(VL[:, k])
        assert parallel(B.bra(i), VL[:, k].conj(), atol=1e-10)
        assert parallel(B.ket(i), VR[:, k], atol=1e-10)


def test_reconstruct_spin_example(H_spin):
    assert np.max(np.abs(reconstruct(decompose(H_spin)) - H_spin)) < 1e-12


def test_reconstruct_manual_identity():
    Q, _ = np.linalg.qr(random_matrix(np.random.default_rng(0), 3))
    B = BiorthogonalSystem(np.ones(3, dtype=complex), Q, Q.conj().T, degenerate=True)
    np.testing.assert_allclose(reconstruct(B), np.eye(3), atol=1e-14)


def test_reconstruct_applies_overlap_denominator():
    rng = np.random.default_rng(2)
    H = random_matrix(rng, 3)
    B = decompose(H)
    scaled = BiorthogonalSystem(B.eigenvalues, B.kets, 7.5j * B.bras)
    assert np.max(np.abs(reconstruct(scaled) - H)) < 1e-10


def test_random_6x6_round_trip():
    H = random_matrix(np.random.default_rng(6), 6)
    assert np.max(np.abs(reconstruct(decompose(H)) - H)) < 1e-10


def test_residuals(H_spin):
    assert biorthogonality_residual(decompose(H_spin)) < 1e-12
    rng = np.random.default_rng(8)
    assert biorthogonality_residual(decompose(random_hermitian(rng, 5))) < 1e-12
    # non-normal: upper-triangular part strongly dominant
    X = np.triu(random_matrix(rng, 8)) * 3 + np.diag(np.arange(8))
    assert biorthogonality_residual(decompose(X)) < 1e-10


def test_one_dimensional():
    B = decompose([[2 - 1j]])
    assert B.eigenvalues[0] == 2 - 1j
    assert biorthogonality_residual(B) == 0.0


def test_degenerate_and_nonfinite():
    with pytest.raises(DegenerateSpectrum):
        decompose(np.eye(3))
    with pytest.raises(DegenerateSpectrum):
        decompose([[1, 1], [0, 1]])  # Jordan block
    with pytest.raises(NonFinite):
        decompose([[1, np.nan], [0, 2]])
    with pytest.raises(NonFinite):
        decompose([[np.inf, 0], [0, 2]])
    with pytest.raises(ValueError):
        decompose(np.ones((2, 3)))


def test_default_tol_is_scale_invariant():
    assert default_tol(np.diag([3.0, -4.0])) == pytest.approx(4e-8)
    decompose(np.diag([1.0, 1.0 + 1e-3]))
    with pytest.raises(DegenerateSpectrum):
        decompose(np.diag([1e6, 1e6 + 1e-3]))


def test_index_out_of_range(H_spin):
    B = decompose(H_spin)
    with pytest.raises(IndexOutOfRange):
        B.ket(2)
    with pytest.raises(IndexOutOfRange):
        B.bra(-1)


def test_system_is_immutable(H_spin):
    B = decompose(H_spin)
    with pytest.raises(ValueError):
        B.kets[0, 0] = 0


def test_perturbation_spin_example(H_spin):
    B = decompose(H_spin)
    sx = np.array([[0, 1], [1, 0]])
    res = perturbed_eigenvalue(B, sx, 1e-3, branch=1)
    assert res.omega == pytest.approx(-1)
    assert res.shift == pytest.approx(-1e-3, abs=1e-15)


def test_perturbation_identity():
    B = decompose(random_matrix(np.random.default_rng(3), 4))
    for i in range(4):
        res = perturbed_eigenvalue(B, np.eye(4), 0.01, i)
        assert res.shift == pytest.approx(0.01, abs=1e-14)
        assert all(abs(c) < 1e-14 for c in res.mixing.values())


def _exact_shift_residual(H, A, coupling, branch, B):
    w = np.linalg.eigvals(H + coupling * A)
    exact = w[np.argmin(np.abs(w - B.eigenvalues[branch]))]
    return abs(exact - perturbed_eigenvalue(B, A, coupling, branch).perturbed)


def test_perturbation_second_order_random_3x3():
    rng = np.random.default_rng(12)
    H = random_matrix(rng, 3)
    A = random_hermitian(rng, 3)
    B = decompose(H)
    for i in range(3):
        r1 = _exact_shift_residual(H, A, 1e-3, i, B)
        r2 = _exact_shift_residual(H, A, 5e-4, i, B)
        assert 3.5 <= r1 / r2 <= 4.5


def test_perturbation_mixing_coefficients():
    rng = np.random.default_rng(13)
    H = random_matrix(rng, 3)
    A = random_hermitian(rng, 3)
    B = decompose(H)
    c = 1e-6
    res = perturbed_eigenvalue(B, A, c, 0)
    Bp = decompose(H + c * A)
    k = Bp.branch_of(B.eigenvalues[0])
    # first-order ket: phi_0 + sum_j c_0j phi_j, compared up to normalization
    first = B.ket(0) + sum(m * B.ket(j) for j, m in res.mixing.items())
    assert parallel(first, Bp.ket(k), atol=1e-10)


def test_perturbation_warns_on_large_coupling(H_spin):
    B = decompose(H_spin)
    with pytest.warns(UserWarning):
        perturbed_eigenvalue(B, np.eye(2), 1.0, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        perturbed_eigenvalue(B, np.eye(2), 1e-3, 0)


# -- properties ----------------------------------------------------------------


@given(seed=seeds, n=st.integers(min_value=1, max_value=12))
def test_prop_biorthogonal_and_reconstructs(seed, n):
    H = random_matrix(np.random.default_rng(seed), n)
    B = decompose(H)
    assert biorthogonality_residual(B) < 1e-10
    assert np.max(np.abs(reconstruct(B) - H)) < 1e-10


@given(seed=seeds, n=st.integers(min_value=1, max_value=10))
def test_prop_hermitian_bras_are_conjugate_kets(seed, n):
    H = random_hermitian(np.random.default_rng(seed), n)
    B = decompose(H)
    for i in range(n):
        ratio = B.bra(i) / B.ket(i).conj()
        ratio = ratio[np.abs(B.ket(i)) > 1e-3]
        np.testing.assert_allclose(np.abs(ratio), 1, atol=1e-8)
        np.testing.assert_allclose(ratio, ratio[0], atol=1e-8)


@given(seed=seeds, n=st.integers(min_value=2, max_value=8))
def test_prop_deterministic(seed, n):
    H = random_matrix(np.random.default_rng(seed), n)
    B1, B2 = decompose(H), decompose(H.copy())
    np.testing.assert_array_equal(B1.eigenvalues, B2.eigenvalues)
    np.testing.assert_array_equal(B1.kets, B2.kets)
    np.testing.assert_array_equal(B1.bras, B2.bras)


@given(seed=seeds, coupling=st.floats(min_value=1e-4, max_value=1e-2))
def test_prop_perturbation_second_order(seed, coupling):
    rng = np.random.default_rng(seed)
    H = random_matrix(rng, 3)
    A = random_hermitian(rng, 3)
    B = decompose(H)
    w = B.eigenvalues
    gap = min(abs(w[i] - w[j]) for i in range(3) for j in range(3) if i != j)
    # well-conditioned: gaps and eigenvector conditioning bounded
    cond = np.linalg.cond(B.kets)
    assume(gap > 0.5 and cond < 10)
    for i in range(3):
        r1 = _exact_shift_residual(H, A, coupling, i, B)
        r2 = _exact_shift_residual(H, A, coupling / 2, i, B)
        assume(r2 > 1e-13)
        assert 3.5 <= r1 / r2 <= 4.5
