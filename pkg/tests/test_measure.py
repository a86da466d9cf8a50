from __future__ import annotations

import csv
import math
import warnings

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from nhmeasure.errors import (
    AdiabaticityViolated,
    DegenerateSpectrum,
    DimensionMismatch,
    GridTooLarge,
    NonHermitianObservable,
)
from nhmeasure.measure import (
    Envelope,
    PointerState,
    adiabatic_convergence_study,
    adiabatic_measure,
    born_weights,
    branch_overlaps,
    collapse_on_reading,
    gaussian_pointer,
    impulsive_measure,
    pointer_profile,
    simultaneous_adiabatic,
    write_convergence_csv,
)
from nhmeasure.models import PAULI
from nhmeasure.spectral import decompose
from nhmeasure.twostate import TwoStateVector, weak_value

from conftest import random_hermitian

SX, SZ = PAULI["x"], PAULI["z"]


def _gauss_density(Q, center, sigma):
    return np.exp(-((Q - center) ** 2) / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)


# -- pointer ---------------------------------------------------------------------


def test_pointer_defaults_and_norm():
    p = gaussian_pointer()
    assert p.n == 512 and p.p_max == pytest.approx(4.0) and p.sigma_q == 1.0
    assert abs(p.norm() - 1) < 1e-10
    np.testing.assert_allclose(p.momenta, -p.momenta[::-1], atol=1e-15)
    assert abs(p.mean_position()) < 1e-12 and abs(p.mean_momentum()) < 1e-12


def test_pointer_position_transform_matches_gaussian():
    p = gaussian_pointer(0.7, 256)
    psi = p.to_position(p.amplitudes)
    # the grid cuts the packet at 8 sigma_P: edge amplitudes near 1e-7 limit pointwise agreement
    rho = np.abs(psi) ** 2
    np.testing.assert_allclose(rho, _gauss_density(p.positions, 0, 0.7), atol=1e-6 * rho.max())
    assert abs(np.sum(np.abs(psi) ** 2) * p.dq - 1) < 1e-10


def test_momentum_phase_moves_packet():
    p = gaussian_pointer(0.5, 256)
    moved = p.with_amplitudes(p.amplitudes * np.exp(-1j * p.momenta * 1.3))
    assert moved.mean_position() == pytest.approx(1.3, abs=1e-10)
    rho = np.abs(moved.to_position(moved.amplitudes)) ** 2
    np.testing.assert_allclose(rho, _gauss_density(moved.positions, 1.3, 0.5), atol=1e-6 * rho.max())


def test_pointer_validation():
    with pytest.raises(ValueError):
        PointerState(np.linspace(-1, 1, 6), np.ones(6), 1.0)
    with pytest.raises(ValueError):
        PointerState(np.linspace(-1, 2, 8), np.ones(8), 1.0)
    with pytest.raises(ValueError):
        gaussian_pointer(0.0)


# -- envelope --------------------------------------------------------------------


@pytest.mark.parametrize("T,ramp", [(1.0, 0.1), (37.0, 0.25), (500.0, 0.05)])
def test_envelope_normalized(T, ramp):
    env = Envelope(T, ramp)
    tr = ramp * T
    total = sum(
        scipy.integrate.quad(env, a, b, epsabs=1e-15, epsrel=1e-13)[0]
        for a, b in [(0, tr), (tr, T - tr), (T - tr, T)]
    )
    assert abs(total - 1) < 1e-10
    assert float(env.integral(T)) == pytest.approx(1.0, abs=1e-14)
    assert env(0.0) == 0 and env(T) == 0


def test_envelope_shape():
    env = Envelope(10.0, 0.2)
    t = np.linspace(0, 10, 100_001)
    g = env(t)
    assert np.all(g >= 0)
    assert np.max(np.abs(np.diff(g))) < 1e-3 * env.plateau  # continuous
    assert env(5.0) == pytest.approx(env.plateau) == pytest.approx(1 / 8)
    assert env(-1.0) == 0 and env(11.0) == 0


def test_envelope_slice_averages():
    env = Envelope(20.0, 0.1)
    steps = 37
    g = env.slice_averages(steps)
    dt = env.T / steps
    assert abs(g.sum() * dt - 1) < 1e-13
    edges = np.linspace(0, env.T, steps + 1)
    for k in (0, 1, 5, 18, 36):
        ref, _ = scipy.integrate.quad(env, edges[k], edges[k + 1], epsabs=1e-15)
        assert g[k] * dt == pytest.approx(ref, abs=1e-14)


def test_envelope_validation():
    for bad in [dict(T=0), dict(T=1, ramp=0.5), dict(T=1, ramp=0), dict(T=1, shape="box")]:
        with pytest.raises(ValueError):
            Envelope(**bad)


# -- impulsive -------------------------------------------------------------------


def test_impulsive_eigenstate_shift():
    rng = np.random.default_rng(0)
    A = random_hermitian(rng, 3)
    a, V = np.linalg.eigh(A)
    p = gaussian_pointer(1.0, 512)
    for k in range(3):
        _, out = impulsive_measure(V[:, k], A, p)
        assert out.pointer_shift_position == pytest.approx(a[k], abs=1e-9)
        assert out.branch == k and out.fidelity == pytest.approx(1, abs=1e-12)


def test_impulsive_identity():
    Phi = np.array([0.6, 0.8j, 0])
    joint, out = impulsive_measure(Phi, np.eye(3), gaussian_pointer())
    assert out.pointer_shift_position == pytest.approx(1, abs=1e-9)
    # system state is untouched: every momentum sample carries Phi
    np.testing.assert_allclose(joint, np.outer(joint[:, 0] / 0.6, Phi), atol=1e-15)
    assert out.fidelity == pytest.approx(1, abs=1e-12)


def test_impulsive_bimodal(spins):
    p = gaussian_pointer(0.1, 1024)
    joint, out = impulsive_measure(spins["up_x"], SZ, p)
    values, weights = born_weights(joint, SZ, p)
    np.testing.assert_allclose(values, [-1, 1])
    np.testing.assert_allclose(weights, [0.5, 0.5], atol=1e-10)
    rho = np.sum(np.abs(p.to_position(joint)) ** 2, axis=1)
    oracle = 0.5 * _gauss_density(p.positions, 1, 0.1) + 0.5 * _gauss_density(p.positions, -1, 0.1)
    np.testing.assert_allclose(rho, oracle, atol=1e-6 * oracle.max())
    right = np.sum(rho[p.positions > 0]) * p.dq
    assert right == pytest.approx(0.5, abs=1e-10)
    assert out.branch is None and out.pointer_shift_position == pytest.approx(0, abs=1e-10)


def test_impulsive_born_statistics():
    rng = np.random.default_rng(7)
    A = np.diag([-2.0, 0.0, 2.0])
    Phi = np.array([0.2, 0.5 + 0.3j, -0.6])
    Phi /= np.linalg.norm(Phi)
    p = gaussian_pointer(0.2, 1024)
    joint, _ = impulsive_measure(Phi, A, p)
    rho = np.sum(np.abs(p.to_position(joint)) ** 2, axis=1)
    cdf = np.cumsum(rho) / rho.sum()
    n = 100_000
    readings = p.positions[np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), p.n - 1)]
    outcome = np.argmin(np.abs(readings[:, None] - np.array([-2.0, 0.0, 2.0])[None]), axis=1)
    born = np.abs(Phi) ** 2
    for k in range(3):
        freq = np.count_nonzero(outcome == k) / n
        assert abs(freq - born[k]) <= 3 * math.sqrt(born[k] * (1 - born[k]) / n)


def test_impulsive_conserves_per_momentum_norm():
    rng = np.random.default_rng(8)
    A = random_hermitian(rng, 4)
    Phi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    p = gaussian_pointer(0.3, 256)
    joint, out = impulsive_measure(Phi, A, p)
    per_p = np.sum(np.abs(joint) ** 2, axis=1)
    np.testing.assert_allclose(per_p, np.abs(p.amplitudes) ** 2 * np.vdot(Phi, Phi).real, atol=1e-10)
    assert out.weight == pytest.approx(np.vdot(Phi, Phi).real, rel=1e-10)


def test_impulsive_refuses_non_hermitian(H_spin):
    with pytest.raises(NonHermitianObservable):
        impulsive_measure([1, 0], H_spin, gaussian_pointer())
    with pytest.raises(DimensionMismatch):
        impulsive_measure([1, 0, 0], SX, gaussian_pointer())


# -- adiabatic -------------------------------------------------------------------


def _hermitian_case(seed=3, n=3):
    rng = np.random.default_rng(seed)
    H = random_hermitian(rng, n)
    A = random_hermitian(rng, n)
    E, V = np.linalg.eigh(H)
    return H, A, E, V


def test_adiabatic_hermitian_eigenstate_expectation():
    H, A, E, V = _hermitian_case()
    p = gaussian_pointer(1.0, 64)
    for k in range(3):
        _, out = adiabatic_measure(H, A, V[:, k], p, Envelope(200.0, 0.25))
        expected = np.vdot(V[:, k], A @ V[:, k]).real
        assert out.pointer_shift_position == pytest.approx(expected, abs=1e-3)
        assert out.expected_shift == pytest.approx(expected, abs=1e-12)
        assert out.fidelity > 0.99


def test_adiabatic_identity_is_exact(H_spin, spins):
    p = gaussian_pointer(1.0, 64)
    for T in (0.5, 5.0, 50.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AdiabaticityViolated)
            _, out = adiabatic_measure(H_spin, np.eye(2), spins["up_x"] + spins["dn_y"], p, Envelope(T))
        assert out.pointer_shift_position == pytest.approx(1, abs=1e-10)


def test_adiabatic_spin_example_sigma_x(H_spin, spins):
    p = gaussian_pointer(1.0, 64)
    _, out = adiabatic_measure(H_spin, SX, spins["dn_y"], p, Envelope(80.0, 0.25))
    assert out.branch == 1
    assert out.expected_shift == pytest.approx(-1, abs=1e-14)
    assert abs(out.pointer_shift_position + 1) < 1e-2
    assert out.fidelity >= 0.99
    assert out.error_norm**2 + out.fidelity == pytest.approx(1, abs=1e-10)


def test_adiabatic_spin_example_sigma_z(H_spin, spins):
    p = gaussian_pointer(1.0, 64)
    _, out = adiabatic_measure(H_spin, SZ, spins["dn_y"], p, Envelope(80.0, 0.25))
    assert out.expected_shift == pytest.approx(-1j, abs=1e-14)
    assert abs(out.pointer_shift_position) < 2e-2
    # imaginary weak value moves the momentum, here by about 2 sigma_P^2 Im(A_w)
    assert out.pointer_shift_momentum == pytest.approx(-0.5, abs=2e-2)


def test_adiabatic_property_a_all_branches(H_spin):
    B = decompose(H_spin)
    p = gaussian_pointer(1.0, 64)
    for i in range(2):
        _, out = adiabatic_measure(H_spin, SX, B.ket(i), p, Envelope(80.0, 0.25))
        tsv = TwoStateVector(B.bra(i), B.ket(i))
        assert abs(out.pointer_shift_position - weak_value(tsv, SX).real) < 1e-2
        assert out.fidelity >= 0.99


def test_adiabaticity_warning(H_spin, spins):
    with pytest.warns(AdiabaticityViolated):
        adiabatic_measure(H_spin, SX, spins["dn_y"], gaussian_pointer(1.0, 32), Envelope(0.5))


def test_adiabatic_argument_checks(H_spin, spins):
    p = gaussian_pointer(1.0, 32)
    with pytest.raises(ValueError):
        adiabatic_measure(H_spin, SX, spins["dn_y"], p, Envelope(10.0), steps=3)
    with pytest.raises(DegenerateSpectrum):
        adiabatic_measure(np.eye(2), SX, spins["dn_y"], p, Envelope(10.0))
    with pytest.raises(DimensionMismatch):
        adiabatic_measure(H_spin, np.eye(3), spins["dn_y"], p, Envelope(10.0))
    big = gaussian_pointer(1.0, 2048)
    with pytest.raises(GridTooLarge):
        simultaneous_adiabatic(H_spin, [SX, SZ], spins["dn_y"], [big, gaussian_pointer(1.0, 1024)], Envelope(1.0))
    with pytest.raises(GridTooLarge):
        simultaneous_adiabatic(H_spin, [SX] * 4, spins["dn_y"], gaussian_pointer(1.0, 2), Envelope(1.0))


def test_thread_count_does_not_change_bits(H_spin, spins):
    p = gaussian_pointer(1.0, 64)
    env = Envelope(20.0, 0.25)
    j1, o1 = adiabatic_measure(H_spin, SX, spins["dn_y"], p, env, threads=1)
    j3, o3 = adiabatic_measure(H_spin, SX, spins["dn_y"], p, env, threads=3)
    np.testing.assert_array_equal(j1, j3)
    assert o1 == o3


def test_pointer_grid_refinement(H_spin, spins):
    env = Envelope(40.0, 0.25)
    shifts = []
    for n in (64, 128):
        _, out = adiabatic_measure(H_spin, SX, spins["dn_y"], gaussian_pointer(1.0, n), env)
        shifts.append(out.pointer_shift_position)
    assert abs(shifts[0] - shifts[1]) < 1e-6


def test_time_step_refinement(H_spin, spins):
    env = Envelope(40.0, 0.25)
    p = gaussian_pointer(1.0, 64)
    # the default picks about 850 slices here
    _, coarse = adiabatic_measure(H_spin, SX, spins["dn_y"], p, env)
    _, fine = adiabatic_measure(H_spin, SX, spins["dn_y"], p, env, steps=4000)
    assert abs(coarse.pointer_shift_position - fine.pointer_shift_position) < 1e-6


# -- simultaneous ----------------------------------------------------------------


def test_simultaneous_spin_example(H_spin, spins):
    p = gaussian_pointer(1.0, 32)
    _, outs = simultaneous_adiabatic(H_spin, [SX, SZ], spins["dn_y"], p, Envelope(160.0, 0.25))
    assert abs(outs[0].pointer_shift_position + 1) < 1e-2
    assert abs(outs[1].pointer_shift_position) < 1e-2
    assert outs[0].expected_shift == pytest.approx(-1) and outs[1].expected_shift == pytest.approx(-1j)


def test_simultaneous_equal_observables(H_spin, spins):
    p = gaussian_pointer(1.0, 32)
    _, outs = simultaneous_adiabatic(H_spin, [SX, SX], spins["dn_y"], p, Envelope(20.0, 0.25))
    assert outs[0].pointer_shift_position == pytest.approx(outs[1].pointer_shift_position, abs=1e-12)
    assert outs[0].pointer_shift_momentum == pytest.approx(outs[1].pointer_shift_momentum, abs=1e-12)


def test_simultaneous_hermitian_matches_single_runs():
    H, A, E, V = _hermitian_case(seed=11)
    B2 = random_hermitian(np.random.default_rng(12), 3)
    # cross terms between the pointers scale as sigma_P^2 / T^2
    p = gaussian_pointer(8.0, 16)
    env = Envelope(400.0, 0.25)
    _, outs = simultaneous_adiabatic(H, [A, B2], V[:, 0], p, env)
    _, oa = adiabatic_measure(H, A, V[:, 0], p, env)
    _, ob = adiabatic_measure(H, B2, V[:, 0], p, env)
    assert abs(outs[0].pointer_shift_position - oa.pointer_shift_position) < 1e-6
    assert abs(outs[1].pointer_shift_position - ob.pointer_shift_position) < 1e-6


# -- convergence study -----------------------------------------------------------


def test_convergence_identity_and_csv(tmp_path, H_spin, spins):
    rows = adiabatic_convergence_study(
        H_spin, np.eye(2), spins["dn_y"], [2.0, 4.0, 8.0], gaussian_pointer(1.0, 32)
    )
    for r in rows:
        assert r.shift_q == pytest.approx(1, abs=1e-10)
    path = tmp_path / "conv.csv"
    write_convergence_csv(rows, path)
    lines = list(csv.reader(path.open()))
    assert lines[0] == ["T", "shift_Q", "shift_P", "error_norm", "fidelity"]
    assert [float(x[0]) for x in lines[1:]] == [2.0, 4.0, 8.0]


def test_convergence_hermitian_tail_decreases():
    H, A, E, V = _hermitian_case()
    rows = adiabatic_convergence_study(H, A, V[:, 1], [25.0, 50.0, 100.0, 200.0], gaussian_pointer(1.0, 64), 0.25)
    dev = [r.deviation for r in rows]
    assert all(b < a for a, b in zip(dev, dev[1:]))


def test_convergence_requires_increasing_T(H_spin, spins):
    with pytest.raises(ValueError):
        adiabatic_convergence_study(H_spin, SX, spins["dn_y"], [10.0, 10.0])


# -- diagnostics -----------------------------------------------------------------


def test_branch_overlaps_match_gaussian_formula():
    p = gaussian_pointer(1.0, 512)
    ov = branch_overlaps(p, [1.0, -1.0])
    np.testing.assert_allclose(np.diag(ov), 1, atol=1e-12)
    assert ov[0, 1] == pytest.approx(math.exp(-4 / 8), abs=1e-10)
    assert branch_overlaps(gaussian_pointer(0.1, 1024), [1.0, -1.0])[0, 1] < 1e-14


def test_collapse_on_reading(spins):
    p = gaussian_pointer(0.1, 1024)
    joint, _ = impulsive_measure(spins["up_x"], SZ, p)
    r = collapse_on_reading(joint, p, 1.0, 0.9)
    assert r.probability == pytest.approx(0.5, abs=1e-10)
    assert abs(abs(np.vdot(spins["up_z"], r.state)) - 1) < 1e-10
    assert r.purity == pytest.approx(1, abs=1e-10)
    with pytest.raises(ValueError):
        collapse_on_reading(joint, p, 1e6, 0.1)


def test_pointer_profile_csv(tmp_path, spins):
    p = gaussian_pointer(0.5, 64)
    joint, _ = impulsive_measure(spins["up_z"], SZ, p)
    path = tmp_path / "profile.csv"
    pointer_profile(joint, p, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["Q", "prob_Q", "re_Q", "im_Q", "P", "prob_P", "re_P", "im_P"]
    assert len(rows) == 65
    data = np.array(rows[1:], dtype=float)
    assert np.sum(data[:, 1]) * p.dq == pytest.approx(1, abs=1e-10)
    assert np.sum(data[:, 5]) * p.dp == pytest.approx(1, abs=1e-10)


@given(shift=st.floats(-3, 3))
def test_prop_identity_measurement_shifts_by_one(shift):
    # a pre-shifted pointer still moves by exactly one under the identity
    p = gaussian_pointer(0.8, 128)
    p = p.with_amplitudes(p.amplitudes * np.exp(-1j * p.momenta * shift))
    _, out = impulsive_measure([1.0, 0.0], np.eye(2), p)
    assert out.pointer_shift_position == pytest.approx(1, abs=1e-9)
