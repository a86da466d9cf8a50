"""Impulsive and adiabatic measurements with an explicit one-dimensional pointer.

The pointer is stored in the momentum representation.  With no free pointer
Hamiltonian the pointer momentum ``P`` commutes with the total Hamiltonian
``H + g(t) P A``, so the joint evolution splits into one independent
``dim x dim`` evolution per momentum sample.  A joint state is therefore an
array of shape ``(n_p, dim)`` (or ``(n_1, ..., n_m, dim)`` for ``m``
pointers) holding the system amplitudes at each momentum sample.

Grid conventions (also used by the CSV exports):

* momenta ``P_k = -p_max + k dp`` for ``k = 0..n-1``, ``dp = 2 p_max / (n - 1)``;
* positions ``Q_j = (j - n/2) dq`` with ``dq = 2 pi / (n dp)``;
* ``psi(Q_j) = dp / sqrt(2 pi) * sum_k psi~(P_k) exp(i P_k Q_j)``, so a factor
  ``exp(-i P a)`` in momentum space moves the packet to ``Q + a``.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AdiabaticityViolated, DimensionMismatch, GridTooLarge, NonHermitianObservable
from .propagate import decompose_ket, expm_batch, format_float, outcome_distribution
from .spectral import as_operator, decompose, is_hermitian
from .twostate import TwoStateVector, as_state, weak_value

__all__ = [
    "PointerState",
    "gaussian_pointer",
    "Envelope",
    "MeasurementOutcome",
    "impulsive_measure",
    "born_weights",
    "adiabatic_measure",
    "simultaneous_adiabatic",
    "ConvergenceRow",
    "adiabatic_convergence_study",
    "write_convergence_csv",
    "branch_overlaps",
    "Reading",
    "collapse_on_reading",
    "pointer_profile",
    "MAX_GRID_POINTS",
]

MAX_GRID_POINTS = 1 << 20
MAX_POINTERS = 3


@dataclass(frozen=True)
class PointerState:
    momenta: np.ndarray
    amplitudes: np.ndarray
    sigma_q: float

    def __post_init__(self):
        P = np.asarray(self.momenta, dtype=float)
        a = np.asarray(self.amplitudes, dtype=complex)
        n = P.shape[0]
        if P.ndim != 1 or a.shape != P.shape:
            raise ValueError("momenta and amplitudes must be 1-D arrays of equal length")
        if n < 2 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two, got {n}")
        if not np.allclose(P, -P[::-1], rtol=0, atol=1e-12 * max(1.0, abs(P[0]))):
            raise ValueError("momentum grid must be symmetric about zero")
        P.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "momenta", P)
        object.__setattr__(self, "amplitudes", a)

    @property
    def n(self) -> int:
        return int(self.momenta.shape[0])

    @property
    def dp(self) -> float:
        return float(self.momenta[1] - self.momenta[0])

    @property
    def p_max(self) -> float:
        return float(self.momenta[-1])

    @property
    def dq(self) -> float:
        return 2.0 * math.pi / (self.n * self.dp)

    @property
    def positions(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dq

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.dp)

    def to_position(self, amps, axis: int = 0) -> np.ndarray:
        """Transform momentum-space samples along ``axis`` to position space."""
        amps = np.moveaxis(np.asarray(amps, dtype=complex), axis, 0)
        n = self.n
        sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        sign = sign.reshape((n,) + (1,) * (amps.ndim - 1))
        out = np.fft.ifft(amps * sign, axis=0) * (n * self.dp / math.sqrt(2.0 * math.pi))
        phase = np.exp(-1j * self.p_max * self.positions)
        out = out * phase.reshape((n,) + (1,) * (amps.ndim - 1))
        return np.moveaxis(out, 0, axis)

    def mean_position(self) -> float:
        rho = np.abs(self.to_position(self.amplitudes)) ** 2
        return float(np.sum(self.positions * rho) / np.sum(rho))

    def mean_momentum(self) -> float:
        rho = np.abs(self.amplitudes) ** 2
        return float(np.sum(self.momenta * rho) / np.sum(rho))

    def with_amplitudes(self, amplitudes) -> "PointerState":
        return PointerState(self.momenta, amplitudes, self.sigma_q)


def gaussian_pointer(
    sigma_q: float = 1.0, n_p: int = 512, p_max: float | None = None
) -> PointerState:
    """Gaussian pointer centred at ``Q = 0`` with position spread ``sigma_q``.

    The momentum spread is ``1 / (2 sigma_q)``; by default the grid extends to
    eight momentum standard deviations.
    """
    if sigma_q <= 0:
        raise ValueError("sigma_q must be positive")
    sigma_p = 1.0 / (2.0 * sigma_q)
    if p_max is None:
        p_max = 8.0 * sigma_p
    P = np.linspace(-p_max, p_max, n_p)
    amps = np.exp(-(P**2) / (4.0 * sigma_p**2)).astype(complex)
    amps /= math.sqrt(np.sum(np.abs(amps) ** 2) * (P[1] - P[0]))
    return PointerState(P, amps, float(sigma_q))


@dataclass(frozen=True)
class Envelope:
    """Coupling profile ``g(t)`` on ``[0, T]`` with ``integral g dt = 1``.

    ``sin2``: ``g`` rises as ``sin^2`` over the first ``ramp * T``, stays flat at
    ``1 / ((1 - ramp) T)`` and falls symmetrically over the last ``ramp * T``.
    """

    T: float
    ramp: float = 0.1
    shape: str = "sin2"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 < self.ramp < 0.5:
            raise ValueError("ramp fraction must lie in (0, 1/2)")
        if self.shape != "sin2":
            raise ValueError(f"unknown envelope shape {self.shape!r}")

    @property
    def plateau(self) -> float:
        return 1.0 / ((1.0 - self.ramp) * self.T)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tr = self.ramp * self.T
        g = np.where(
            t < tr,
            np.sin(0.5 * np.pi * t / tr) ** 2,
            np.where(t > self.T - tr, np.sin(0.5 * np.pi * (self.T - t) / tr) ** 2, 1.0),
        )
        g = np.where((t < 0) | (t > self.T), 0.0, g)
        return self.plateau * g

    def integral(self, t):
        """``G(t) = integral of g from 0 to t``."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        tr = self.ramp * self.T
        g0 = self.plateau

        def up(x):
            return g0 * (0.5 * x - tr / (2.0 * np.pi) * np.sin(np.pi * x / tr))

        return np.where(
            t <= tr, up(t), np.where(t <= self.T - tr, up(tr) + g0 * (t - tr), 1.0 - up(self.T - t))
        )

    def slice_averages(self, steps: int) -> np.ndarray:
        """Exact mean of ``g`` over each of ``steps`` equal slices."""
        edges = np.linspace(0.0, self.T, steps + 1)
        dt = self.T / steps
        g = np.diff(self.integral(edges)) / dt
        tr = self.ramp * self.T
        inside = (edges[:-1] >= tr) & (edges[1:] <= self.T - tr)
        g[inside] = self.plateau
        return g


@dataclass(frozen=True)
class MeasurementOutcome:
    kind: str
    pointer_shift_position: float
    pointer_shift_momentum: float
    branch: int | None
    fidelity: float
    error_norm: float
    weight: float = 1.0
    expected_shift: complex | None = None


def _pointer_means(joint: np.ndarray, pointers: list[PointerState], axis: int) -> tuple[float, float]:
    p = pointers[axis]
    others = tuple(i for i in range(joint.ndim) if i != axis)
    rho_p = np.sum(np.abs(joint) ** 2, axis=others)
    mean_p = float(np.sum(p.momenta * rho_p) / np.sum(rho_p))
    psi_q = p.to_position(joint, axis=axis)
    rho_q = np.sum(np.abs(psi_q) ** 2, axis=others)
    mean_q = float(np.sum(p.positions * rho_q) / np.sum(rho_q))
    return mean_q, mean_p


def _fidelity(joint: np.ndarray, expected: np.ndarray) -> float:
    e = expected / np.linalg.norm(expected)
    total = np.sum(np.abs(joint) ** 2)
    along = np.sum(np.abs(joint @ e.conj()) ** 2)
    return float(along / total)


def _grid_weight(joint: np.ndarray, pointers: list[PointerState]) -> float:
    return float(np.sum(np.abs(joint) ** 2) * np.prod([p.dp for p in pointers]))


def impulsive_measure(Phi, A, pointer: PointerState):
    """Ideal von Neumann measurement ``exp(-i P A)``.

    Returns ``(joint, outcome)`` where ``joint[k] = exp(-i P_k A) Phi psi~(P_k)``.
    """
    A = as_operator(A, "A")
    Phi = as_state(Phi, "Phi")
    if Phi.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"state has {Phi.shape[0]} components, A has {A.shape[0]}")
    if not is_hermitian(A):
        raise NonHermitianObservable("an impulsive measurement needs a hermitian observable")
    a, V = np.linalg.eigh(A)
    c = V.conj().T @ Phi
    phases = np.exp(-1j * np.outer(pointer.momenta, a))
    joint = ((phases * c) @ V.T) * pointer.amplitudes[:, None]

    q0, p0 = pointer.mean_position(), pointer.mean_momentum()
    q1, p1 = _pointer_means(joint, [pointer], 0)
    probs = np.abs(c) ** 2 / np.sum(np.abs(c) ** 2)
    branch = int(np.argmax(probs)) if probs.max() > 1 - 1e-12 else None
    fid = _fidelity(joint, Phi)
    outcome = MeasurementOutcome(
        kind="impulsive",
        pointer_shift_position=q1 - q0,
        pointer_shift_momentum=p1 - p0,
        branch=branch,
        fidelity=fid,
        error_norm=math.sqrt(max(0.0, 1.0 - fid)),
        weight=_grid_weight(joint, [pointer]),
        expected_shift=None if branch is None else complex(a[branch]),
    )
    return joint, outcome


def born_weights(joint, A, pointer: PointerState, atol: float = 1e-9):
    """Distinct eigenvalues of ``A`` and the joint-state weight in each eigenspace."""
    A = as_operator(A, "A")
    a, V = np.linalg.eigh(A)
    comp = np.abs(np.asarray(joint) @ V.conj()) ** 2  # (n_p, dim) in the eigenbasis
    per_vec = comp.sum(axis=0) * pointer.dp
    values, weights = [], []
    for val, w in zip(a, per_vec):
        if values and abs(val - values[-1]) <= atol:
            weights[-1] += w
        else:
            values.append(float(val))
            weights.append(float(w))
    return np.array(values), np.array(weights)


def _default_steps(H, observables, pointers, env: Envelope) -> int:
    gmax = env.plateau
    coupling = sum(
        np.linalg.norm(A, 2) * np.max(np.abs(p.momenta)) for A, p in zip(observables, pointers)
    )
    rate = np.linalg.norm(H, 2) + gmax * coupling
    return max(1, int(math.ceil(env.T * rate / 0.1)))


_BLOCK_BYTES = 1 << 25


def _runs(gs):
    """Run-length encoding of the slice couplings."""
    out = []
    for g in gs:
        if out and out[-1][0] == g:
            out[-1][1] += 1
        else:
            out.append([g, 1])
    return out


def _evolve_chunk(H, C, phi, gs, dt):
    M, d = C.shape[0], H.shape[0]
    state = np.broadcast_to(phi, (M, d)).copy()
    runs = _runs(gs)
    block = max(1, _BLOCK_BYTES // (16 * M * d * d))
    for start in range(0, len(runs), block):
        part = runs[start:start + block]
        g = np.array([r[0] for r in part])
        Us = expm_batch(-1j * dt * (H[None, None] + g[:, None, None, None] * C[None]))
        for U, (_, count) in zip(Us, part):
            if count > 1:
                U = np.linalg.matrix_power(U, count)
            state = (U @ state[..., None])[..., 0]
    return state


def _run_adiabatic(H, observables, Phi, pointers, env, steps, threads):
    d = H.shape[0]
    grids = np.meshgrid(*[p.momenta for p in pointers], indexing="ij")
    shape = grids[0].shape
    Pflat = np.stack([g.ravel() for g in grids], axis=1)
    C = np.einsum("kj,jab->kab", Pflat, np.stack(observables))
    gs = env.slice_averages(steps)
    dt = env.T / steps

    M = C.shape[0]
    threads = max(1, int(threads))
    bounds = np.linspace(0, M, min(threads, M) + 1).astype(int)
    chunks = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
    if len(chunks) == 1:
        states = [_evolve_chunk(H, C, Phi, gs, dt)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            states = list(pool.map(lambda b: _evolve_chunk(H, C[b[0]:b[1]], Phi, gs, dt), chunks))
    state = np.concatenate(states, axis=0).reshape(shape + (d,))

    amp = np.ones(shape, dtype=complex)
    for j, p in enumerate(pointers):
        idx = [None] * len(pointers)
        idx[j] = slice(None)
        amp = amp * p.amplitudes[tuple(idx)]
    return state * amp[..., None]


def _adiabatic(H, observables, Phi, pointers, env, steps, threads, fidelity_threshold, kind):
    H = as_operator(H, "H_eff")
    Phi = as_state(Phi, "Phi")
    d = H.shape[0]
    observables = [as_operator(A, f"observable {i}") for i, A in enumerate(observables)]
    for i, A in enumerate(observables):
        if A.shape[0] != d:
            raise DimensionMismatch(f"observable {i} has dimension {A.shape[0]}, H_eff has {d}")
    if Phi.shape[0] != d:
        raise DimensionMismatch(f"state has {Phi.shape[0]} components, H_eff has {d}")
    if len(pointers) != len(observables):
        raise ValueError("need one pointer per observable")
    if len(observables) > MAX_POINTERS:
        raise GridTooLarge(f"at most {MAX_POINTERS} simultaneous observables are supported")
    npoints = int(np.prod([p.n for p in pointers]))
    if npoints > MAX_GRID_POINTS:
        raise GridTooLarge(f"product momentum grid has {npoints} points (limit {MAX_GRID_POINTS})")

    B = decompose(H)
    min_steps = _default_steps(H, observables, pointers, env)
    if steps is None:
        steps = min_steps
    elif steps < min_steps:
        raise ValueError(f"steps={steps} too coarse; need at least {min_steps} for |H| dt < 0.1")

    joint = _run_adiabatic(H, observables, Phi, pointers, env, steps, threads)

    dist = outcome_distribution(decompose_ket(Phi, B), B, env.T)
    branch = int(np.argmax(dist.probabilities))
    expected = B.ket(branch)
    fid = _fidelity(joint.reshape(-1, d), expected)
    pure = dist.probabilities[branch] > 1 - 1e-9
    if pure and fid < fidelity_threshold:
        warnings.warn(
            f"branch fidelity {fid:.4f} below {fidelity_threshold}; T may be too short",
            AdiabaticityViolated,
            stacklevel=3,
        )
    tsv = TwoStateVector(B.bra(branch), B.ket(branch))
    weight = _grid_weight(joint, pointers)
    outcomes = []
    for j, (A, p) in enumerate(zip(observables, pointers)):
        q1, p1 = _pointer_means(joint, pointers, j)
        outcomes.append(
            MeasurementOutcome(
                kind=kind,
                pointer_shift_position=q1 - p.mean_position(),
                pointer_shift_momentum=p1 - p.mean_momentum(),
                branch=branch,
                fidelity=fid,
                error_norm=math.sqrt(max(0.0, 1.0 - fid)),
                weight=weight,
                expected_shift=weak_value(tsv, A),
            )
        )
    return joint, outcomes


def adiabatic_measure(
    H_eff,
    A,
    Phi,
    pointer: PointerState,
    env: Envelope,
    steps: int | None = None,
    *,
    threads: int = 1,
    fidelity_threshold: float = 0.99,
):
    """Weak, slow coupling ``g(t) P A`` on top of ``H_eff``.

    For every momentum sample the system is propagated through ``steps``
    piecewise-constant slices of ``H_eff + g P A``, with ``g`` taken as the
    exact slice average of the envelope.  ``steps`` defaults to the smallest
    count keeping ``|H_slice| dt <= 0.1``.

    Returns ``(joint, outcome)``; ``joint`` has shape ``(n_p, dim)`` and is not
    renormalized, so ``outcome.weight`` carries the post-selection weight.
    """
    joint, outcomes = _adiabatic(
        H_eff, [A], Phi, [pointer], env, steps, threads, fidelity_threshold, "adiabatic"
    )
    return joint, outcomes[0]


def simultaneous_adiabatic(
    H_eff,
    observables,
    Phi,
    pointers,
    env: Envelope,
    steps: int | None = None,
    *,
    threads: int = 1,
    fidelity_threshold: float = 0.99,
):
    """Couple several pointers at once through ``g(t) (P_1 A_1 + P_2 A_2 + ...)``.

    The joint grid is the product of the pointer grids (at most three pointers
    and :data:`MAX_GRID_POINTS` points).
    """
    if isinstance(pointers, PointerState):
        pointers = [pointers] * len(observables)
    return _adiabatic(
        H_eff,
        list(observables),
        Phi,
        list(pointers),
        env,
        steps,
        threads,
        fidelity_threshold,
        "simultaneous",
    )


@dataclass(frozen=True)
class ConvergenceRow:
    T: float
    shift_q: float
    shift_p: float
    error_norm: float
    fidelity: float
    expected: complex

    @property
    def deviation(self) -> float:
        return abs(self.shift_q - self.expected.real)


def adiabatic_convergence_study(
    H_eff,
    A,
    Phi,
    T_list,
    pointer: PointerState | None = None,
    ramp: float = 0.1,
    *,
    threads: int = 1,
) -> list[ConvergenceRow]:
    """Run :func:`adiabatic_measure` for each duration in ``T_list``."""
    T_list = [float(T) for T in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be strictly increasing")
    pointer = pointer or gaussian_pointer()
    rows = []
    for T in T_list:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AdiabaticityViolated)
            _, out = adiabatic_measure(H_eff, A, Phi, pointer, Envelope(T, ramp), threads=threads)
        rows.append(
            ConvergenceRow(
                T=T,
                shift_q=out.pointer_shift_position,
                shift_p=out.pointer_shift_momentum,
                error_norm=out.error_norm,
                fidelity=out.fidelity,
                expected=out.expected_shift,
            )
        )
    return rows


def write_convergence_csv(rows: list[ConvergenceRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["T", "shift_Q", "shift_P", "error_norm", "fidelity"])
        for r in rows:
            writer.writerow(
                [format_float(v) for v in (r.T, r.shift_q, r.shift_p, r.error_norm, r.fidelity)]
            )


def branch_overlaps(pointer: PointerState, shifts) -> np.ndarray:
    """``|<pointer shifted by a_i | pointer shifted by a_j>|`` for complex shifts.

    Measures how far the decohered outcome weights are from exact: the cross
    terms between branches are proportional to these overlaps.
    """
    shifts = np.asarray(shifts, dtype=complex)
    states = pointer.amplitudes[None, :] * np.exp(-1j * np.outer(shifts, pointer.momenta))
    states /= np.sqrt(np.sum(np.abs(states) ** 2, axis=1) * pointer.dp)[:, None]
    return np.abs(states.conj() @ states.T) * pointer.dp


@dataclass(frozen=True)
class Reading:
    probability: float
    state: np.ndarray
    purity: float


def collapse_on_reading(joint, pointer: PointerState, center: float, halfwidth: float) -> Reading:
    """Condition a single-pointer joint state on ``|Q - center| <= halfwidth``.

    Returns the fraction of the joint weight inside the window, the dominant
    eigenvector of the conditional system density matrix (unit norm) and that
    matrix's purity.
    """
    joint = np.asarray(joint, dtype=complex)
    psi_q = pointer.to_position(joint, axis=0)
    mask = np.abs(pointer.positions - center) <= halfwidth
    sel = psi_q[mask]
    rho = sel.T @ sel.conj()
    total = float(np.sum(np.abs(psi_q) ** 2))
    tr = float(np.real(np.trace(rho)))
    if tr == 0:
        raise ValueError("no pointer weight inside the reading window")
    w, v = np.linalg.eigh(rho)
    state = v[:, -1]
    k = int(np.argmax(np.abs(state)))
    state = state * (np.conj(state[k]) / abs(state[k]))
    purity = float(np.real(np.trace(rho @ rho))) / tr**2
    return Reading(probability=tr / total, state=state, purity=purity)


def pointer_profile(joint, pointer: PointerState, path) -> None:
    """CSV of the pointer marginal in position and momentum representation.

    Columns: ``Q, prob_Q, re_Q, im_Q, P, prob_P, re_P, im_P``.  The amplitude
    columns hold the component of the joint state along the system direction
    carrying the most weight; the probability columns are full marginals.
    """
    joint = np.asarray(joint, dtype=complex)
    psi_q = pointer.to_position(joint, axis=0)
    rho = joint.T @ joint.conj()
    w, v = np.linalg.eigh(rho)
    e = v[:, -1]
    amp_p = joint @ e.conj()
    amp_q = psi_q @ e.conj()
    prob_q = np.sum(np.abs(psi_q) ** 2, axis=1)
    prob_p = np.sum(np.abs(joint) ** 2, axis=1)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Q", "prob_Q", "re_Q", "im_Q", "P", "prob_P", "re_P", "im_P"])
        for row in zip(
            pointer.positions, prob_q, amp_q.real, amp_q.imag,
            pointer.momenta, prob_p, amp_p.real, amp_p.imag,
        ):
            writer.writerow([format_float(x) for x in row])
