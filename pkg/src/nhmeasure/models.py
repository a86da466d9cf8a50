"""Concrete systems: collective spins, the pre/post-selected spin model, Kaon-like pairs.

Spin-1/2 states use a fixed phase convention: the first non-zero component
in the ``sigma_z`` basis is real and positive.  With it,

    |up_x>   = (1, 1)/sqrt2     |down_x> = (1, -1)/sqrt2
    |up_y>   = (1, i)/sqrt2     |down_y> = (1, -i)/sqrt2

Large-spin states ``|S_n = N>`` follow the same rule in the ``S_z`` basis
ordered ``m = N, N-1, ..., -N``.

The spin model couples a spin-1/2 to a spin ``N`` through ``lam * S.sigma``;
the spin ``N`` is prepared in ``|S_x = N>`` and post-selected in
``<S_y = N|``.  Full-space operators act on ``large (x) small`` with the
small spin as the fast index.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import DegenerateSpectrum, InvalidSpin, PrecisionWarning, RegimeWarning, SectorMismatch
from .propagate import expm_batch
from .spectral import BiorthogonalSystem, decompose
from .twostate import TwoStateVector, weak_value

__all__ = [
    "PAULI",
    "pauli",
    "spin_operators",
    "spin_half_state",
    "top_state",
    "coherent_state",
    "SpinModel",
    "build_spin_model",
    "regime_messages",
    "effective_hamiltonian",
    "spin_weak_values",
    "exact_transition_probability",
    "AdiabaticCheck",
    "exact_adiabatic_check",
    "spin_pointer_shift",
    "effective_discrepancy",
    "ScalingStudy",
    "loglog_slope",
    "transition_scaling_study",
    "error_scaling_study",
    "KaonModel",
    "build_kaon_like",
    "KaonScaling",
    "kaon_scaling",
]

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(axis) -> np.ndarray:
    """``sigma . n`` for an axis label or a 3-vector ``n``."""
    if isinstance(axis, str):
        return PAULI[axis].copy()
    n = np.asarray(axis, dtype=complex)
    return n[0] * PAULI["x"] + n[1] * PAULI["y"] + n[2] * PAULI["z"]


def _spin_quantum_number(N) -> float:
    try:
        twoN = 2 * float(N)
    except (TypeError, ValueError):
        raise InvalidSpin(f"spin {N!r} is not a number") from None
    k = round(twoN)
    if k < 1 or abs(twoN - k) > 1e-12:
        raise InvalidSpin(f"2N must be a positive integer, got N = {N!r}")
    return k / 2


def spin_operators(N):
    """``(S_x, S_y, S_z)`` of the spin-``N`` irrep, ``m`` ordered ``N .. -N``."""
    N = _spin_quantum_number(N)
    m = np.arange(N, -N - 1, -1.0)
    raise_ = np.diag(np.sqrt(N * (N + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    lower = raise_.conj().T
    Sx = 0.5 * (raise_ + lower)
    Sy = -0.5j * (raise_ - lower)
    Sz = np.diag(m).astype(complex)
    return Sx, Sy, Sz


def _fix_first_phase(v: np.ndarray) -> np.ndarray:
    mag = np.abs(v)
    k = int(np.flatnonzero(mag > 1e-12 * mag.max())[0])
    return v * (np.conj(v[k]) / mag[k])


def top_state(op) -> np.ndarray:
    """Eigenvector of the largest eigenvalue of a hermitian ``op``."""
    w, v = np.linalg.eigh(op)
    return _fix_first_phase(v[:, -1])


def coherent_state(N, theta: float, phi: float) -> np.ndarray:
    """``|S_n = N>`` for the direction with polar angle ``theta`` and azimuth ``phi``.

    Built from the binomial amplitudes
    ``sqrt(C(2N, k)) cos(theta/2)^(2N-k) sin(theta/2)^k exp(i k phi)`` with
    ``m = N - k``, so every component keeps full relative precision.  This
    matters because overlaps between such states shrink like ``2^-N``.
    """
    N = _spin_quantum_number(N)
    twoN = int(round(2 * N))
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    k = np.arange(twoN + 1)
    binom = np.array([math.sqrt(math.comb(twoN, j)) for j in k])
    v = binom * c ** (twoN - k) * s**k * np.exp(1j * phi * k)
    return _fix_first_phase(v.astype(complex))


def spin_half_state(axis, sign: int = 1) -> np.ndarray:
    """``|up_n>`` (``sign=+1``) or ``|down_n>`` (``sign=-1``)."""
    op = pauli(axis)
    return top_state(op if sign > 0 else -op)


@dataclass(frozen=True)
class SpinModel:
    N: float
    lam: float
    S: tuple  # large-spin operators on the (2N+1)-dim space
    S_full: tuple
    sigma_full: tuple
    H0: np.ndarray
    pre: np.ndarray  # |S_x = N>
    post: np.ndarray  # |S_y = N> as a ket; the post-selection bra is its conjugate
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim_large(self) -> int:
        return self.pre.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.dim_large

    def two_state(self) -> TwoStateVector:
        return TwoStateVector.from_kets(self.post, self.pre)

    def post_select(self, psi) -> np.ndarray:
        """Small-spin amplitude ``(<S_y=N| x 1) psi``."""
        return self.post.conj() @ np.asarray(psi).reshape(self.dim_large, 2)

    def eigh(self):
        if "eigh" not in self._cache:
            self._cache["eigh"] = np.linalg.eigh(self.H0)
        return self._cache["eigh"]

    def evolve(self, psi, t):
        w, V = self.eigh()
        return V @ (np.exp(-1j * w * t) * (V.conj().T @ psi))


# relative error allowed for quantities divided by <S_y=N|S_x=N> ~ 2^-N
_POSTSELECT_RTOL = 1e-6


def _check_postselect_precision(N) -> None:
    """Warn when double-precision post-selection on ``<S_y=N|`` is unreliable.

    The post-selected amplitude is ``~2^-N`` while rounding errors of the
    exact evolution are ``~eps``, so the relative error grows like
    ``2^N eps``; this passes ``1e-6`` just above ``N = 32``.
    """
    if 2.0 ** float(N) * np.finfo(float).eps > _POSTSELECT_RTOL:
        warnings.warn(
            f"N = {N:g}: exact post-selected amplitudes keep only about "
            f"{-math.log10(2.0 ** float(N) * np.finfo(float).eps):.0f} digits in double precision",
            PrecisionWarning,
            stacklevel=3,
        )


def regime_messages(N, lam) -> list[str]:
    msgs = []
    if lam >= 1:
        msgs.append(f"lambda = {lam:g} is not small (expected lambda << 1)")
    if lam * N <= 1:
        msgs.append(f"lambda*N = {lam * N:g} is not large (expected lambda*N >> 1)")
    return msgs


def build_spin_model(N, lam: float, warn: bool = True) -> SpinModel:
    N = _spin_quantum_number(N)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if warn:
        for msg in regime_messages(N, lam):
            warnings.warn(msg, RegimeWarning, stacklevel=2)
    S = spin_operators(N)
    d = S[0].shape[0]
    I_large, I_small = np.eye(d), np.eye(2)
    S_full = tuple(np.kron(s, I_small) for s in S)
    sigma_full = tuple(np.kron(I_large, PAULI[a]) for a in "xyz")
    H0 = lam * sum(np.kron(s, PAULI[a]) for s, a in zip(S, "xyz"))
    return SpinModel(
        N=N,
        lam=float(lam),
        S=S,
        S_full=S_full,
        sigma_full=sigma_full,
        H0=H0,
        pre=coherent_state(N, math.pi / 2, 0.0),
        post=coherent_state(N, math.pi / 2, math.pi / 2),
    )


def spin_weak_values(model: SpinModel) -> np.ndarray:
    """Weak value of ``(S_x, S_y, S_z)`` between ``<S_y=N|`` and ``|S_x=N>``.

    ``|<S_y=N|S_x=N>| = 2^-N``, so in double precision the ratio loses about
    ``0.3 N`` digits.  The sums are therefore carried out with mpmath at a
    working precision that grows with ``N``; the result is rounded to complex
    doubles at the end.
    """
    twoN = int(round(2 * model.N))
    with mpmath.workdps(25 + int(math.ceil(0.31 * model.N))):
        N = mpmath.mpf(twoN) / 2
        scale = mpmath.mpf(2) ** (-N)
        amp = [mpmath.sqrt(math.comb(twoN, k)) * scale for k in range(twoN + 1)]
        pre = amp
        post = [a * mpmath.expj(k * mpmath.pi / 2) for k, a in enumerate(amp)]
        m = [N - k for k in range(twoN + 1)]
        # index k holds m = N - k: S+ moves k -> k-1, S- moves k -> k+1
        s_plus = [mpmath.mpc(0)] * (twoN + 1)
        s_minus = [mpmath.mpc(0)] * (twoN + 1)
        for k in range(twoN + 1):
            if k > 0:
                s_plus[k - 1] += mpmath.sqrt(N * (N + 1) - m[k] * (m[k] + 1)) * pre[k]
            if k < twoN:
                s_minus[k + 1] += mpmath.sqrt(N * (N + 1) - m[k] * (m[k] - 1)) * pre[k]
        sx = [(a + b) / 2 for a, b in zip(s_plus, s_minus)]
        sy = [(a - b) / mpmath.mpc(0, 2) for a, b in zip(s_plus, s_minus)]
        sz = [mk * p for mk, p in zip(m, pre)]

        def braket(vec):
            return mpmath.fsum(mpmath.conj(b) * v for b, v in zip(post, vec))

        overlap = braket(pre)
        return np.array([complex(braket(v) / overlap) for v in (sx, sy, sz)])


def effective_hamiltonian(model: SpinModel) -> np.ndarray:
    """``lam * S_w . sigma`` on the small spin."""
    Sw = spin_weak_values(model)
    return model.lam * sum(s * PAULI[a] for s, a in zip(Sw, "xyz"))


def exact_transition_probability(N, lam: float, t: float, T: float | None = None) -> float:
    """Probability of finding the small spin in ``|up_y>`` at time ``t``.

    The spins start in ``|S_x=N>|down_y>`` and evolve under ``lam S.sigma``;
    the large spin is post-selected in ``<S_y=N|`` at ``T`` (default ``2t``)
    while the small spin is left unobserved.  The probability of the
    intermediate outcome follows the rule for pre- and post-selected
    ensembles,

        p(k) ~ sum_f |<S_y=N, f| U(T, t) Pi_k U(t, 0) |in>|^2 .

    With ``T == t`` the result is identically zero: ``<S_y=N, up_y|`` is an
    exact eigenbra of ``lam S.sigma``.
    """
    if T is None:
        T = 2.0 * t
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")
    model = build_spin_model(N, lam, warn=False)
    _check_postselect_precision(model.N)
    d = model.dim_large
    psi_t = model.evolve(np.kron(model.pre, spin_half_state("y", -1)), t)
    weights = []
    for sign in (+1, -1):
        s = spin_half_state("y", sign)
        projected = (psi_t.reshape(d, 2) @ s.conj())[:, None] * s[None, :]
        final = model.evolve(projected.ravel(), T - t)
        amp = model.post_select(final)
        weights.append(float(np.vdot(amp, amp).real))
    total = weights[0] + weights[1]
    return weights[0] / total if total > 0 else 0.0


def _jx_sector_basis(model: SpinModel, sectors) -> np.ndarray:
    """Columns ``|m_x> (x) |s_x>`` with ``m + s/2`` in ``sectors``."""
    N = model.N
    w, V = np.linalg.eigh(model.S[0])
    m_values = np.round(w * 2) / 2
    up_x, dn_x = spin_half_state("x", 1), spin_half_state("x", -1)
    cols = []
    for J in sectors:
        for m, small in ((J - 0.5, up_x), (J + 0.5, dn_x)):
            if abs(m) <= N + 1e-9:
                k = int(np.flatnonzero(np.abs(m_values - m) < 1e-6)[0])
                cols.append(np.kron(V[:, k], small))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class AdiabaticCheck:
    """Post-selected small-spin state after the exact measurement interaction.

    Amplitudes are divided by ``<S_y=N|S_x=N>`` so that the effective
    description predicts ``|target| = 1`` and zero error terms.
    """

    N: float
    P: float
    state: np.ndarray
    target: complex
    wrong: complex
    flip: complex

    @property
    def wrong_norm(self) -> float:
        return abs(self.wrong)

    @property
    def flip_norm(self) -> float:
        return abs(self.flip)

    @property
    def error_norm(self) -> float:
        return math.hypot(abs(self.wrong), abs(self.flip))


def exact_adiabatic_check(
    N,
    lam: float,
    T: float,
    P: float,
    steps: int | None = None,
    *,
    sector: bool = True,
    cross_check: bool | None = None,
    ramp: float | None = None,
) -> AdiabaticCheck:
    """Exact run of ``lam S.sigma + g(t) P sigma_x`` for a momentum eigenstate ``P``.

    By default the coupling is the constant ``P/T`` on ``[0, T]`` and the
    evolution is exact.  With ``ramp`` set, ``g`` follows the ``sin^2``
    envelope of :class:`nhmeasure.measure.Envelope` sliced into ``steps``
    pieces.

    The post-selected small-spin state is split by the eigenvalue cluster of
    the final Hamiltonian it came from.  The cluster containing ``+lam N`` is
    the branch whose pointer moves the wrong way; the cluster near
    ``-lam (N+1)`` carries the expected ``|down_y>`` outcome.  Returned
    amplitudes: ``target`` (``|down_y>`` in the expected cluster), ``wrong``
    (``|down_y>`` in the other cluster) and ``flip`` (total ``|up_y>``).

    ``sector=True`` restricts the dynamics to ``J_x = S_x + sigma_x/2`` in
    ``{N+1/2, N-1/2, N-3/2}``, which ``J_x`` conservation makes exact;
    ``cross_check`` (default: on for ``N <= 8``) repeats the run in the full
    space and raises :class:`SectorMismatch` on disagreement beyond 1e-8.
    """
    model = build_spin_model(N, lam, warn=False)
    _check_postselect_precision(model.N)
    if cross_check is None:
        cross_check = sector and model.N <= 8
    chi_up, chi_lo = _adiabatic_branches(model, T, P, steps, sector, ramp)
    if cross_check:
        full_up, full_lo = _adiabatic_branches(model, T, P, steps, False, ramp)
        diff = max(np.max(np.abs(full_up - chi_up)), np.max(np.abs(full_lo - chi_lo)))
        if diff > 1e-8:
            raise SectorMismatch(f"restricted and full-space runs differ by {diff:.3g}")
    up_y, dn_y = spin_half_state("y", 1), spin_half_state("y", -1)
    state = chi_up + chi_lo
    return AdiabaticCheck(
        N=model.N,
        P=float(P),
        state=state,
        target=complex(np.vdot(dn_y, chi_lo)),
        wrong=complex(np.vdot(dn_y, chi_up)),
        flip=complex(np.vdot(up_y, state)),
    )


def _adiabatic_branches(model: SpinModel, T, P, steps, sector, ramp):
    from .measure import Envelope

    psi0 = np.kron(model.pre, spin_half_state("y", -1))
    H0 = model.H0
    A = model.sigma_full[0]
    if sector:
        Bs = _jx_sector_basis(model, (model.N + 0.5, model.N - 0.5, model.N - 1.5))
        H0s, As = Bs.conj().T @ H0 @ Bs, Bs.conj().T @ A @ Bs
        scale = max(1.0, np.linalg.norm(H0, 2))
        if np.linalg.norm(H0 @ Bs - Bs @ H0s) > 1e-10 * scale or np.linalg.norm(A @ Bs - Bs @ As) > 1e-10:
            raise SectorMismatch("J_x sectors are not invariant")
        c0 = Bs.conj().T @ psi0
        if np.linalg.norm(Bs @ c0 - psi0) > 1e-10:
            raise SectorMismatch("initial state leaves the J_x sectors")
        H0, A, psi0 = H0s, As, c0
    else:
        Bs = None

    if ramp is None:
        H_final = H0 + (P / T) * A
        w, V = np.linalg.eigh(H_final)
        c = np.exp(-1j * w * T) * (V.conj().T @ psi0)
    else:
        env = Envelope(T, ramp)
        if steps is None:
            rate = np.linalg.norm(H0, 2) + env.plateau * abs(P) * np.linalg.norm(A, 2)
            steps = max(1, int(math.ceil(T * rate / 0.1)))
        dt = T / steps
        gs = env.slice_averages(steps)
        Us = expm_batch(-1j * dt * (H0[None] + (gs * P)[:, None, None] * A[None]))
        psi = psi0
        for U in Us:
            psi = U @ psi
        w, V = np.linalg.eigh(H0)
        c = V.conj().T @ psi

    upper = w > -model.lam / 2
    psi_up = V[:, upper] @ c[upper]
    psi_lo = V[:, ~upper] @ c[~upper]
    if Bs is not None:
        psi_up, psi_lo = Bs @ psi_up, Bs @ psi_lo
    ov = model.post.conj() @ model.pre
    return model.post_select(psi_up) / ov, model.post_select(psi_lo) / ov


def spin_pointer_shift(N, lam: float, T: float, momenta, **kwargs) -> float:
    """Pointer displacement read off the phase of the target amplitude.

    The target amplitude behaves as ``exp(-i P a)`` times a ``P``-independent
    factor; ``a`` is estimated by a least-squares fit of the unwrapped phase
    over ``momenta``.
    """
    momenta = np.asarray(momenta, dtype=float)
    amps = np.array([exact_adiabatic_check(N, lam, T, p, **kwargs).target for p in momenta])
    ref = amps[np.argmin(np.abs(momenta))]
    phase = np.unwrap(np.angle(amps / ref))
    slope = np.polyfit(momenta, phase, 1)[0]
    return float(-slope)


def effective_discrepancy(N, lam: float, t: float, initial=None) -> float:
    """Distance between exact post-selected and effective small-spin evolution.

    Both are normalized so that they coincide at ``t = 0``; ``initial``
    defaults to ``|down_y>``.
    """
    from .propagate import expm

    model = build_spin_model(N, lam, warn=False)
    _check_postselect_precision(model.N)
    s = spin_half_state("y", -1) if initial is None else np.asarray(initial, dtype=complex)
    exact = model.post_select(model.evolve(np.kron(model.pre, s), t))
    exact = exact / (model.post.conj() @ model.pre)
    predicted = expm(-1j * t * effective_hamiltonian(model)) @ s
    return float(np.linalg.norm(exact - predicted))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass(frozen=True)
class ScalingStudy:
    quantity: str
    columns: tuple
    rows: list
    slope: float


def transition_scaling_study(N_list, lamN: float = 1.0, t_scaled: float = 0.25,
                             T_scaled: float = 0.5) -> ScalingStudy:
    """Transition probability at fixed ``lam N``, ``lam N t`` and ``lam N T``."""
    rows = []
    for N in N_list:
        lam = lamN / N
        p = exact_transition_probability(N, lam, t_scaled / lamN, T_scaled / lamN)
        rows.append((float(N), lam, t_scaled / lamN, T_scaled / lamN, p))
    slope = loglog_slope([r[0] for r in rows], [r[-1] for r in rows])
    return ScalingStudy("transition_probability", ("N", "lambda", "t", "T", "probability"), rows, slope)


def error_scaling_study(N_list, lamN: float = 1.0, T_scaled: float = 1000.0,
                        P: float = 1.0, ramp: float | None = None) -> ScalingStudy:
    """Error-term norm of :func:`exact_adiabatic_check` at fixed ``lam N`` and ``lam N T``."""
    rows = []
    for N in N_list:
        lam = lamN / N
        chk = exact_adiabatic_check(N, lam, T_scaled / lamN, P, ramp=ramp)
        rows.append((float(N), lam, T_scaled / lamN, float(P), chk.wrong_norm, chk.flip_norm, chk.error_norm))
    slope = loglog_slope([r[0] for r in rows], [r[-1] for r in rows])
    return ScalingStudy(
        "error_norm", ("N", "lambda", "T", "P", "wrong_norm", "flip_norm", "error_norm"), rows, slope
    )


@dataclass(frozen=True)
class KaonModel:
    """Two-level effective Hamiltonian with CP-violation parameter ``epsilon``.

    ``K_L``/``K_S`` are unit eigenkets; ``K_L_bra``/``K_S_bra`` the eigenbras
    rescaled to unit norm, with phases making ``<K'|K>`` real and positive.
    """

    epsilon: complex
    omega_L: complex
    omega_S: complex
    H: np.ndarray
    system: BiorthogonalSystem
    K_L: np.ndarray
    K_S: np.ndarray
    K_L_bra: np.ndarray
    K_S_bra: np.ndarray

    @property
    def ket_overlap(self) -> complex:
        """``<K_S|K_L>``."""
        return complex(np.vdot(self.K_S, self.K_L))

    @property
    def left_right_overlap(self) -> complex:
        """``<K_L'|K_L>`` with a unit-norm bra."""
        return complex(self.K_L_bra @ self.K_L)


def build_kaon_like(epsilon, omega_L, omega_S) -> KaonModel:
    """Kets ``(1, -+ r) / norm`` with ``r = (1 - eps) / (1 + eps)``; ``H`` rebuilt from them."""
    eps = complex(epsilon)
    omega_L, omega_S = complex(omega_L), complex(omega_S)
    if abs(1 + eps) < 1e-12:
        raise DegenerateSpectrum("epsilon = -1 makes the kets undefined")
    if omega_L.imag > 0 or omega_S.imag > 0:
        warnings.warn("eigenvalues with positive imaginary part describe growing states",
                      RegimeWarning, stacklevel=2)
    r = (1 - eps) / (1 + eps)
    K_L = np.array([1, -r]) / math.sqrt(1 + abs(r) ** 2)
    K_S = np.array([1, r]) / math.sqrt(1 + abs(r) ** 2)
    R = np.stack([K_L, K_S], axis=1)
    if abs(np.linalg.det(R)) < 1e-12:
        raise DegenerateSpectrum("K_L and K_S are parallel")
    if abs(omega_L - omega_S) < 1e-12 * max(1.0, abs(omega_L)):
        raise DegenerateSpectrum("omega_L equals omega_S")
    bras = np.linalg.inv(R)
    H = R @ np.diag([omega_L, omega_S]) @ bras
    system = decompose(H)
    bra_L = bras[0] / np.linalg.norm(bras[0])
    bra_S = bras[1] / np.linalg.norm(bras[1])
    bra_L = bra_L * (abs(bra_L @ K_L) / (bra_L @ K_L))
    bra_S = bra_S * (abs(bra_S @ K_S) / (bra_S @ K_S))
    return KaonModel(eps, omega_L, omega_S, H, system, K_L, K_S, bra_L, bra_S)


@dataclass(frozen=True)
class KaonScaling:
    rows: list  # (|epsilon|, |<K_S|K_L>|, |1 - <K_L'|K_L>|)
    ket_slope: float
    left_right_slope: float


def kaon_scaling(eps_list, omega_L=1.0 - 0.005j, omega_S=0.5 - 0.5j) -> KaonScaling:
    """Fit the power laws of both overlaps across ``eps_list``."""
    rows = []
    for eps in eps_list:
        km = build_kaon_like(eps, omega_L, omega_S)
        rows.append((abs(complex(eps)), abs(km.ket_overlap), abs(1 - km.left_right_overlap)))
    eps_abs = [r[0] for r in rows]
    return KaonScaling(
        rows=rows,
        ket_slope=loglog_slope(eps_abs, [r[1] for r in rows]),
        left_right_slope=loglog_slope(eps_abs, [r[2] for r in rows]),
    )
