"""Non-norm-preserving time evolution and outcome statistics.

Evolution under an effective Hamiltonian ``H`` is computed either from the
biorthogonal decomposition, ``Phi(t) = sum_i alpha_i exp(-i w_i t) phi_i``,
or from a dense matrix exponential.  The exponential here is a plain
scaling-and-squaring Taylor scheme, written so that it shares nothing with
the eigensolver and can serve as an independent cross-check.

Random draws use numpy's PCG64 bit generator seeded with a single integer;
branches are drawn by inverse CDF over the sorted branch order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllWeightsZero, DegenerateSpectrum, DimensionMismatch
from .spectral import BiorthogonalSystem, as_operator, decompose
from .twostate import as_state

__all__ = [
    "expm",
    "expm_batch",
    "decompose_ket",
    "decompose_bra",
    "EvolutionResult",
    "evolve",
    "OutcomeDistribution",
    "outcome_distribution",
    "sample_collapse",
    "sample_collapses",
    "RNG_NAME",
    "format_float",
]

RNG_NAME = "numpy.random.PCG64"

_TAYLOR_ORDER = 10
_SCALE_TARGET = 0.125


def format_float(x: float) -> str:
    """17-significant-digit rendering used in every CSV the package writes."""
    return format(float(x), ".17g")


def expm_batch(X) -> np.ndarray:
    """Matrix exponential of each matrix in a ``(..., d, d)`` stack.

    Each matrix is scaled by its own power of two until its 1-norm is at
    most 1/8, expanded in a degree-10 Taylor polynomial (truncation error
    below 3e-18 relative), then squared back.  Because the scaling is chosen
    per matrix, the result for one matrix does not depend on what else is in
    the batch.
    """
    X = np.asarray(X, dtype=complex)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise ValueError(f"expected a stack of square matrices, got shape {X.shape}")
    shape = X.shape
    d = shape[-1]
    Xf = X.reshape(-1, d, d)
    norm1 = np.max(np.sum(np.abs(Xf), axis=-2), axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norm1, 1e-300) / _SCALE_TARGET))
    s = np.maximum(s, 0).astype(int)
    Y = Xf / (2.0 ** s)[:, None, None]

    eye = np.eye(d, dtype=complex)
    E = np.broadcast_to(eye, Y.shape).copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        E = eye + (Y @ E) / k

    for level in range(int(s.max(initial=0))):
        idx = np.flatnonzero(s > level)
        E[idx] = E[idx] @ E[idx]
    return E.reshape(shape)


def expm(X) -> np.ndarray:
    """Matrix exponential of a single square matrix (see :func:`expm_batch`)."""
    X = as_operator(X, "X")
    return expm_batch(X[None])[0]


# coefficients below this many rounding units of the inner product are set to zero
_ROUNDING_UNITS = 8


def _drop_rounding_noise(coef, rows, vec, norms):
    floor = _ROUNDING_UNITS * np.finfo(float).eps * np.linalg.norm(rows, axis=1) * np.linalg.norm(vec)
    return np.where(np.abs(coef) <= floor / np.abs(norms), 0.0, coef)


def decompose_ket(Phi, B: BiorthogonalSystem) -> np.ndarray:
    """Coefficients ``alpha_i = <psi_i|Phi> / <psi_i|phi_i>`` of a ket.

    Coefficients at the rounding level of the inner product are returned as
    exact zeros.  Otherwise the rounding residue of an eigenket input would
    be amplified by ``exp(2 Im(w) T)`` in the outcome weights.
    """
    Phi = as_state(Phi, "Phi")
    if Phi.shape[0] != B.dim:
        raise DimensionMismatch(f"state has {Phi.shape[0]} components, system has {B.dim}")
    norms = np.einsum("ij,ji->i", B.bras, B.kets)
    return _drop_rounding_noise((B.bras @ Phi) / norms, B.bras, Phi, norms)


def decompose_bra(Psi, B: BiorthogonalSystem) -> np.ndarray:
    """Coefficients ``beta_i`` with ``<Psi| = sum_i beta_i <psi_i|``.

    ``Psi`` is given as a ket; the bra is its conjugate.
    """
    Psi = as_state(Psi, "Psi")
    if Psi.shape[0] != B.dim:
        raise DimensionMismatch(f"state has {Psi.shape[0]} components, system has {B.dim}")
    norms = np.einsum("ij,ji->i", B.bras, B.kets)
    return _drop_rounding_noise((Psi.conj() @ B.kets) / norms, B.kets.T, Psi, norms)


@dataclass(frozen=True)
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray  # (samples, dim), unnormalized
    norms: np.ndarray  # squared norms N(t)

    def to_csv(self, path) -> None:
        dim = self.states.shape[1]
        header = ["t"]
        for k in range(dim):
            header += [f"re_{k}", f"im_{k}"]
        header.append("norm")
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for t, psi, n in zip(self.times, self.states, self.norms):
                row = [format_float(t)]
                for z in psi:
                    row += [format_float(z.real), format_float(z.imag)]
                row.append(format_float(n))
                writer.writerow(row)


def evolve(Phi, H, t: float, samples: int = 2, method: str = "auto") -> EvolutionResult:
    """Evolve ``Phi`` under ``exp(-i H t)`` and record the squared norm.

    Parameters
    ----------
    Phi : array_like
        Initial ket (need not be normalized).
    H : array_like
        Effective Hamiltonian.
    t : float
        Final time, ``t >= 0``.
    samples : int
        Number of uniformly spaced times in ``[0, t]``.
    method : {"auto", "spectral", "expm"}
        ``"spectral"`` uses the eigenket expansion and fails on degenerate
        spectra; ``"expm"`` uses the dense exponential; ``"auto"`` tries the
        spectral route and falls back to ``"expm"``.
    """
    H = as_operator(H, "H")
    Phi = as_state(Phi, "Phi")
    if Phi.shape[0] != H.shape[0]:
        raise DimensionMismatch(f"state has {Phi.shape[0]} components, H has {H.shape[0]}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if samples < 1:
        raise ValueError("samples must be positive")
    if method not in ("auto", "spectral", "expm"):
        raise ValueError(f"unknown method {method!r}")
    times = np.linspace(0.0, t, samples) if samples > 1 else np.array([float(t)])

    states = None
    if method in ("auto", "spectral"):
        try:
            B = decompose(H)
        except DegenerateSpectrum:
            if method == "spectral":
                raise
        else:
            alpha = decompose_ket(Phi, B)
            phases = np.exp(-1j * np.outer(times, B.eigenvalues))
            states = (phases * alpha) @ B.kets.T
    if states is None:
        U = expm_batch(-1j * times[:, None, None] * H[None])
        states = U @ Phi
    norms = np.sum(np.abs(states) ** 2, axis=1)
    return EvolutionResult(times, states, norms)


@dataclass(frozen=True)
class OutcomeDistribution:
    """Branch weights ``|alpha_i|^2 exp(2 Im(w_i) T)`` and their normalization.

    ``log_weights`` keep the weights meaningful when ``weights`` underflow.
    """

    branches: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    probabilities: np.ndarray

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    @property
    def log_total_weight(self) -> float:
        return float(np.logaddexp.reduce(self.log_weights))


def outcome_distribution(alpha, B: BiorthogonalSystem, T: float) -> OutcomeDistribution:
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (B.dim,):
        raise DimensionMismatch(f"expected {B.dim} coefficients, got shape {alpha.shape}")
    if T < 0:
        raise ValueError("T must be non-negative")
    mag = np.abs(alpha)
    with np.errstate(divide="ignore"):
        logw = 2.0 * np.log(mag) + 2.0 * B.eigenvalues.imag * T
    if not np.any(np.isfinite(logw)):
        raise AllWeightsZero("every branch has zero amplitude")
    top = np.max(logw)
    rel = np.exp(logw - top)
    p = rel / rel.sum()
    # direct product is exact whenever it does not underflow
    if np.all(2.0 * B.eigenvalues.imag * T >= -700.0):
        w = mag**2 * np.exp(2.0 * B.eigenvalues.imag * T)
    else:
        w = np.exp(logw)
    return OutcomeDistribution(np.arange(B.dim), w, logw, p)


def sample_collapses(dist: OutcomeDistribution, seed: int, size: int) -> np.ndarray:
    """``size`` independent branch draws from a PCG64 stream seeded by ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cdf = np.cumsum(dist.probabilities)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def sample_collapse(dist: OutcomeDistribution, seed: int) -> int:
    return int(sample_collapses(dist, seed, 1)[0])
