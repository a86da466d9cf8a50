"""Biorthogonal eigendecomposition of non-Hermitian operators.

A diagonalizable operator ``H`` with non-degenerate eigenvalues ``w_i`` has
right eigenvectors (kets) ``H phi_i = w_i phi_i`` and left eigenvectors
(bras) ``psi_i^T H = w_i psi_i^T``.  Kets belonging to different
eigenvalues are in general not orthogonal, but bras and kets are mutually
orthogonal, ``<psi_i|phi_j> = 0`` for ``i != j``.

Conventions used throughout the package:

* ``kets[:, i]`` is ``|phi_i>``, with unit Euclidean norm and its largest
  component made real and positive.
* ``bras[i, :]`` is the covector ``<psi_i|``, i.e. ``<psi_i|x> = bras[i] @ x``,
  scaled so that ``<psi_i|phi_i> = 1``.
* eigenvalues are sorted by real part, then imaginary part, descending.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrum, IndexOutOfRange, NonFinite

__all__ = [
    "BiorthogonalSystem",
    "PerturbationResult",
    "as_operator",
    "default_tol",
    "decompose",
    "reconstruct",
    "biorthogonality_residual",
    "perturbed_eigenvalue",
    "is_hermitian",
]


def as_operator(H, name: str = "operator") -> np.ndarray:
    """Return ``H`` as a finite, square, complex 2-D array."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise NonFinite(f"{name} contains NaN or Inf entries")
    return H


def is_hermitian(A, atol: float = 1e-12) -> bool:
    A = np.asarray(A, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    return bool(np.max(np.abs(A - A.conj().T), initial=0.0) <= atol * scale)


def default_tol(H) -> float:
    """Degeneracy threshold: ``1e-8`` times the spectral norm of ``H``."""
    return 1e-8 * float(np.linalg.norm(H, 2))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BiorthogonalSystem:
    """Matched eigenvalues, eigenkets and eigenbras of an operator."""

    eigenvalues: np.ndarray
    kets: np.ndarray
    bras: np.ndarray
    degenerate: bool = False
    tol: float = field(default=0.0, compare=False)

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=complex)
        R = np.asarray(self.kets, dtype=complex)
        L = np.asarray(self.bras, dtype=complex)
        n = w.shape[0]
        if R.shape != (n, n) or L.shape != (n, n):
            raise ValueError(
                f"inconsistent shapes: {n} eigenvalues, kets {R.shape}, bras {L.shape}"
            )
        object.__setattr__(self, "eigenvalues", _frozen(w))
        object.__setattr__(self, "kets", _frozen(R))
        object.__setattr__(self, "bras", _frozen(L))

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def ket(self, i: int) -> np.ndarray:
        self._check_index(i)
        return self.kets[:, i]

    def bra(self, i: int) -> np.ndarray:
        self._check_index(i)
        return self.bras[i]

    def overlaps(self) -> np.ndarray:
        """Matrix of ``<psi_i|phi_j>``."""
        return self.bras @ self.kets

    def branch_of(self, omega: complex) -> int:
        """Index of the eigenvalue nearest to ``omega``."""
        return int(np.argmin(np.abs(self.eigenvalues - omega)))

    def _check_index(self, i) -> None:
        if not (isinstance(i, (int, np.integer)) and 0 <= i < self.dim):
            raise IndexOutOfRange(f"branch index {i!r} outside 0..{self.dim - 1}")


@dataclass(frozen=True)
class PerturbationResult:
    branch: int
    omega: complex
    shift: complex
    coupling: float
    mixing: dict[int, complex]

    @property
    def perturbed(self) -> complex:
        return self.omega + self.shift


def _sort_order(w: np.ndarray) -> np.ndarray:
    # lexsort uses the last key as primary
    return np.lexsort((-w.imag, -w.real))


def _fix_phase(v: np.ndarray) -> np.ndarray:
    mag = np.abs(v)
    # first index within rounding of the maximum, so ties resolve stably
    k = int(np.flatnonzero(mag >= mag.max() * (1 - 1e-9))[0])
    return v * (np.conj(v[k]) / mag[k])


def decompose(H, tol: float | None = None) -> BiorthogonalSystem:
    """Biorthogonal eigendecomposition of a non-degenerate operator.

    Parameters
    ----------
    H : array_like
        Square complex matrix.
    tol : float, optional
        Two eigenvalues closer than ``tol`` count as degenerate.  Defaults
        to :func:`default_tol`.

    Returns
    -------
    BiorthogonalSystem

    Raises
    ------
    DegenerateSpectrum
        If two eigenvalues lie within ``tol`` of each other, or left and
        right eigenvectors cannot be paired unambiguously.
    NonFinite
        If ``H`` has NaN or Inf entries.
    """
    H = as_operator(H, "H")
    n = H.shape[0]
    if tol is None:
        tol = default_tol(H)

    w, R = np.linalg.eig(H)
    if n > 1:
        gaps = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(n, np.inf))
        if gaps.min() <= tol:
            raise DegenerateSpectrum(
                f"eigenvalues closer than tol={tol:.3g} (min gap {gaps.min():.3g})"
            )
        half_gap = 0.5 * gaps.min()
    else:
        half_gap = np.inf

    # left eigenvectors: H^dagger v = conj(w) v  <=>  v^dagger H = w v^dagger
    mu, V = np.linalg.eig(H.conj().T)
    dist = np.abs(w[:, None] - np.conj(mu)[None, :])
    match = np.argmin(dist, axis=1)
    if len(set(match.tolist())) != n or np.any(dist[np.arange(n), match] >= half_gap):
        raise DegenerateSpectrum("could not pair left and right eigenvectors unambiguously")

    order = _sort_order(w)
    w = w[order]
    R = R[:, order]
    V = V[:, match[order]]

    kets = np.empty((n, n), dtype=complex)
    bras = np.empty((n, n), dtype=complex)
    for i in range(n):
        phi = R[:, i] / np.linalg.norm(R[:, i])
        phi = _fix_phase(phi)
        psi = V[:, i].conj()
        psi = psi / (psi @ phi)
        kets[:, i] = phi
        bras[i] = psi
    return BiorthogonalSystem(w, kets, bras, degenerate=False, tol=float(tol))


def reconstruct(B: BiorthogonalSystem) -> np.ndarray:
    """Rebuild ``sum_i w_i |phi_i><psi_i| / <psi_i|phi_i>``."""
    norms = np.einsum("ij,ji->i", B.bras, B.kets)
    return (B.kets * (B.eigenvalues / norms)) @ B.bras


def biorthogonality_residual(B: BiorthogonalSystem) -> float:
    """Largest ``|<psi_i|phi_j>|`` over ``i != j``."""
    if B.dim == 1:
        return 0.0
    G = B.overlaps()
    off = G - np.diag(np.diag(G))
    return float(np.max(np.abs(off)))


def perturbed_eigenvalue(
    B: BiorthogonalSystem, A, coupling: float, branch: int
) -> PerturbationResult:
    """First-order shift of eigenvalue ``branch`` under ``H + coupling * A``.

    The shift is ``coupling * <psi_i|A|phi_i> / <psi_i|phi_i>``, i.e. the
    coupling times the weak value of ``A`` on that branch.  The mixing
    coefficients are ``c_ij = coupling <psi_j|A|phi_i> / (<psi_j|phi_j> (w_i - w_j))``.
    """
    A = as_operator(A, "A")
    if A.shape[0] != B.dim:
        raise ValueError(f"A has dimension {A.shape[0]}, system has {B.dim}")
    B._check_index(branch)
    w = B.eigenvalues
    if B.dim > 1:
        gap = np.min(np.abs(w[branch] - np.delete(w, branch)))
        if abs(coupling) * np.linalg.norm(A, 2) > 0.1 * gap:
            warnings.warn(
                f"coupling {coupling:g} is not small against the eigenvalue gap {gap:.3g}",
                stacklevel=2,
            )
    phi = B.kets[:, branch]
    Aphi = A @ phi
    weak = (B.bras[branch] @ Aphi) / (B.bras[branch] @ phi)
    mixing = {}
    for j in range(B.dim):
        if j == branch:
            continue
        mixing[j] = complex(
            coupling * (B.bras[j] @ Aphi) / ((B.bras[j] @ B.kets[:, j]) * (w[branch] - w[j]))
        )
    return PerturbationResult(
        branch=int(branch),
        omega=complex(w[branch]),
        shift=complex(coupling * weak),
        coupling=float(coupling),
        mixing=mixing,
    )
