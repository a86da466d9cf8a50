"""Two-state vectors and weak values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite, OrthogonalStates
from .spectral import BiorthogonalSystem, as_operator

__all__ = ["TwoStateVector", "as_state", "weak_value", "two_state_from_branch"]

DEFAULT_EPS_DENOM = 1e-12


def as_state(x, name: str = "state") -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"{name} contains NaN or Inf entries")
    return x


@dataclass(frozen=True)
class TwoStateVector:
    """A backward-evolving bra together with a forward-evolving ket.

    ``bra`` holds the covector components, so ``<bra|x> = bra @ x``.  Use
    :meth:`from_kets` to build one from two ket vectors.
    """

    bra: np.ndarray
    ket: np.ndarray

    def __post_init__(self):
        bra = as_state(self.bra, "bra")
        ket = as_state(self.ket, "ket")
        if bra.shape != ket.shape:
            raise DimensionMismatch(f"bra has {bra.shape[0]} components, ket has {ket.shape[0]}")
        bra.flags.writeable = False
        ket.flags.writeable = False
        object.__setattr__(self, "bra", bra)
        object.__setattr__(self, "ket", ket)
        object.__setattr__(self, "_overlap", complex(bra @ ket))

    @classmethod
    def from_kets(cls, post, pre) -> "TwoStateVector":
        """Pair ``<post|`` with ``|pre>``, where both are given as kets."""
        return cls(np.conj(np.asarray(post, dtype=complex)), pre)

    @property
    def overlap(self) -> complex:
        return self._overlap

    @property
    def dim(self) -> int:
        return int(self.ket.shape[0])


def weak_value(tsv: TwoStateVector, A, eps_denom: float = DEFAULT_EPS_DENOM) -> complex:
    """``<bra|A|ket> / <bra|ket>``.

    Raises :class:`OrthogonalStates` when the normalized overlap
    ``|<bra|ket>| / (|bra| |ket|)`` does not exceed ``eps_denom``.  The result
    is not clamped to the eigenvalue range of ``A``.
    """
    A = as_operator(A, "A")
    if A.shape[0] != tsv.dim:
        raise DimensionMismatch(f"A has dimension {A.shape[0]}, two-state vector has {tsv.dim}")
    scale = np.linalg.norm(tsv.bra) * np.linalg.norm(tsv.ket)
    if scale == 0 or abs(tsv.overlap) / scale <= eps_denom:
        raise OrthogonalStates(
            f"|<bra|ket>| = {abs(tsv.overlap):.3g}; weak value is ill-defined"
        )
    return complex((tsv.bra @ (A @ tsv.ket)) / tsv.overlap)


def two_state_from_branch(B: BiorthogonalSystem, i: int) -> TwoStateVector:
    """The eigenbra/eigenket pair of branch ``i``."""
    return TwoStateVector(B.bra(i), B.ket(i))
