"""
System model and the numeric conventions shared by every module.

Frequencies are angular (rad/ns), times are ns. Operators are dense complex128
numpy arrays expressed in the eigenbasis of the drift Hamiltonian.
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing

import numpy as np
import numpy.typing as npt

from . import exception
from .utils import cached_property

ComplexMatrix = npt.NDArray[np.complex128]
RealVector = npt.NDArray[np.float64]

HERMITIAN_TOLERANCE = 1e-9


@dataclasses.dataclass(frozen=True, eq=False)
class DriveChannel:
    dipole: ComplexMatrix
    carrier: float

    def __post_init__(self):
        object.__setattr__(self, "dipole", np.asarray(self.dipole, dtype=np.complex128))
        object.__setattr__(self, "carrier", float(self.carrier))

    @property
    def hermiticity_deviation(self) -> float:
        return float(np.max(np.abs(self.dipole - self.dipole.conj().T), initial=0.0))


@dataclasses.dataclass(frozen=True, eq=False)
class SystemModel:
    eigenvalues: RealVector
    channels: typing.Tuple[DriveChannel, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "eigenvalues", np.asarray(self.eigenvalues, dtype=np.float64)
        )
        object.__setattr__(self, "channels", tuple(self.channels))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SystemModel):
            return NotImplemented
        return self.fingerprint == other.fingerprint

    def __hash__(self) -> int:
        return hash(self.fingerprint)

    @property
    def dimension(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def carriers(self) -> typing.Tuple[float, ...]:
        return tuple(c.carrier for c in self.channels)

    @property
    def drift(self) -> ComplexMatrix:
        return np.diag(self.eigenvalues).astype(np.complex128)

    def drift_propagator(self, duration: float) -> ComplexMatrix:
        """exp(-i H0 t), diagonal in the eigenbasis"""
        return np.diag(np.exp(-1j * self.eigenvalues * duration))

    @cached_property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.asarray([self.dimension, self.num_channels], "<u4").tobytes())
        digest.update(np.ascontiguousarray(self.eigenvalues, "<f8").tobytes())
        for channel in self.channels:
            digest.update(np.ascontiguousarray(channel.dipole, "<c16").tobytes())
            digest.update(np.asarray([channel.carrier], "<f8").tobytes())
        return digest.hexdigest()


def validate_system(
    model: SystemModel,
) -> typing.Tuple[SystemModel, npt.NDArray[np.int64]]:
    """Canonicalize a model: ascending eigenvalues, exactly Hermitian dipoles.

    Returns the checked model and the permutation applied to the state indices,
    `new_index -> old_index`.
    """
    eigenvalues = model.eigenvalues
    if eigenvalues.ndim != 1 or eigenvalues.shape[0] < 2:
        raise exception.DimensionMismatch(
            f"Need at least 2 eigenvalues, got shape {eigenvalues.shape}"
        )
    if not np.all(np.isfinite(eigenvalues)):
        raise exception.ValidateException("Eigenvalues must be finite")
    if not model.channels:
        raise exception.ValidateException("Need at least one drive channel")
    n = eigenvalues.shape[0]
    permutation = np.argsort(eigenvalues, kind="stable")
    channels = []
    for i, channel in enumerate(model.channels):
        if channel.dipole.shape != (n, n):
            raise exception.DimensionMismatch(
                f"Channel {i} dipole shape {channel.dipole.shape} != ({n}, {n})"
            )
        if not np.isfinite(channel.carrier) or channel.carrier < 0:
            raise exception.ValidateException(
                f"Channel {i} carrier {channel.carrier} must be finite and >= 0"
            )
        deviation = channel.hermiticity_deviation
        if deviation >= HERMITIAN_TOLERANCE:
            raise exception.NonHermitianDipole(
                f"Channel {i} dipole deviates from hermiticity by {deviation:.3e}"
            )
        dipole = channel.dipole[np.ix_(permutation, permutation)]
        channels.append(
            DriveChannel(dipole=(dipole + dipole.conj().T) / 2, carrier=channel.carrier)
        )

    return (
        SystemModel(eigenvalues=eigenvalues[permutation], channels=tuple(channels)),
        permutation,
    )


def frobenius_distance(a: ComplexMatrix, b: ComplexMatrix) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise exception.DimensionMismatch(f"Shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def unitarity_defect(u: ComplexMatrix) -> float:
    """||U^dagger U - I||_F"""
    u = np.asarray(u)
    return frobenius_distance(u.conj().T @ u, np.eye(u.shape[0]))
