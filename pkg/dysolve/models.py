"""
System builders: single and capacitively coupled transmons, and the random
benchmark ensembles.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import typing

import numpy as np
from scipy import optimize

from . import exception
from .control import GateTarget, named_gate
from .core import ComplexMatrix, DriveChannel, RealVector, SystemModel, validate_system
from .pulses import PulseSpec
from .utils import ghz_to_angular, mhz_to_angular

CUTOFF_TOLERANCE = 1e-8
CUTOFF_MARGIN = 5
OVERLAP_MARGIN = 0.01
CALIBRATION_TOLERANCE = ghz_to_angular(1e-6)
CALIBRATION_ITERATIONS = 100


@dataclasses.dataclass(frozen=True)
class TransmonSpec:
    """Energies in rad/ns; the charge basis runs over -charge_cutoff..charge_cutoff"""

    charging_energy: float
    josephson_energy: float
    charge_cutoff: int = 15
    keep_levels: int = 5

    def __post_init__(self):
        if not self.charging_energy > 0 or self.josephson_energy < 0:
            raise exception.ValidateException(
                f"Need E_C > 0 and E_J >= 0, got {self.charging_energy}, {self.josephson_energy}"
            )
        if self.charge_cutoff < 1:
            raise exception.ValidateException(f"Charge cutoff {self.charge_cutoff} < 1")
        if not 2 <= self.keep_levels <= 2 * self.charge_cutoff + 1:
            raise exception.ValidateException(
                f"Cannot keep {self.keep_levels} levels of {2 * self.charge_cutoff + 1} charge states"
            )

    @property
    def transmon_regime(self) -> bool:
        return self.josephson_energy > self.charging_energy and self.charge_cutoff >= 10


def _diagonalize(
    spec: TransmonSpec, cutoff: int
) -> typing.Tuple[RealVector, np.ndarray, np.ndarray]:
    charges = np.arange(-cutoff, cutoff + 1, dtype=np.float64)
    hamiltonian = np.diag(4 * spec.charging_energy * charges**2)
    off = -spec.josephson_energy / 2 * np.ones(2 * cutoff)
    hamiltonian += np.diag(off, 1) + np.diag(off, -1)
    values, vectors = np.linalg.eigh(hamiltonian)
    return values, vectors, charges


def _fix_gauge(vectors: np.ndarray, first: bool) -> np.ndarray:
    """Make one component of every column real positive: the first
    non-negligible one, or the largest"""
    magnitudes = np.abs(vectors)
    if first:
        index = np.argmax(magnitudes > 1e-10 * magnitudes.max(axis=0), axis=0)
    else:
        index = np.argmax(magnitudes, axis=0)
    pivots = vectors[index, np.arange(vectors.shape[1])]
    return vectors * (np.abs(pivots) / pivots)[None, :]


def build_transmon(spec: TransmonSpec) -> typing.Tuple[RealVector, ComplexMatrix]:
    """Lowest levels (ground at 0) and the charge operator in that eigenbasis"""
    values, vectors, charges = _diagonalize(spec, spec.charge_cutoff)
    keep = spec.keep_levels
    wider, _, _ = _diagonalize(spec, spec.charge_cutoff + CUTOFF_MARGIN)
    shift = np.max(np.abs((wider[:keep] - wider[0]) - (values[:keep] - values[0])))
    if shift > CUTOFF_TOLERANCE:
        raise exception.CutoffTooSmall(
            f"Kept levels move by {shift:.3e} rad/ns when the charge cutoff grows by {CUTOFF_MARGIN}"
        )
    vectors = _fix_gauge(vectors[:, :keep].astype(np.complex128), first=True)
    charge = vectors.conj().T @ (charges[:, None] * vectors)
    return values[:keep] - values[0], (charge + charge.conj().T) / 2


def transmon_levels(spec: TransmonSpec) -> typing.Tuple[float, float]:
    """(omega_01, anharmonicity) in rad/ns"""
    energies, _, _ = _diagonalize(spec, spec.charge_cutoff)
    energies = energies - energies[0]
    return float(energies[1]), float(energies[2] - 2 * energies[1])


def calibrate_transmon(
    frequency: float,
    anharmonicity: float,
    charge_cutoff: int = 15,
    keep_levels: int = 5,
) -> TransmonSpec:
    """E_C, E_J reproducing omega_01 and the anharmonicity (both rad/ns)"""
    if not anharmonicity < 0 or abs(anharmonicity) >= frequency:
        raise exception.ValidateException(
            f"Need alpha < 0 and |alpha| < omega, got {anharmonicity}, {frequency}"
        )

    def residual(log_energies: np.ndarray) -> np.ndarray:
        ec, ej = np.exp(log_energies)
        levels = transmon_levels(TransmonSpec(ec, ej, charge_cutoff, keep_levels))
        return np.array([levels[0] - frequency, levels[1] - anharmonicity])

    ec = -anharmonicity
    ej = (frequency + ec) ** 2 / (8 * ec)
    result = optimize.root(
        residual,
        np.log([ec, ej]),
        method="hybr",
        options={"maxfev": CALIBRATION_ITERATIONS * 3, "xtol": 1e-14},
    )
    error = float(np.max(np.abs(residual(result.x))))
    if error > CALIBRATION_TOLERANCE:
        raise exception.NoConvergence(
            f"Transmon calibration stopped {error:.3e} rad/ns off target: {result.message}"
        )
    ec, ej = np.exp(result.x)
    return TransmonSpec(float(ec), float(ej), charge_cutoff, keep_levels)


@dataclasses.dataclass(frozen=True)
class CoupledSpec:
    control: TransmonSpec
    target: TransmonSpec
    coupling: float
    levels_per_qubit: int = 5

    def __post_init__(self):
        if self.coupling == 0:
            raise exception.ValidateException("Coupling must be nonzero")
        for spec in (self.control, self.target):
            if self.levels_per_qubit > spec.keep_levels or self.levels_per_qubit < 2:
                raise exception.ValidateException(
                    f"levels_per_qubit {self.levels_per_qubit} outside [2, {spec.keep_levels}]"
                )

    @property
    def dimension(self) -> int:
        return self.levels_per_qubit**2


def _computational_labels(vectors: np.ndarray, levels: int) -> typing.List[int]:
    overlaps = np.abs(vectors) ** 2
    labels = []
    for control, target in ((0, 0), (0, 1), (1, 0), (1, 1)):
        row = overlaps[control * levels + target]
        best, second = np.sort(row)[::-1][:2]
        if best - second < OVERLAP_MARGIN:
            raise exception.HybridizationAmbiguity(
                f"State |{control}{target}> overlaps two dressed states ({best:.4f} vs {second:.4f})"
            )
        labels.append(int(np.argmax(row)))
    if len(set(labels)) != len(labels):
        raise exception.HybridizationAmbiguity(f"Computational labels collide: {labels}")
    return labels


def build_cross_resonance(spec: CoupledSpec) -> typing.Tuple[SystemModel, GateTarget]:
    """Dressed two-transmon model with control and target channels both
    carried at the dressed target frequency, and the ZX90 target"""
    levels = spec.levels_per_qubit
    control_energies, control_charge = build_transmon(spec.control)
    target_energies, target_charge = build_transmon(spec.target)
    control_energies = control_energies[:levels]
    target_energies = target_energies[:levels]
    control_charge = control_charge[:levels, :levels]
    target_charge = target_charge[:levels, :levels]
    identity = np.eye(levels)

    drift = (
        np.kron(np.diag(control_energies), identity)
        + np.kron(identity, np.diag(target_energies))
        + spec.coupling * np.kron(control_charge, target_charge)
    )
    energies, vectors = np.linalg.eigh((drift + drift.conj().T) / 2)
    vectors = _fix_gauge(vectors, first=False)
    labels = _computational_labels(vectors, levels)
    carrier = float(energies[labels[1]] - energies[labels[0]])

    def dressed(operator: np.ndarray) -> ComplexMatrix:
        return vectors.conj().T @ operator @ vectors

    model, _ = validate_system(
        SystemModel(
            eigenvalues=energies,
            channels=(
                DriveChannel(dressed(np.kron(control_charge, identity)), carrier),
                DriveChannel(dressed(np.kron(identity, target_charge)), carrier),
            ),
        )
    )
    logging.info(
        f"Cross-resonance model: {spec.dimension} levels, dressed target frequency "
        f"{carrier / (2 * math.pi):.6f} GHz, computational states {labels}"
    )
    return model, GateTarget(target=named_gate("ZX90"), subspace=tuple(labels))


def zz_shift(model: SystemModel, target: GateTarget) -> float:
    """E11 - E10 - E01 + E00 of the dressed computational states"""
    e00, e01, e10, e11 = model.eigenvalues[list(target.subspace)]
    return float(e11 - e10 - e01 + e00)


def detuning_sweep_models(
    base: CoupledSpec, detunings: typing.Iterable[float]
) -> typing.List[typing.Tuple[float, SystemModel, GateTarget]]:
    """Recalibrate the target transmon to omega_c - detuning for each detuning
    (rad/ns), keeping its anharmonicity. Ambiguous points are skipped."""
    control_frequency, _ = transmon_levels(base.control)
    _, target_anharmonicity = transmon_levels(base.target)
    models = []
    for detuning in detunings:
        target = calibrate_transmon(
            control_frequency - detuning,
            target_anharmonicity,
            base.target.charge_cutoff,
            base.target.keep_levels,
        )
        try:
            model, gate = build_cross_resonance(dataclasses.replace(base, target=target))
        except exception.HybridizationAmbiguity as e:
            logging.warning(f"Skipping detuning {detuning:.6f} rad/ns: {e}")
            continue
        models.append((float(detuning), model, gate))
    return models


@dataclasses.dataclass(frozen=True)
class BenchmarkEnsembleSpec:
    """Frequencies in GHz, amplitudes in MHz, times in ns"""

    seed: int = 0
    dimension: int = 25
    num_drives: int = 1
    eigenvalue_mean: float = 7.0
    eigenvalue_std: float = 0.5
    offresonant_fill: float = 0.2
    offresonant_std: float = 0.1
    amplitude_mean: float = 40.0
    amplitude_std: float = 1.0
    duration: float = 500.0
    pixel_width: float = 1.0
    subpixels_per_pixel: int = 40
    filter_bandwidth: float = math.inf

    def __post_init__(self):
        if self.num_drives not in (1, 2, 3):
            raise exception.ValidateException(f"num_drives must be 1, 2 or 3, got {self.num_drives}")
        if self.dimension < 2 * self.num_drives:
            raise exception.ValidateException(
                f"{self.num_drives} drives need at least {2 * self.num_drives} levels"
            )
        if not 0 <= self.offresonant_fill <= 1:
            raise exception.ValidateException(f"Fill fraction {self.offresonant_fill} not in [0, 1]")
        pixels = self.duration / self.pixel_width
        if not self.duration > 0 or abs(pixels - round(pixels)) > 1e-9 or round(pixels) < 1:
            raise exception.ValidateException(
                f"Duration {self.duration} is not a positive multiple of {self.pixel_width}"
            )

    @property
    def num_pixels(self) -> int:
        return int(round(self.duration / self.pixel_width))


def build_benchmark_ensemble(
    spec: BenchmarkEnsembleSpec,
) -> typing.Tuple[SystemModel, typing.List[PulseSpec]]:
    """Random drift spectrum with drives on the 0-1, 2-3 and 4-5 transitions.

    Every drive has its transition element set to 1 and a fraction of the
    other upper-triangle elements filled with complex normals, then made
    Hermitian.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.dimension
    eigenvalues = np.sort(
        ghz_to_angular(rng.normal(spec.eigenvalue_mean, spec.eigenvalue_std, size))
    )
    upper = np.triu_indices(size, k=1)
    channels = []
    for c in range(spec.num_drives):
        low, high = 2 * c, 2 * c + 1
        filled = rng.random(len(upper[0])) < spec.offresonant_fill
        values = rng.normal(0, spec.offresonant_std / math.sqrt(2), (len(upper[0]), 2))
        triangle = np.zeros((size, size), dtype=np.complex128)
        triangle[upper] = np.where(filled, values[:, 0] + 1j * values[:, 1], 0)
        triangle[low, high] = 1
        dipole = triangle + triangle.conj().T
        channels.append(DriveChannel(dipole, float(eigenvalues[high] - eigenvalues[low])))

    pulses = []
    for _ in range(spec.num_drives):
        pixels = mhz_to_angular(rng.normal(spec.amplitude_mean, spec.amplitude_std, spec.num_pixels))
        pulses.append(
            PulseSpec(
                pixels=pixels,
                pixel_width=spec.pixel_width,
                subpixels_per_pixel=spec.subpixels_per_pixel,
                filter_bandwidth=spec.filter_bandwidth,
            )
        )
    model = SystemModel(eigenvalues=eigenvalues, channels=tuple(channels))
    return model, pulses
