"""
Gate fidelity, exact pulse gradients and the GRAPE ascent loop.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import logging
import math
import typing

import numpy as np
from scipy import linalg, optimize

from . import exception
from .core import ComplexMatrix
from .dyson import DysonCache
from .propagate import Variable, propagate, trace_derivatives
from .pulses import AmplitudeMap, PulseSpec, amplitude_maps, subpixel_amplitudes
from .utils import atomic_write

UNITARY_TOLERANCE = 1e-10
CSV_SCHEMA = "#schema=1"

_PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


def named_gate(name: str) -> ComplexMatrix:
    gates = {
        "X90": linalg.expm(-1j * math.pi / 4 * _PAULI_X),
        "ZX90": linalg.expm(-1j * math.pi / 4 * np.kron(_PAULI_Z, _PAULI_X)),
        "I": np.eye(2, dtype=np.complex128),
        "II": np.eye(4, dtype=np.complex128),
    }
    if name.upper() not in gates:
        raise exception.ConfigException(f"Unknown gate {name!r}, expected one of {sorted(gates)}")
    return gates[name.upper()]


@dataclasses.dataclass(frozen=True, eq=False)
class GateTarget:
    target: ComplexMatrix
    subspace: typing.Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.complex128))
        object.__setattr__(self, "subspace", tuple(int(i) for i in self.subspace))
        d = len(self.subspace)
        if self.target.shape != (d, d):
            raise exception.DimensionMismatch(
                f"Target shape {self.target.shape} does not match {d} subspace states"
            )
        if len(set(self.subspace)) != d or min(self.subspace, default=0) < 0:
            raise exception.ValidateException(f"Bad subspace indices {self.subspace}")
        defect = np.linalg.norm(self.target.conj().T @ self.target - np.eye(d))
        if defect > UNITARY_TOLERANCE:
            raise exception.ValidateException(f"Target is not unitary (defect {defect:.3e})")

    @property
    def dimension(self) -> int:
        return len(self.subspace)

    def _check(self, size: int) -> None:
        if max(self.subspace) >= size:
            raise exception.IndexOutOfRange(
                f"Subspace index {max(self.subspace)} outside a {size}-level system"
            )

    def block(self, u: ComplexMatrix) -> ComplexMatrix:
        u = np.asarray(u)
        self._check(u.shape[0])
        return u[np.ix_(self.subspace, self.subspace)]

    def weight_matrix(self, size: int) -> ComplexMatrix:
        """W with Tr(W U) = Tr(target^dagger P U P)"""
        self._check(size)
        weight = np.zeros((size, size), dtype=np.complex128)
        weight[np.ix_(self.subspace, self.subspace)] = self.target.conj().T
        return weight

    def in_drift_frame(self, eigenvalues: np.ndarray, duration: float) -> GateTarget:
        """Target followed by the free evolution of the subspace over `duration`"""
        self._check(len(eigenvalues))
        phases = np.exp(-1j * np.asarray(eigenvalues)[list(self.subspace)] * duration)
        return GateTarget(target=phases[:, None] * self.target, subspace=self.subspace)


def fidelity(u: ComplexMatrix, target: GateTarget) -> float:
    overlap = np.trace(target.target.conj().T @ target.block(u))
    return float(abs(overlap) ** 2 / target.dimension**2)


def _z_rotations(angles: np.ndarray, qubit_dims: typing.Sequence[int]) -> np.ndarray:
    phases = np.ones(1, dtype=np.complex128)
    for angle, dim in zip(angles, qubit_dims):
        phases = np.kron(phases, np.exp(1j * angle * np.arange(dim)))
    return phases


def local_z_corrected_fidelity(
    u: ComplexMatrix, target: GateTarget, qubit_dims: typing.Sequence[int] = (2, 2)
) -> typing.Tuple[float, np.ndarray]:
    """Best fidelity over Z rotations on every qubit before and after the gate.

    Returns the fidelity and the angles, pre-rotations first.
    """
    if int(np.prod(qubit_dims)) != target.dimension:
        raise exception.DimensionMismatch(
            f"Qubit dims {tuple(qubit_dims)} do not span a {target.dimension}-dim subspace"
        )
    block = target.block(u)
    count = len(qubit_dims)
    adjoint = target.target.conj().T
    d2 = target.dimension**2

    def infidelity(angles: np.ndarray) -> float:
        before = _z_rotations(angles[:count], qubit_dims)
        after = _z_rotations(angles[count:], qubit_dims)
        corrected = after[:, None] * block * before[None, :]
        return 1 - abs(np.trace(adjoint @ corrected)) ** 2 / d2

    result = optimize.minimize(
        infidelity,
        np.zeros(2 * count),
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000},
    )
    best = max(1 - float(result.fun), fidelity(u, target))
    return best, np.asarray(result.x)


@dataclasses.dataclass(frozen=True, eq=False)
class GradientReport:
    fidelity: float
    grad_x: np.ndarray
    grad_y: np.ndarray

    @property
    def norm(self) -> float:
        return float(math.sqrt(np.sum(self.grad_x**2) + np.sum(self.grad_y**2)))


def _check_specs(cache: DysonCache, specs: typing.Sequence[PulseSpec]) -> None:
    if len(specs) != cache.num_channels:
        raise exception.LengthMismatch(f"{len(specs)} pulses for {cache.num_channels} channels")
    if len({s.num_subpixels for s in specs}) != 1:
        raise exception.LengthMismatch("Pulses have different subpixel counts")
    for spec in specs:
        if not math.isclose(spec.subpixel_width, cache.subpixel_width, rel_tol=1e-9):
            raise exception.ValidateException(
                f"Pulse subpixel width {spec.subpixel_width} != cache width {cache.subpixel_width}"
            )


def evaluate_fidelity(
    cache: DysonCache, specs: typing.Sequence[PulseSpec], target: GateTarget
) -> float:
    _check_specs(cache, specs)
    sequences = [subpixel_amplitudes(s) for s in specs]
    return fidelity(propagate(cache, sequences, retain_steps=False).total, target)


def fidelity_gradient(
    cache: DysonCache,
    specs: typing.Sequence[PulseSpec],
    target: GateTarget,
    maps: typing.Optional[typing.Sequence[AmplitudeMap]] = None,
) -> GradientReport:
    """Fidelity and its derivatives with respect to the real and imaginary
    part of every pixel of every channel.

    `maps` defaults to the maps of `specs`; passing others only changes the
    gradient path.
    """
    _check_specs(cache, specs)
    sequences = [subpixel_amplitudes(s) for s in specs]
    maps = maps if maps is not None else [amplitude_maps(s) for s in specs]
    traces = trace_derivatives(cache, sequences, target.weight_matrix(cache.dimension))
    z = traces.value
    d2 = target.dimension**2

    def wirtinger(plain: np.ndarray, conjugate: np.ndarray) -> np.ndarray:
        return (np.conj(z) * plain + z * np.conj(conjugate)) / d2

    grad_x = np.zeros((len(specs), specs[0].num_pixels))
    grad_y = np.zeros_like(grad_x)
    for c, amplitude_map in enumerate(maps):
        d_amplitude = wirtinger(
            traces.of(Variable.AMPLITUDE, c), traces.of(Variable.CONJUGATE_AMPLITUDE, c)
        )
        d_pixel = amplitude_map.amplitude.T @ d_amplitude
        if amplitude_map.slope is not None:
            d_slope = wirtinger(
                traces.of(Variable.SLOPE, c), traces.of(Variable.CONJUGATE_SLOPE, c)
            )
            d_pixel = d_pixel + amplitude_map.slope.T @ d_slope
        grad_x[c] = 2 * d_pixel.real
        grad_y[c] = -2 * d_pixel.imag
    return GradientReport(fidelity=abs(z) ** 2 / d2, grad_x=grad_x, grad_y=grad_y)


@dataclasses.dataclass(frozen=True)
class GrapeSettings:
    class Policy(enum.Enum):
        FIXED = "fixed"
        BACKTRACKING = "backtracking"

    policy: Policy = Policy.BACKTRACKING
    epsilon: float = 1e-3
    armijo: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 40
    max_iters: int = 500
    gradient_tolerance: float = 1e-10
    infidelity_tolerance: float = 1e-10
    log_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "policy", GrapeSettings.Policy(self.policy))
        if not self.epsilon > 0:
            raise exception.ConfigException(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.shrink < 1:
            raise exception.ConfigException(f"shrink must be in (0, 1), got {self.shrink}")
        if not 0 <= self.armijo < 1:
            raise exception.ConfigException(f"armijo must be in [0, 1), got {self.armijo}")
        if self.max_iters < 0 or self.max_halvings < 0:
            raise exception.ConfigException("Iteration limits must be non-negative")


@dataclasses.dataclass(frozen=True)
class IterationRecord:
    iteration: int
    fidelity: float
    epsilon: float
    gradient_norm: float


@dataclasses.dataclass
class OptimizationTrace:
    class Reason(enum.Enum):
        MAX_ITERATIONS = "max_iterations"
        GRADIENT_TOLERANCE = "gradient_tolerance"
        INFIDELITY_TOLERANCE = "infidelity_tolerance"

    records: typing.List[IterationRecord]
    specs: typing.Tuple[PulseSpec, ...]
    reason: Reason

    @property
    def fidelity(self) -> float:
        return self.records[-1].fidelity

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def write_csv(self, path: str) -> None:
        with atomic_write(path, "w") as f:
            f.write(f"{CSV_SCHEMA}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["iteration", "fidelity", "epsilon", "grad_norm"])
            for record in self.records:
                writer.writerow(
                    [
                        record.iteration,
                        repr(record.fidelity),
                        repr(record.epsilon),
                        repr(record.gradient_norm),
                    ]
                )


def _step(
    specs: typing.Sequence[PulseSpec], report: GradientReport, epsilon: float
) -> typing.Tuple[PulseSpec, ...]:
    return tuple(
        spec.with_pixels(spec.pixels + epsilon * (report.grad_x[c] + 1j * report.grad_y[c]))
        for c, spec in enumerate(specs)
    )


def grape_optimize(
    cache: DysonCache,
    specs: typing.Sequence[PulseSpec],
    target: GateTarget,
    settings: typing.Optional[GrapeSettings] = None,
) -> OptimizationTrace:
    settings = settings or GrapeSettings()
    specs = tuple(specs)
    report = fidelity_gradient(cache, specs, target)
    records = [IterationRecord(0, report.fidelity, 0.0, report.norm)]
    reason = OptimizationTrace.Reason.MAX_ITERATIONS

    for iteration in range(1, settings.max_iters + 2):
        if 1 - report.fidelity < settings.infidelity_tolerance:
            reason = OptimizationTrace.Reason.INFIDELITY_TOLERANCE
            break
        if report.norm < settings.gradient_tolerance:
            reason = OptimizationTrace.Reason.GRADIENT_TOLERANCE
            break
        if iteration > settings.max_iters:
            break

        epsilon = settings.epsilon
        if settings.policy == GrapeSettings.Policy.BACKTRACKING:
            required = settings.armijo * report.norm**2
            for _ in range(settings.max_halvings + 1):
                candidate = _step(specs, report, epsilon)
                if evaluate_fidelity(cache, candidate, target) >= report.fidelity + epsilon * required:
                    break
                epsilon *= settings.shrink
            else:
                logging.warning(
                    f"Line search exhausted {settings.max_halvings} halvings at fidelity {report.fidelity:.12f}"
                )
                raise exception.NoAscentDirection(
                    f"No ascent after {settings.max_halvings} halvings at iteration {iteration}, "
                    f"fidelity {report.fidelity:.12f}, gradient norm {report.norm:.3e}"
                )
        else:
            candidate = _step(specs, report, epsilon)

        specs = candidate
        report = fidelity_gradient(cache, specs, target)
        records.append(IterationRecord(iteration, report.fidelity, epsilon, report.norm))
        if settings.log_every and iteration % settings.log_every == 0:
            logging.info(
                f"GRAPE iteration {iteration}: fidelity {report.fidelity:.10f}, "
                f"epsilon {epsilon:.3e}, gradient norm {report.norm:.3e}"
            )

    logging.info(
        f"GRAPE stopped after {len(records) - 1} iterations ({reason.value}), "
        f"fidelity {report.fidelity:.10f}"
    )
    return OptimizationTrace(records=records, specs=specs, reason=reason)


def flat_pulse_fidelity(
    cache: DysonCache,
    specs: typing.Sequence[PulseSpec],
    target: GateTarget,
    qubit_dims: typing.Optional[typing.Sequence[int]] = None,
) -> typing.Tuple[float, typing.Tuple[PulseSpec, ...]]:
    """Best constant-amplitude pulse, one complex amplitude per channel.

    Starts from the mean pixel of each given spec. With `qubit_dims` the
    local-Z-corrected fidelity is maximized instead.
    """
    specs = tuple(specs)
    _check_specs(cache, specs)

    def build(x: np.ndarray) -> typing.Tuple[PulseSpec, ...]:
        return tuple(
            spec.with_pixels(np.full(spec.num_pixels, x[2 * c] + 1j * x[2 * c + 1]))
            for c, spec in enumerate(specs)
        )

    def score(candidate: typing.Tuple[PulseSpec, ...]) -> float:
        sequences = [subpixel_amplitudes(s) for s in candidate]
        u = propagate(cache, sequences, retain_steps=False).total
        if qubit_dims is None:
            return fidelity(u, target)
        return local_z_corrected_fidelity(u, target, qubit_dims)[0]

    start = np.array(
        [part for spec in specs for part in (spec.pixels.mean().real, spec.pixels.mean().imag)]
    )
    result = optimize.minimize(
        lambda x: 1 - score(build(x)),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 2000},
    )
    best = build(result.x)
    value = 1 - float(result.fun)
    logging.info(f"Flat pulse fidelity {value:.8f} at amplitudes {result.x}")
    return value, best
