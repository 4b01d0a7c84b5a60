"""
Independent references used to verify the solver: a time-ordered integrator
for the full propagator and a direct quadrature of low-order path operators.
The high-precision divided-difference table lives in `weighting`.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import math
import typing

import numpy as np
from scipy import integrate

from . import exception
from .core import ComplexMatrix, SystemModel
from .dyson import FrequencyAssignment
from .propagate import total_propagator
from .pulses import PulseSpec, SubpixelSequence, continuous_envelope, subpixel_amplitudes
from .weighting import divided_difference_reference  # noqa: F401

QUADRATURE_START = 16
QUADRATURE_MAX = 256
QUADRATURE_TOLERANCE = 1e-10
# DOP853 evaluates the right-hand side 12 times per step
_EVALUATIONS_PER_STEP = 12


@dataclasses.dataclass(frozen=True)
class OracleSettings:
    class Method(enum.Enum):
        ADAPTIVE_RK = "adaptive-rk"
        FIXED_MAGNUS2 = "fixed-magnus2"

    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_substeps: int = 10**7
    method: Method = Method.ADAPTIVE_RK
    magnus_step: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "method", OracleSettings.Method(self.method))
        for name in ("rel_tol", "abs_tol"):
            value = getattr(self, name)
            if not 0 < value <= 1e-3:
                raise exception.ValidateException(f"{name} must be in (0, 1e-3], got {value}")
        if self.max_substeps < 1 or not self.magnus_step > 0:
            raise exception.ValidateException("Step limits must be positive")


@dataclasses.dataclass(frozen=True, eq=False)
class Envelope:
    """Complex drive envelope s(t) of one channel.

    `function(times, segment_start)` is evaluated inside one segment between
    consecutive breakpoints, so piecewise envelopes pick the right piece at
    the segment edges.
    """

    function: typing.Callable[[np.ndarray, float], np.ndarray]
    breakpoints: typing.Tuple[float, ...] = ()


def staircase_envelope(sequence: SubpixelSequence, dt: float) -> Envelope:
    amplitudes = np.asarray(sequence.amplitudes)
    slopes = np.asarray(sequence.slopes) if sequence.slopes is not None else None
    count = len(amplitudes)
    if slopes is None:
        # runs of equal constant subpixels share one segment
        starts = np.flatnonzero(np.r_[True, amplitudes[1:] != amplitudes[:-1]])
    else:
        starts = np.arange(count)

    def function(times: np.ndarray, segment_start: float) -> np.ndarray:
        l = starts[np.searchsorted(starts, segment_start / dt + 0.5, side="right") - 1]
        values = np.full(len(times), amplitudes[l], dtype=np.complex128)
        if slopes is not None:
            values += slopes[l] * (times - l * dt)
        return values

    return Envelope(function=function, breakpoints=tuple(np.r_[starts, count] * dt))


def filtered_envelope(spec: PulseSpec) -> Envelope:
    """Continuous filtered pulse; an unfiltered pulse is the subpixel staircase
    it is propagated with, edge subpixels at their midpoint value"""
    if spec.filtered:
        return Envelope(function=lambda times, _: continuous_envelope(spec, times))
    return staircase_envelope(subpixel_amplitudes(spec), spec.subpixel_width)


class _InteractionHamiltonian:
    """H_I(t) = exp(i H0 t) V(t) exp(-i H0 t) with V = sum_c Re(s_c e^{i w_c t}) X_c"""

    def __init__(self, model: SystemModel, envelopes: typing.Sequence[Envelope]):
        self.eigenvalues = model.eigenvalues
        self.gaps = model.eigenvalues[:, None] - model.eigenvalues[None, :]
        self.dipoles = np.stack([c.dipole for c in model.channels])
        self.carriers = np.asarray(model.carriers)
        self.envelopes = envelopes

    def __call__(self, times: np.ndarray, segment_start: float) -> np.ndarray:
        drive = np.stack(
            [
                np.real(env.function(times, segment_start) * np.exp(1j * w * times))
                for env, w in zip(self.envelopes, self.carriers)
            ],
            axis=1,
        )  # (T, q)
        lab = np.einsum("tc,cij->tij", drive, self.dipoles)
        return lab * np.exp(1j * self.gaps[None] * times[:, None, None])


def _segments(
    envelopes: typing.Sequence[Envelope], duration: float
) -> typing.List[typing.Tuple[float, float]]:
    points = {0.0, float(duration)}
    for envelope in envelopes:
        points.update(float(t) for t in envelope.breakpoints if 0 < t < duration)
    ordered = sorted(points)
    return [(a, b) for a, b in zip(ordered[:-1], ordered[1:]) if b - a > 1e-15 * duration]


def _adaptive(
    hamiltonian: _InteractionHamiltonian,
    segments: typing.List[typing.Tuple[float, float]],
    size: int,
    settings: OracleSettings,
) -> ComplexMatrix:
    area = size * size
    state = np.concatenate([np.eye(size).ravel(), np.zeros(area)])
    evaluations = 0

    for a, b in segments:

        def rhs(t: float, y: np.ndarray) -> np.ndarray:
            u = (y[:area] + 1j * y[area:]).reshape(size, size)
            du = (-1j * hamiltonian(np.array([t]), a)[0] @ u).ravel()
            return np.concatenate([du.real, du.imag])

        solution = integrate.solve_ivp(
            rhs,
            (a, b),
            state,
            method="DOP853",
            rtol=settings.rel_tol,
            atol=settings.abs_tol,
        )
        if solution.status < 0:
            raise exception.ToleranceNotMet(
                f"Integrator failed on [{a}, {b}]: {solution.message}"
            )
        evaluations += solution.nfev
        if evaluations > settings.max_substeps * _EVALUATIONS_PER_STEP:
            raise exception.StepLimitExceeded(
                f"More than {settings.max_substeps} substeps before t={b}"
            )
        state = solution.y[:, -1]
    return (state[:area] + 1j * state[area:]).reshape(size, size)


def _magnus2(
    hamiltonian: _InteractionHamiltonian,
    segments: typing.List[typing.Tuple[float, float]],
    size: int,
    settings: OracleSettings,
) -> ComplexMatrix:
    counts = [max(1, math.ceil((b - a) / settings.magnus_step)) for a, b in segments]
    if sum(counts) > settings.max_substeps:
        raise exception.StepLimitExceeded(
            f"{sum(counts)} Magnus steps exceed the limit of {settings.max_substeps}"
        )
    u = np.eye(size, dtype=np.complex128)
    for (a, b), count in zip(segments, counts):
        h = (b - a) / count
        midpoints = a + h * (np.arange(count) + 0.5)
        values, vectors = np.linalg.eigh(hamiltonian(midpoints, a))
        steps = (vectors * np.exp(-1j * h * values)[:, None, :]) @ np.swapaxes(
            vectors.conj(), 1, 2
        )
        u = total_propagator(steps) @ u
    return u


def reference_propagator(
    model: SystemModel,
    envelopes: typing.Sequence[Envelope],
    duration: float,
    settings: typing.Optional[OracleSettings] = None,
) -> ComplexMatrix:
    """U(0, duration) of the full lab-frame Hamiltonian, no rotating-wave
    approximation. Integrated in the interaction picture of the drift."""
    settings = settings or OracleSettings()
    if not duration > 0:
        raise exception.ValidateException(f"Duration must be positive, got {duration}")
    if len(envelopes) != model.num_channels:
        raise exception.LengthMismatch(
            f"{len(envelopes)} envelopes for {model.num_channels} channels"
        )
    hamiltonian = _InteractionHamiltonian(model, envelopes)
    segments = _segments(envelopes, duration)
    if settings.method == OracleSettings.Method.ADAPTIVE_RK:
        interaction = _adaptive(hamiltonian, segments, model.dimension, settings)
    else:
        interaction = _magnus2(hamiltonian, segments, model.dimension, settings)
    logging.debug(
        f"Reference propagator over {duration} ns in {len(segments)} segments ({settings.method.value})"
    )
    return model.drift_propagator(duration) @ interaction


def _rotating_dipole(
    model: SystemModel, channel: int, frequency: float, times: np.ndarray
) -> np.ndarray:
    gaps = model.eigenvalues[:, None] - model.eigenvalues[None, :]
    phases = np.exp(1j * (gaps[None] + frequency) * times[:, None, None])
    return model.channels[channel].dipole[None] * phases


def _simplex_quadrature(
    model: SystemModel, assignment: FrequencyAssignment, dt: float, points: int
) -> ComplexMatrix:
    nodes, weights = np.polynomial.legendre.leggauss(points)
    frequencies = assignment.frequencies(model.carriers)
    outer = dt * (nodes + 1) / 2
    outer_weights = weights * dt / 2
    late = _rotating_dipole(model, assignment.channels[-1], frequencies[-1], outer)
    if assignment.order == 1:
        return np.einsum("t,tij->ij", outer_weights, late)
    # collapsed coordinates: t0 = t1 (y + 1) / 2 for every outer node t1
    inner = outer[:, None] * (nodes[None, :] + 1) / 2
    inner_weights = outer[:, None] / 2 * weights[None, :]
    early = _rotating_dipole(model, assignment.channels[0], frequencies[0], inner.ravel())
    early = np.einsum("ts,tsij->tij", inner_weights, early.reshape(points, points, *early.shape[1:]))
    return np.einsum("t,tij,tjk->ik", outer_weights, late, early)


def simplex_path_operator(
    model: SystemModel, assignment: FrequencyAssignment, dt: float
) -> ComplexMatrix:
    """Order-1 or order-2 Dyson operator by nested Gauss-Legendre quadrature
    over the ordered time simplex, doubling the points until converged."""
    if assignment.order not in (1, 2):
        raise exception.UnsupportedOrder(
            f"Simplex quadrature covers orders 1 and 2, got {assignment.order}"
        )
    if not dt > 0:
        raise exception.ValidateException(f"Subpixel width must be positive, got {dt}")
    prefactor = (-1j / 2) ** assignment.order
    drift = model.drift_propagator(dt)
    points = QUADRATURE_START
    previous = _simplex_quadrature(model, assignment, dt, points)
    while points < QUADRATURE_MAX:
        points *= 2
        current = _simplex_quadrature(model, assignment, dt, points)
        if np.linalg.norm(prefactor * (current - previous)) < QUADRATURE_TOLERANCE:
            return prefactor * drift @ current
        previous = current
    raise exception.QuadratureNotConverged(
        f"Order-{assignment.order} quadrature not converged with {QUADRATURE_MAX} points"
    )
