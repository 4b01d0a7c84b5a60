"""
Pixel -> subpixel conversion with the Gaussian (erf) bandwidth filter.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import typing

import numpy as np
import numpy.typing as npt
from scipy import special

from . import exception

RealMatrix = npt.NDArray[np.float64]
QUADRATURE_POINTS = 16


class Interpolation(enum.Enum):
    CONSTANT = "constant"
    LINEAR = "linear"


@dataclasses.dataclass(frozen=True, eq=False)
class PulseSpec:
    pixels: npt.NDArray[np.complex128]
    pixel_width: float
    subpixels_per_pixel: int = 1
    filter_bandwidth: float = math.inf
    interpolation: Interpolation = Interpolation.CONSTANT

    def __post_init__(self):
        object.__setattr__(
            self, "pixels", np.atleast_1d(np.asarray(self.pixels, dtype=np.complex128))
        )
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))
        if self.pixels.ndim != 1 or self.pixels.shape[0] < 1:
            raise exception.ValidateException("Pulse needs at least one pixel")
        if not self.pixel_width > 0:
            raise exception.ValidateException(
                f"Pixel width must be positive, got {self.pixel_width}"
            )
        if int(self.subpixels_per_pixel) != self.subpixels_per_pixel or (
            self.subpixels_per_pixel < 1
        ):
            raise exception.ValidateException(
                f"Subpixels per pixel must be a positive integer, got {self.subpixels_per_pixel}"
            )
        if not self.filter_bandwidth > 0:
            raise exception.ValidateException(
                f"Filter bandwidth must be positive, got {self.filter_bandwidth}"
            )

    @property
    def num_pixels(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def num_subpixels(self) -> int:
        return self.num_pixels * int(self.subpixels_per_pixel)

    @property
    def subpixel_width(self) -> float:
        return self.pixel_width / self.subpixels_per_pixel

    @property
    def duration(self) -> float:
        return self.num_pixels * self.pixel_width

    @property
    def filtered(self) -> bool:
        return math.isfinite(self.filter_bandwidth)

    def with_pixels(self, pixels: npt.ArrayLike) -> PulseSpec:
        return dataclasses.replace(self, pixels=np.asarray(pixels, dtype=np.complex128))


@dataclasses.dataclass(frozen=True, eq=False)
class SubpixelSequence:
    values: npt.NDArray[np.complex128]
    intercepts: typing.Optional[npt.NDArray[np.complex128]] = None
    slopes: typing.Optional[npt.NDArray[np.complex128]] = None

    def __post_init__(self):
        if (self.intercepts is None) != (self.slopes is None):
            raise exception.ValidateException(
                "Intercepts and slopes come together or not at all"
            )
        if self.intercepts is not None and not (
            len(self.intercepts) == len(self.slopes) == len(self.values)  # type: ignore
        ):
            raise exception.LengthMismatch("Intercepts/slopes length != values length")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def linear(self) -> bool:
        return self.slopes is not None

    @property
    def amplitudes(self) -> npt.NDArray[np.complex128]:
        """Amplitude held at the start of each subpixel: intercept or sample"""
        return self.intercepts if self.intercepts is not None else self.values


@dataclasses.dataclass(frozen=True, eq=False)
class AmplitudeMap:
    """Real linear maps from pixels to subpixel amplitudes (and slopes)"""

    amplitude: RealMatrix
    slope: typing.Optional[RealMatrix] = None


def _edge_offsets(spec: PulseSpec, times: np.ndarray) -> np.ndarray:
    edges = np.arange(spec.num_pixels + 1) * spec.pixel_width
    return times[:, None] - edges[None, :]


def _step_response(spec: PulseSpec, offsets: np.ndarray) -> np.ndarray:
    """Filtered unit step; unfiltered it is sign/2 with sign(0) = 0, the
    limit of the erf, so an edge subpixel carries the midpoint value"""
    if spec.filtered:
        return 0.5 * special.erf(spec.filter_bandwidth * offsets / 2)
    return 0.5 * np.sign(offsets)


def _step_antiderivative(spec: PulseSpec, offsets: np.ndarray) -> np.ndarray:
    if spec.filtered:
        a = spec.filter_bandwidth / 2
        return 0.5 * (
            offsets * special.erf(a * offsets)
            + np.exp(-((a * offsets) ** 2)) / (a * math.sqrt(math.pi))
        )
    return 0.5 * np.abs(offsets)


def filter_matrix(spec: PulseSpec) -> RealMatrix:
    """T[l, j]: weight of pixel j in subpixel l, sampled at the subpixel left edge"""
    n_s = int(spec.subpixels_per_pixel)
    subpixel = np.arange(spec.num_subpixels)[:, None]
    pixel_edge = np.arange(spec.num_pixels + 1)[None, :]
    # integer offsets keep exact pixel edges exactly at zero
    response = _step_response(spec, (subpixel - n_s * pixel_edge) * spec.subpixel_width)
    return response[:, :-1] - response[:, 1:]


def continuous_envelope(
    spec: PulseSpec, times: npt.ArrayLike
) -> npt.NDArray[np.complex128]:
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    response = _step_response(spec, _edge_offsets(spec, times))
    return (response[:, :-1] - response[:, 1:]) @ spec.pixels


def envelope_integral(spec: PulseSpec, start: float, stop: float) -> complex:
    """Closed-form integral of the continuous filtered envelope over [start, stop]"""
    antiderivative = _step_antiderivative(
        spec, _edge_offsets(spec, np.array([start, stop]))
    )
    basis = antiderivative[:, :-1] - antiderivative[:, 1:]
    return complex((basis[1] - basis[0]) @ spec.pixels)


def quadrature_matrix(spec: PulseSpec) -> RealMatrix:
    """Q[l, j]: integral over subpixel l of pixel j's filtered response (Gauss-Legendre)"""
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_POINTS)
    width = spec.subpixel_width
    starts = np.arange(spec.num_subpixels) * width
    matrix = np.zeros((spec.num_subpixels, spec.num_pixels))
    for node, w in zip(nodes, weights):
        response = _step_response(
            spec, _edge_offsets(spec, starts + width * (node + 1) / 2)
        )
        matrix += (width / 2) * w * (response[:, :-1] - response[:, 1:])
    return matrix


def amplitude_maps(spec: PulseSpec) -> AmplitudeMap:
    transfer = filter_matrix(spec)
    if spec.interpolation == Interpolation.CONSTANT:
        return AmplitudeMap(amplitude=transfer)

    width = spec.subpixel_width
    slope = np.zeros_like(transfer)
    slope[:-1] = (transfer[1:] - transfer[:-1]) / width
    # intercept a_l from a_l dt + b_l dt^2 / 2 = integral over the subpixel
    intercept = (quadrature_matrix(spec) - slope * width**2 / 2) / width
    return AmplitudeMap(amplitude=intercept, slope=slope)


def subpixel_amplitudes(spec: PulseSpec) -> SubpixelSequence:
    values = filter_matrix(spec) @ spec.pixels
    if spec.interpolation == Interpolation.CONSTANT:
        return SubpixelSequence(values=values)
    maps = amplitude_maps(spec)
    assert maps.slope is not None
    return SubpixelSequence(
        values=values,
        intercepts=maps.amplitude @ spec.pixels,
        slopes=maps.slope @ spec.pixels,
    )


def rabi_count(amplitude: float, duration: float) -> float:
    """Number of Rabi oscillations of a unit transition driven at |amplitude| rad/ns"""
    return abs(amplitude) * duration / (2 * math.pi)
