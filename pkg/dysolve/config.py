"""
JSON documents read and written by the command line.

Frequencies are given in GHz (drift, carriers, filter bandwidth) and
amplitudes in MHz; both are converted to rad/ns here and nowhere else.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import typing

import numpy as np

from . import exception
from .control import GateTarget, GrapeSettings, named_gate
from .core import DriveChannel, SystemModel, validate_system
from .models import (
    BenchmarkEnsembleSpec,
    CoupledSpec,
    TransmonSpec,
    build_benchmark_ensemble,
    build_cross_resonance,
    calibrate_transmon,
)
from .pulses import Interpolation, PulseSpec
from .utils import angular_to_ghz, angular_to_mhz, atomic_write, ghz_to_angular, mhz_to_angular

CACHE_DIR_ENV = "DYSOLVE_CACHE_DIR"
DEFAULT_CACHE_DIR = ".dysolve_cache"


def cache_dir() -> str:
    return os.environ.get(CACHE_DIR_ENV) or DEFAULT_CACHE_DIR


def load_json(path: str) -> typing.Dict[str, typing.Any]:
    try:
        with open(path) as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise exception.ConfigException(f"Cannot read {path}: {e}") from e
    if not isinstance(document, dict):
        raise exception.ConfigException(f"{path} must hold a JSON object")
    return document


def dump_json(document: typing.Dict[str, typing.Any], path: str) -> None:
    with atomic_write(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def _require(document: typing.Dict[str, typing.Any], key: str, where: str) -> typing.Any:
    if key not in document:
        raise exception.ConfigException(f"Missing '{key}' in {where}")
    return document[key]


def _complex_matrix(value: typing.Any, where: str) -> np.ndarray:
    """Square complex matrix from `[re, im]` innermost pairs, a plain real
    array, or a `{"real", "imag"}` object"""
    if isinstance(value, dict):
        real = np.asarray(_require(value, "real", where), dtype=np.float64)
        imag = np.asarray(value.get("imag", np.zeros_like(real)), dtype=np.float64)
        if real.shape != imag.shape:
            raise exception.ConfigException(f"real/imag shapes differ in {where}")
        return real + 1j * imag
    try:
        array = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise exception.ConfigException(f"Bad matrix in {where}: {e}") from e
    if array.ndim == 3:
        if array.shape[-1] != 2:
            raise exception.ConfigException(
                f"Entries of {where} must be [re, im] pairs, got shape {array.shape}"
            )
        return array[..., 0] + 1j * array[..., 1]
    return array.astype(np.complex128)


def _matrix_document(matrix: np.ndarray) -> typing.Dict[str, typing.Any]:
    return {"real": np.real(matrix).tolist(), "imag": np.imag(matrix).tolist()}


@dataclasses.dataclass
class SystemBundle:
    """A system document resolved to a model, with the gate and pulses some kinds carry"""

    model: SystemModel
    target: typing.Optional[GateTarget] = None
    pulses: typing.Optional[typing.List[PulseSpec]] = None


def _transmon(document: typing.Dict[str, typing.Any], cutoff: int, keep: int) -> TransmonSpec:
    if "ec_ghz" in document:
        return TransmonSpec(
            ghz_to_angular(document["ec_ghz"]),
            ghz_to_angular(_require(document, "ej_ghz", "transmon")),
            cutoff,
            keep,
        )
    return calibrate_transmon(
        ghz_to_angular(_require(document, "frequency_ghz", "transmon")),
        mhz_to_angular(_require(document, "anharmonicity_mhz", "transmon")),
        cutoff,
        keep,
    )


def parse_system(
    document: typing.Dict[str, typing.Any], seed: typing.Optional[int] = None
) -> SystemBundle:
    kind = document.get("kind", "matrix")
    if kind == "matrix":
        eigenvalues = ghz_to_angular(
            np.asarray(_require(document, "eigenvalues_ghz", "system"), dtype=np.float64)
        )
        channels = tuple(
            DriveChannel(
                dipole=_complex_matrix(_require(c, "dipole", "channel"), "dipole"),
                carrier=ghz_to_angular(_require(c, "carrier_ghz", "channel")),
            )
            for c in _require(document, "channels", "system")
        )
        model, _ = validate_system(SystemModel(eigenvalues=eigenvalues, channels=channels))
        return SystemBundle(model=model)
    if kind == "cross_resonance":
        cutoff = int(document.get("charge_cutoff", 15))
        levels = int(document.get("levels_per_qubit", 5))
        spec = CoupledSpec(
            control=_transmon(_require(document, "control", "system"), cutoff, levels),
            target=_transmon(_require(document, "target", "system"), cutoff, levels),
            coupling=mhz_to_angular(_require(document, "coupling_mhz", "system")),
            levels_per_qubit=levels,
        )
        model, target = build_cross_resonance(spec)
        return SystemBundle(model=model, target=target)
    if kind == "benchmark":
        fields = {f.name for f in dataclasses.fields(BenchmarkEnsembleSpec)}
        options = {k: v for k, v in document.items() if k in fields}
        if seed is not None:
            options["seed"] = seed
        if options.get("filter_bandwidth") is None:
            options.pop("filter_bandwidth", None)
        else:
            options["filter_bandwidth"] = ghz_to_angular(options["filter_bandwidth"])
        model, pulses = build_benchmark_ensemble(BenchmarkEnsembleSpec(**options))
        model, _ = validate_system(model)
        return SystemBundle(model=model, pulses=pulses)
    raise exception.ConfigException(f"Unknown system kind {kind!r}")


def load_system(path: str, seed: typing.Optional[int] = None) -> SystemBundle:
    return parse_system(load_json(path), seed=seed)


def system_document(model: SystemModel) -> typing.Dict[str, typing.Any]:
    return {
        "kind": "matrix",
        "eigenvalues_ghz": [angular_to_ghz(float(v)) for v in model.eigenvalues],
        "channels": [
            {"carrier_ghz": angular_to_ghz(c.carrier), "dipole": _matrix_document(c.dipole)}
            for c in model.channels
        ],
    }


def parse_pulses(
    document: typing.Dict[str, typing.Any],
    subpixels_per_pixel: typing.Optional[int] = None,
    interpolation: typing.Optional[str] = None,
) -> typing.List[PulseSpec]:
    bandwidth = document.get("filter_bandwidth_ghz", document.get("bandwidth_ghz"))
    channels = document.get("channels")
    if channels is None:
        channels = [{"pixels": _require(document, "pixels", "pulse")}]
    specs = []
    for channel in channels:
        if "pixels" in channel:
            pairs = np.asarray(channel["pixels"], dtype=np.float64)
            if pairs.ndim != 2 or pairs.shape[1] != 2:
                raise exception.ConfigException("pulse pixels must be [re, im] pairs")
            amplitudes = pairs[:, 0] + 1j * pairs[:, 1]
        else:
            real = np.asarray(_require(channel, "real_mhz", "pulse channel"), dtype=np.float64)
            imag = np.asarray(channel.get("imag_mhz", np.zeros_like(real)), dtype=np.float64)
            if real.shape != imag.shape:
                raise exception.ConfigException("real_mhz and imag_mhz lengths differ")
            amplitudes = real + 1j * imag
        specs.append(
            PulseSpec(
                pixels=mhz_to_angular(amplitudes),
                pixel_width=float(_require(document, "pixel_width_ns", "pulse")),
                subpixels_per_pixel=int(
                    subpixels_per_pixel or document.get("subpixels_per_pixel", 1)
                ),
                filter_bandwidth=math.inf if bandwidth is None else ghz_to_angular(bandwidth),
                interpolation=Interpolation(
                    interpolation or document.get("interpolation", "constant")
                ),
            )
        )
    return specs


def load_pulses(
    path: str,
    subpixels_per_pixel: typing.Optional[int] = None,
    interpolation: typing.Optional[str] = None,
) -> typing.List[PulseSpec]:
    return parse_pulses(load_json(path), subpixels_per_pixel, interpolation)


def pulse_document(specs: typing.Sequence[PulseSpec]) -> typing.Dict[str, typing.Any]:
    first = specs[0]
    return {
        "pixel_width_ns": first.pixel_width,
        "subpixels_per_pixel": first.subpixels_per_pixel,
        "filter_bandwidth_ghz": angular_to_ghz(first.filter_bandwidth) if first.filtered else None,
        "interpolation": first.interpolation.value,
        "channels": [
            {
                "real_mhz": [float(v) for v in np.real(angular_to_mhz(s.pixels))],
                "imag_mhz": [float(v) for v in np.imag(angular_to_mhz(s.pixels))],
            }
            for s in specs
        ],
    }


def dump_pulses(specs: typing.Sequence[PulseSpec], path: str) -> None:
    dump_json(pulse_document(specs), path)


@dataclasses.dataclass
class OptimizationConfig:
    target: typing.Optional[GateTarget]
    settings: GrapeSettings
    mode: str = "grape"
    drift_frame: bool = True
    qubit_dims: typing.Optional[typing.Tuple[int, ...]] = None


def parse_optimization(
    document: typing.Dict[str, typing.Any], default: typing.Optional[GateTarget] = None
) -> OptimizationConfig:
    target = default
    if "target" in document:
        value = document["target"]
        matrix = named_gate(value) if isinstance(value, str) else _complex_matrix(value, "target")
        if "subspace" in document:
            subspace = document["subspace"]
        elif default is not None:
            subspace = default.subspace
        else:
            subspace = list(range(matrix.shape[0]))
        target = GateTarget(target=matrix, subspace=tuple(subspace))
    tolerances = document.get("tolerances", {})
    try:
        settings = GrapeSettings(
            policy=document.get("epsilon_policy", "backtracking"),
            epsilon=float(document.get("epsilon", 1e-3)),
            armijo=float(document.get("armijo", 1e-4)),
            shrink=float(document.get("shrink", 0.5)),
            max_halvings=int(document.get("max_halvings", 40)),
            max_iters=int(document.get("max_iters", 500)),
            gradient_tolerance=float(tolerances.get("gradient", 1e-10)),
            infidelity_tolerance=float(tolerances.get("infidelity", 1e-10)),
            log_every=int(document.get("log_every", 10)),
        )
    except ValueError as e:
        raise exception.ConfigException(f"Bad optimization settings: {e}") from e
    mode = document.get("mode", "grape")
    if mode not in ("grape", "flat"):
        raise exception.ConfigException(f"Unknown optimization mode {mode!r}")
    qubit_dims = document.get("qubit_dims")
    return OptimizationConfig(
        target=target,
        settings=settings,
        mode=mode,
        drift_frame=bool(document.get("drift_frame", True)),
        qubit_dims=tuple(qubit_dims) if qubit_dims else None,
    )


@dataclasses.dataclass
class BenchmarkConfig:
    orders: typing.Tuple[int, ...] = (2, 3, 4)
    drives: typing.Tuple[int, ...] = (1,)
    subpixels: typing.Tuple[int, ...] = (5, 10, 20, 40)
    seeds: int = 1
    duration: float = 100.0
    dimension: int = 25


@dataclasses.dataclass
class GradcheckConfig:
    step: float = 1e-6
    tolerance: float = 1e-5
    mismatched_filter: bool = False


@dataclasses.dataclass
class JobConfig:
    system: typing.Optional[str] = None
    pulse: typing.Optional[str] = None
    optimization: typing.Optional[str] = None
    output_dir: str = "."
    order: int = 4
    subpixels_per_pixel: typing.Optional[int] = None
    interpolation: typing.Optional[str] = None
    # None retains the steps while they fit in memory
    retain_steps: typing.Optional[bool] = None
    threads: typing.Optional[int] = None
    seed: typing.Optional[int] = None
    cache: typing.Optional[str] = None
    reference: bool = False
    warm_start: typing.Optional[str] = None
    benchmark: BenchmarkConfig = dataclasses.field(default_factory=BenchmarkConfig)
    gradcheck: GradcheckConfig = dataclasses.field(default_factory=GradcheckConfig)

    def __post_init__(self):
        if not 0 <= self.order <= 4:
            raise exception.UnsupportedOrder(f"order must be in [0, 4], got {self.order}")
        if self.interpolation is not None:
            Interpolation(self.interpolation)
        for name in ("system", "pulse", "optimization", "warm_start"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise exception.ConfigException(f"{name} file {path} does not exist")

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


def parse_job(
    document: typing.Dict[str, typing.Any], base: str = "."
) -> JobConfig:
    def resolve(value: typing.Optional[str]) -> typing.Optional[str]:
        if value is None or os.path.isabs(value):
            return value
        return os.path.normpath(os.path.join(base, value))

    known = {f.name for f in dataclasses.fields(JobConfig)}
    unknown = set(document) - known
    if unknown:
        raise exception.ConfigException(f"Unknown job keys {sorted(unknown)}")
    options = dict(document)
    for name in ("system", "pulse", "optimization", "cache", "warm_start"):
        options[name] = resolve(options.get(name))
    options["output_dir"] = resolve(options.get("output_dir", "."))
    bench = options.pop("benchmark", {}) or {}
    check = options.pop("gradcheck", {}) or {}
    try:
        benchmark = BenchmarkConfig(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in bench.items()}
        )
        gradcheck = GradcheckConfig(**check)
        return JobConfig(benchmark=benchmark, gradcheck=gradcheck, **options)
    except (TypeError, ValueError) as e:
        raise exception.ConfigException(f"Bad job config: {e}") from e


def load_job(path: typing.Optional[str]) -> JobConfig:
    if path is None:
        return JobConfig()
    return parse_job(load_json(path), base=os.path.dirname(os.path.abspath(path)))


def two_level_problem(
    subpixels_per_pixel: int = 20, num_pixels: int = 10
) -> typing.Tuple[SystemModel, typing.List[PulseSpec], GateTarget]:
    """Resonantly driven qubit at 1 GHz with a flat 10 ns X90 guess"""
    frequency = ghz_to_angular(1.0)
    model = SystemModel(
        eigenvalues=np.array([0.0, frequency]),
        channels=(DriveChannel(np.array([[0, 1], [1, 0]]), frequency),),
    )
    amplitude = math.pi / 2 / num_pixels
    pulses = [
        PulseSpec(
            pixels=np.full(num_pixels, 0.8 * amplitude),
            pixel_width=1.0,
            subpixels_per_pixel=subpixels_per_pixel,
        )
    ]
    return model, pulses, GateTarget(target=named_gate("X90"), subspace=(0, 1))
