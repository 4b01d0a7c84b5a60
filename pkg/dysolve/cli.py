import csv
import dataclasses
import datetime
import functools
import logging
import math
import os
import sys
import time
import typing
import zlib

import click
import numpy as np

from . import __version__, exception
from .config import (
    JobConfig,
    SystemBundle,
    cache_dir,
    dump_json,
    dump_pulses,
    load_job,
    load_json,
    load_pulses,
    load_system,
    parse_optimization,
    system_document,
    two_level_problem,
)
from .control import (
    GateTarget,
    fidelity,
    fidelity_gradient,
    flat_pulse_fidelity,
    grape_optimize,
    local_z_corrected_fidelity,
)
from .core import SystemModel, frobenius_distance
from .dyson import DysonCache, entry_count, load_cache, prepare, save_cache, save_matrix
from .models import BenchmarkEnsembleSpec, build_benchmark_ensemble
from .oracle import filtered_envelope, reference_propagator
from .propagate import propagate
from .pulses import Interpolation, PulseSpec, amplitude_maps, subpixel_amplitudes
from .utils import THREADS, atomic_write

EXIT_CODES = (
    (exception.ValidateException, 2),
    (exception.NumericException, 3),
    (exception.VerificationException, 4),
)
CSV_SCHEMA = "#schema=1"


def handle_errors(func: typing.Callable) -> typing.Callable:
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as e:
            for cls, code in EXIT_CODES:
                if isinstance(e, cls):
                    click.echo(f"error: {type(e).__name__}: {e}", err=True)
                    sys.exit(code)
            raise

    return wrapper


@dataclasses.dataclass
class Problem:
    model: SystemModel
    pulses: typing.List[PulseSpec]
    target: typing.Optional[GateTarget] = None


def _job(ctx: click.Context) -> JobConfig:
    return ctx.obj["job"]


def _bundle(job: JobConfig) -> SystemBundle:
    if job.system is None:
        raise exception.ConfigException("The job names no system file")
    return load_system(job.system, seed=job.seed)


def _problem(job: JobConfig) -> Problem:
    if job.system is None:
        model, pulses, target = two_level_problem(job.subpixels_per_pixel or 20)
        if job.warm_start is not None:
            pulses = load_pulses(job.warm_start, job.subpixels_per_pixel, job.interpolation)
        elif job.interpolation:
            pulses = [dataclasses.replace(p, interpolation=Interpolation(job.interpolation)) for p in pulses]
        return Problem(model=model, pulses=pulses, target=target)
    bundle = _bundle(job)
    if job.warm_start is not None:
        pulses = load_pulses(job.warm_start, job.subpixels_per_pixel, job.interpolation)
    elif job.pulse is not None:
        pulses = load_pulses(job.pulse, job.subpixels_per_pixel, job.interpolation)
    elif bundle.pulses is not None:
        pulses = [
            dataclasses.replace(
                p,
                subpixels_per_pixel=job.subpixels_per_pixel or p.subpixels_per_pixel,
                interpolation=Interpolation(job.interpolation or p.interpolation.value),
            )
            for p in bundle.pulses
        ]
    else:
        raise exception.ConfigException("The job names no pulse file")
    return Problem(model=bundle.model, pulses=pulses, target=bundle.target)


def _cache_path(job: JobConfig, model: SystemModel, dt: float, slopes: bool) -> str:
    if job.cache is not None:
        return job.cache
    name = f"{model.fingerprint[:16]}-n{job.order}-dt{dt:.6g}{'-s' if slopes else ''}.dysn"
    return os.path.join(cache_dir(), name)


def _cache(job: JobConfig, problem: Problem) -> DysonCache:
    dt = problem.pulses[0].subpixel_width
    slopes = problem.pulses[0].interpolation == Interpolation.LINEAR
    path = _cache_path(job, problem.model, dt, slopes)
    if os.path.isfile(path):
        cache = load_cache(path, problem.model)
        if (
            cache.truncation_order == job.order
            and math.isclose(cache.subpixel_width, dt, rel_tol=1e-12)
            and cache.with_slopes >= slopes
        ):
            return cache
        logging.info(f"Cache {path} does not match the job, preparing a new one")
    cache = prepare(problem.model, job.order, dt, with_slopes=slopes)
    save_cache(cache, path)
    return cache


def _write_meta(path: str, **fields: typing.Any) -> None:
    meta = {
        "version": __version__,
        "written_at": datetime.datetime.now().isoformat(timespec="seconds"),
        **fields,
    }
    dump_json(meta, f"{os.path.splitext(path)[0]}.meta.json")


def _write_csv(path: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence]) -> None:
    with atomic_write(path, "w") as f:
        f.write(f"{CSV_SCHEMA}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _target(problem: Problem, job: JobConfig) -> typing.Tuple[GateTarget, typing.Any]:
    document = load_json(job.optimization) if job.optimization else {}
    options = parse_optimization(document, default=problem.target)
    if options.target is None:
        raise exception.ConfigException("No target gate: set 'target' in the optimization config")
    target = options.target
    if options.drift_frame:
        target = target.in_drift_frame(problem.model.eigenvalues, problem.pulses[0].duration)
    return target, options


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Job config JSON")
@click.option("--order", type=int, help="Truncation order")
@click.option("--subpixels", type=int, help="Subpixels per pixel")
@click.option("--seed", type=int, help="Benchmark ensemble seed")
@click.option("--threads", type=int, help="Worker threads (default: logical cores)")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory")
@click.option(
    "--log-level",
    default="WARNING",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
@click.pass_context
@handle_errors
def cli(ctx, config_path, order, subpixels, seed, threads, out, log_level):
    """Dyson-series propagators and pulse optimization for driven quantum systems."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(message)s")
    job = load_job(config_path)
    overrides = {
        "order": order,
        "subpixels_per_pixel": subpixels,
        "seed": seed,
        "threads": threads,
        "output_dir": out,
    }
    job = dataclasses.replace(job, **{k: v for k, v in overrides.items() if v is not None})
    if job.threads:
        THREADS.set(job.threads)
    ctx.obj = {"job": job}


@cli.command()
@click.pass_context
@handle_errors
def model(ctx):
    """Write the job's system as a matrix system JSON (and benchmark pulses)."""
    job = _job(ctx)
    bundle = _bundle(job)
    path = job.path("system.json")
    dump_json(system_document(bundle.model), path)
    click.echo(f"system: {path} (N={bundle.model.dimension}, q={bundle.model.num_channels})")
    click.echo(f"fingerprint: {bundle.model.fingerprint}")
    if bundle.pulses is not None:
        dump_pulses(bundle.pulses, job.path("pulse.json"))
        click.echo(f"pulse: {job.path('pulse.json')}")
    if bundle.target is not None:
        click.echo(f"computational states: {list(bundle.target.subspace)}")


@cli.command("prepare")
@click.pass_context
@handle_errors
def prepare_command(ctx):
    """Build and save the Dyson operator cache."""
    job = _job(ctx)
    problem = _problem(job)
    dt = problem.pulses[0].subpixel_width
    slopes = problem.pulses[0].interpolation == Interpolation.LINEAR
    started = time.perf_counter()
    cache = prepare(problem.model, job.order, dt, with_slopes=slopes)
    elapsed = time.perf_counter() - started
    path = _cache_path(job, problem.model, dt, slopes)
    save_cache(cache, path)
    with open(path, "rb") as f:
        checksum = zlib.crc32(f.read())
    click.echo(f"R={cache.entry_count}")
    if slopes:
        click.echo(f"slope entries={len(cache.slope_entries)}")
    click.echo(f"preparation time: {elapsed:.3f} s")
    click.echo(f"cache: {path} (crc32 {checksum:08x})")


@cli.command("propagate")
@click.pass_context
@handle_errors
def propagate_command(ctx):
    """Propagate the job's pulse and write U(0, T)."""
    job = _job(ctx)
    problem = _problem(job)
    cache = _cache(job, problem)
    sequences = [subpixel_amplitudes(p) for p in problem.pulses]
    started = time.perf_counter()
    result = propagate(cache, sequences, model=problem.model, retain_steps=job.retain_steps)
    elapsed = time.perf_counter() - started
    path = job.path("propagator.dysu")
    save_matrix(result.total, path)
    click.echo(f"propagator: {path}")
    click.echo(f"subpixels: {result.num_subpixels}")
    click.echo(f"contraction time: {elapsed:.3f} s")
    click.echo(f"unitarity defect: {result.unitarity_defect:.3e}")
    meta: typing.Dict[str, typing.Any] = {
        "order": cache.truncation_order,
        "subpixels": result.num_subpixels,
        "contraction_time": elapsed,
        "unitarity_defect": result.unitarity_defect,
    }
    if job.reference:
        reference = reference_propagator(
            problem.model, [filtered_envelope(p) for p in problem.pulses], result.duration
        )
        distance = frobenius_distance(result.total, reference)
        click.echo(f"distance to reference: {distance:.3e}")
        meta["distance"] = distance
    _write_meta(path, **meta)


def _benchmark_rows(job: JobConfig) -> typing.Iterator[typing.List[typing.Any]]:
    settings = job.benchmark
    base_seed = job.seed or 0
    for drives in settings.drives:
        systems = []
        for offset in range(settings.seeds):
            spec = BenchmarkEnsembleSpec(
                seed=base_seed + offset,
                dimension=settings.dimension,
                num_drives=drives,
                duration=settings.duration,
            )
            systems.append(build_benchmark_ensemble(spec))
        # the reference follows the subpixel staircase, so one per subpixel count
        references: typing.Dict[typing.Tuple[int, int], np.ndarray] = {}
        for order in settings.orders:
            for subpixels in settings.subpixels:
                errors, contraction, preparation = [], [], []
                for index, (model, pulses) in enumerate(systems):
                    pulses = [dataclasses.replace(p, subpixels_per_pixel=subpixels) for p in pulses]
                    if (index, subpixels) not in references:
                        references[(index, subpixels)] = reference_propagator(
                            model, [filtered_envelope(p) for p in pulses], pulses[0].duration
                        )
                    started = time.perf_counter()
                    cache = prepare(model, order, pulses[0].subpixel_width)
                    preparation.append(time.perf_counter() - started)
                    sequences = [subpixel_amplitudes(p) for p in pulses]
                    started = time.perf_counter()
                    total = propagate(cache, sequences, retain_steps=False).total
                    contraction.append(time.perf_counter() - started)
                    errors.append(frobenius_distance(total, references[(index, subpixels)]))
                row = [
                    order,
                    drives,
                    subpixels,
                    subpixels * pulses[0].num_pixels,
                    entry_count(order, drives),
                    repr(float(np.mean(errors))),
                    repr(float(np.mean(contraction))),
                    repr(float(np.mean(preparation))),
                ]
                logging.info(f"benchmark row {row}")
                yield row


@cli.command()
@click.pass_context
@handle_errors
def benchmark(ctx):
    """Error and timing sweep over truncation order, drive count and subpixels."""
    job = _job(ctx)
    path = job.path("benchmark.csv")
    started = datetime.datetime.now()
    _write_csv(
        path,
        [
            "order",
            "drives",
            "subpixels",
            "total_subpixels",
            "entries",
            "error",
            "contraction_time",
            "preparation_time",
        ],
        list(_benchmark_rows(job)),
    )
    _write_meta(
        path,
        started_at=started.isoformat(timespec="seconds"),
        seeds=job.benchmark.seeds,
        duration_ns=job.benchmark.duration,
        dimension=job.benchmark.dimension,
        entries={
            str(q): {str(n): entry_count(n, q) for n in job.benchmark.orders}
            for q in job.benchmark.drives
        },
    )
    click.echo(f"benchmark: {path}")


@cli.command()
@click.pass_context
@handle_errors
def optimize(ctx):
    """GRAPE (or flat-pulse) optimization of the job's pulse."""
    job = _job(ctx)
    problem = _problem(job)
    cache = _cache(job, problem)
    target, options = _target(problem, job)
    pulse_path = job.path("pulse_optimized.json")

    if options.mode == "flat":
        value, specs = flat_pulse_fidelity(cache, problem.pulses, target, options.qubit_dims)
        dump_pulses(specs, pulse_path)
        click.echo(f"flat pulse fidelity: {value:.10f}")
        _write_meta(pulse_path, mode="flat", fidelity=value)
        return

    started = time.perf_counter()
    trace = grape_optimize(cache, problem.pulses, target, options.settings)
    elapsed = time.perf_counter() - started
    trace_path = job.path("trace.csv")
    trace.write_csv(trace_path)
    dump_pulses(trace.specs, pulse_path)
    click.echo(f"fidelity: {trace.fidelity:.10f}")
    click.echo(f"iterations: {trace.iterations} ({trace.reason.value})")
    meta: typing.Dict[str, typing.Any] = {
        "mode": "grape",
        "fidelity": trace.fidelity,
        "iterations": trace.iterations,
        "reason": trace.reason.value,
        "wall_time": elapsed,
    }
    if options.qubit_dims is not None:
        sequences = [subpixel_amplitudes(p) for p in trace.specs]
        corrected, _ = local_z_corrected_fidelity(
            propagate(cache, sequences, retain_steps=False).total, target, options.qubit_dims
        )
        click.echo(f"Z-corrected fidelity: {corrected:.10f}")
        meta["z_corrected_fidelity"] = corrected
    _write_meta(trace_path, **meta)


def finite_difference_gradient(
    cache: DysonCache, specs: typing.Sequence[PulseSpec], target: GateTarget, step: float
) -> typing.Tuple[np.ndarray, np.ndarray]:
    def value(candidate: typing.Sequence[PulseSpec]) -> float:
        sequences = [subpixel_amplitudes(s) for s in candidate]
        return fidelity(propagate(cache, sequences, retain_steps=False).total, target)

    grad_x = np.zeros((len(specs), specs[0].num_pixels))
    grad_y = np.zeros_like(grad_x)
    for c, spec in enumerate(specs):
        for j in range(spec.num_pixels):
            for direction, out in ((1.0, grad_x), (1j, grad_y)):
                shift = np.zeros(spec.num_pixels, dtype=np.complex128)
                shift[j] = direction * step
                plus = list(specs)
                minus = list(specs)
                plus[c] = spec.with_pixels(spec.pixels + shift)
                minus[c] = spec.with_pixels(spec.pixels - shift)
                out[c, j] = (value(plus) - value(minus)) / (2 * step)
    return grad_x, grad_y


@cli.command()
@click.pass_context
@handle_errors
def gradcheck(ctx):
    """Compare analytic pulse gradients with central finite differences."""
    job = _job(ctx)
    problem = _problem(job)
    cache = _cache(job, problem)
    target, _ = _target(problem, job)
    settings = job.gradcheck
    maps = None
    if settings.mismatched_filter:
        first = problem.pulses[0]
        bandwidth = 2 / first.pixel_width if not first.filtered else first.filter_bandwidth / 2
        maps = [amplitude_maps(dataclasses.replace(p, filter_bandwidth=bandwidth)) for p in problem.pulses]
    report = fidelity_gradient(cache, problem.pulses, target, maps=maps)
    fd_x, fd_y = finite_difference_gradient(cache, problem.pulses, target, settings.step)
    scale = max(float(np.max(np.abs(fd_x))), float(np.max(np.abs(fd_y))))
    difference = max(
        float(np.max(np.abs(report.grad_x - fd_x))), float(np.max(np.abs(report.grad_y - fd_y)))
    )
    error = difference / scale if scale > 0 else difference
    click.echo(f"fidelity: {report.fidelity:.10f}")
    click.echo(f"max gradient: {scale:.6e}")
    click.echo(f"max relative error: {error:.3e}")
    if error > settings.tolerance:
        raise exception.GradientCheckFailed(
            f"Relative gradient error {error:.3e} exceeds {settings.tolerance:.1e}"
        )


def main():
    cli()
