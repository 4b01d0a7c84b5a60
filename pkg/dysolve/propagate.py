"""
Contraction stage: per-subpixel coefficients times cached Dyson operators,
time-ordered products and propagator derivatives.

Every cached operator is scaled by a product of per-position factors. A factor
is one row of a small table built per subpixel:

    rows [0, q)      amplitude of channel c        (sign +)
    rows [q, 2q)     conjugate amplitude           (sign -)
    rows [2q, 3q)    slope of channel c            (slope position, sign +)
    rows [3q, 4q)    conjugate slope               (slope position, sign -)
    row 4q           ones, pads orders below the truncation order

so a coefficient is a product over the rows named by the entry's labels, and
its derivative with respect to one row is a sum of leave-one-out products.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import typing

import numpy as np

from . import exception
from .core import ComplexMatrix, SystemModel, unitarity_defect
from .dyson import DysonCache, FrequencyAssignment
from .pulses import SubpixelSequence
from .utils import chunks, parallel_map

# P * N^2 complex entries kept in memory for gradient scans
RETAIN_LIMIT = 2**26
CHUNK_ENTRIES = 2**22

Sequences = typing.Union[SubpixelSequence, typing.Sequence[SubpixelSequence]]


class Variable(enum.Enum):
    AMPLITUDE = 0
    CONJUGATE_AMPLITUDE = 1
    SLOPE = 2
    CONJUGATE_SLOPE = 3

    def row(self, channel: int, num_channels: int) -> int:
        return self.value * num_channels + channel


@dataclasses.dataclass(frozen=True, eq=False)
class _Layout:
    labels: np.ndarray
    frequencies: np.ndarray
    slope_labels: np.ndarray
    slope_frequencies: np.ndarray


def _labels_of(
    assignment: FrequencyAssignment, width: int, q: int, slope_position: int = -1
) -> typing.List[int]:
    labels = []
    for p, (c, s) in enumerate(zip(assignment.channels, assignment.signs)):
        row = c + (0 if s > 0 else q)
        if p == slope_position:
            row += 2 * q
        labels.append(row)
    return labels + [4 * q] * (width - len(labels))


def _layout(cache: DysonCache) -> _Layout:
    q = cache.num_channels
    width = max(cache.truncation_order, 1)
    labels = [_labels_of(a, width, q) for a in cache.keys]
    frequencies = [a.frequencies(cache.carriers).sum() for a in cache.keys]
    slope_labels = [_labels_of(a, width, q, p) for a, p in cache.slope_keys]
    slope_frequencies = [a.frequencies(cache.carriers).sum() for a, _ in cache.slope_keys]
    return _Layout(
        labels=np.asarray(labels, dtype=np.int64).reshape(len(labels), width),
        frequencies=np.asarray(frequencies, dtype=np.float64),
        slope_labels=np.asarray(slope_labels, dtype=np.int64).reshape(-1, width),
        slope_frequencies=np.asarray(slope_frequencies, dtype=np.float64),
    )


def _as_sequences(sequences: Sequences) -> typing.Tuple[SubpixelSequence, ...]:
    if isinstance(sequences, SubpixelSequence):
        return (sequences,)
    return tuple(sequences)


def check_sequences(
    cache: DysonCache, sequences: Sequences
) -> typing.Tuple[SubpixelSequence, ...]:
    sequences = _as_sequences(sequences)
    if len(sequences) != cache.num_channels:
        raise exception.LengthMismatch(
            f"{len(sequences)} sequences for {cache.num_channels} channels"
        )
    lengths = {len(s) for s in sequences}
    if len(lengths) != 1 or 0 in lengths:
        raise exception.LengthMismatch(f"Sequence lengths differ or are empty: {lengths}")
    return sequences


def _uses_slopes(cache: DysonCache, sequences: typing.Tuple[SubpixelSequence, ...]) -> bool:
    linear = any(s.linear for s in sequences)
    if linear and not cache.slope_entries:
        logging.warning(
            "Linear subpixels given but the cache has no slope entries, dropping slope terms"
        )
    return linear and bool(cache.slope_entries)


def _table(
    sequences: typing.Tuple[SubpixelSequence, ...], rows: slice, slopes: bool
) -> np.ndarray:
    q = len(sequences)
    size = rows.stop - rows.start
    table = np.zeros((4 * q + 1, size), dtype=np.complex128)
    for c, seq in enumerate(sequences):
        amplitude = seq.amplitudes[rows]
        table[c] = amplitude
        table[q + c] = np.conj(amplitude)
        if slopes and seq.slopes is not None:
            table[2 * q + c] = seq.slopes[rows]
            table[3 * q + c] = np.conj(seq.slopes[rows])
    table[4 * q] = 1
    return table


def _phases(frequencies: np.ndarray, rows: slice, dt: float) -> np.ndarray:
    times = np.arange(rows.start, rows.stop) * dt
    return np.exp(1j * np.outer(times, frequencies))


def _products(
    table: np.ndarray, labels: np.ndarray, phases: np.ndarray, row: typing.Optional[int]
) -> np.ndarray:
    """(rows, entries) coefficients, or their derivative with respect to `row`"""
    if not labels.shape[0]:
        return np.zeros((table.shape[1], 0), dtype=np.complex128)
    factors = table[labels]  # (R, width, P)
    if row is None:
        return phases * np.prod(factors, axis=1).T
    ones = np.ones_like(factors[:, :1])
    before = np.concatenate([ones, np.cumprod(factors, axis=1)[:, :-1]], axis=1)
    after = np.concatenate(
        [np.cumprod(factors[:, ::-1], axis=1)[:, ::-1][:, 1:], ones], axis=1
    )
    mask = (labels == row)[:, :, None]
    return phases * np.sum(mask * before * after, axis=1).T


def coefficient(
    l: int,
    assignment: FrequencyAssignment,
    sequences: Sequences,
    carriers: typing.Sequence[float],
    dt: float,
) -> complex:
    """exp(i sum(omega) l dt) times the product of amplitudes (or conjugates)"""
    sequences = _as_sequences(sequences)
    value = np.exp(1j * assignment.frequencies(carriers).sum() * l * dt)
    for c, s in zip(assignment.channels, assignment.signs):
        amplitude = sequences[c].amplitudes[l]
        value *= amplitude if s > 0 else np.conj(amplitude)
    return complex(value)


def coefficient_tensor(
    cache: DysonCache, sequences: Sequences, rows: typing.Optional[slice] = None
) -> np.ndarray:
    """(P, R) coefficients in `cache.keys` order"""
    sequences = check_sequences(cache, sequences)
    rows = rows or slice(0, len(sequences[0]))
    layout = _layout(cache)
    table = _table(sequences, rows, False)
    return _products(
        table, layout.labels, _phases(layout.frequencies, rows, cache.subpixel_width), None
    )


def _chunk_size(cache: DysonCache) -> int:
    per_row = (cache.entry_count + len(cache.slope_entries)) * max(
        cache.truncation_order, 1
    ) + cache.dimension**2
    return max(1, CHUNK_ENTRIES // per_row)


def _contract(
    cache: DysonCache,
    layout: _Layout,
    sequences: typing.Tuple[SubpixelSequence, ...],
    rows: slice,
    slopes: bool,
    row: typing.Optional[int] = None,
) -> np.ndarray:
    dt = cache.subpixel_width
    table = _table(sequences, rows, slopes)
    size = cache.dimension
    coefficients = _products(table, layout.labels, _phases(layout.frequencies, rows, dt), row)
    steps = (coefficients @ cache.tensor.reshape(cache.entry_count, -1)).reshape(
        -1, size, size
    )
    if slopes:
        slope_coefficients = _products(
            table,
            layout.slope_labels,
            _phases(layout.slope_frequencies, rows, dt),
            row,
        )
        steps += (
            slope_coefficients @ cache.slope_tensor.reshape(len(cache.slope_entries), -1)
        ).reshape(-1, size, size)
    return steps


def _blocks(cache: DysonCache, rows: slice) -> typing.List[slice]:
    return [
        slice(rows.start + s.start, rows.start + s.stop)
        for s in chunks(rows.stop - rows.start, _chunk_size(cache))
    ]


def step_unitaries(
    cache: DysonCache,
    sequences: Sequences,
    model: typing.Optional[SystemModel] = None,
    rows: typing.Optional[slice] = None,
    threads: typing.Optional[int] = None,
) -> np.ndarray:
    """(P, N, N) array of U_l for the subpixels in `rows` (all by default)"""
    if model is not None:
        cache.verify(model)
    sequences = check_sequences(cache, sequences)
    rows = rows or slice(0, len(sequences[0]))
    layout = _layout(cache)
    slopes = _uses_slopes(cache, sequences)
    parts = parallel_map(
        lambda block: _contract(cache, layout, sequences, block, slopes),
        _blocks(cache, rows),
        threads=threads,
    )
    return np.concatenate(parts, axis=0)


def step_derivatives(
    cache: DysonCache,
    sequences: Sequences,
    channel: int,
    variable: Variable = Variable.AMPLITUDE,
    rows: typing.Optional[slice] = None,
) -> np.ndarray:
    """(P, N, N) array of dU_l / d(variable of `channel` at subpixel l)"""
    sequences = check_sequences(cache, sequences)
    if not 0 <= channel < cache.num_channels:
        raise exception.IndexOutOfRange(f"Channel {channel} of {cache.num_channels}")
    rows = rows or slice(0, len(sequences[0]))
    layout = _layout(cache)
    slopes = _uses_slopes(cache, sequences)
    row = variable.row(channel, cache.num_channels)
    return np.concatenate(
        [
            _contract(cache, layout, sequences, block, slopes, row)
            for block in _blocks(cache, rows)
        ],
        axis=0,
    )


def total_propagator(steps: typing.Union[np.ndarray, typing.Sequence[ComplexMatrix]]) -> ComplexMatrix:
    """U_{P-1} ... U_1 U_0 by pairwise reduction"""
    if not len(steps):
        raise exception.DimensionMismatch("No steps to multiply")
    shapes = {np.shape(s) for s in steps}
    if len(shapes) != 1:
        raise exception.DimensionMismatch(f"Steps have different shapes: {shapes}")
    shape = shapes.pop()
    if len(shape) != 2 or shape[0] != shape[1]:
        raise exception.DimensionMismatch(f"Steps must be square, got {shape}")
    level = np.asarray(steps, dtype=np.complex128)
    while level.shape[0] > 1:
        even = level.shape[0] - level.shape[0] % 2
        paired = level[1:even:2] @ level[0:even:2]
        level = np.concatenate([paired, level[even:]], axis=0)
    return level[0]


@dataclasses.dataclass(frozen=True, eq=False)
class PropagatorResult:
    total: ComplexMatrix
    order: int
    subpixel_width: float
    num_subpixels: int
    steps: typing.Optional[np.ndarray] = None

    @property
    def duration(self) -> float:
        return self.num_subpixels * self.subpixel_width

    @property
    def unitarity_defect(self) -> float:
        return unitarity_defect(self.total)


def propagate(
    cache: DysonCache,
    sequences: Sequences,
    model: typing.Optional[SystemModel] = None,
    retain_steps: typing.Optional[bool] = None,
    threads: typing.Optional[int] = None,
) -> PropagatorResult:
    """Total propagator over the sequences.

    `retain_steps` None keeps the per-subpixel unitaries only while
    P N^2 <= RETAIN_LIMIT, True always keeps them, False never does.
    """
    sequences = check_sequences(cache, sequences)
    count = len(sequences[0])
    size = cache.dimension
    fits = count * size * size <= RETAIN_LIMIT
    retain = fits if retain_steps is None else retain_steps
    if retain or fits:
        steps = step_unitaries(cache, sequences, model=model, threads=threads)
        total = total_propagator(steps)
    else:
        if model is not None:
            cache.verify(model)
        steps = None
        total = np.eye(size, dtype=np.complex128)
        block = max(1, RETAIN_LIMIT // (size * size))
        for rows in chunks(count, block):
            part = step_unitaries(cache, sequences, rows=rows, threads=threads)
            total = total_propagator(part) @ total

    result = PropagatorResult(
        total=total,
        order=cache.truncation_order,
        subpixel_width=cache.subpixel_width,
        num_subpixels=count,
        steps=steps if retain else None,
    )
    logging.debug(
        f"Propagated {count} subpixels at order {cache.truncation_order}, "
        f"unitarity defect {result.unitarity_defect:.3e}"
    )
    return result


def _prefix_suffix(steps: np.ndarray, l: int) -> typing.Tuple[ComplexMatrix, ComplexMatrix]:
    size = steps.shape[1]
    identity = np.eye(size, dtype=np.complex128)
    prefix = total_propagator(steps[:l]) if l else identity
    suffix = total_propagator(steps[l + 1 :]) if l + 1 < len(steps) else identity
    return prefix, suffix


def propagator_derivative(
    cache: DysonCache,
    sequences: Sequences,
    l: int,
    steps: typing.Optional[np.ndarray] = None,
    channel: int = 0,
) -> typing.Tuple[ComplexMatrix, ComplexMatrix]:
    """(dU/ds_l, dU/ds_l*) of the total propagator for one channel"""
    sequences = check_sequences(cache, sequences)
    count = len(sequences[0])
    if not 0 <= l < count:
        raise exception.IndexOutOfRange(f"Subpixel {l} outside [0, {count})")
    if steps is None:
        steps = step_unitaries(cache, sequences)
    prefix, suffix = _prefix_suffix(steps, l)
    rows = slice(l, l + 1)
    plain = step_derivatives(cache, sequences, channel, Variable.AMPLITUDE, rows)[0]
    conjugate = step_derivatives(
        cache, sequences, channel, Variable.CONJUGATE_AMPLITUDE, rows
    )[0]
    return suffix @ plain @ prefix, suffix @ conjugate @ prefix


@dataclasses.dataclass(frozen=True, eq=False)
class TraceDerivatives:
    """z = Tr(W U) and dz / d(table row) for every subpixel: shape (4q, P)"""

    value: complex
    total: ComplexMatrix
    derivatives: np.ndarray

    def of(self, variable: Variable, channel: int) -> np.ndarray:
        q = self.derivatives.shape[0] // 4
        return self.derivatives[variable.row(channel, q)]


def _trace_block(
    cache: DysonCache,
    layout: _Layout,
    sequences: typing.Tuple[SubpixelSequence, ...],
    rows: slice,
    slopes: bool,
    projections: np.ndarray,
    out: np.ndarray,
) -> None:
    """out[row, l] += sum_r dc_r/d(row) * Tr(G_l S_r) for the subpixels in `rows`"""
    dt = cache.subpixel_width
    q = cache.num_channels
    table = _table(sequences, rows, slopes)
    flat = projections.reshape(projections.shape[0], -1)
    base = flat @ cache.tensor.reshape(cache.entry_count, -1).T
    slope = None
    if slopes:
        slope = flat @ cache.slope_tensor.reshape(len(cache.slope_entries), -1).T
    phases = _phases(layout.frequencies, rows, dt)
    slope_phases = _phases(layout.slope_frequencies, rows, dt) if slopes else None
    for row in range(4 * q if slopes else 2 * q):
        value = np.sum(_products(table, layout.labels, phases, row) * base, axis=1)
        if slope is not None:
            value += np.sum(
                _products(table, layout.slope_labels, slope_phases, row) * slope, axis=1
            )
        out[row, rows] += value


def trace_derivatives(
    cache: DysonCache,
    sequences: Sequences,
    weight: ComplexMatrix,
    steps: typing.Optional[np.ndarray] = None,
) -> TraceDerivatives:
    """Derivatives of Tr(weight @ U) with respect to every subpixel variable.

    G_l = Prefix_l @ weight @ Suffix_l, so that dz = Tr(G_l dU_l). Prefixes
    are recomputed per block when P N^2 exceeds RETAIN_LIMIT.
    """
    sequences = check_sequences(cache, sequences)
    count = len(sequences[0])
    size = cache.dimension
    q = cache.num_channels
    layout = _layout(cache)
    slopes = _uses_slopes(cache, sequences)
    identity = np.eye(size, dtype=np.complex128)
    block = count if count * size * size <= RETAIN_LIMIT else max(1, RETAIN_LIMIT // (size * size))
    blocks = list(chunks(count, block))

    if steps is not None and len(blocks) == 1:
        cached = {0: np.asarray(steps)}
    else:
        cached = {}
    # forward pass: prefix at every block start
    starts = []
    running = identity
    for i, rows in enumerate(blocks):
        starts.append(running)
        part = cached.get(i)
        if part is None:
            part = step_unitaries(cache, sequences, rows=rows)
            if len(blocks) == 1:
                cached[i] = part
        running = total_propagator(part) @ running
    total = running

    derivatives = np.zeros((4 * q, count), dtype=np.complex128)
    suffix = identity
    for i in reversed(range(len(blocks))):
        rows = blocks[i]
        part = cached.get(i)
        if part is None:
            part = step_unitaries(cache, sequences, rows=rows)
        length = rows.stop - rows.start
        prefixes = np.empty((length, size, size), dtype=np.complex128)
        prefixes[0] = starts[i]
        for k in range(1, length):
            prefixes[k] = part[k - 1] @ prefixes[k - 1]
        suffixes = np.empty_like(prefixes)
        current = suffix
        for k in reversed(range(length)):
            suffixes[k] = current
            current = current @ part[k]
        projections = prefixes @ weight @ suffixes
        # Tr(G S) = sum_ij G^T_ij S_ij
        transposed = np.swapaxes(projections, 1, 2)
        for sub in chunks(length, _chunk_size(cache)):
            _trace_block(
                cache,
                layout,
                sequences,
                slice(rows.start + sub.start, rows.start + sub.stop),
                slopes,
                transposed[sub],
                derivatives,
            )
        suffix = current

    return TraceDerivatives(
        value=complex(np.trace(weight @ total)), total=total, derivatives=derivatives
    )
