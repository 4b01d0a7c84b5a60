"""
Preparation stage: every Dyson operator S^(m)(omega, dt) up to the truncation
order, for every channel assignment and sign pattern, plus the slope operators
used by linearly interpolated subpixels.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import struct
import time
import typing
import zlib

import numpy as np
from scipy import sparse

from . import exception, weighting
from .core import ComplexMatrix, SystemModel
from .utils import MEMORY_BUDGET, atomic_write, cached_property, parallel_map

MAX_ORDER = 4
CACHE_MAGIC = b"DYSN"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")
_COUNTS = struct.Struct("<II")
_CRC = struct.Struct("<I")


@dataclasses.dataclass(frozen=True)
class FrequencyAssignment:
    """Channel index and frequency sign of every drive insertion.

    Position 0 is the earliest insertion (rightmost operator in the chain).
    Channels are 0-based.
    """

    channels: typing.Tuple[int, ...] = ()
    signs: typing.Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "signs", tuple(int(s) for s in self.signs))
        if len(self.channels) != len(self.signs):
            raise exception.LengthMismatch(
                f"{len(self.channels)} channels but {len(self.signs)} signs"
            )
        if any(s not in (-1, 1) for s in self.signs):
            raise exception.ValidateException(f"Signs must be +-1, got {self.signs}")
        if any(c < 0 for c in self.channels):
            raise exception.IndexOutOfRange(f"Negative channel in {self.channels}")

    @property
    def order(self) -> int:
        return len(self.channels)

    @property
    def key(self) -> typing.Tuple[int, typing.Tuple[int, ...], typing.Tuple[int, ...]]:
        return (self.order, self.channels, self.signs)

    @property
    def exponents(self) -> typing.Tuple[int, ...]:
        """Per position: 1 if the amplitude enters, 0 if its conjugate does"""
        return tuple((1 + s) // 2 for s in self.signs)

    def frequencies(self, carriers: typing.Sequence[float]) -> np.ndarray:
        if self.channels and max(self.channels) >= len(carriers):
            raise exception.IndexOutOfRange(
                f"Channel {max(self.channels)} but only {len(carriers)} carriers"
            )
        return np.array(
            [s * carriers[c] for c, s in zip(self.channels, self.signs)],
            dtype=np.float64,
        )

    def flipped(self) -> FrequencyAssignment:
        return FrequencyAssignment(self.channels, tuple(-s for s in self.signs))


def all_assignments(
    order: int, num_channels: int
) -> typing.List[FrequencyAssignment]:
    """Every assignment up to `order`, sorted by (order, channels, signs)"""
    assignments = []
    for m in range(order + 1):
        for channels in itertools.product(range(num_channels), repeat=m):
            for signs in itertools.product((-1, 1), repeat=m):
                assignments.append(FrequencyAssignment(channels, signs))
    return assignments


def entry_count(order: int, num_channels: int) -> int:
    return sum((2 * num_channels) ** m for m in range(order + 1))


def slope_entry_count(order: int, num_channels: int) -> int:
    return sum(m * (2 * num_channels) ** m for m in range(order + 1))


def cumulative_vector(
    assignment: FrequencyAssignment, model: SystemModel
) -> np.ndarray:
    """c_i = sum of the frequencies at positions >= i, with a trailing 0"""
    frequencies = assignment.frequencies(model.carriers)
    return np.concatenate([np.cumsum(frequencies[::-1])[::-1], [0.0]])


def plus_count(assignment: FrequencyAssignment) -> int:
    return sum(assignment.exponents)


@dataclasses.dataclass(frozen=True, eq=False)
class Paths:
    """Index chains k^(0)..k^(m) with non-vanishing dipole products"""

    states: np.ndarray
    amplitudes: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])


def enumerate_paths(model: SystemModel, channels: typing.Sequence[int]) -> Paths:
    size = model.dimension
    states = np.arange(size, dtype=np.int64)[:, None]
    amplitudes = np.ones(size, dtype=np.complex128)
    for c in channels:
        # column k of X lists the states reachable from k
        dipole = sparse.csc_matrix(model.channels[c].dipole)
        ends = states[:, -1]
        counts = np.diff(dipole.indptr)[ends]
        total = int(counts.sum())
        parent = np.repeat(np.arange(len(ends)), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        slots = np.repeat(dipole.indptr[ends], counts) + offsets
        states = np.column_stack([states[parent], dipole.indices[slots]])
        amplitudes = amplitudes[parent] * dipole.data[slots]
    return Paths(states=states, amplitudes=amplitudes)


def _nodes(model: SystemModel, paths: Paths, shifts: np.ndarray, dt: float) -> np.ndarray:
    return (model.eigenvalues[paths.states] - shifts[None, :]) * dt


def _accumulate(size: int, paths: Paths, values: np.ndarray) -> ComplexMatrix:
    matrix = np.zeros((size, size), dtype=np.complex128)
    np.add.at(matrix, (paths.states[:, -1], paths.states[:, 0]), paths.amplitudes * values)
    return matrix


def _assignment_operators(
    model: SystemModel,
    assignment: FrequencyAssignment,
    paths: Paths,
    dt: float,
    with_slopes: bool,
) -> typing.Tuple[ComplexMatrix, typing.List[ComplexMatrix]]:
    m = assignment.order
    size = model.dimension
    prefactor = (-1j * dt / 2) ** m
    if not len(paths):
        zero = np.zeros((size, size), dtype=np.complex128)
        return zero, [zero.copy() for _ in range(m if with_slopes else 0)]

    nodes = _nodes(model, paths, cumulative_vector(assignment, model), dt)
    operator = prefactor * _accumulate(size, paths, weighting.weight(nodes))
    slopes = []
    if with_slopes:
        # -i d/d omega_p: the frequency at position p shifts nodes 0..p by -dt
        running = np.zeros(len(paths), dtype=np.complex128)
        for p in range(m):
            running = running + weighting.weight(
                np.concatenate([nodes, nodes[:, p : p + 1]], axis=1)
            )
            slopes.append(prefactor * dt * _accumulate(size, paths, running))
    return operator, slopes


def build_dyson_operator(
    model: SystemModel, assignment: FrequencyAssignment, dt: float
) -> ComplexMatrix:
    if not dt > 0:
        raise exception.ValidateException(f"Subpixel width must be positive, got {dt}")
    if assignment.order == 0:
        return model.drift_propagator(dt)
    if max(assignment.channels) >= model.num_channels:
        raise exception.IndexOutOfRange(
            f"Assignment uses channel {max(assignment.channels)} of {model.num_channels}"
        )
    paths = enumerate_paths(model, assignment.channels)
    return _assignment_operators(model, assignment, paths, dt, False)[0]


def build_slope_operators(
    model: SystemModel, assignment: FrequencyAssignment, dt: float
) -> typing.List[ComplexMatrix]:
    """-i d S / d omega[p] for every position p"""
    paths = enumerate_paths(model, assignment.channels)
    return _assignment_operators(model, assignment, paths, dt, True)[1]


@dataclasses.dataclass(frozen=True, eq=False)
class DysonCache:
    truncation_order: int
    subpixel_width: float
    carriers: typing.Tuple[float, ...]
    dimension: int
    entries: typing.Dict[FrequencyAssignment, ComplexMatrix]
    slope_entries: typing.Dict[typing.Tuple[FrequencyAssignment, int], ComplexMatrix]
    system_fingerprint: str
    with_slopes: bool = False

    @property
    def num_channels(self) -> int:
        return len(self.carriers)

    @property
    def entry_count(self) -> int:
        return len(self.entries)

    @cached_property
    def keys(self) -> typing.List[FrequencyAssignment]:
        return sorted(self.entries, key=lambda a: a.key)

    @cached_property
    def slope_keys(self) -> typing.List[typing.Tuple[FrequencyAssignment, int]]:
        return sorted(self.slope_entries, key=lambda k: (k[0].key, k[1]))

    @cached_property
    def tensor(self) -> np.ndarray:
        """(R, N, N) stack in `keys` order"""
        return np.stack([self.entries[k] for k in self.keys])

    @cached_property
    def slope_tensor(self) -> np.ndarray:
        if not self.slope_entries:
            return np.zeros((0, self.dimension, self.dimension), dtype=np.complex128)
        return np.stack([self.slope_entries[k] for k in self.slope_keys])

    @property
    def drift_step(self) -> ComplexMatrix:
        return self.entries[FrequencyAssignment()]

    def verify(self, model: SystemModel) -> None:
        if model.fingerprint != self.system_fingerprint:
            raise exception.FingerprintMismatch(
                f"Cache built for {self.system_fingerprint[:12]}, model is {model.fingerprint[:12]}"
            )


def prepare(
    model: SystemModel,
    order: int,
    dt: float,
    with_slopes: bool = False,
    threads: typing.Optional[int] = None,
    memory_budget: typing.Optional[int] = None,
) -> DysonCache:
    if not 0 <= order <= MAX_ORDER:
        raise exception.UnsupportedOrder(
            f"Truncation order {order} not in [0, {MAX_ORDER}]"
        )
    if not dt > 0:
        raise exception.ValidateException(f"Subpixel width must be positive, got {dt}")
    q = model.num_channels
    size = model.dimension
    count = entry_count(order, q) + (slope_entry_count(order, q) if with_slopes else 0)
    budget = memory_budget or MEMORY_BUDGET.get()
    if count * size * size * 16 > budget:
        raise exception.CacheSizeExceeded(
            f"{count} operators of size {size}x{size} exceed the {budget} byte budget"
        )

    started = time.perf_counter()
    groups: typing.Dict[typing.Tuple[int, ...], typing.List[FrequencyAssignment]] = {}
    for assignment in all_assignments(order, q):
        if assignment.order:
            groups.setdefault(assignment.channels, []).append(assignment)

    def build(channels: typing.Tuple[int, ...]):
        paths = enumerate_paths(model, channels)
        return [
            (a, *_assignment_operators(model, a, paths, dt, with_slopes))
            for a in groups[channels]
        ]

    entries: typing.Dict[FrequencyAssignment, ComplexMatrix] = {
        FrequencyAssignment(): model.drift_propagator(dt)
    }
    slope_entries: typing.Dict[typing.Tuple[FrequencyAssignment, int], ComplexMatrix] = {}
    for results in parallel_map(build, list(groups), threads=threads):
        for assignment, operator, slopes in results:
            entries[assignment] = operator
            for p, slope in enumerate(slopes):
                slope_entries[(assignment, p)] = slope

    logging.info(
        f"Prepared {len(entries)} Dyson operators and {len(slope_entries)} slope operators "
        f"(N={size}, q={q}, order {order}) in {time.perf_counter() - started:.3f}s"
    )
    return DysonCache(
        truncation_order=order,
        subpixel_width=float(dt),
        carriers=model.carriers,
        dimension=size,
        entries=entries,
        slope_entries=slope_entries,
        system_fingerprint=model.fingerprint,
        with_slopes=with_slopes,
    )


def _pack_assignment(assignment: FrequencyAssignment) -> bytes:
    m = assignment.order
    return struct.pack(f"<I{m}I{m}i", m, *assignment.channels, *assignment.signs)


def _pack_matrix(matrix: ComplexMatrix) -> bytes:
    return np.ascontiguousarray(matrix, dtype="<c16").tobytes()


def save_cache(cache: DysonCache, path: str) -> None:
    q = cache.num_channels
    chunks = [
        _HEADER.pack(
            CACHE_MAGIC,
            CACHE_VERSION,
            cache.dimension,
            cache.truncation_order,
            q,
            int(cache.with_slopes),
            cache.subpixel_width,
        ),
        struct.pack(f"<{q}d", *cache.carriers),
        bytes.fromhex(cache.system_fingerprint),
        _COUNTS.pack(len(cache.entries), len(cache.slope_entries)),
    ]
    for key in cache.keys:
        chunks.append(_pack_assignment(key))
        chunks.append(_pack_matrix(cache.entries[key]))
    for key, position in cache.slope_keys:
        chunks.append(_pack_assignment(key))
        chunks.append(struct.pack("<I", position))
        chunks.append(_pack_matrix(cache.slope_entries[(key, position)]))
    payload = b"".join(chunks)
    with atomic_write(path) as f:
        f.write(payload)
        f.write(_CRC.pack(zlib.crc32(payload)))
    logging.info(f"Saved Dyson cache ({len(cache.entries)} entries) to {path}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> typing.Tuple[typing.Any, ...]:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise exception.CorruptCache("Cache file truncated")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def matrix(self, size: int) -> ComplexMatrix:
        nbytes = size * size * 16
        if self.offset + nbytes > len(self.data):
            raise exception.CorruptCache("Cache file truncated")
        matrix = np.frombuffer(
            self.data, dtype="<c16", count=size * size, offset=self.offset
        ).reshape(size, size)
        self.offset += nbytes
        return matrix.astype(np.complex128)

    def assignment(self) -> FrequencyAssignment:
        (m,) = self.take("<I")
        if m > MAX_ORDER:
            raise exception.CorruptCache(f"Entry order {m} out of range")
        values = self.take(f"<{m}I{m}i")
        return FrequencyAssignment(values[:m], values[m:])


def load_cache(path: str, model: typing.Optional[SystemModel] = None) -> DysonCache:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size + _CRC.size or data[:4] != CACHE_MAGIC:
        raise exception.CorruptCache(f"{path} is not a Dyson cache file")
    reader = _Reader(data[: -_CRC.size])
    _, version, size, order, q, flags, dt = reader.take(_HEADER.format)
    if version != CACHE_VERSION:
        raise exception.VersionMismatch(
            f"Cache format version {version}, expected {CACHE_VERSION}"
        )
    (crc,) = _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(data[: -_CRC.size]) != crc:
        raise exception.CorruptCache(f"Checksum mismatch in {path}")

    carriers = reader.take(f"<{q}d")
    (fingerprint,) = reader.take("<32s")
    base_count, slope_count = reader.take(_COUNTS.format)
    entries = {}
    for _ in range(base_count):
        key = reader.assignment()
        entries[key] = reader.matrix(size)
    slope_entries = {}
    for _ in range(slope_count):
        key = reader.assignment()
        (position,) = reader.take("<I")
        slope_entries[(key, position)] = reader.matrix(size)
    if reader.offset != len(reader.data):
        raise exception.CorruptCache(f"Trailing bytes in {path}")

    cache = DysonCache(
        truncation_order=order,
        subpixel_width=dt,
        carriers=tuple(carriers),
        dimension=size,
        entries=entries,
        slope_entries=slope_entries,
        system_fingerprint=fingerprint.hex(),
        with_slopes=bool(flags & 1),
    )
    if model is not None:
        cache.verify(model)
    logging.info(f"Loaded Dyson cache ({len(entries)} entries) from {path}")
    return cache


def save_matrix(matrix: ComplexMatrix, path: str) -> None:
    """Single propagator in the cache payload encoding"""
    size = matrix.shape[0]
    payload = struct.pack("<4sII", b"DYSU", CACHE_VERSION, size) + _pack_matrix(matrix)
    with atomic_write(path) as f:
        f.write(payload)
        f.write(_CRC.pack(zlib.crc32(payload)))


def load_matrix(path: str) -> ComplexMatrix:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != b"DYSU":
        raise exception.CorruptCache(f"{path} is not a propagator file")
    (crc,) = _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(data[: -_CRC.size]) != crc:
        raise exception.CorruptCache(f"Checksum mismatch in {path}")
    reader = _Reader(data[: -_CRC.size])
    _, version, size = reader.take("<4sII")
    if version != CACHE_VERSION:
        raise exception.VersionMismatch(
            f"Propagator format version {version}, expected {CACHE_VERSION}"
        )
    return reader.matrix(size)
