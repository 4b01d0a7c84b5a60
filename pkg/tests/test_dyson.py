import os

import numpy as np
import pytest
from scipy import integrate

from dysolve import DriveChannel, SystemModel, exception
from dysolve.dyson import (
    CACHE_VERSION,
    FrequencyAssignment,
    all_assignments,
    build_dyson_operator,
    build_slope_operators,
    cumulative_vector,
    entry_count,
    enumerate_paths,
    load_cache,
    load_matrix,
    plus_count,
    prepare,
    save_cache,
    save_matrix,
    slope_entry_count,
)
from dysolve.oracle import simplex_path_operator


@pytest.fixture
def two_channel():
    return SystemModel(
        eigenvalues=np.array([0.0, 1.0, 2.5]),
        channels=(
            DriveChannel(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]), 1.5),
            DriveChannel(np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]]), 0.4),
        ),
    )


def test_assignment_validation():
    with pytest.raises(exception.LengthMismatch):
        FrequencyAssignment((0, 1), (1,))
    with pytest.raises(exception.ValidateException):
        FrequencyAssignment((0,), (2,))
    assert FrequencyAssignment().order == 0
    assert FrequencyAssignment((1, 0), (1, -1)).flipped().signs == (-1, 1)


def test_cumulative_vector(two_channel):
    assert cumulative_vector(FrequencyAssignment(), two_channel).tolist() == [0.0]
    assert cumulative_vector(FrequencyAssignment((0,), (1,)), two_channel).tolist() == [1.5, 0.0]
    vector = cumulative_vector(FrequencyAssignment((0, 1), (1, -1)), two_channel)
    assert vector == pytest.approx([1.5 - 0.4, -0.4, 0.0])


@pytest.mark.parametrize("signs, expected", [((1, 1), 2), ((-1, -1), 0), ((1, -1, 1), 2)])
def test_plus_count(signs, expected):
    assert plus_count(FrequencyAssignment((0,) * len(signs), signs)) == expected


def test_assignment_order():
    keys = [a.key for a in all_assignments(2, 2)]
    assert keys == sorted(keys)
    assert len(keys) == entry_count(2, 2) == 1 + 4 + 16


def test_entry_counts(make_model):
    model = make_model(size=3)
    assert prepare(model, 2, 0.1).entry_count == 7
    assert prepare(model, 4, 0.1).entry_count == 2**5 - 1
    cache = prepare(model, 2, 0.1, with_slopes=True)
    assert len(cache.slope_entries) == 10 == slope_entry_count(2, 1)
    three = make_model(size=3, channels=3)
    assert prepare(three, 2, 0.1).entry_count == 43


def test_order_zero_entry(make_model):
    model = make_model(size=4)
    cache = prepare(model, 1, 0.37)
    assert np.allclose(cache.drift_step, np.diag(np.exp(-1j * model.eigenvalues * 0.37)), atol=1e-12)
    assert np.array_equal(build_dyson_operator(model, FrequencyAssignment(), 0.37), cache.drift_step)


def test_first_order_matches_integral():
    gap, carrier, dt = 1.3, 0.9, 0.7
    model = SystemModel(np.array([0.0, gap]), (DriveChannel(np.array([[0, 1], [1, 0]]), carrier),))
    operator = build_dyson_operator(model, FrequencyAssignment((0,), (-1,)), dt)

    def integrand(t):
        return -0.5j * np.exp(-1j * gap * (dt - t)) * np.exp(-1j * carrier * t)

    real, _ = integrate.quad(lambda t: integrand(t).real, 0, dt, epsabs=1e-14)
    imag, _ = integrate.quad(lambda t: integrand(t).imag, 0, dt, epsabs=1e-14)
    assert operator[1, 0] == pytest.approx(real + 1j * imag, abs=1e-10)
    # sigma_x only connects 0 and 1
    assert operator[0, 0] == 0 and operator[1, 1] == 0


def test_path_enumeration_skips_zero_elements(two_channel):
    paths = enumerate_paths(two_channel, (1, 1))
    # channel 1 only couples 0 <-> 2
    assert sorted(map(tuple, paths.states.tolist())) == [(0, 2, 0), (2, 0, 2)]
    assert len(enumerate_paths(two_channel, (0,))) == 4


def test_matches_simplex_quadrature(make_model):
    for trial in range(20):
        size = 2 + trial % 3
        model = make_model(size=size, channels=1 + trial % 2)
        dt = 0.3 + 0.05 * trial
        for assignment in all_assignments(2, model.num_channels):
            if assignment.order == 0:
                continue
            expected = simplex_path_operator(model, assignment, dt)
            operator = build_dyson_operator(model, assignment, dt)
            assert np.linalg.norm(operator - expected) < 1e-8, (trial, assignment)


def test_conjugation_with_reversed_spectrum(make_model):
    """conj S(omega; lambda) = (-1)^m S(-omega; -lambda) for a real dipole"""
    model = make_model(size=4, real=True)
    mirrored = SystemModel(-model.eigenvalues, model.channels)
    for assignment in all_assignments(3, 1):
        m = assignment.order
        if not m:
            continue
        operator = build_dyson_operator(model, assignment, 0.4)
        flipped = build_dyson_operator(mirrored, assignment.flipped(), 0.4)
        assert np.allclose(np.conj(operator), (-1) ** m * flipped, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_small_step_scaling(make_model, order):
    model = make_model(size=3)
    assignment = FrequencyAssignment((0,) * order, (1, -1, 1)[:order])
    steps = np.logspace(-4, -2, 5)
    norms = [np.linalg.norm(build_dyson_operator(model, assignment, dt)) for dt in steps]
    slope = np.polyfit(np.log(steps), np.log(norms), 1)[0]
    assert slope == pytest.approx(order, abs=0.1)


def test_slope_operators_are_frequency_derivatives(two_channel):
    assignment = FrequencyAssignment((0, 1), (1, -1))
    dt, h = 0.5, 1e-6
    slopes = build_slope_operators(two_channel, assignment, dt)
    assert len(slopes) == 2

    def shifted(channel, delta):
        channels = list(two_channel.channels)
        channels[channel] = DriveChannel(channels[channel].dipole, channels[channel].carrier + delta)
        return build_dyson_operator(SystemModel(two_channel.eigenvalues, tuple(channels)), assignment, dt)

    for position, channel in enumerate(assignment.channels):
        sign = assignment.signs[position]
        derivative = (shifted(channel, h) - shifted(channel, -h)) / (2 * h) * sign
        assert np.allclose(slopes[position], -1j * derivative, atol=1e-8)


def test_prepare_is_thread_independent(make_model):
    model = make_model(size=4, channels=2)
    serial = prepare(model, 3, 0.2, threads=1)
    threaded = prepare(model, 3, 0.2, threads=4)
    for key in serial.keys:
        assert np.array_equal(serial.entries[key], threaded.entries[key])


def test_prepare_errors(make_model):
    model = make_model(size=3)
    with pytest.raises(exception.UnsupportedOrder):
        prepare(model, 5, 0.1)
    with pytest.raises(exception.ValidateException):
        prepare(model, 2, 0.0)
    with pytest.raises(exception.CacheSizeExceeded):
        prepare(model, 4, 0.1, memory_budget=1024)


def test_cache_round_trip(make_model, tmp_path):
    model = make_model(size=3, channels=2)
    cache = prepare(model, 2, 0.25, with_slopes=True)
    path = str(tmp_path / "cache.dysn")
    save_cache(cache, path)
    loaded = load_cache(path, model)
    assert loaded.keys == cache.keys
    assert loaded.truncation_order == 2
    assert loaded.subpixel_width == 0.25
    assert loaded.carriers == model.carriers
    assert loaded.with_slopes
    for key in cache.keys:
        assert np.array_equal(loaded.entries[key], cache.entries[key])
    for key in cache.slope_keys:
        assert np.array_equal(loaded.slope_entries[key], cache.slope_entries[key])

    again = str(tmp_path / "again.dysn")
    save_cache(prepare(model, 2, 0.25, with_slopes=True), again)
    with open(path, "rb") as a, open(again, "rb") as b:
        assert a.read() == b.read()


def test_cache_errors(make_model, tmp_path):
    model = make_model(size=3)
    path = str(tmp_path / "cache.dysn")
    save_cache(prepare(model, 2, 0.25), path)
    with pytest.raises(exception.FingerprintMismatch):
        load_cache(path, make_model(size=3))
    with open(path, "rb") as f:
        data = f.read()

    truncated = str(tmp_path / "truncated.dysn")
    with open(truncated, "wb") as f:
        f.write(data[: len(data) // 2])
    with pytest.raises(exception.CorruptCache):
        load_cache(truncated)

    flipped = bytearray(data)
    flipped[-20] ^= 0xFF
    corrupt = str(tmp_path / "corrupt.dysn")
    with open(corrupt, "wb") as f:
        f.write(bytes(flipped))
    with pytest.raises(exception.CorruptCache):
        load_cache(corrupt)

    versioned = bytearray(data)
    versioned[4:8] = (CACHE_VERSION + 1).to_bytes(4, "little")
    newer = str(tmp_path / "newer.dysn")
    with open(newer, "wb") as f:
        f.write(bytes(versioned))
    with pytest.raises(exception.VersionMismatch):
        load_cache(newer)
    assert not [name for name in os.listdir(tmp_path) if name.startswith(".tmp-")]


def test_matrix_file(tmp_path):
    u = np.array([[0, 1j], [1, 0]])
    path = str(tmp_path / "u.dysu")
    save_matrix(u, path)
    assert np.array_equal(load_matrix(path), u)
