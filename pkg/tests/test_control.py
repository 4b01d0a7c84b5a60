import numpy as np
import pytest

from dysolve import exception
from dysolve.config import two_level_problem
from dysolve.control import (
    GateTarget,
    GrapeSettings,
    OptimizationTrace,
    evaluate_fidelity,
    fidelity,
    fidelity_gradient,
    flat_pulse_fidelity,
    grape_optimize,
    local_z_corrected_fidelity,
    named_gate,
)
from dysolve.dyson import prepare
from dysolve.pulses import AmplitudeMap, Interpolation, PulseSpec, amplitude_maps


@pytest.fixture
def problem():
    model, pulses, target = two_level_problem()
    cache = prepare(model, 4, pulses[0].subpixel_width)
    return cache, pulses, target


def test_named_gates():
    for name in ("X90", "ZX90", "I", "II"):
        gate = named_gate(name)
        assert np.allclose(gate.conj().T @ gate, np.eye(len(gate)))
    assert np.allclose(named_gate("x90") @ named_gate("x90"), -1j * np.array([[0, 1], [1, 0]]))
    with pytest.raises(exception.ConfigException):
        named_gate("CNOT")


def test_gate_target_validation():
    with pytest.raises(exception.DimensionMismatch):
        GateTarget(np.eye(2), (0, 1, 2))
    with pytest.raises(exception.ValidateException):
        GateTarget(np.eye(2), (1, 1))
    with pytest.raises(exception.ValidateException):
        GateTarget(2 * np.eye(2), (0, 1))
    target = GateTarget(np.eye(2), (0, 3))
    with pytest.raises(exception.IndexOutOfRange):
        target.block(np.eye(3))


def test_fidelity_values():
    x90 = GateTarget(named_gate("X90"), (0, 1))
    assert fidelity(named_gate("X90"), x90) == pytest.approx(1.0)
    # global phase does not matter
    assert fidelity(1j * named_gate("X90"), x90) == pytest.approx(1.0)
    assert fidelity(np.eye(2), x90) == pytest.approx(0.5)
    # leakage out of the subspace lowers the fidelity
    u = np.zeros((3, 3), dtype=np.complex128)
    u[:2, :2] = named_gate("X90")
    u[2, 2] = 1
    assert fidelity(u, x90) == pytest.approx(1.0)
    u[[0, 2]] = u[[2, 0]]
    assert fidelity(u, x90) < 1


def test_weight_matrix_trace():
    target = GateTarget(named_gate("X90"), (1, 2))
    u = np.diag([1, 1j, -1j])
    assert np.trace(target.weight_matrix(3) @ u) == pytest.approx(
        np.trace(target.target.conj().T @ target.block(u))
    )


def test_drift_frame_target():
    eigenvalues = np.array([0.0, 2.0, 5.0])
    target = GateTarget(np.eye(2), (0, 2)).in_drift_frame(eigenvalues, 0.3)
    assert np.allclose(target.target, np.diag([1, np.exp(-1.5j)]))


def test_gradient_matches_finite_difference(make_model, rng):
    model = make_model(size=3, channels=2)
    target = GateTarget(named_gate("X90"), (0, 1))
    specs = [
        PulseSpec(
            pixels=0.3 * (rng.normal(size=4) + 1j * rng.normal(size=4)),
            pixel_width=1.0,
            subpixels_per_pixel=5,
            filter_bandwidth=3.0,
        )
        for _ in range(2)
    ]
    cache = prepare(model, 3, 0.2)
    report = fidelity_gradient(cache, specs, target)
    assert report.fidelity == pytest.approx(evaluate_fidelity(cache, specs, target))
    h = 1e-6
    for c in range(2):
        for p in range(4):
            for step, analytic in ((h, report.grad_x), (1j * h, report.grad_y)):
                plus = list(specs)
                minus = list(specs)
                shift = np.zeros(4, dtype=np.complex128)
                shift[p] = step
                plus[c] = specs[c].with_pixels(specs[c].pixels + shift)
                minus[c] = specs[c].with_pixels(specs[c].pixels - shift)
                numeric = (
                    evaluate_fidelity(cache, plus, target) - evaluate_fidelity(cache, minus, target)
                ) / (2 * h)
                assert analytic[c, p] == pytest.approx(numeric, abs=1e-7)


def test_linear_interpolation_gradient(make_model, rng):
    model = make_model(size=3)
    target = GateTarget(np.eye(2), (0, 1))
    spec = PulseSpec(
        pixels=0.4 * rng.normal(size=3),
        pixel_width=1.0,
        subpixels_per_pixel=4,
        filter_bandwidth=4.0,
        interpolation=Interpolation.LINEAR,
    )
    cache = prepare(model, 3, 0.25, with_slopes=True)
    report = fidelity_gradient(cache, [spec], target)
    h = 1e-6
    for p in range(3):
        shift = np.zeros(3)
        shift[p] = h
        numeric = (
            evaluate_fidelity(cache, [spec.with_pixels(spec.pixels + shift)], target)
            - evaluate_fidelity(cache, [spec.with_pixels(spec.pixels - shift)], target)
        ) / (2 * h)
        assert report.grad_x[0, p] == pytest.approx(numeric, abs=1e-7)


def test_gradient_follows_maps(problem):
    cache, pulses, target = problem
    report = fidelity_gradient(cache, pulses, target)
    doubled = [AmplitudeMap(amplitude=2 * amplitude_maps(pulses[0]).amplitude)]
    scaled = fidelity_gradient(cache, pulses, target, maps=doubled)
    assert scaled.fidelity == report.fidelity
    assert np.allclose(scaled.grad_x, 2 * report.grad_x)
    assert np.allclose(scaled.grad_y, 2 * report.grad_y)


def test_mismatched_specs(problem):
    cache, pulses, target = problem
    with pytest.raises(exception.LengthMismatch):
        fidelity_gradient(cache, pulses * 2, target)
    other = PulseSpec(pixels=pulses[0].pixels, pixel_width=1.0, subpixels_per_pixel=4)
    with pytest.raises(exception.ValidateException):
        fidelity_gradient(cache, [other], target)


def test_settings_validation():
    with pytest.raises(exception.ConfigException):
        GrapeSettings(epsilon=0)
    with pytest.raises(exception.ConfigException):
        GrapeSettings(shrink=1.0)
    with pytest.raises(exception.ConfigException):
        GrapeSettings(armijo=-0.1)
    assert GrapeSettings(policy="fixed").policy is GrapeSettings.Policy.FIXED


def test_grape_reaches_x90(problem):
    cache, pulses, target = problem
    settings = GrapeSettings(epsilon=1.0, infidelity_tolerance=1e-5, max_iters=500)
    trace = grape_optimize(cache, pulses, target, settings)
    assert trace.reason is OptimizationTrace.Reason.INFIDELITY_TOLERANCE
    assert 1 - trace.fidelity < 1e-5
    assert trace.iterations <= 500
    values = [record.fidelity for record in trace.records]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert trace.records[0].fidelity == pytest.approx(evaluate_fidelity(cache, pulses, target))
    assert evaluate_fidelity(cache, trace.specs, target) == pytest.approx(trace.fidelity)


def test_grape_stops_at_identity(problem, tmp_path):
    cache, pulses, _ = problem
    # ten nanoseconds at 1 GHz: free evolution returns to the identity
    target = GateTarget(named_gate("I"), (0, 1))
    zero = [pulses[0].with_pixels(np.zeros(pulses[0].num_pixels))]
    trace = grape_optimize(cache, zero, target)
    assert trace.iterations == 0
    assert trace.reason is OptimizationTrace.Reason.INFIDELITY_TOLERANCE

    path = tmp_path / "trace.csv"
    trace.write_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "#schema=1"
    assert lines[1] == "iteration,fidelity,epsilon,grad_norm"
    assert lines[2].startswith("0,")


def test_fixed_step_runs_to_limit(problem):
    cache, pulses, target = problem
    settings = GrapeSettings(policy=GrapeSettings.Policy.FIXED, epsilon=0.1, max_iters=3)
    trace = grape_optimize(cache, pulses, target, settings)
    assert trace.iterations == 3
    assert trace.reason is OptimizationTrace.Reason.MAX_ITERATIONS
    assert [record.epsilon for record in trace.records[1:]] == [0.1] * 3


def test_no_ascent_direction(problem):
    cache, pulses, target = problem
    settings = GrapeSettings(epsilon=100.0, armijo=0.5, max_halvings=0)
    with pytest.raises(exception.NoAscentDirection):
        grape_optimize(cache, pulses, target, settings)


def test_local_z_correction():
    target = GateTarget(named_gate("ZX90"), (0, 1, 2, 3))

    def rotations(a, b):
        return np.kron(np.diag([1, np.exp(1j * a)]), np.diag([1, np.exp(1j * b)]))

    u = rotations(0.2, -0.3) @ named_gate("ZX90") @ rotations(0.1, 0.25)
    assert fidelity(u, target) < 0.99
    corrected, angles = local_z_corrected_fidelity(u, target)
    assert corrected == pytest.approx(1.0, abs=1e-8)
    assert angles.shape == (4,)
    with pytest.raises(exception.DimensionMismatch):
        local_z_corrected_fidelity(u, target, qubit_dims=(2, 3))


def test_flat_pulse(problem):
    cache, pulses, target = problem
    start = evaluate_fidelity(cache, pulses, target)
    value, best = flat_pulse_fidelity(cache, pulses, target)
    assert value > max(start, 0.999)
    assert np.all(best[0].pixels == best[0].pixels[0])
    assert value == pytest.approx(evaluate_fidelity(cache, best, target), abs=1e-12)
