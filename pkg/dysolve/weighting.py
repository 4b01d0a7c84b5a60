"""
Weighting functions of the Dyson operators.

For a node vector x = (x_0, ..., x_n) the weighting function is

    f(x) = i^n * h[x_0, ..., x_n],   h(x) = exp(-i x)

i.e. a divided difference of exp(-ix). Equivalently f(x) = E[-i x] with E the
divided difference of the plain exponential, which is what the confluent
series below expands.
"""
import math
import typing

import mpmath
import numpy as np
import numpy.typing as npt

from . import exception

NodeVector = npt.ArrayLike

# node sets narrower than this are evaluated by the series about their centroid
CLUSTER_DIAMETER = 1.0
SERIES_TERMS = 32
REFERENCE_DIGITS = 60


def _prepare(nodes: NodeVector) -> typing.Tuple[np.ndarray, bool]:
    array = np.asarray(nodes, dtype=np.complex128)
    single = array.ndim == 1
    array = np.atleast_2d(array)
    if array.ndim != 2:
        raise exception.DimensionMismatch(
            f"Nodes must be a vector or a stack of vectors, got shape {array.shape}"
        )
    if array.shape[1] == 0:
        raise exception.EmptyNodes("Weighting function needs at least one node")
    if not np.all(np.isfinite(array)):
        raise exception.ValidateException("Nodes must be finite")
    return array, single


def _series(nodes: np.ndarray) -> np.ndarray:
    """Confluent expansion E[w] = sum_k h_k(w) / (n + k)! about the centroid"""
    order = nodes.shape[1] - 1
    center = nodes.mean(axis=1)
    w = -1j * (nodes - center[:, None])
    # complete homogeneous symmetric polynomials h_0..h_K of the shifted nodes
    homogeneous = np.zeros((nodes.shape[0], SERIES_TERMS + 1), dtype=np.complex128)
    homogeneous[:, 0] = 1
    for j in range(nodes.shape[1]):
        for k in range(1, SERIES_TERMS + 1):
            homogeneous[:, k] += w[:, j] * homogeneous[:, k - 1]
    scale = np.array(
        [1 / math.factorial(order + k) for k in range(SERIES_TERMS + 1)]
    )
    return np.exp(-1j * center) * (homogeneous @ scale)


def _weights(nodes: np.ndarray) -> np.ndarray:
    count, size = nodes.shape
    if size == 1:
        return np.exp(-1j * nodes[:, 0])
    if count == 0:
        return np.zeros(0, dtype=np.complex128)

    distance = np.abs(nodes[:, :, None] - nodes[:, None, :]).reshape(count, -1)
    flat = distance.argmax(axis=1)
    rows = np.arange(count)
    diameter = distance[rows, flat]

    result = np.empty(count, dtype=np.complex128)
    clustered = diameter < CLUSTER_DIAMETER
    if clustered.any():
        result[clustered] = _series(nodes[clustered])
    spread = ~clustered
    if spread.any():
        # symmetry lets the recursion divide by the widest pair: move it to the ends
        first, last = np.divmod(flat[spread], size)
        key = np.tile(np.arange(size, dtype=np.float64), (int(spread.sum()), 1))
        sub_rows = np.arange(key.shape[0])
        key[sub_rows, first] = -1
        key[sub_rows, last] = size
        ordered = np.take_along_axis(nodes[spread], np.argsort(key, axis=1), axis=1)
        head = _weights(ordered[:, :-1])
        tail = _weights(ordered[:, 1:])
        result[spread] = 1j * (head - tail) / (ordered[:, 0] - ordered[:, -1])
    return result


def weight(nodes: NodeVector) -> typing.Any:
    """Weighting function f(nodes).

    A 1-D input returns a complex scalar, a 2-D input (stack of node vectors)
    returns one value per row.
    """
    array, single = _prepare(nodes)
    values = _weights(array)
    return complex(values[0]) if single else values


def weight_shift_check(nodes: NodeVector, a: complex) -> typing.Tuple[complex, complex]:
    """(e^{ia} f(x), f(x - a)); both sides agree for any shift a"""
    array, _ = _prepare(nodes)
    if array.shape[0] != 1:
        raise exception.DimensionMismatch("weight_shift_check takes one node vector")
    return (
        complex(np.exp(1j * a) * _weights(array)[0]),
        complex(_weights(array - a)[0]),
    )


def weight_derivative(nodes: NodeVector, j: int) -> typing.Any:
    """d f / d x_j = -i f(x with x_j appended)"""
    array, single = _prepare(nodes)
    size = array.shape[1]
    if not 0 <= j < size:
        raise exception.IndexOutOfRange(f"Node index {j} outside [0, {size})")
    values = -1j * _weights(np.concatenate([array, array[:, j : j + 1]], axis=1))
    return complex(values[0]) if single else values


def divided_difference_reference(
    nodes: NodeVector, digits: int = REFERENCE_DIGITS
) -> complex:
    """i^n times the divided difference of exp(-ix), by the confluent table in
    `digits` significant digits. Slow, only meant as an independent check."""
    array, single = _prepare(nodes)
    if not single and array.shape[0] != 1:
        raise exception.DimensionMismatch(
            "divided_difference_reference takes one node vector"
        )
    values = sorted(array[0].tolist(), key=lambda z: (z.real, z.imag))
    order = len(values) - 1
    with mpmath.workdps(digits):
        knots = [mpmath.mpc(z.real, z.imag) for z in values]
        column = [mpmath.exp(-1j * x) for x in knots]
        for j in range(1, order + 1):
            next_column = []
            for i in range(order + 1 - j):
                if knots[i + j] == knots[i]:
                    # repeated knot: the sorted run i..i+j is constant
                    next_column.append(
                        (-1j) ** j * mpmath.exp(-1j * knots[i]) / mpmath.factorial(j)
                    )
                else:
                    next_column.append(
                        (column[i + 1] - column[i]) / (knots[i + j] - knots[i])
                    )
            column = next_column
        value = column[0] * mpmath.mpc(0, 1) ** order
        return complex(value)
