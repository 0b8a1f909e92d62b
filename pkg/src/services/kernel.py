"""Gram matrices of the ReLU network: the infinite-width NTK and its finite-width
empirical versions, activation-pattern sets and drift measurements."""

import csv
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from ..core import constants as const
from ..core.errors import (
    ContractError,
    DegenerateSpectrumError,
    ParameterError,
    ParseError,
    ShapeError,
    ValidationError,
)
from ..core.utils import format_float, read_data_lines
from .dataset import ClientPartition, Dataset, find_near_parallel_pair
from .model import preactivations
from .numerics import RngStream, eigh_symmetric, frobenius_norm, spectral_norm

logger = logging.getLogger(__name__)


class GramKind(str, Enum):
    INFINITE = "infinite"
    EMPIRICAL_SYMMETRIC = "empirical-symmetric"
    EMPIRICAL_ASYMMETRIC = "empirical-asymmetric"
    PERP = "perp"

    @property
    def symmetric(self) -> bool:
        return self in (GramKind.INFINITE, GramKind.EMPIRICAL_SYMMETRIC)


@dataclass(frozen=True)
class GramMatrix:
    matrix: NDArray[np.float64]
    kind: GramKind

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(
                f"Gram matrix must be n x n, got shape {matrix.shape}", source="kernel"
            )
        kind = GramKind(self.kind)
        if kind.symmetric:
            asymmetry = float(np.max(np.abs(matrix - matrix.T), initial=0.0))
            if asymmetry > const.GRAM_SYMMETRY_TOLERANCE:
                raise ValidationError(
                    f"{kind.value} Gram matrix is not symmetric (max gap {asymmetry:.3e})",
                    source="kernel",
                )
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "kind", kind)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PatternSets:
    """member[i, r] is True iff neuron r is in Q_i, i.e. |u_r(0) . x_i| > radius."""

    radius: float
    member: NDArray[np.bool_]

    def complement_sizes(self) -> NDArray[np.int64]:
        """|Q-bar_i| for every point i."""
        return np.sum(~self.member, axis=1).astype(np.int64)


class Spectrum(NamedTuple):
    lambda_min: float
    lambda_max: float
    condition_number: float


class MonteCarloCheck(NamedTuple):
    i: int
    j: int
    inner: float
    closed_form: float
    estimate: float
    standard_error: float
    holds: bool


def _inner_products(inputs: NDArray[np.float64]) -> NDArray[np.float64]:
    inner = inputs @ inputs.T
    # Exact symmetry regardless of how the product was reduced
    return 0.5 * (inner + inner.T)


def ntk_entry(inner: float | NDArray[np.float64]):
    """Closed form of E_w[x.y 1{w.x >= 0, w.y >= 0}] for unit x, y with x.y = inner."""
    inner = np.asarray(inner, dtype=np.float64)
    return inner * (np.pi - np.arccos(np.clip(inner, -1.0, 1.0))) / (2.0 * np.pi)


def ntk_infinity(dataset: Dataset) -> GramMatrix:
    matrix = ntk_entry(_inner_products(dataset.inputs))
    return GramMatrix(matrix, GramKind.INFINITE)


def ntk_monte_carlo(
    x_i, x_j, samples: int, rng: RngStream, chunk: int = 100_000
) -> tuple[float, float]:
    """Sampled H-infinity entry and its standard error, straight from the expectation."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise ShapeError(
            f"input shapes differ: {x_i.shape} vs {x_j.shape}", source="kernel"
        )
    if samples < 2:
        raise ParameterError(f"need at least 2 samples, got {samples}", source="kernel")

    gen = rng.generator()
    both_active = 0
    remaining = samples
    while remaining > 0:
        size = min(chunk, remaining)
        w = gen.standard_normal((size, x_i.size))
        both_active += int(np.count_nonzero((w @ x_i >= 0.0) & (w @ x_j >= 0.0)))
        remaining -= size

    inner = float(x_i @ x_j)
    p = both_active / samples
    return inner * p, abs(inner) * math.sqrt(p * (1.0 - p) / samples)


def validate_closed_form(
    dataset: Dataset,
    pairs: Sequence[tuple[int, int]] | None = None,
    samples: int = const.DEFAULT_MC_SAMPLES,
    rng: RngStream | None = None,
    z: float = const.MC_STANDARD_ERRORS,
) -> list[MonteCarloCheck]:
    """Compare closed-form H-infinity entries with Monte-Carlo estimates."""
    if rng is None:
        rng = RngStream(0, const.STREAM_MONTE_CARLO)
    if pairs is None:
        pairs = [(i, j) for i in range(dataset.n) for j in range(i + 1, dataset.n)]
    closed = ntk_infinity(dataset).matrix

    checks = []
    for index, (i, j) in enumerate(pairs):
        estimate, se = ntk_monte_carlo(
            dataset.inputs[i], dataset.inputs[j], samples, rng.child(index)
        )
        value = float(closed[i, j])
        holds = abs(value - estimate) <= z * se + const.BOUND_SLACK
        checks.append(
            MonteCarloCheck(
                i, j, float(dataset.inputs[i] @ dataset.inputs[j]), value, estimate, se, holds
            )
        )
    failed = sum(not c.holds for c in checks)
    logger.info(
        f"Closed-form NTK check: {len(checks) - failed}/{len(checks)} pairs within "
        f"{z:g} standard errors"
    )
    return checks


def _active(weights, inputs) -> NDArray[np.float64]:
    """0/1 activation indicators (n x m) as floats so counts come from a matmul."""
    return (preactivations(weights, inputs) >= 0.0).astype(np.float64)


def _check_weights(dataset: Dataset, *weights) -> int:
    shapes = {np.shape(w) for w in weights}
    if len(shapes) != 1:
        raise ShapeError(f"weight shapes differ: {sorted(shapes)}", source="kernel")
    shape = shapes.pop()
    if len(shape) != 2 or shape[0] != dataset.d:
        raise ShapeError(
            f"weights must be {dataset.d} x m, got shape {shape}", source="kernel"
        )
    return shape[1]


def gram_pair(dataset: Dataset, left_weights, right_weights) -> GramMatrix:
    """H(w~, w^): left weights drive the row indicator, right weights the column."""
    m = _check_weights(dataset, left_weights, right_weights)
    left = _active(left_weights, dataset.inputs)
    right = left if left_weights is right_weights else _active(right_weights, dataset.inputs)
    counts = left @ right.T
    matrix = _inner_products(dataset.inputs) * counts / m
    symmetric = np.array_equal(left_weights, right_weights)
    kind = GramKind.EMPIRICAL_SYMMETRIC if symmetric else GramKind.EMPIRICAL_ASYMMETRIC
    return GramMatrix(matrix, kind)


def _round_counts(
    dataset: Dataset,
    partition: ClientPartition,
    left: NDArray[np.float64],
    local_weights: Sequence,
) -> NDArray[np.float64]:
    counts = np.empty((dataset.n, dataset.n))
    for members, weights in zip(partition.assignments, local_weights):
        right = _active(weights, dataset.inputs[members])
        counts[:, members] = left @ right.T
    return counts


def _check_round(dataset, partition, global_weights, local_weights) -> int:
    if partition.n != dataset.n:
        raise ShapeError(
            f"partition covers n={partition.n} points, dataset has {dataset.n}",
            source="kernel",
        )
    if len(local_weights) != partition.num_clients:
        raise ParameterError(
            f"expected local weights for {partition.num_clients} clients, "
            f"got {len(local_weights)}",
            source="kernel",
        )
    return _check_weights(dataset, global_weights, *local_weights)


def gram_round(
    dataset: Dataset, partition: ClientPartition, global_weights, local_weights
) -> GramMatrix:
    """H(t, k): column j uses the local weights of the client that owns point j."""
    m = _check_round(dataset, partition, global_weights, local_weights)
    left = _active(global_weights, dataset.inputs)
    counts = _round_counts(dataset, partition, left, local_weights)
    matrix = _inner_products(dataset.inputs) * counts / m
    unchanged = all(np.array_equal(w, global_weights) for w in local_weights)
    kind = GramKind.EMPIRICAL_SYMMETRIC if unchanged else GramKind.EMPIRICAL_ASYMMETRIC
    return GramMatrix(matrix, kind)


def pattern_sets(init_weights, dataset: Dataset, radius: float) -> PatternSets:
    if radius < 0:
        raise ParameterError(f"radius must be non-negative, got {radius}", source="kernel")
    _check_weights(dataset, init_weights)
    member = np.abs(preactivations(init_weights, dataset.inputs)) > radius
    member.setflags(write=False)
    return PatternSets(float(radius), member)


def gram_perp(
    dataset: Dataset,
    partition: ClientPartition,
    global_weights,
    local_weights,
    patterns: PatternSets,
) -> GramMatrix:
    """H(t, k) with each row-i sum restricted to the neurons outside Q_i."""
    m = _check_round(dataset, partition, global_weights, local_weights)
    if patterns.member.shape != (dataset.n, m):
        raise ShapeError(
            f"pattern sets have shape {patterns.member.shape}, expected ({dataset.n}, {m})",
            source="kernel",
        )
    left = _active(global_weights, dataset.inputs) * ~patterns.member
    counts = _round_counts(dataset, partition, left, local_weights)
    return GramMatrix(_inner_products(dataset.inputs) * counts / m, GramKind.PERP)


def spectrum(gram: GramMatrix | NDArray[np.float64], dataset: Dataset | None = None) -> Spectrum:
    """Extreme eigenvalues and condition number of a symmetric Gram matrix.

    Passing the dataset lets a degenerate spectrum name its most parallel pair.
    """
    if not isinstance(gram, GramMatrix):
        gram = GramMatrix(gram, GramKind.EMPIRICAL_SYMMETRIC)
    if not gram.kind.symmetric:
        raise ContractError(
            f"spectrum needs a symmetric Gram matrix, got kind {gram.kind.value}",
            source="kernel",
        )
    eigenvalues, _ = eigh_symmetric(gram.matrix)
    lambda_min, lambda_max = float(eigenvalues[0]), float(eigenvalues[-1])

    floor = max(
        const.DEGENERATE_EIGENVALUE, const.DEGENERATE_RELATIVE_EIGENVALUE * lambda_max
    )
    if lambda_min <= floor:
        pair = None
        message = f"degenerate spectrum: lambda_min = {lambda_min:.3e} <= {floor:.3e}"
        if dataset is not None:
            found = find_near_parallel_pair(dataset)
            if found is not None:
                pair = (found[0], found[1])
                message += f"; most parallel inputs {found[0]} and {found[1]} (x_i.x_j = {found[2]!r})"
        raise DegenerateSpectrumError(
            message, lambda_min=lambda_min, pair=pair, source="kernel"
        )
    return Spectrum(lambda_min, lambda_max, lambda_max / lambda_min)


def _check_comparable(current: GramMatrix, initial: GramMatrix) -> None:
    if current.matrix.shape != initial.matrix.shape:
        raise ShapeError(
            f"cannot compare Gram matrices of shapes {current.matrix.shape} and "
            f"{initial.matrix.shape}",
            source="kernel",
        )


def gram_drift(current: GramMatrix, initial: GramMatrix) -> float:
    """||G_t - G_0||_F."""
    _check_comparable(current, initial)
    return frobenius_norm(current.matrix - initial.matrix)


def operator_drift(current: GramMatrix, initial: GramMatrix) -> float:
    """||G_t - G_0||_2, never above the Frobenius drift."""
    _check_comparable(current, initial)
    return spectral_norm(current.matrix - initial.matrix)


def save_gram(gram: GramMatrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(const.GRAM_HEADER.format(kind=gram.kind.value, n=gram.n) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        for row in gram.matrix:
            writer.writerow([format_float(v) for v in row])
    return path


def load_gram(path) -> GramMatrix:
    path = Path(path)
    lines = read_data_lines(path)
    match = re.fullmatch(
        r"# fl-ntk gram v1, kind=(?P<kind>[a-z-]+), n=(?P<n>\d+)", lines[0][1]
    )
    if not match:
        raise ParseError(f"unrecognized header in {path}", line=lines[0][0])
    try:
        kind = GramKind(match["kind"])
    except ValueError:
        raise ParseError(f"unknown Gram kind {match['kind']!r}", line=lines[0][0]) from None
    n = int(match["n"])
    rows = lines[1:]
    if len(rows) != n:
        raise ParseError(
            f"expected {n} rows, found {len(rows)}",
            line=rows[-1][0] if rows else lines[0][0],
        )
    matrix = np.empty((n, n))
    for i, (line_no, text) in enumerate(rows):
        fields = text.split(",")
        if len(fields) != n:
            raise ParseError(f"expected {n} values, found {len(fields)}", line=line_no)
        try:
            matrix[i] = [float(v) for v in fields]
        except ValueError as e:
            raise ParseError(str(e), line=line_no) from None
    return GramMatrix(matrix, kind)
