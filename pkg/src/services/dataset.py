"""Training data: generation on the unit sphere, client partitions, CSV files."""

import csv
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..core import constants as const
from ..core.errors import ParameterError, ParseError, ValidationError
from ..core.utils import format_float, read_data_lines
from .numerics import RngStream

logger = logging.getLogger(__name__)


class DistributionKind(str, Enum):
    UNIFORM_SPHERE = "uniform-sphere"
    TWO_CLUSTER = "two-cluster"
    CUSTOM_LOADED = "custom-loaded"


class LabelRule(str, Enum):
    LINEAR_TEACHER = "linear-teacher"
    CLUSTER_SIGN = "cluster-sign"


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistributionKind = DistributionKind.UNIFORM_SPHERE
    label_rule: LabelRule = LabelRule.LINEAR_TEACHER
    skew_alpha: float | None = None  # set only when the partition mode is skewed

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))
        object.__setattr__(self, "label_rule", LabelRule(self.label_rule))
        if self.skew_alpha is not None and self.skew_alpha <= 0:
            raise ParameterError(
                f"skew_alpha must be positive, got {self.skew_alpha}", source="dataset"
            )


@dataclass(frozen=True)
class Dataset:
    """n unit-norm inputs in d dimensions with labels in [-1, 1]."""

    inputs: NDArray[np.float64]
    labels: NDArray[np.float64]
    spec: DistributionSpec = field(
        default_factory=lambda: DistributionSpec(DistributionKind.CUSTOM_LOADED)
    )

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.float64)
        if inputs.ndim != 2:
            raise ValidationError(
                f"inputs must be an n x d matrix, got shape {inputs.shape}",
                source="dataset",
            )
        n, d = inputs.shape
        if n < 1 or d < const.MIN_INPUT_DIM:
            raise ValidationError(
                f"need n >= 1 and d >= {const.MIN_INPUT_DIM}, got n={n}, d={d}",
                source="dataset",
            )
        if labels.shape != (n,):
            raise ValidationError(
                f"labels shape {labels.shape} does not match n={n}", source="dataset"
            )
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(labels))):
            raise ValidationError("dataset contains NaN or Inf", source="dataset")
        norms = np.linalg.norm(inputs, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > const.UNIT_NORM_TOLERANCE)
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"input {i} has norm {norms[i]!r}, expected 1", source="dataset"
            )
        bad = np.flatnonzero(np.abs(labels) > 1.0)
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"label {i} = {labels[i]!r} lies outside [-1, 1]", source="dataset"
            )
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.spec)


@dataclass(frozen=True)
class ClientPartition:
    """Disjoint, non-empty index sets S_1..S_N covering range(n)."""

    assignments: tuple[NDArray[np.int64], ...]
    n: int

    def __post_init__(self):
        sets = tuple(np.sort(np.asarray(s, dtype=np.int64)) for s in self.assignments)
        if not sets:
            raise ValidationError("partition has no clients", source="dataset")
        for c, s in enumerate(sets):
            if s.size == 0:
                raise ValidationError(f"client {c} has no points", source="dataset")
        merged = np.sort(np.concatenate(sets))
        if merged.size != self.n or not np.array_equal(merged, np.arange(self.n)):
            raise ValidationError(
                f"client sets are not a disjoint cover of range({self.n})",
                source="dataset",
            )
        for s in sets:
            s.setflags(write=False)
        object.__setattr__(self, "assignments", sets)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [int(s.size) for s in self.assignments]

    def client_of(self) -> NDArray[np.int64]:
        """Owning client for every point index."""
        owner = np.empty(self.n, dtype=np.int64)
        for c, s in enumerate(self.assignments):
            owner[s] = c
        return owner


def label_classes(labels) -> NDArray[np.int64]:
    """Two sign classes: 1 for y >= 0, else 0."""
    return (np.asarray(labels) >= 0).astype(np.int64)


def _normalize_rows(points: NDArray[np.float64]) -> NDArray[np.float64]:
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def _draw_points(
    kind: DistributionKind, count: int, d: int, axis, gen: np.random.Generator
) -> NDArray[np.float64]:
    if kind == DistributionKind.UNIFORM_SPHERE:
        raw = gen.standard_normal((count, d))
    else:
        centers = np.where(gen.random(count) < 0.5, -1.0, 1.0)[:, None] * axis
        raw = centers + const.CLUSTER_SPREAD * gen.standard_normal((count, d))
    # A draw of exactly zero cannot be normalized
    while True:
        zero = np.linalg.norm(raw, axis=1) == 0.0
        if not np.any(zero):
            return _normalize_rows(raw)
        raw[zero] = gen.standard_normal((int(zero.sum()), d))


def _resample_parallel(
    points, kind: DistributionKind, axis, gen: np.random.Generator
) -> NDArray[np.float64]:
    """Redraw later members of any pair with |x_i^T x_j| > 1 - tolerance."""
    n, d = points.shape
    for _ in range(const.MAX_RESAMPLE_ATTEMPTS):
        inner = np.abs(points @ points.T)
        np.fill_diagonal(inner, 0.0)
        rows, cols = np.nonzero(np.triu(inner > 1.0 - const.PARALLEL_TOLERANCE))
        if rows.size == 0:
            return points
        redraw = np.unique(cols)
        logger.debug(f"Resampling {redraw.size} near-parallel input(s)")
        points[redraw] = _draw_points(kind, redraw.size, d, axis, gen)
    raise ValidationError(
        "could not draw inputs without near-parallel pairs", source="dataset"
    )


def generate(
    spec: DistributionSpec, n: int, d: int, rng: RngStream, split: str = "train"
) -> Dataset:
    """Sample n labelled unit-norm points.

    The teacher vector (or cluster axis) comes from a split-independent
    sub-stream, so ``split="test"`` gives a held-out sample of the same
    distribution.
    """
    if d < const.MIN_INPUT_DIM:
        raise ParameterError(
            f"d must be at least {const.MIN_INPUT_DIM} (unit sphere in 1-D forces "
            f"parallel points), got {d}",
            source="dataset",
        )
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}", source="dataset")
    if spec.kind == DistributionKind.CUSTOM_LOADED:
        raise ParameterError(
            "custom-loaded datasets come from load_dataset, not generate",
            source="dataset",
        )
    if split not in ("train", "test"):
        raise ParameterError(f"unknown split {split!r}", source="dataset")

    teacher = rng.child(const.SUBSTREAM_TEACHER).generator().standard_normal(d)
    axis = teacher / np.linalg.norm(teacher)
    point_stream = (
        const.SUBSTREAM_TRAIN_POINTS if split == "train" else const.SUBSTREAM_TEST_POINTS
    )
    gen = rng.child(point_stream).generator()

    points = _draw_points(spec.kind, n, d, axis, gen)
    points = _resample_parallel(points, spec.kind, axis, gen)

    if spec.label_rule == LabelRule.LINEAR_TEACHER:
        labels = np.clip(points @ teacher, -1.0, 1.0)
    else:
        labels = np.where(points @ axis >= 0, 1.0, -1.0)

    logger.info(
        f"Generated {split} dataset: n={n}, d={d}, kind={spec.kind.value}, "
        f"labels={spec.label_rule.value}"
    )
    return Dataset(points, labels, spec)


def find_near_parallel_pair(dataset: Dataset) -> tuple[int, int, float] | None:
    """The pair (i, j) with the largest |x_i^T x_j|, or None when n < 2."""
    if dataset.n < 2:
        return None
    inner = dataset.inputs @ dataset.inputs.T
    magnitude = np.abs(inner)
    np.fill_diagonal(magnitude, -1.0)
    i, j = np.unravel_index(int(np.argmax(magnitude)), magnitude.shape)
    i, j = sorted((int(i), int(j)))
    return i, j, float(inner[i, j])


def partition_iid(n: int, num_clients: int, rng: RngStream) -> ClientPartition:
    """Random balanced split; sizes differ by at most one."""
    if num_clients < 1 or num_clients > n:
        raise ParameterError(
            f"need 1 <= N <= n, got N={num_clients}, n={n}", source="dataset"
        )
    order = rng.generator().permutation(n)
    return ClientPartition(tuple(np.array_split(order, num_clients)), n)


def partition_skewed(
    labels, num_clients: int, alpha: float, rng: RngStream
) -> ClientPartition:
    """Dirichlet(alpha) label skew over the two sign classes."""
    labels = np.asarray(labels)
    n = labels.size
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}", source="dataset")
    if num_clients < 1 or num_clients > n:
        raise ParameterError(
            f"need 1 <= N <= n, got N={num_clients}, n={n}", source="dataset"
        )

    gen = rng.generator()
    classes = label_classes(labels)
    client_points: list[list[int]] = [[] for _ in range(num_clients)]
    for cls in (0, 1):
        members = np.flatnonzero(classes == cls)
        if members.size == 0:
            continue
        gen.shuffle(members)
        proportions = gen.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(proportions) * members.size).astype(int)[:-1]
        for c, chunk in enumerate(np.split(members, cuts)):
            client_points[c].extend(chunk.tolist())

    # Repair pass: every client gets at least one point
    for c in range(num_clients):
        if not client_points[c]:
            donor = max(range(num_clients), key=lambda k: (len(client_points[k]), -k))
            client_points[c].append(client_points[donor].pop())
            logger.debug(f"Moved one point from client {donor} to empty client {c}")

    return ClientPartition(tuple(np.array(p, dtype=np.int64) for p in client_points), n)


def _parse_header(first: tuple[int, str], pattern: str, path: Path) -> dict[str, str]:
    line_no, line = first
    match = re.fullmatch(pattern, line)
    if not match:
        raise ParseError(f"unrecognized header in {path}: {line!r}", line=line_no)
    return match.groupdict()


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(const.DATASET_HEADER.format(n=dataset.n, d=dataset.d) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        for x, y in zip(dataset.inputs, dataset.labels):
            writer.writerow([format_float(v) for v in x] + [format_float(y)])
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    lines = read_data_lines(path)
    header = _parse_header(
        lines[0], r"# fl-ntk dataset v1, n=(?P<n>\d+), d=(?P<d>\d+)", path
    )
    n, d = int(header["n"]), int(header["d"])
    rows = lines[1:]
    if len(rows) != n:
        last = rows[-1][0] if rows else 1
        raise ParseError(f"expected {n} data rows, found {len(rows)}", line=last + 1)

    inputs = np.empty((n, d))
    labels = np.empty(n)
    for i, (line_no, text) in enumerate(rows):
        values = _parse_floats(text, d + 1, line_no)
        inputs[i] = values[:d]
        labels[i] = values[d]
    return Dataset(inputs, labels, DistributionSpec(DistributionKind.CUSTOM_LOADED))


def save_partition(partition: ClientPartition, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(
            const.PARTITION_HEADER.format(n=partition.n, N=partition.num_clients) + "\n"
        )
        writer = csv.writer(f, lineterminator="\n")
        for c, members in enumerate(partition.assignments):
            for i in members:
                writer.writerow([c, int(i)])
    return path


def load_partition(path) -> ClientPartition:
    path = Path(path)
    lines = read_data_lines(path)
    header = _parse_header(
        lines[0],
        r"# fl-ntk partition v1, n=(?P<n>\d+), N=(?P<N>\d+)",
        path,
    )
    n, num_clients = int(header["n"]), int(header["N"])
    client_points: list[list[int]] = [[] for _ in range(num_clients)]
    for line_no, text in lines[1:]:
        fields = text.split(",")
        try:
            c, i = (int(v) for v in fields)
        except ValueError as e:
            raise ParseError(f"expected 'client_index,point_index': {e}", line=line_no)
        if not (0 <= c < num_clients and 0 <= i < n):
            raise ParseError(f"index out of range: client={c}, point={i}", line=line_no)
        client_points[c].append(i)
    return ClientPartition(tuple(np.array(p, dtype=np.int64) for p in client_points), n)


def _parse_floats(text: str, expected: int, line_no: int) -> list[float]:
    fields = text.split(",")
    if len(fields) != expected:
        raise ParseError(f"expected {expected} values, found {len(fields)}", line=line_no)
    try:
        return [float(v) for v in fields]
    except ValueError as e:
        raise ParseError(str(e), line=line_no) from None
