"""Two-layer ReLU network f(u, x) = (1/sqrt(m)) * sum_r a_r * relu(u_r . x).

Only the first layer ``u`` (d x m, columns u_r) is trained; the output signs
``a`` stay fixed at their random initial values.
"""

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from ..core import constants as const
from ..core.errors import ParameterError, ParseError, ShapeError, ValidationError
from ..core.utils import format_float, read_data_lines
from .dataset import ClientPartition, Dataset
from .numerics import RngStream, gaussian_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    weights: NDArray[np.float64]
    signs: NDArray[np.float64]
    sigma: float

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        signs = np.array(self.signs, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(
                f"weights must be d x m, got shape {weights.shape}", source="model"
            )
        if signs.shape != (weights.shape[1],):
            raise ShapeError(
                f"expected {weights.shape[1]} signs, got shape {signs.shape}",
                source="model",
            )
        if not np.all((signs == 1.0) | (signs == -1.0)):
            raise ValidationError("every sign must be exactly -1 or +1", source="model")
        if not np.all(np.isfinite(weights)):
            raise ValidationError("weights contain NaN or Inf", source="model")
        weights.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    def with_weights(self, weights) -> "ModelParams":
        return ModelParams(weights, self.signs, self.sigma)


class Losses(NamedTuple):
    per_client: list[float]
    total: float
    residual_sq: float


def init(m: int, d: int, sigma: float, rng: RngStream) -> ModelParams:
    """Weights i.i.d. N(0, sigma^2), signs uniform on {-1, +1}."""
    if m < 1:
        raise ParameterError(f"width m must be positive, got {m}", source="model")
    if d < 1:
        raise ParameterError(f"input dimension must be positive, got {d}", source="model")
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}", source="model")
    weights = gaussian_matrix(rng.child(const.SUBSTREAM_WEIGHTS), d, m, sigma)
    coins = rng.child(const.SUBSTREAM_SIGNS).generator().random(m)
    signs = np.where(coins < 0.5, -1.0, 1.0)
    logger.debug(f"Initialized network: d={d}, m={m}, sigma={sigma}")
    return ModelParams(weights, signs, sigma)


def preactivations(weights, inputs) -> NDArray[np.float64]:
    """u_r . x_i for every (i, r), accumulated over the d coordinates in order."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if inputs.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"inputs have d={inputs.shape[1]} but weights have d={weights.shape[0]}",
            source="model",
        )
    acc = inputs[:, 0:1] * weights[0]
    for k in range(1, weights.shape[0]):
        acc = acc + inputs[:, k : k + 1] * weights[k]
    return acc


def _fsum(row: NDArray[np.float64]) -> float:
    try:
        return math.fsum(row)
    except (OverflowError, ValueError):
        # Diverged weights; callers detect the NaN
        return math.nan


def _reduce(pre: NDArray[np.float64], signs) -> NDArray[np.float64]:
    scale = math.sqrt(pre.shape[1])
    terms = np.maximum(pre, 0.0) * signs
    return np.array([_fsum(row) / scale for row in terms], dtype=np.float64)


def outputs(weights, signs, inputs) -> NDArray[np.float64]:
    """Network values for raw arrays; every row uses the same compensated sum."""
    return _reduce(preactivations(weights, inputs), signs)


def gradient(weights, signs, inputs, labels) -> NDArray[np.float64]:
    """d x m gradient of 0.5 * sum_i (f(u, x_i) - y_i)^2 with respect to u."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    pre = preactivations(weights, inputs)
    residuals = _reduce(pre, signs) - labels
    # ReLU derivative at 0 is taken as 1
    active = pre >= 0.0
    scale = 1.0 / math.sqrt(weights.shape[1])
    grad = np.zeros_like(weights)
    for i in range(inputs.shape[0]):
        coeff = (residuals[i] * scale) * np.where(active[i], signs, 0.0)
        grad += inputs[i][:, None] * coeff[None, :]
    return grad


def _check_unit(x: NDArray[np.float64]) -> None:
    norm = float(np.linalg.norm(x))
    if abs(norm - 1.0) > const.FORWARD_NORM_TOLERANCE:
        raise ValidationError(f"input has norm {norm!r}, expected 1", source="model")


def forward(params: ModelParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d,):
        raise ShapeError(
            f"input shape {x.shape} does not match d={params.d}", source="model"
        )
    _check_unit(x)
    return float(outputs(params.weights, params.signs, x[None, :])[0])


def forward_all(
    params: ModelParams, dataset: Dataset, indices=None
) -> NDArray[np.float64]:
    if dataset.d != params.d:
        raise ShapeError(
            f"dataset has d={dataset.d} but the network expects d={params.d}",
            source="model",
        )
    inputs = dataset.inputs
    if indices is not None:
        inputs = inputs[np.asarray(indices, dtype=np.int64)]
    if inputs.shape[0] == 0:
        return np.zeros(0)
    return outputs(params.weights, params.signs, inputs)


def client_gradient(
    params: ModelParams, dataset: Dataset, members
) -> NDArray[np.float64]:
    """Gradient of the client loss L_c(u) = 0.5 * sum_{i in S_c} (f(u, x_i) - y_i)^2."""
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ParameterError("client point set is empty", source="model")
    if members.min() < 0 or members.max() >= dataset.n:
        raise ParameterError(
            f"client indices out of range for n={dataset.n}", source="model"
        )
    if dataset.d != params.d:
        raise ShapeError(
            f"dataset has d={dataset.d} but the network expects d={params.d}",
            source="model",
        )
    return gradient(
        params.weights, params.signs, dataset.inputs[members], dataset.labels[members]
    )


def loss(params: ModelParams, dataset: Dataset, partition: ClientPartition) -> Losses:
    if partition.n != dataset.n:
        raise ShapeError(
            f"partition covers n={partition.n} points, dataset has {dataset.n}",
            source="model",
        )
    residuals = forward_all(params, dataset) - dataset.labels
    per_client = [0.5 * math.fsum(residuals[s] ** 2) for s in partition.assignments]
    total = math.fsum(per_client) / partition.num_clients
    return Losses(per_client, total, math.fsum(residuals**2))


def save_params(params: ModelParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(
            const.PARAMS_HEADER.format(
                d=params.d, m=params.m, sigma=format_float(params.sigma)
            )
            + "\n"
        )
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([str(int(a)) for a in params.signs])
        for row in params.weights:
            writer.writerow([format_float(v) for v in row])
    return path


def load_params(path) -> ModelParams:
    path = Path(path)
    lines = read_data_lines(path)
    match = re.fullmatch(
        r"# fl-ntk params v1, d=(?P<d>\d+), m=(?P<m>\d+), sigma=(?P<sigma>\S+)",
        lines[0][1],
    )
    if not match:
        raise ParseError(f"unrecognized header in {path}", line=lines[0][0])
    d, m = int(match["d"]), int(match["m"])
    rows = lines[1:]
    if len(rows) != d + 1:
        raise ParseError(
            f"expected 1 sign row and {d} weight rows, found {len(rows)} rows",
            line=rows[-1][0] if rows else lines[0][0],
        )
    values = []
    for line_no, text in rows:
        fields = text.split(",")
        if len(fields) != m:
            raise ParseError(f"expected {m} values, found {len(fields)}", line=line_no)
        try:
            values.append([float(v) for v in fields])
        except ValueError as e:
            raise ParseError(str(e), line=line_no) from None
    return ModelParams(np.array(values[1:]), np.array(values[0]), float(match["sigma"]))
