"""FedAvg training loop: broadcast, K local gradient steps per client, averaged
deltas, global update, and a recorder for everything the audits measure."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from ..core import constants as const
from ..core.errors import DivergenceError, ParameterError, ParseError, ShapeError
from ..core.utils import read_csv, write_csv
from . import model
from .dataset import ClientPartition, Dataset
from .model import ModelParams
from .numerics import RngStream

logger = logging.getLogger(__name__)


class RecordLevel(str, Enum):
    LOSS_ONLY = "loss-only"
    BOUNDS = "bounds"
    FULL_STATES = "full-states"


@dataclass(frozen=True)
class TrainConfig:
    num_clients: int
    local_steps: int
    rounds: int
    eta_local: float
    eta_global: float = 1.0
    width: int = const.DEFAULT_WIDTH
    sigma: float = const.DEFAULT_SIGMA
    seed: int = 0
    record_level: RecordLevel = RecordLevel.BOUNDS
    workers: int = const.DEFAULT_WORKERS
    stop_eps: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "record_level", RecordLevel(self.record_level))
        for name in ("num_clients", "local_steps", "width", "workers"):
            if getattr(self, name) < 1:
                raise ParameterError(
                    f"{name} must be at least 1, got {getattr(self, name)}",
                    source="fed_trainer",
                )
        if self.rounds < 0:
            raise ParameterError(
                f"rounds must be non-negative, got {self.rounds}", source="fed_trainer"
            )
        for name in ("eta_local", "eta_global", "sigma"):
            if not getattr(self, name) > 0:
                raise ParameterError(
                    f"{name} must be positive, got {getattr(self, name)}",
                    source="fed_trainer",
                )
        if self.seed < 0:
            raise ParameterError(
                f"seed must be non-negative, got {self.seed}", source="fed_trainer"
            )
        if self.stop_eps is not None and not 0 < self.stop_eps <= 1:
            raise ParameterError(
                f"stop_eps must lie in (0, 1], got {self.stop_eps}", source="fed_trainer"
            )


@dataclass
class LocalResult:
    """Outcome of one client's K local steps; trace arrays are indexed by k = 0..K."""

    final_weights: NDArray[np.float64]
    delta: NDArray[np.float64]
    residuals: NDArray[np.float64]  # ||y_c - y_c^(k)(t)||
    deviations: NDArray[np.float64]  # ||y_c(t) - y_c^(k)(t)||
    move_from_init: NDArray[np.float64]  # max_r ||w_{k,c,r}(t) - u_r(0)||
    move_in_round: NDArray[np.float64]  # max_r ||w_{k,c,r}(t) - u_r(t)||
    snapshots: list[NDArray[np.float64]] | None = None  # w_{1..K,c}(t)


@dataclass
class TrainTrace:
    """Per-round measurements; local arrays have shape (rounds, N, K + 1)."""

    residual_sq: NDArray[np.float64]
    loss: NDArray[np.float64]
    max_global_move: NDArray[np.float64]
    total_move: NDArray[np.float64]
    local_residual: NDArray[np.float64] | None = None
    local_deviation: NDArray[np.float64] | None = None
    local_move: NDArray[np.float64] | None = None
    round_local_move: NDArray[np.float64] | None = None
    global_snapshots: NDArray[np.float64] | None = None  # (rounds + 1, d, m)
    local_snapshots: NDArray[np.float64] | None = None  # (rounds, N, K, d, m)
    signs: NDArray[np.float64] | None = None
    final_weights: NDArray[np.float64] | None = None  # u(T), kept in memory only
    stopped_early: bool = False

    @property
    def rounds(self) -> int:
        """Number of completed global rounds."""
        return self.residual_sq.size - 1

    @property
    def has_local(self) -> bool:
        return self.local_residual is not None

    @property
    def has_snapshots(self) -> bool:
        return self.global_snapshots is not None and self.local_snapshots is not None

    def local_weights(self, t: int, client: int, k: int) -> NDArray[np.float64]:
        """w_{k,c}(t); k = 0 is the broadcast u(t)."""
        if not self.has_snapshots:
            raise ParameterError("trace holds no weight snapshots", source="fed_trainer")
        if k == 0:
            return self.global_snapshots[t]
        return self.local_snapshots[t, client, k - 1]


def _max_column_move(weights, reference) -> float:
    return float(np.max(np.linalg.norm(weights - reference, axis=0)))


def _norm(vector) -> float:
    return math.sqrt(math.fsum(np.asarray(vector) ** 2))


def local_run(
    start_weights,
    signs,
    dataset: Dataset,
    members,
    local_steps: int,
    eta_local: float,
    *,
    init_weights=None,
    keep_snapshots: bool = False,
    client: int | None = None,
) -> LocalResult:
    """K full-batch gradient steps on one client's loss, starting from u(t)."""
    members = np.asarray(members, dtype=np.int64)
    if local_steps < 1:
        raise ParameterError(f"K must be at least 1, got {local_steps}", source="fed_trainer")
    if members.size == 0:
        raise ParameterError("client point set is empty", source="fed_trainer")
    start = np.asarray(start_weights, dtype=np.float64)
    init = start if init_weights is None else np.asarray(init_weights, dtype=np.float64)
    inputs = dataset.inputs[members]
    labels = dataset.labels[members]
    base = model.outputs(start, signs, inputs)

    residuals = np.empty(local_steps + 1)
    deviations = np.empty(local_steps + 1)
    move_from_init = np.empty(local_steps + 1)
    move_in_round = np.empty(local_steps + 1)
    snapshots = [] if keep_snapshots else None

    w = start.copy()
    for k in range(local_steps + 1):
        pred = base if k == 0 else model.outputs(w, signs, inputs)
        residuals[k] = _norm(labels - pred)
        deviations[k] = _norm(base - pred)
        move_from_init[k] = _max_column_move(w, init)
        move_in_round[k] = _max_column_move(w, start)
        if k == local_steps:
            break
        w = w - eta_local * model.gradient(w, signs, inputs, labels)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(
                f"client {client} produced non-finite weights at local step {k + 1}",
                client=client,
                step=k + 1,
                source="fed_trainer",
            )
        if keep_snapshots:
            snapshots.append(w)

    return LocalResult(
        final_weights=w,
        delta=w - start,
        residuals=residuals,
        deviations=deviations,
        move_from_init=move_from_init,
        move_in_round=move_in_round,
        snapshots=snapshots,
    )


def aggregate(deltas: Sequence) -> NDArray[np.float64]:
    """Mean of the client deltas, summed in client order."""
    if len(deltas) == 0:
        raise ParameterError("no client deltas to aggregate", source="fed_trainer")
    shape = np.shape(deltas[0])
    total = np.array(deltas[0], dtype=np.float64)
    for c, delta in enumerate(deltas[1:], start=1):
        if np.shape(delta) != shape:
            raise ShapeError(
                f"delta of client {c} has shape {np.shape(delta)}, expected {shape}",
                source="fed_trainer",
            )
        total = total + delta
    return total / len(deltas)


def global_step(weights, delta, eta_global: float) -> NDArray[np.float64]:
    if np.shape(weights) != np.shape(delta):
        raise ShapeError(
            f"delta shape {np.shape(delta)} does not match weights {np.shape(weights)}",
            source="fed_trainer",
        )
    return np.asarray(weights) + eta_global * np.asarray(delta)


def prescribed_rates(
    lambda_min: float, kappa: float, n: int, local_steps: int, safety_c: float = 1.0
) -> tuple[float, float]:
    """Step sizes eta_local = c * lambda / (kappa K n^2), eta_global = 1."""
    if lambda_min <= 0:
        raise ParameterError(f"lambda must be positive, got {lambda_min}", source="fed_trainer")
    if kappa < 1:
        raise ParameterError(f"kappa must be at least 1, got {kappa}", source="fed_trainer")
    if not 0 < safety_c <= 1:
        raise ParameterError(
            f"safety_c must lie in (0, 1], got {safety_c}", source="fed_trainer"
        )
    if n < 1 or local_steps < 1:
        raise ParameterError(
            f"n and K must be positive, got n={n}, K={local_steps}", source="fed_trainer"
        )
    return safety_c * lambda_min / (kappa * local_steps * n * n), 1.0


class _Recorder:
    """Single-writer accumulator for one training run."""

    def __init__(self, config: TrainConfig, init_weights, signs):
        self.config = config
        self.init_weights = init_weights
        self.signs = signs
        self.residual_sq: list[float] = []
        self.loss: list[float] = []
        self.max_global_move: list[float] = []
        self.total_move: list[float] = []
        self.local: list[list[LocalResult]] = []
        self.global_snapshots: list[NDArray[np.float64]] = []
        self.last_weights = init_weights

    @property
    def keeps_local(self) -> bool:
        return self.config.record_level != RecordLevel.LOSS_ONLY

    @property
    def keeps_snapshots(self) -> bool:
        return self.config.record_level == RecordLevel.FULL_STATES

    def record_global(self, weights, dataset: Dataset, partition: ClientPartition) -> float:
        residuals = dataset.labels - model.outputs(weights, self.signs, dataset.inputs)
        residual_sq = math.fsum(residuals**2)
        per_client = [0.5 * math.fsum(residuals[s] ** 2) for s in partition.assignments]
        self.residual_sq.append(residual_sq)
        self.loss.append(math.fsum(per_client) / partition.num_clients)
        self.max_global_move.append(_max_column_move(weights, self.init_weights))
        self.total_move.append(float(np.linalg.norm(weights - self.init_weights)))
        self.last_weights = weights
        if self.keeps_snapshots:
            self.global_snapshots.append(np.array(weights))
        return residual_sq

    def record_round(self, results: list[LocalResult]) -> None:
        if self.keeps_local:
            self.local.append(results)

    def build(self, stopped_early: bool = False) -> TrainTrace:
        trace = TrainTrace(
            residual_sq=np.array(self.residual_sq),
            loss=np.array(self.loss),
            max_global_move=np.array(self.max_global_move),
            total_move=np.array(self.total_move),
            signs=np.array(self.signs),
            final_weights=np.array(self.last_weights),
            stopped_early=stopped_early,
        )
        if self.keeps_local:
            n_clients = self.config.num_clients
            shape = (len(self.local), n_clients, self.config.local_steps + 1)

            def stack(attr: str) -> NDArray[np.float64]:
                values = [getattr(r, attr) for results in self.local for r in results]
                return np.array(values).reshape(shape)

            trace.local_residual = stack("residuals")
            trace.local_deviation = stack("deviations")
            trace.local_move = stack("move_from_init")
            trace.round_local_move = stack("move_in_round")
        if self.keeps_snapshots:
            rounds = len(self.local)
            trace.global_snapshots = np.array(self.global_snapshots[: rounds + 1])
            d, m = self.init_weights.shape
            trace.local_snapshots = np.array(
                [[r.snapshots for r in results] for results in self.local]
            ).reshape(rounds, self.config.num_clients, self.config.local_steps, d, m)
        return trace


def train(
    config: TrainConfig,
    dataset: Dataset,
    partition: ClientPartition,
    params: ModelParams | None = None,
) -> TrainTrace:
    """Run FedAvg for ``config.rounds`` rounds; round t is recorded before its update."""
    if partition.n != dataset.n:
        raise ParameterError(
            f"partition covers n={partition.n} points, dataset has {dataset.n}",
            source="fed_trainer",
        )
    if partition.num_clients != config.num_clients:
        raise ParameterError(
            f"partition has {partition.num_clients} clients, config expects "
            f"{config.num_clients}",
            source="fed_trainer",
        )
    if params is None:
        params = model.init(
            config.width, dataset.d, config.sigma, RngStream(config.seed, const.STREAM_INIT)
        )
    elif params.d != dataset.d:
        raise ShapeError(
            f"params have d={params.d}, dataset has d={dataset.d}", source="fed_trainer"
        )

    init_weights = np.array(params.weights)
    signs = params.signs
    recorder = _Recorder(config, init_weights, signs)
    weights = init_weights.copy()
    initial = recorder.record_global(weights, dataset, partition)
    limit = const.DIVERGENCE_FACTOR * initial if initial > 0 else math.inf

    logger.info(
        f"Training: N={config.num_clients}, K={config.local_steps}, T={config.rounds}, "
        f"m={params.m}, eta_local={config.eta_local:.3e}, "
        f"eta_global={config.eta_global:g}, residual_sq(0)={initial:.6e}"
    )

    def run_client(client: int) -> LocalResult:
        return local_run(
            weights,
            signs,
            dataset,
            partition.assignments[client],
            config.local_steps,
            config.eta_local,
            init_weights=init_weights,
            keep_snapshots=recorder.keeps_snapshots,
            client=client,
        )

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    stopped_early = False
    try:
        for t in range(config.rounds):
            current = recorder.residual_sq[-1]
            if config.stop_eps is not None and current <= config.stop_eps * initial:
                stopped_early = True
                logger.info(f"Reached residual target after {t} rounds, stopping early")
                break

            clients = range(config.num_clients)
            try:
                if executor is None:
                    results = [run_client(c) for c in clients]
                else:
                    results = list(executor.map(run_client, clients))
            except DivergenceError as e:
                e.round_index = t
                e.trace = recorder.build()
                raise

            recorder.record_round(results)
            weights = global_step(
                weights, aggregate([r.delta for r in results]), config.eta_global
            )
            residual_sq = recorder.record_global(weights, dataset, partition)

            if not math.isfinite(residual_sq) or residual_sq > limit:
                raise DivergenceError(
                    f"residual_sq {residual_sq:.3e} at round {t + 1} exceeds "
                    f"{const.DIVERGENCE_FACTOR:g} x the initial value {initial:.3e}",
                    round_index=t + 1,
                    trace=recorder.build(),
                    source="fed_trainer",
                )
            if (t + 1) % const.PROGRESS_LOG_EVERY == 0:
                logger.info(f"Round {t + 1}/{config.rounds}: residual_sq={residual_sq:.6e}")
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    trace = recorder.build(stopped_early=stopped_early)
    logger.info(
        f"Training finished after {trace.rounds} rounds: "
        f"residual_sq={trace.residual_sq[-1]:.6e}"
    )
    return trace


def rounds_reached(trace: TrainTrace, eps: float) -> int | None:
    """First round t with residual_sq(t) <= eps * residual_sq(0)."""
    target = eps * trace.residual_sq[0]
    hits = np.flatnonzero(trace.residual_sq <= target)
    return int(hits[0]) if hits.size else None


TRACE_COLUMNS = ["round", "residual_sq", "loss", "max_global_move", "total_move_fro"]
LOCAL_COLUMNS = [
    "round",
    "client",
    "local_step",
    "local_residual",
    "local_deviation",
    "max_local_move",
    "round_local_move",
]


def save_trace(trace: TrainTrace, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(
        directory / const.TRACE_FILE,
        TRACE_COLUMNS,
        (
            [t, trace.residual_sq[t], trace.loss[t], trace.max_global_move[t], trace.total_move[t]]
            for t in range(trace.residual_sq.size)
        ),
    )
    if trace.has_local:
        rounds, clients, steps = trace.local_residual.shape
        write_csv(
            directory / const.LOCAL_TRACE_FILE,
            LOCAL_COLUMNS,
            (
                [
                    t,
                    c,
                    k,
                    trace.local_residual[t, c, k],
                    trace.local_deviation[t, c, k],
                    trace.local_move[t, c, k],
                    trace.round_local_move[t, c, k],
                ]
                for t in range(rounds)
                for c in range(clients)
                for k in range(steps)
            ),
        )
    if trace.has_snapshots:
        np.save(directory / const.SNAPSHOT_GLOBAL_FILE, trace.global_snapshots)
        np.save(directory / const.SNAPSHOT_LOCAL_FILE, trace.local_snapshots)
        np.save(directory / const.SIGNS_FILE, trace.signs)
    return directory


def _float_rows(path: Path, columns: list[str]) -> NDArray[np.float64]:
    header, rows = read_csv(path)
    if header != columns:
        raise ParseError(f"unexpected columns in {path}: {header}", line=1)
    values = np.empty((len(rows), len(columns)))
    for index, (line_no, row) in enumerate(rows):
        if len(row) != len(columns):
            raise ParseError(
                f"expected {len(columns)} values, found {len(row)}", line=line_no
            )
        try:
            values[index] = [float(v) for v in row]
        except ValueError as e:
            raise ParseError(str(e), line=line_no) from None
    return values


def load_trace(directory) -> TrainTrace:
    """Read a trace written by save_trace (snapshots included when present)."""
    directory = Path(directory)
    main = _float_rows(directory / const.TRACE_FILE, TRACE_COLUMNS)
    if main.shape[0] == 0:
        raise ParseError(f"{directory / const.TRACE_FILE} has no rounds", line=2)
    trace = TrainTrace(
        residual_sq=main[:, 1].copy(),
        loss=main[:, 2].copy(),
        max_global_move=main[:, 3].copy(),
        total_move=main[:, 4].copy(),
    )

    local_path = directory / const.LOCAL_TRACE_FILE
    if local_path.exists():
        local = _float_rows(local_path, LOCAL_COLUMNS)
        if local.shape[0]:
            shape = tuple(int(v) + 1 for v in local[-1, :3])
            if int(np.prod(shape)) != local.shape[0]:
                raise ParseError(
                    f"{local_path} does not hold a full (round, client, step) grid",
                    line=local.shape[0] + 1,
                )
            trace.local_residual = local[:, 3].reshape(shape)
            trace.local_deviation = local[:, 4].reshape(shape)
            trace.local_move = local[:, 5].reshape(shape)
            trace.round_local_move = local[:, 6].reshape(shape)

    snapshot_path = directory / const.SNAPSHOT_GLOBAL_FILE
    if snapshot_path.exists():
        trace.global_snapshots = np.load(snapshot_path)
        trace.local_snapshots = np.load(directory / const.SNAPSHOT_LOCAL_FILE)
        trace.signs = np.load(directory / const.SIGNS_FILE)
        trace.final_weights = trace.global_snapshots[-1]
    return trace
