import numpy as np
import pytest

from src.core import constants as const
from src.services import dataset as data
from src.services import fed_trainer, kernel, model, theory
from src.services.dataset import Dataset, DistributionSpec
from src.services.fed_trainer import RecordLevel, TrainConfig
from src.services.numerics import RngStream


def make_dataset(n: int = 6, d: int = 4, seed: int = 0) -> Dataset:
    return data.generate(DistributionSpec(), n, d, RngStream(seed, 0))


def unit(*values) -> np.ndarray:
    v = np.array(values, dtype=float)
    return v / np.linalg.norm(v)


def central_difference(f, weights: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Entrywise central finite differences of a scalar function of a matrix."""
    grad = np.zeros_like(weights)
    for idx in np.ndindex(weights.shape):
        plus = weights.copy()
        minus = weights.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (f(plus) - f(minus)) / (2 * step)
    return grad


def desk_run(
    seed: int,
    rounds: int,
    record_level: RecordLevel = RecordLevel.FULL_STATES,
    sigma: float = 1.0,
    eta_local: float | None = None,
):
    """The n=16, d=8, m=2^13, N=4, K=4 run the CLI performs with default flags."""
    n, d, m, clients, steps = 16, 8, 2**13, 4, 4
    dataset = data.generate(DistributionSpec(), n, d, RngStream(seed, const.STREAM_DATA))
    partition = data.partition_iid(n, clients, RngStream(seed, const.STREAM_PARTITION))
    params = model.init(m, d, sigma, RngStream(seed, const.STREAM_INIT))
    lambda_min, _, kappa = kernel.spectrum(
        kernel.gram_pair(dataset, params.weights, params.weights), dataset
    )
    prescribed, eta_global = fed_trainer.prescribed_rates(lambda_min, kappa, n, steps)
    config = TrainConfig(
        num_clients=clients,
        local_steps=steps,
        rounds=rounds,
        eta_local=prescribed if eta_local is None else eta_local,
        eta_global=eta_global,
        width=m,
        sigma=sigma,
        seed=seed,
        record_level=record_level,
    )
    trace = fed_trainer.train(config, dataset, partition, params)
    context = theory.AuditContext(
        n=n,
        m=m,
        lambda_min=lambda_min,
        kappa=kappa,
        eta_local=config.eta_local,
        eta_global=config.eta_global,
        local_steps=steps,
        num_clients=clients,
    )
    return trace, dataset, partition, context


@pytest.fixture
def small_dataset() -> Dataset:
    return make_dataset()


@pytest.fixture
def small_partition(small_dataset):
    return data.partition_iid(small_dataset.n, 2, RngStream(0, 2))


@pytest.fixture
def small_params(small_dataset):
    return model.init(1024, small_dataset.d, 1.0, RngStream(0, 1))


@pytest.fixture
def orthogonal_dataset() -> Dataset:
    return Dataset(np.eye(2), np.array([1.0, 1.0]))


@pytest.fixture
def small_config():
    def build(**overrides) -> TrainConfig:
        values = dict(
            num_clients=2,
            local_steps=2,
            rounds=5,
            eta_local=0.05,
            eta_global=1.0,
            width=1024,
            sigma=1.0,
            seed=0,
            record_level=RecordLevel.BOUNDS,
        )
        values.update(overrides)
        return TrainConfig(**values)

    return build
