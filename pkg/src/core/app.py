import argparse
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..services import dataset as data
from ..services import fed_trainer, kernel, model, theory
from ..services.dataset import ClientPartition, Dataset, DistributionSpec
from ..services.fed_trainer import RecordLevel, TrainTrace
from ..services.model import ModelParams
from ..services.numerics import RngStream
from . import constants as const
from .config import RunConfig
from .errors import ConfigError, DivergenceError, ParseError
from .state_machine import create_state_machine
from .utils import format_float, write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass
class SeedSetup:
    """Everything a seed's run derives from its random streams."""

    seed: int
    dataset: Dataset
    partition: ClientPartition
    params: ModelParams
    lambda_min: float
    kappa: float


@dataclass
class Schedule:
    eta_local: float
    eta_global: float
    rounds: int
    rounds_to_eps: int | None
    factor: float
    capped: bool


class App:
    """Runs one CLI command over every configured seed."""

    def __init__(self, args: argparse.Namespace):
        self.config = RunConfig.from_args(args)
        self.m = create_state_machine()
        self._summary: dict[str, Any] = {}
        self._seed_dir: Path | None = None
        self._setup_state_machine_callbacks()

    def _setup_state_machine_callbacks(self):
        self.m.on_enter_TRAINING(self._on_enter_training)
        self.m.on_enter_AUDITING(self._on_enter_auditing)
        self.m.on_enter_FINISHED(self._on_enter_finished)
        self.m.on_enter_DIVERGED(self._on_enter_diverged)

    def run(self) -> int:
        """Dispatch the configured command and return the process exit code."""
        commands = {
            "gen-data": self.cmd_gen_data,
            "kernel": self.cmd_kernel,
            "train": self.cmd_train,
            "sweep-clients": self.cmd_sweep_clients,
            "verify": self.cmd_verify,
        }
        command = commands.get(self.config.command)
        if command is None:
            raise ConfigError(f"unknown command {self.config.command!r}")
        self.config.out_dir.mkdir(parents=True, exist_ok=True)
        write_json(self.config.to_dict(), self.config.out_dir / const.CONFIG_ECHO_FILE)
        logger.info(f"Running {self.config.command} for seeds {self.config.seeds}")
        return command()

    # Lifecycle callbacks

    def _on_enter_training(self, event: Any):
        logger.info(f"Seed {event.kwargs.get('seed')}: training started.")

    def _on_enter_auditing(self, event: Any):
        logger.info("Training finished, auditing bounds.")

    def _on_enter_finished(self, event: Any):
        self._summary["state"] = self.m.state.name
        logger.info("Run finished.")

    def _on_enter_diverged(self, event: Any):
        error: DivergenceError = event.kwargs["error"]
        self._summary["state"] = self.m.state.name
        self._summary["error"] = asdict(error.to_error_data())
        if error.trace is not None and self._seed_dir is not None:
            fed_trainer.save_trace(error.trace, self._seed_dir)
            self._summary["rounds_completed"] = error.trace.rounds
        logger.error(f"Run diverged: {error.message}")

    # Shared per-seed setup

    def _distribution(self) -> DistributionSpec:
        _, alpha = self.config.partition_mode
        return DistributionSpec(self.config.distribution, self.config.label_rule, alpha)

    def _dataset(self, seed: int) -> Dataset:
        if self.config.data is not None:
            return data.load_dataset(self.config.data)
        rng = RngStream(seed, const.STREAM_DATA)
        return data.generate(self._distribution(), self.config.n, self.config.d, rng)

    def _partition(self, seed: int, dataset: Dataset, clients: int) -> ClientPartition:
        if self.config.partition_file is not None:
            partition = data.load_partition(self.config.partition_file)
            if partition.n != dataset.n:
                raise ParseError(
                    f"partition covers n={partition.n} points, dataset has {dataset.n}"
                )
            return partition
        if clients > dataset.n:
            raise ConfigError(f"clients ({clients}) cannot exceed n ({dataset.n})")
        mode, alpha = self.config.partition_mode
        rng = RngStream(seed, const.STREAM_PARTITION)
        if mode == "iid":
            return data.partition_iid(dataset.n, clients, rng)
        return data.partition_skewed(dataset.labels, clients, alpha, rng)

    def _setup(self, seed: int, clients: int | None = None) -> SeedSetup:
        dataset = self._dataset(seed)
        partition = self._partition(seed, dataset, clients or self.config.clients)
        params = model.init(
            self.config.width,
            dataset.d,
            self.config.sigma,
            RngStream(seed, const.STREAM_INIT),
        )
        gram = kernel.gram_pair(dataset, params.weights, params.weights)
        lambda_min, _, kappa = kernel.spectrum(gram, dataset)
        logger.info(f"Seed {seed}: lambda_min(H(0))={lambda_min:.6e}, kappa={kappa:.4f}")
        return SeedSetup(seed, dataset, partition, params, lambda_min, kappa)

    def _schedule(self, setup: SeedSetup, clients: int) -> Schedule:
        cfg = self.config
        eta_local, eta_global = fed_trainer.prescribed_rates(
            setup.lambda_min, setup.kappa, setup.dataset.n, cfg.local_steps, cfg.safety_c
        )
        if cfg.eta_local is not None:
            eta_local = cfg.eta_local
        if cfg.eta_global is not None:
            eta_global = cfg.eta_global
        factor = theory.contraction_factor(
            setup.lambda_min, eta_local, eta_global, cfg.local_steps, clients
        )

        target = None
        if 0.0 < factor < 1.0:
            target = theory.rounds_to_eps(factor, cfg.eps)
        if cfg.rounds is not None:
            rounds, capped = cfg.rounds, False
        elif target is None:
            raise ConfigError(
                f"contraction factor {factor!r} gives no round count; pass --rounds"
            )
        elif target > cfg.max_rounds:
            logger.warning(
                f"rounds_to_eps gives T={target}; capping at max_rounds={cfg.max_rounds}"
            )
            rounds, capped = cfg.max_rounds, True
        else:
            rounds, capped = target, False
        return Schedule(eta_local, eta_global, rounds, target, factor, capped)

    def _write_inputs(self, setup: SeedSetup, directory: Path) -> None:
        data.save_dataset(setup.dataset, directory / const.DATASET_FILE)
        data.save_partition(setup.partition, directory / const.PARTITION_FILE)
        model.save_params(setup.params, directory / const.PARAMS_FILE)

    def _audit_context(self, setup: SeedSetup, schedule: Schedule) -> theory.AuditContext:
        return theory.AuditContext(
            n=setup.dataset.n,
            m=setup.params.m,
            lambda_min=setup.lambda_min,
            kappa=setup.kappa,
            eta_local=schedule.eta_local,
            eta_global=schedule.eta_global,
            local_steps=self.config.local_steps,
            num_clients=setup.partition.num_clients,
            delta=self.config.delta,
            radius_mode=self.config.radius_mode,
            decomposition_radius=self.config.audit_radius,
        )

    def _finish(self, flags: list[bool], label: str) -> int:
        if theory.seed_majority(flags):
            logger.info(f"{label}: {sum(flags)}/{len(flags)} seeds pass")
            return const.EXIT_OK
        logger.error(f"{label}: only {sum(flags)}/{len(flags)} seeds pass")
        return const.EXIT_AUDIT_FAILED

    # Commands

    def cmd_gen_data(self) -> int:
        for seed in self.config.seeds:
            setup = self._setup(seed)
            directory = self.config.seed_dir(seed)
            data.save_dataset(setup.dataset, directory / const.DATASET_FILE)
            data.save_partition(setup.partition, directory / const.PARTITION_FILE)
            inf_spectrum = kernel.spectrum(kernel.ntk_infinity(setup.dataset), setup.dataset)
            summary = {
                "seed": seed,
                "n": setup.dataset.n,
                "d": setup.dataset.d,
                "partition_sizes": setup.partition.sizes(),
                "lambda_min_inf": inf_spectrum.lambda_min,
                "kappa_init": setup.kappa,
            }
            write_json(summary, directory / const.SUMMARY_FILE)
            print(
                f"seed {seed}: lambda_min(H_inf)={format_float(inf_spectrum.lambda_min)} "
                f"kappa(H(0))={format_float(setup.kappa)} sizes={setup.partition.sizes()}"
            )
        return const.EXIT_OK

    def cmd_kernel(self) -> int:
        cfg = self.config
        flags = []
        gaps: dict[int, list[float]] = {}
        for seed in cfg.seeds:
            setup = self._setup(seed)
            dataset = setup.dataset
            directory = cfg.seed_dir(seed)
            gram_inf = kernel.ntk_infinity(dataset)
            gram_init = kernel.gram_pair(dataset, setup.params.weights, setup.params.weights)
            kernel.save_gram(gram_inf, directory / const.GRAM_INF_FILE)
            kernel.save_gram(gram_init, directory / const.GRAM_INIT_FILE)
            inf_spectrum = kernel.spectrum(gram_inf, dataset)
            gap = kernel.gram_drift(gram_init, gram_inf)
            summary: dict[str, Any] = {
                "seed": seed,
                "inf": inf_spectrum._asdict(),
                "init": {
                    "lambda_min": setup.lambda_min,
                    "lambda_max": setup.lambda_min * setup.kappa,
                    "condition_number": setup.kappa,
                },
                "frobenius_gap": gap,
                "operator_gap": kernel.operator_drift(gram_init, gram_inf),
            }
            passed = True
            if cfg.generalization:
                terms = theory.generalization_terms(
                    gram_inf, dataset.labels, dataset.n, cfg.delta
                )
                summary["generalization"] = {
                    "leading": terms.leading,
                    "slack": terms.slack,
                    "bound": terms.total,
                }
                print(f"seed {seed}: generalization bound = {format_float(terms.total)}")
            if cfg.mc_check:
                pairs = [(i, j) for i in range(dataset.n) for j in range(i + 1, dataset.n)]
                checks = kernel.validate_closed_form(
                    dataset,
                    pairs[:20],
                    cfg.mc_samples,
                    RngStream(seed, const.STREAM_MONTE_CARLO),
                )
                summary["mc_check"] = [c._asdict() for c in checks]
                passed = all(c.holds for c in checks)
            if cfg.m_list:
                for m in cfg.m_list:
                    weights = model.init(
                        m, dataset.d, cfg.sigma, RngStream(seed, const.STREAM_INIT)
                    ).weights
                    empirical = kernel.gram_pair(dataset, weights, weights)
                    gaps.setdefault(m, []).append(kernel.gram_drift(empirical, gram_inf))
            write_json(summary, directory / const.KERNEL_SUMMARY_FILE)
            flags.append(passed)
            print(
                f"seed {seed}: lambda_min(H_inf)={format_float(inf_spectrum.lambda_min)} "
                f"kappa(H(0))={format_float(setup.kappa)} "
                f"||H(0) - H_inf||_F={format_float(gap)}"
            )

        if cfg.m_list:
            write_csv(
                cfg.out_dir / const.M_SWEEP_FILE,
                ["m", "median_gap", *(f"seed_{s}" for s in cfg.seeds)],
                ([m, float(statistics.median(gaps[m])), *gaps[m]] for m in cfg.m_list),
            )
        return self._finish(flags, "Kernel checks")

    def _begin_run(self, seed: int, directory: Path) -> None:
        self.m = create_state_machine()
        self._setup_state_machine_callbacks()
        self._summary = {"seed": seed}
        self._seed_dir = directory

    def _schedule_summary(self, setup: SeedSetup, schedule: Schedule) -> dict[str, Any]:
        return {
            "lambda_min": setup.lambda_min,
            "kappa": setup.kappa,
            "eta_local": schedule.eta_local,
            "eta_global": schedule.eta_global,
            "local_steps": self.config.local_steps,
            "clients": setup.partition.num_clients,
            "contraction_factor": schedule.factor,
            "rounds": schedule.rounds,
            "rounds_to_eps": schedule.rounds_to_eps,
            "rounds_capped": schedule.capped,
        }

    def _trace_summary(self, trace: TrainTrace) -> dict[str, Any]:
        return {
            "final_residual_sq": float(trace.residual_sq[-1]),
            "initial_residual_sq": float(trace.residual_sq[0]),
            "rounds_completed": trace.rounds,
            "rounds_reached": fed_trainer.rounds_reached(trace, self.config.eps),
        }

    def _train_tracked(self, train_config, setup: SeedSetup) -> TrainTrace:
        """Train through the lifecycle machine; a divergence still writes the summary."""
        self.m.start_training(seed=setup.seed)
        try:
            return fed_trainer.train(
                train_config, setup.dataset, setup.partition, setup.params
            )
        except DivergenceError as e:
            self.m.diverge(error=e)
            write_json(self._summary, self._seed_dir / const.SUMMARY_FILE)
            raise

    def _run_seed(self, seed: int) -> bool:
        """Train and audit one seed; True when its asserted audits hold."""
        cfg = self.config
        self._begin_run(seed, cfg.seed_dir(seed))

        setup = self._setup(seed)
        schedule = self._schedule(setup, setup.partition.num_clients)
        self._write_inputs(setup, self._seed_dir)
        self._summary.update(self._schedule_summary(setup, schedule))
        train_config = cfg.train_config(
            seed, schedule.eta_local, schedule.eta_global, schedule.rounds
        )

        trace = self._train_tracked(train_config, setup)
        fed_trainer.save_trace(trace, self._seed_dir)
        self.m.finish_training()

        passed = True
        if cfg.audits:
            reports, decompositions = theory.audit_trace(
                trace,
                setup.dataset,
                setup.partition,
                self._audit_context(setup, schedule),
            )
            theory.save_reports(reports, self._seed_dir / const.BOUNDS_FILE)
            passed = theory.audits_pass(reports)
            asserted = [r for r in reports if r.asserted]
            self._summary["audits"] = {
                "asserted": len(asserted),
                "passed": sum(r.holds for r in asserted),
                "reported": len(reports),
                "decomposed_rounds": len(decompositions),
            }
        if cfg.generalization:
            self._summary["generalization"] = self._generalization(seed, setup, trace)
        self.m.finish_auditing()

        self._summary.update(self._trace_summary(trace), audits_pass=passed)
        write_json(self._summary, self._seed_dir / const.SUMMARY_FILE)
        return passed

    def _generalization(
        self, seed: int, setup: SeedSetup, trace: TrainTrace
    ) -> dict[str, Any]:
        cfg = self.config
        dataset = setup.dataset
        gram_inf = kernel.ntk_infinity(dataset)
        terms = theory.generalization_terms(gram_inf, dataset.labels, dataset.n, cfg.delta)
        movement = theory.movement_vs_rkhs(trace, gram_inf, dataset.labels)
        result: dict[str, Any] = {
            "leading": terms.leading,
            "slack": terms.slack,
            "bound": terms.total,
            "rkhs_movement": asdict(movement),
        }
        if cfg.data is None:
            test = data.generate(
                self._distribution(),
                cfg.test_size,
                dataset.d,
                RngStream(seed, const.STREAM_DATA),
                split="test",
            )
            final = setup.params.with_weights(trace.final_weights)
            result["test_risk"] = theory.empirical_risk(final, test)
            result["train_risk"] = theory.empirical_risk(final, dataset)
        return result

    def cmd_train(self) -> int:
        flags = [self._run_seed(seed) for seed in self.config.seeds]
        return self._finish(flags, "Bound audits")

    def cmd_sweep_clients(self) -> int:
        cfg = self.config
        rows = []
        curves: dict[int, np.ndarray] = {}
        reached: dict[int, list[float]] = {}
        for clients in cfg.clients_list:
            for seed in cfg.seeds:
                self._begin_run(seed, cfg.sweep_dir(clients, seed))
                setup = self._setup(seed, clients)
                schedule = self._schedule(setup, clients)
                budget = schedule.rounds if cfg.rounds is not None else cfg.max_rounds
                train_config = cfg.train_config(
                    seed,
                    schedule.eta_local,
                    schedule.eta_global,
                    budget,
                    num_clients=clients,
                    record_level=RecordLevel.LOSS_ONLY,
                    stop_eps=cfg.eps,
                )
                self._summary.update(self._schedule_summary(setup, schedule), rounds=budget)
                trace = self._train_tracked(train_config, setup)
                self.m.finish_training()
                self.m.finish_auditing()
                self._summary.update(self._trace_summary(trace), audits_pass=None)
                write_json(self._summary, self._seed_dir / const.SUMMARY_FILE)
                hit = self._summary["rounds_reached"]
                reached.setdefault(clients, []).append(math.inf if hit is None else hit)
                rows.append(
                    [
                        clients,
                        seed,
                        "" if schedule.rounds_to_eps is None else schedule.rounds_to_eps,
                        "" if hit is None else hit,
                        float(trace.residual_sq[-1] / trace.residual_sq[0])
                        if trace.residual_sq[0] > 0
                        else 0.0,
                    ]
                )
                if seed == cfg.seeds[0]:
                    curves[clients] = trace.residual_sq
                logger.info(f"N={clients}, seed {seed}: rounds to eps = {hit}")

        write_csv(
            cfg.out_dir / const.SWEEP_FILE,
            ["clients", "seed", "theoretical_rounds", "rounds_reached", "final_ratio"],
            rows,
        )
        write_csv(
            cfg.out_dir / const.SWEEP_SUMMARY_FILE,
            ["clients", "median_rounds"],
            ([c, float(statistics.median(reached[c]))] for c in cfg.clients_list),
        )
        for clients in cfg.clients_list:
            print(f"N={clients}: median rounds to eps = {statistics.median(reached[clients])}")
        if cfg.plot:
            plot_sweep(curves, cfg.out_dir / const.SWEEP_PLOT_FILE)
        return const.EXIT_OK

    def cmd_verify(self) -> int:
        root = Path(self.config.trace_dir)
        if (root / const.TRACE_FILE).exists():
            directories = [root]
        else:
            directories = sorted(p for p in root.glob("seed-*") if p.is_dir())
        if not directories:
            raise ParseError(f"no trace found under {root}")
        flags = [self._verify_dir(directory) for directory in directories]
        return self._finish(flags, "Verification")

    def _verify_dir(self, directory: Path) -> bool:
        summary_path = directory / const.SUMMARY_FILE
        try:
            summary = json.loads(summary_path.read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {summary_path}: {e.msg}", line=e.lineno) from None
        dataset = data.load_dataset(directory / const.DATASET_FILE)
        partition = data.load_partition(directory / const.PARTITION_FILE)
        params = model.load_params(directory / const.PARAMS_FILE)
        trace = fed_trainer.load_trace(directory)

        gram = kernel.gram_pair(dataset, params.weights, params.weights)
        lambda_min, _, kappa = kernel.spectrum(gram, dataset)
        context = theory.AuditContext(
            n=dataset.n,
            m=params.m,
            lambda_min=lambda_min,
            kappa=kappa,
            eta_local=float(summary["eta_local"]),
            eta_global=float(summary["eta_global"]),
            local_steps=int(summary["local_steps"]),
            num_clients=partition.num_clients,
            delta=self.config.delta,
            radius_mode=self.config.radius_mode,
            decomposition_radius=self.config.audit_radius,
        )
        reports, _ = theory.audit_trace(trace, dataset, partition, context)
        theory.save_reports(reports, directory / const.VERIFY_BOUNDS_FILE)
        passed = theory.audits_pass(reports)
        logger.info(f"Verified {directory}: {'pass' if passed else 'fail'}")
        return passed


def plot_sweep(curves: dict[int, np.ndarray], path: Path) -> Path:
    """Residual curves per client count, log scale."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("--plot needs matplotlib (install the 'plot' extra)") from None

    fig, ax = plt.subplots(figsize=(6, 4))
    for clients, residual in sorted(curves.items()):
        ax.semilogy(np.arange(residual.size), residual / residual[0], label=f"N={clients}")
    ax.set_xlabel("round")
    ax.set_ylabel("residual_sq / residual_sq(0)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
