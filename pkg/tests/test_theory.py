import dataclasses
import logging
import math

import numpy as np
import pytest

from conftest import desk_run
from src.core import constants as const
from src.core.errors import ContractError, ParameterError, RegimeWarning
from src.services import fed_trainer, kernel, model, theory
from src.services.dataset import Dataset
from src.services.fed_trainer import RecordLevel, TrainTrace
from src.services.numerics import RngStream


def flat_trace(residual_sq) -> TrainTrace:
    size = len(residual_sq)
    return TrainTrace(
        residual_sq=np.array(residual_sq, dtype=float),
        loss=np.zeros(size),
        max_global_move=np.zeros(size),
        total_move=np.zeros(size),
    )


def names(reports) -> set[str]:
    return {r.name for r in reports}


@pytest.fixture
def full_run(small_dataset, small_partition, small_config):
    config = small_config(rounds=3, width=256, record_level=RecordLevel.FULL_STATES)
    params = model.init(256, small_dataset.d, 1.0, RngStream(0, 1))
    trace = fed_trainer.train(config, small_dataset, small_partition, params)
    lambda_min, _, kappa = kernel.spectrum(
        kernel.gram_pair(small_dataset, params.weights, params.weights)
    )
    context = theory.AuditContext(
        n=small_dataset.n,
        m=256,
        lambda_min=lambda_min,
        kappa=kappa,
        eta_local=config.eta_local,
        eta_global=config.eta_global,
        local_steps=config.local_steps,
        num_clients=config.num_clients,
        radius_mode="window",
    )
    return trace, context


class TestContraction:
    def test_factor_example(self):
        assert theory.contraction_factor(1.0, 1.0, 1.0, 1, 2) == 0.75

    def test_factor_grows_with_clients(self):
        few = theory.contraction_factor(0.5, 0.1, 1.0, 2, 2)
        many = theory.contraction_factor(0.5, 0.1, 1.0, 2, 8)
        assert few < many < 1.0

    def test_factor_outside_regime_warns(self):
        with pytest.warns(RegimeWarning):
            factor = theory.contraction_factor(4.0, 1.0, 1.0, 1, 1)
        assert factor == -1.0

    def test_non_positive_input_rejected(self):
        with pytest.raises(ParameterError):
            theory.contraction_factor(0.0, 1.0, 1.0, 1, 1)

    @pytest.mark.parametrize(
        "factor, eps, expected", [(0.5, 0.25, 2), (0.5, 0.3, 2), (0.5, 0.5, 1), (0.75, 1.0, 0)]
    )
    def test_rounds_to_eps(self, factor, eps, expected):
        assert theory.rounds_to_eps(factor, eps) == expected

    def test_rounds_to_eps_is_smallest(self):
        rounds = theory.rounds_to_eps(0.999, 1e-3)
        assert 0.999**rounds <= 1e-3 < 0.999 ** (rounds - 1)

    def test_rounds_to_eps_rejects_bad_factor(self):
        with pytest.raises(ParameterError):
            theory.rounds_to_eps(1.0, 0.1)

    def test_audit_reports_ratios_and_fail_fraction(self):
        reports = theory.audit_contraction(flat_trace([4.0, 2.0, 1.9]), 0.75)
        per_round = [r for r in reports if r.name == "contraction"]
        assert [r.holds for r in per_round] == [True, False]
        assert not any(r.asserted for r in per_round)
        summary = reports[-1]
        assert summary.name == "contraction_fail_fraction"
        assert summary.measured == 0.5
        assert summary.asserted and not summary.holds

    def test_exact_fit_rounds_are_not_counted(self):
        reports = theory.audit_contraction(flat_trace([1.0, 0.0, 0.0]), 0.75)
        assert reports[1].note == "exact-fit"
        assert reports[-1].holds

    def test_audit_needs_a_round(self):
        with pytest.raises(ContractError):
            theory.audit_contraction(flat_trace([1.0]), 0.5)


class TestSeedMajority:
    @pytest.mark.parametrize(
        "flags, expected",
        [
            ([True] * 4 + [False], True),
            ([True] * 3 + [False] * 2, False),
            ([True], True),
            ([False], False),
        ],
    )
    def test_four_of_five(self, flags, expected):
        assert theory.seed_majority(flags) is expected

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            theory.seed_majority([])

    def test_pass_fraction(self):
        reports = [theory.make_report("x", 1.0, v) for v in (0.5, 2.0)]
        assert theory.pass_fraction(reports) == 0.5
        assert theory.pass_fraction([]) == 1.0


class TestClosedFormBounds:
    def test_movement_radius(self):
        assert theory.global_movement_radius(4, 16, 0.5, 1.0) == pytest.approx(8.0)

    def test_initial_residual_bound(self):
        expected = 2 * math.log(10 / 0.5) * math.log(2 / 0.5) ** 2
        assert theory.initial_residual_bound(2, 10, 0.5) == pytest.approx(expected)

    def test_c1_upper_bound(self):
        value = theory.c1_upper_bound(
            eta_local=0.1, eta_global=1.0, num_clients=2, local_steps=1, n=2,
            lambda_min=0.5, kappa=1.0, radius=0.0, residual_sq=1.0,
        )
        assert value == pytest.approx(-0.03)

    def test_report_margin_and_slack(self):
        report = theory.make_report("x", 1.0, 1.0 + 1e-12)
        assert report.holds
        assert report.margin == pytest.approx(-1e-12, abs=1e-15)


class TestGeneralization:
    def test_orthogonal_leading_term_is_two(self, orthogonal_dataset):
        gram = kernel.ntk_infinity(orthogonal_dataset)
        terms = theory.generalization_terms(gram, orthogonal_dataset.labels, 2, 0.05)
        assert terms.leading == pytest.approx(2.0, rel=1e-12)
        assert terms.slack == pytest.approx(math.sqrt(math.log(2 / (0.5 * 0.05)) / 4))
        assert theory.generalization_bound(
            gram, orthogonal_dataset.labels, 2, 0.05
        ) == pytest.approx(terms.total)

    def test_zero_labels_leave_only_slack(self, small_dataset):
        gram = kernel.ntk_infinity(small_dataset)
        terms = theory.generalization_terms(gram, np.zeros(small_dataset.n), small_dataset.n, 0.1)
        assert terms.leading == 0.0
        assert terms.total == terms.slack

    def test_leading_term_scales_with_labels(self, small_dataset):
        gram = kernel.ntk_infinity(small_dataset)
        base = theory.generalization_terms(gram, small_dataset.labels, small_dataset.n, 0.1)
        scaled = theory.generalization_terms(
            gram, 0.5 * small_dataset.labels, small_dataset.n, 0.1
        )
        assert scaled.leading == pytest.approx(0.5 * base.leading, rel=1e-9)

    def test_rotation_invariant(self, small_dataset):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
        rotated = Dataset(small_dataset.inputs @ q, small_dataset.labels)
        before = theory.generalization_bound(
            kernel.ntk_infinity(small_dataset), small_dataset.labels, small_dataset.n, 0.05
        )
        after = theory.generalization_bound(
            kernel.ntk_infinity(rotated), rotated.labels, rotated.n, 0.05
        )
        assert after == pytest.approx(before, rel=1e-8)

    def test_bad_delta_rejected(self, orthogonal_dataset):
        with pytest.raises(ParameterError):
            theory.generalization_terms(
                kernel.ntk_infinity(orthogonal_dataset), orthogonal_dataset.labels, 2, 1.0
            )

    def test_rkhs_movement_at_zero_rounds(self, orthogonal_dataset):
        report = theory.movement_vs_rkhs(
            flat_trace([1.0]), kernel.ntk_infinity(orthogonal_dataset), orthogonal_dataset.labels
        )
        assert report.theoretical == pytest.approx(1.5 * 2.0)
        assert report.measured == 0.0 and report.holds

    def test_ramp_risk(self):
        ds = Dataset(np.eye(2), np.array([0.5, -1.0]))
        params = model.ModelParams(np.zeros((2, 3)), np.ones(3), 1.0)
        assert theory.empirical_risk(params, ds) == pytest.approx(0.75)


class TestTraceAudits:
    def test_local_deviation_and_movement_hold(self, full_run):
        trace, ctx = full_run
        reports = theory.local_deviation_bounds(trace, ctx.eta_local, ctx.n, ctx.local_steps)
        reports += theory.movement_bounds(trace, ctx.n, ctx.m, ctx.lambda_min)
        assert len(reports) == 2 * 3 * 2 * 3 + 4
        assert all(r.holds for r in reports)

    def test_local_audits_need_local_recordings(self):
        with pytest.raises(ContractError):
            theory.local_deviation_bounds(flat_trace([1.0, 0.5]), 0.1, 2, 1)

    def test_gram_audit_needs_snapshots(self, small_dataset, small_partition, small_config):
        trace = fed_trainer.train(small_config(rounds=1), small_dataset, small_partition)
        with pytest.raises(ContractError):
            theory.gram_drift_bounds(trace, small_dataset, small_partition)

    def test_gram_drift_reports(self, full_run, small_dataset, small_partition):
        trace, _ = full_run
        reports = theory.gram_drift_bounds(trace, small_dataset, small_partition, "running")
        assert len(reports) == 2 * 3 * 2
        first = reports[0]
        assert (first.name, first.round, first.local_step) == ("gram_drift", 0, 0)
        assert first.measured == 0.0 and first.holds
        assert all(r.holds for r in reports if r.name == "gram_perp")

    def test_unknown_radius_mode(self, full_run, small_dataset, small_partition):
        trace, _ = full_run
        with pytest.raises(ParameterError):
            theory.gram_drift_bounds(trace, small_dataset, small_partition, "fixed")

    def test_audits_do_not_mutate_the_trace(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        before = trace.residual_sq.copy()
        first, _ = theory.audit_trace(trace, small_dataset, small_partition, ctx)
        second, _ = theory.audit_trace(trace, small_dataset, small_partition, ctx)
        assert np.array_equal(trace.residual_sq, before)
        assert first == second


class TestDecomposition:
    def test_identity_with_measured_radius(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        for t in range(trace.rounds):
            radius = max(trace.max_global_move[t], trace.max_global_move[t + 1])
            d = theory.decompose_round(
                trace, small_dataset, small_partition, t, ctx.eta_local, ctx.eta_global, radius
            )
            assert d.residual_sq_before == pytest.approx(trace.residual_sq[t], rel=1e-12)
            assert d.identity_gap <= 1e-8 * d.residual_sq_before
            assert d.c1 < 0
            assert d.c4 >= 0

    def test_huge_radius_cancels_first_two_terms(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        d = theory.decompose_round(
            trace, small_dataset, small_partition, 0, ctx.eta_local, ctx.eta_global, 1e6
        )
        assert d.c1 + d.c2 == 0.0
        assert d.identity_gap <= 1e-8 * d.residual_sq_before

    def test_small_radius_is_raised(self, full_run, small_dataset, small_partition, caplog):
        trace, ctx = full_run
        with caplog.at_level(logging.WARNING):
            d = theory.decompose_round(
                trace, small_dataset, small_partition, 1, ctx.eta_local, ctx.eta_global, 1e-12
            )
        assert d.radius == max(trace.max_global_move[1], trace.max_global_move[2])
        assert "below the measured movement" in caplog.text

    def test_round_out_of_range(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        with pytest.raises(ParameterError):
            theory.decompose_round(trace, small_dataset, small_partition, 3, 0.05, 1.0, 1.0)

    def test_reports(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        d = theory.decompose_round(
            trace, small_dataset, small_partition, 0, ctx.eta_local, ctx.eta_global, 0.5
        )
        asserted = theory.decomposition_reports(d)
        assert names(asserted) == {"c1_negative", "c1_dominance"}
        assert all(r.asserted for r in asserted)
        claims = theory.claim_reports(
            d,
            eta_local=ctx.eta_local,
            eta_global=ctx.eta_global,
            lambda_min=ctx.lambda_min,
            kappa=ctx.kappa,
            local_steps=ctx.local_steps,
            num_clients=ctx.num_clients,
            n=ctx.n,
        )
        assert not any(r.asserted for r in claims)

    def test_full_audit_decomposes_every_round(self, full_run, small_dataset, small_partition):
        trace, ctx = full_run
        reports, decompositions = theory.audit_trace(trace, small_dataset, small_partition, ctx)
        assert [d.round for d in decompositions] == [0, 1, 2]
        assert {
            "initial_residual",
            "contraction_fail_fraction",
            "global_movement",
            "local_movement",
            "local_deviation",
            "gram_drift",
            "gram_perp",
            "c1_negative",
            "claim_c1_displayed",
        } <= names(reports)
        robust = ("initial_residual", "contraction_fail_fraction", "c1_negative")
        assert all(r.holds for r in reports if r.name in robust)

    def test_default_radius_asserts_dominance_at_measured_radius(
        self, full_run, small_dataset, small_partition
    ):
        trace, ctx = full_run
        assert ctx.decomposition_radius is None
        reports, decompositions = theory.audit_trace(trace, small_dataset, small_partition, ctx)
        dominance = [r for r in reports if r.name == "c1_dominance"]
        informational = [r for r in dominance if r.note == const.NOTE_MOVEMENT_RADIUS]
        asserted = [r for r in dominance if r.asserted]
        assert len(informational) == len(decompositions) == 3
        assert not any(r.asserted for r in informational)
        assert [r.round for r in asserted] == [d.round for d in decompositions]
        assert {r.note for r in asserted} == {const.NOTE_MEASURED_RADIUS}
        assert all(r.asserted for r in reports if r.name == "c1_negative")

    def test_measured_radius_asserts_every_dominance(
        self, full_run, small_dataset, small_partition
    ):
        trace, ctx = full_run
        ctx = dataclasses.replace(ctx, decomposition_radius="measured")
        reports, decompositions = theory.audit_trace(trace, small_dataset, small_partition, ctx)
        dominance = [r for r in reports if r.name == "c1_dominance"]
        assert len(dominance) == len(decompositions)
        assert all(r.asserted and r.note == "" for r in dominance)
        for d in decompositions:
            exact = max(trace.max_global_move[d.round], trace.max_global_move[d.round + 1])
            assert d.radius == exact


class TestReportFiles:
    def test_reload(self, tmp_path):
        reports = [
            theory.make_report("a", 1.0, 0.5, round=2, client=1, local_step=0),
            theory.make_report("b", 0.1, 0.2, asserted=False),
        ]
        loaded = theory.load_reports(theory.save_reports(reports, tmp_path / "bounds.csv"))
        assert [(r.name, r.round, r.client, r.holds, r.asserted) for r in loaded] == [
            ("a", 2, 1, True, True),
            ("b", None, None, False, False),
        ]
        assert loaded[0].margin == reports[0].margin

    def test_note_survives_reload(self, tmp_path):
        reports = [
            theory.make_report(
                "c1_dominance", 1.0, 2.0, round=0, note="movement-radius", asserted=False
            ),
            theory.make_report("c1_dominance", 1.0, 0.5, round=0, note="measured-radius"),
            theory.make_report("c1_negative", 0.0, -1.0, round=0),
        ]
        loaded = theory.load_reports(theory.save_reports(reports, tmp_path / "bounds.csv"))
        assert [(r.note, r.asserted) for r in loaded] == [
            ("movement-radius", False),
            ("measured-radius", True),
            ("", True),
        ]
        assert theory.audits_pass(loaded)

    def test_empty_context_fields(self, tmp_path):
        path = theory.save_reports([theory.make_report("a", 1.0, 0.5)], tmp_path / "b.csv")
        assert path.read_text().splitlines()[1].startswith("a,,,,1.0,0.5,true")

    def test_audits_pass_ignores_unasserted(self):
        reports = [
            theory.make_report("a", 1.0, 0.5),
            theory.make_report("b", 0.0, 1.0, asserted=False),
        ]
        assert theory.audits_pass(reports)


@pytest.fixture(scope="module")
def desk_seed_zero():
    return desk_run(0, rounds=10)


@pytest.mark.slow
class TestDeskConfiguration:
    def test_measured_radius_dominates_every_round(self, desk_seed_zero):
        trace, dataset, partition, ctx = desk_seed_zero
        ctx = dataclasses.replace(ctx, decomposition_radius="measured")
        reports, decompositions = theory.audit_trace(trace, dataset, partition, ctx)
        assert len(decompositions) == 10
        for d in decompositions:
            assert d.identity_gap <= 1e-8 * d.residual_sq_before
            assert d.c1 < 0
            assert d.dominated
        assert theory.audits_pass(reports)

    def test_default_radius_passes_with_dominance_at_measured_radius(self, desk_seed_zero):
        trace, dataset, partition, ctx = desk_seed_zero
        reports, _ = theory.audit_trace(trace, dataset, partition, ctx)
        dominance = [r for r in reports if r.name == "c1_dominance"]
        assert {r.note for r in dominance if not r.asserted} == {const.NOTE_MOVEMENT_RADIUS}
        assert all(r.holds for r in dominance if r.asserted)
        assert theory.audits_pass(reports)

    def test_small_sigma_movement_stays_within_rkhs_norm(self):
        flags = []
        for seed in range(5):
            trace, dataset, _, _ = desk_run(
                seed, rounds=40, record_level=RecordLevel.LOSS_ONLY, sigma=0.1, eta_local=0.5
            )
            assert trace.residual_sq[-1] < trace.residual_sq[0]
            report = theory.movement_vs_rkhs(trace, kernel.ntk_infinity(dataset), dataset.labels)
            assert report.constant == const.RKHS_MOVEMENT_SLACK
            flags.append(report.holds)
        assert theory.seed_majority(flags)
