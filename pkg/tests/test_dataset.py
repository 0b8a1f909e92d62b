import numpy as np
import pytest

from conftest import make_dataset
from src.core.errors import ParameterError, ParseError, ValidationError
from src.services import dataset as data
from src.services.dataset import (
    ClientPartition,
    Dataset,
    DistributionKind,
    DistributionSpec,
    LabelRule,
)
from src.services.numerics import RngStream


class TestGenerate:
    def test_unit_norm_inputs_and_bounded_labels(self):
        ds = make_dataset(n=20, d=5)
        assert ds.inputs.shape == (20, 5)
        assert np.allclose(np.linalg.norm(ds.inputs, axis=1), 1.0, atol=1e-12)
        assert np.all(np.abs(ds.labels) <= 1.0)

    def test_same_seed_same_bytes(self):
        a = make_dataset(seed=3)
        b = make_dataset(seed=3)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_dataset(seed=0).inputs, make_dataset(seed=1).inputs)

    def test_test_split_is_a_fresh_sample(self):
        rng = RngStream(0, 0)
        train = data.generate(DistributionSpec(), 8, 4, rng)
        test = data.generate(DistributionSpec(), 8, 4, rng, split="test")
        assert not np.array_equal(train.inputs, test.inputs)

    def test_no_near_parallel_pairs(self):
        ds = make_dataset(n=40, d=2)
        _, _, inner = data.find_near_parallel_pair(ds)
        assert abs(inner) <= 1.0 - 1e-9

    def test_cluster_sign_labels(self):
        spec = DistributionSpec(DistributionKind.TWO_CLUSTER, LabelRule.CLUSTER_SIGN)
        ds = data.generate(spec, 30, 4, RngStream(2, 0))
        assert set(np.unique(ds.labels)) <= {-1.0, 1.0}
        assert ds.spec.kind is DistributionKind.TWO_CLUSTER

    def test_arrays_are_read_only(self):
        ds = make_dataset()
        with pytest.raises(ValueError):
            ds.inputs[0, 0] = 0.0

    def test_one_dimensional_inputs_rejected(self):
        with pytest.raises(ParameterError):
            data.generate(DistributionSpec(), 4, 1, RngStream(0, 0))

    def test_custom_kind_cannot_be_generated(self):
        spec = DistributionSpec(DistributionKind.CUSTOM_LOADED)
        with pytest.raises(ParameterError):
            data.generate(spec, 4, 3, RngStream(0, 0))

    def test_string_kinds_are_accepted(self):
        spec = DistributionSpec("two-cluster", "cluster-sign")
        assert spec.kind is DistributionKind.TWO_CLUSTER
        assert spec.label_rule is LabelRule.CLUSTER_SIGN


class TestDatasetValidation:
    def test_non_unit_input_rejected(self):
        with pytest.raises(ValidationError, match="norm"):
            Dataset(np.array([[1.0, 1.0]]), np.array([0.5]))

    def test_label_outside_range_rejected(self):
        with pytest.raises(ValidationError):
            Dataset(np.eye(2), np.array([0.0, 1.5]))

    def test_label_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Dataset(np.eye(2), np.array([0.0]))

    def test_subset_keeps_order(self):
        ds = make_dataset()
        sub = ds.subset([4, 1])
        assert np.array_equal(sub.inputs, ds.inputs[[4, 1]])
        assert sub.n == 2

    def test_near_parallel_pair_on_identity(self, orthogonal_dataset):
        assert data.find_near_parallel_pair(orthogonal_dataset) == (0, 1, 0.0)

    def test_near_parallel_pair_single_point(self):
        assert data.find_near_parallel_pair(Dataset(np.eye(2)[:1], np.array([1.0]))) is None


class TestPartition:
    def test_iid_sizes_are_balanced(self):
        part = data.partition_iid(10, 3, RngStream(0, 2))
        assert sorted(part.sizes()) == [3, 3, 4]
        assert part.num_clients == 3

    def test_iid_covers_every_index_once(self):
        part = data.partition_iid(10, 4, RngStream(1, 2))
        merged = np.sort(np.concatenate(part.assignments))
        assert np.array_equal(merged, np.arange(10))

    def test_iid_rejects_more_clients_than_points(self):
        with pytest.raises(ParameterError):
            data.partition_iid(3, 4, RngStream(0, 2))

    def test_client_of_inverts_assignments(self):
        part = data.partition_iid(7, 2, RngStream(0, 2))
        owner = part.client_of()
        for c, members in enumerate(part.assignments):
            assert np.all(owner[members] == c)

    @pytest.mark.parametrize("alpha", [0.2, 1.0, 100.0])
    def test_skewed_clients_are_non_empty(self, alpha):
        labels = make_dataset(n=20).labels
        part = data.partition_skewed(labels, 4, alpha, RngStream(0, 2))
        assert min(part.sizes()) >= 1
        assert sum(part.sizes()) == 20

    def test_huge_alpha_is_near_uniform(self):
        labels = np.r_[np.ones(40), -np.ones(40)]
        part = data.partition_skewed(labels, 4, 1e6, RngStream(3, 2))
        classes = data.label_classes(labels)
        for members in part.assignments:
            per_class = np.bincount(classes[members], minlength=2)
            assert np.all(np.abs(per_class - 10) <= 1)

    def test_skewed_is_deterministic(self):
        labels = make_dataset(n=12).labels
        a = data.partition_skewed(labels, 3, 0.5, RngStream(5, 2))
        b = data.partition_skewed(labels, 3, 0.5, RngStream(5, 2))
        assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))

    def test_skewed_rejects_bad_alpha(self):
        with pytest.raises(ParameterError):
            data.partition_skewed(np.zeros(4), 2, 0.0, RngStream(0, 2))

    def test_overlapping_sets_rejected(self):
        with pytest.raises(ValidationError):
            ClientPartition((np.array([0, 1]), np.array([1, 2])), 3)

    def test_empty_client_rejected(self):
        with pytest.raises(ValidationError):
            ClientPartition((np.array([0, 1]), np.array([], dtype=np.int64)), 2)

    def test_label_classes(self):
        assert data.label_classes([-0.5, 0.0, 0.3]).tolist() == [0, 1, 1]


class TestFiles:
    def test_dataset_file_reloads_exactly(self, tmp_path):
        ds = make_dataset(n=5, d=3)
        path = data.save_dataset(ds, tmp_path / "dataset.csv")
        loaded = data.load_dataset(path)
        assert np.array_equal(loaded.inputs, ds.inputs)
        assert np.array_equal(loaded.labels, ds.labels)
        assert loaded.spec.kind is DistributionKind.CUSTOM_LOADED

    def test_saving_twice_gives_identical_bytes(self, tmp_path):
        ds = make_dataset()
        a = data.save_dataset(ds, tmp_path / "a.csv").read_bytes()
        b = data.save_dataset(ds, tmp_path / "b.csv").read_bytes()
        assert a == b

    def test_partition_file_reloads(self, tmp_path):
        part = data.partition_iid(6, 2, RngStream(0, 2))
        loaded = data.load_partition(data.save_partition(part, tmp_path / "p.csv"))
        assert all(np.array_equal(a, b) for a, b in zip(loaded.assignments, part.assignments))

    def test_bad_number_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# fl-ntk dataset v1, n=2, d=2\n1.0,0.0,0.5\n0.0,abc,0.5\n")
        with pytest.raises(ParseError) as info:
            data.load_dataset(path)
        assert info.value.line == 3
        assert info.value.exit_code == 2

    def test_wrong_column_count_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# fl-ntk dataset v1, n=1, d=2\n1.0,0.0\n")
        with pytest.raises(ParseError) as info:
            data.load_dataset(path)
        assert info.value.line == 2

    def test_missing_rows(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("# fl-ntk dataset v1, n=2, d=2\n1.0,0.0,0.5\n")
        with pytest.raises(ParseError, match="expected 2 data rows"):
            data.load_dataset(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "nohead.csv"
        path.write_text("1.0,0.0,0.5\n")
        with pytest.raises(ParseError) as info:
            data.load_dataset(path)
        assert info.value.line == 1

    def test_header_error_reports_its_own_line(self, tmp_path):
        path = tmp_path / "late.csv"
        path.write_text("\n\n1.0,0.0,0.5\n")
        with pytest.raises(ParseError) as info:
            data.load_dataset(path)
        assert info.value.line == 3

    def test_partition_header_error_reports_its_own_line(self, tmp_path):
        path = tmp_path / "late_partition.csv"
        path.write_text("\n# not a partition\n0,0\n")
        with pytest.raises(ParseError) as info:
            data.load_partition(path)
        assert info.value.line == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            data.load_dataset(path)

    def test_partition_index_out_of_range(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("# fl-ntk partition v1, n=2, N=2\n0,0\n1,5\n")
        with pytest.raises(ParseError) as info:
            data.load_partition(path)
        assert info.value.line == 3
