import json

import numpy as np
import pytest

from mzical.datagen import (
    Dataset,
    SplitPlan,
    acquire_dataset,
    filter_below,
    generate_synthetic,
    load_dataset,
    manifest_path,
    sample_voltages,
    save_dataset,
    save_histogram,
    split,
    weight_histogram,
)
from mzical.mesh import predict_weights_batch


def small_dataset(weights, v_max=2.0):
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    volts = np.linspace(0.1, 1.9, n * 2).reshape(n, 2)
    return Dataset(voltages=volts, weights_db=weights, provenance="experimental-sim", seed=0, v_max=v_max)


class TestSampleVoltages:
    def test_determinism(self):
        a = sample_voltages(50, 9, 2.0, seed=7)
        b = sample_voltages(50, 9, 2.0, seed=7)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_voltages(50, 9, 2.0, seed=8))

    def test_mean_within_clt_bound(self):
        # Uniform(0,2): mean 1, sd 2/sqrt(12); 3 sigma over 1000 draws ~ 0.055
        v = sample_voltages(1000, 9, 2.0, seed=123)
        assert np.all(np.abs(v.mean(axis=0) - 1.0) < 0.06)
        assert v.min() >= 0.0 and v.max() <= 2.0

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            sample_voltages(0, 9, 2.0, seed=0)
        with pytest.raises(ValueError):
            sample_voltages(5, 9, 0.0, seed=0)


class TestAcquire:
    def test_counts_and_floor(self, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 40, seed=3)
        assert len(data) == 40
        assert data.provenance == "experimental-sim"
        assert np.all(data.weights_db >= data.floor_db)
        assert data.topology_hash is not None

    def test_determinism(self, crossbar_chip):
        a = acquire_dataset(crossbar_chip, 10, seed=5)
        b = acquire_dataset(crossbar_chip, 10, seed=5)
        assert np.array_equal(a.voltages, b.voltages)
        assert np.array_equal(a.weights_db, b.weights_db)

    def test_paper_scale_pool(self, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 4400 + 700, seed=1)
        assert len(data) == 5100

    def test_noiseless_am_form_satisfies_model(self, am_form_chip):
        data = acquire_dataset(am_form_chip, 20, seed=9)
        predicted = predict_weights_batch(am_form_chip.base, data.voltages)
        assert np.allclose(predicted, data.weights_db, atol=1e-12)


class TestSynthetic:
    def test_weights_nonpositive(self, crossbar_chip):
        data = generate_synthetic(crossbar_chip.base, 200, seed=2)
        assert data.provenance == "synthetic-am"
        assert np.all(data.weights_db <= 1e-9)

    def test_purity(self, crossbar_chip):
        data = generate_synthetic(crossbar_chip.base, 50, seed=4)
        again = predict_weights_batch(crossbar_chip.base, data.voltages)
        assert np.array_equal(np.maximum(again, data.floor_db), data.weights_db)

    def test_rejects_zero(self, crossbar_chip):
        with pytest.raises(ValueError):
            generate_synthetic(crossbar_chip.base, 0, seed=0)


class TestFilter:
    def test_minus_infinity_is_identity(self):
        data = small_dataset(np.full((5, 1, 1), -30.0))
        out, removed = filter_below(data, -np.inf)
        assert len(out) == 5 and removed == 0.0

    def test_all_pass(self):
        data = small_dataset(np.full((4, 1, 1), -20.0))
        out, removed = filter_below(data, -60.0)
        assert np.array_equal(out.weights_db, data.weights_db)
        assert removed == 0.0

    def test_removes_whole_sample(self):
        w = np.full((4, 1, 2), -10.0)
        w[1, 0, 1] = -70.0  # one bad entry kills the whole sample
        data = small_dataset(w)
        out, removed = filter_below(data, -60.0)
        assert len(out) == 3
        assert removed == pytest.approx(0.25)
        assert np.all(out.weights_db >= -60.0)

    def test_idempotent(self):
        w = np.full((6, 1, 1), -10.0)
        w[2] = -65.0
        data = small_dataset(w)
        once, _ = filter_below(data, -60.0)
        twice, removed = filter_below(once, -60.0)
        assert removed == 0.0
        assert np.array_equal(once.weights_db, twice.weights_db)

    def test_nan_threshold_rejected(self):
        with pytest.raises(ValueError):
            filter_below(small_dataset(np.zeros((2, 1, 1)) - 1), np.nan)


class TestSplit:
    def make_pool(self, crossbar_chip, n=60):
        return acquire_dataset(crossbar_chip, n, seed=0)

    def test_sizes_and_disjointness(self, crossbar_chip):
        data = self.make_pool(crossbar_chip, 60)
        plan = SplitPlan(train_pool_size=45, test_size=15, subset_size=20,
                         validation_fraction=0.2, seed=3)
        parts = split(data, plan)
        assert len(parts.subset) == 20
        assert len(parts.validation) == 4
        assert len(parts.train) == 16
        assert len(parts.test) == 15
        assert len(parts.pool) == 45
        assert set(parts.train_indices).isdisjoint(parts.validation_indices)
        assert set(parts.train_indices).isdisjoint(parts.test_indices)
        assert set(parts.validation_indices).isdisjoint(parts.test_indices)

    def test_paper_default_sizes(self, crossbar_chip):
        data = self.make_pool(crossbar_chip, 5100)
        parts = split(data, SplitPlan(seed=11))
        assert len(parts.test) == 700
        assert len(parts.subset) == 400
        assert len(parts.pool) == 4400

    def test_test_set_fixed_across_seeds(self, crossbar_chip):
        data = self.make_pool(crossbar_chip, 60)
        plan_a = SplitPlan(train_pool_size=45, test_size=15, subset_size=20, seed=1)
        plan_b = SplitPlan(train_pool_size=45, test_size=15, subset_size=20, seed=2)
        a, b = split(data, plan_a), split(data, plan_b)
        assert np.array_equal(a.test.weights_db, b.test.weights_db)
        assert not np.array_equal(np.sort(a.train_indices), np.sort(b.train_indices))

    def test_full_subset_is_permutation(self, crossbar_chip):
        data = self.make_pool(crossbar_chip, 30)
        plan = SplitPlan(train_pool_size=20, test_size=10, subset_size=20,
                         validation_fraction=0.0, seed=5)
        parts = split(data, plan)
        assert sorted(parts.train_indices.tolist()) == list(range(20))

    def test_insufficient_pool(self, crossbar_chip):
        data = self.make_pool(crossbar_chip, 30)
        with pytest.raises(ValueError):
            split(data, SplitPlan(train_pool_size=25, test_size=10, subset_size=5))

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            SplitPlan(train_pool_size=10, test_size=5, subset_size=11)
        with pytest.raises(ValueError):
            SplitPlan(validation_fraction=1.0)
        with pytest.raises(ValueError):
            SplitPlan(test_size=0)


class TestHistogram:
    def test_density_integrates_to_one(self, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 100, seed=1)
        hist = weight_histogram(data, bin_width_db=1.0)
        assert np.sum(hist.density) * 1.0 == pytest.approx(1.0, abs=1e-9)

    def test_single_sample(self):
        data = small_dataset(np.array([[[-12.3]]]))
        hist = weight_histogram(data, bin_width_db=0.5)
        assert np.sum(hist.density) * 0.5 == pytest.approx(1.0, abs=1e-9)

    def test_edges_deterministic_and_aligned(self):
        data = small_dataset(np.array([[[-12.3]], [[-3.7]]]))
        hist = weight_histogram(data, bin_width_db=1.0)
        assert np.allclose(hist.bin_edges, np.round(hist.bin_edges))
        assert hist.bin_edges[0] <= -12.3 < hist.bin_edges[-1]

    def test_rejects_bad_width(self):
        data = small_dataset(np.zeros((2, 1, 1)) - 1.0)
        with pytest.raises(ValueError):
            weight_histogram(data, 0.0)

    def test_save_rows(self, tmp_path):
        data = small_dataset(np.array([[[-12.3]], [[-3.7]], [[-4.2]]]))
        hist = weight_histogram(data, bin_width_db=1.0)
        out = tmp_path / "hist.csv"
        save_histogram(hist, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "bin_center_db,density_per_db"
        assert len(lines) == 1 + len(hist.density)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 25, seed=17)
        path = tmp_path / "data.csv"
        save_dataset(data, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.voltages, data.voltages)
        assert np.array_equal(loaded.weights_db, data.weights_db)
        assert loaded.provenance == data.provenance
        assert loaded.seed == data.seed
        assert loaded.floor_db == data.floor_db
        assert loaded.topology_hash == data.topology_hash

    def test_manifest_contents(self, tmp_path, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 5, seed=2)
        path = tmp_path / "data.csv"
        save_dataset(data, path)
        manifest = json.loads(manifest_path(path).read_text())
        assert manifest["schema_version"] == 1
        assert manifest["n_samples"] == 5
        assert manifest["n_mzi"] == 9
        assert manifest["provenance"] == "experimental-sim"

    def test_empty_dataset_round_trip(self, tmp_path, crossbar_chip):
        data = acquire_dataset(crossbar_chip, 3, seed=2)
        empty, _ = filter_below(data, 0.0)  # removes everything
        assert len(empty) == 0
        path = tmp_path / "empty.csv"
        save_dataset(empty, path)
        assert len(load_dataset(path)) == 0


class TestDatasetValidation:
    def test_below_floor_rejected(self):
        with pytest.raises(ValueError):
            Dataset(voltages=np.zeros((1, 2)), weights_db=np.full((1, 1, 1), -90.0),
                    provenance="experimental-sim", seed=0)

    def test_outside_box_rejected(self):
        with pytest.raises(ValueError):
            Dataset(voltages=np.full((1, 2), 3.0), weights_db=np.zeros((1, 1, 1)),
                    provenance="experimental-sim", seed=0)

    def test_bad_provenance_rejected(self):
        with pytest.raises(ValueError):
            Dataset(voltages=np.zeros((1, 2)), weights_db=np.zeros((1, 1, 1)),
                    provenance="bogus", seed=0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset(voltages=np.zeros((2, 2)), weights_db=np.zeros((3, 1, 1)),
                    provenance="experimental-sim", seed=0)
