"""Stream generation, noise injection, schedules, CSV ingestion."""

import numpy as np
import pytest

from ogrs_lab import datastream as ds


class TestGaussianMixture:
    def test_balanced_split_300(self):
        pool = ds.generate_gaussian_mixture(300, seed=7)
        assert len(pool) == 300
        assert pool.dimension == 2
        labels = pool.true_labels
        assert (labels == 1).sum() == 150
        assert (labels == 0).sum() == 150

    def test_minimal_two_samples(self):
        pool = ds.generate_gaussian_mixture(2, seed=0)
        assert sorted(pool.true_labels.tolist()) == [0, 1]

    def test_class_means_converge(self):
        # law of large numbers on the generator itself
        pool = ds.generate_gaussian_mixture(10_000, seed=1)
        pos = pool.features[pool.true_labels == 1]
        neg = pool.features[pool.true_labels == 0]
        assert np.all(np.abs(pos.mean(axis=0) - [1.0, 1.0]) < 0.15)
        assert np.all(np.abs(neg.mean(axis=0) - [-1.0, -1.0]) < 0.15)

    def test_clean_on_output(self):
        pool = ds.generate_gaussian_mixture(50, seed=3)
        assert bool(np.all(pool.clean_mask()))

    def test_rejects_tiny_n(self):
        with pytest.raises(ds.DatastreamError):
            ds.generate_gaussian_mixture(1, seed=0)

    def test_deterministic(self):
        a = ds.generate_gaussian_mixture(100, seed=9)
        b = ds.generate_gaussian_mixture(100, seed=9)
        assert a.content_hash() == b.content_hash()

    def test_arrival_slots_are_sequential(self):
        pool = ds.generate_gaussian_mixture(20, seed=2)
        assert pool.slots.tolist() == list(range(1, 21))


class TestSchedule:
    def test_single_segment(self):
        sched = ds.make_schedule([(1, 100, 0.6)])
        assert sched.clean_ratio_at(1) == 0.6
        assert sched.clean_ratio_at(100) == 0.6

    def test_four_segment_dynamic(self):
        sched = ds.make_schedule(
            [(1, 5000, 0.1), (5001, 10000, 0.3), (10001, 15000, 0.2), (15001, 20000, 0.15)]
        )
        assert sched.clean_ratio_at(5000) == 0.1
        assert sched.clean_ratio_at(5001) == 0.3
        assert sched.clean_ratio_at(20000) == 0.15

    def test_gap_detected(self):
        with pytest.raises(ds.ScheduleError) as err:
            ds.make_schedule([(1, 10, 0.5), (12, 20, 0.5)])
        assert "segment 1" in str(err.value)

    def test_overlap_detected(self):
        with pytest.raises(ds.ScheduleError):
            ds.make_schedule([(1, 10, 0.5), (10, 20, 0.5)])

    def test_ratio_out_of_range(self):
        with pytest.raises(ds.ScheduleError):
            ds.make_schedule([(1, 10, 1.5)])

    def test_empty(self):
        with pytest.raises(ds.ScheduleError):
            ds.make_schedule([])


class TestNoiseInjection:
    def test_phi_one_is_identity(self):
        pool = ds.generate_gaussian_mixture(200, seed=4)
        sched = ds.make_schedule([(1, 200, 1.0)])
        noisy = ds.inject_label_noise(pool, sched, 2, seed=5)
        assert noisy.content_hash() == pool.content_hash()

    def test_phi_zero_binary_flips_all(self):
        pool = ds.generate_gaussian_mixture(100, seed=4)
        sched = ds.make_schedule([(1, 100, 0.0)])
        noisy = ds.inject_label_noise(pool, sched, 2, seed=5)
        assert bool(np.all(noisy.observed != noisy.true_labels))

    def test_measured_clean_fraction(self):
        # binomial concentration against a direct count, phi=0.6, C=10
        n = 10_000
        rng = np.random.default_rng(0)
        samples = [
            ds.LabeledSample(i, rng.normal(size=3), int(rng.integers(10)), 0, i + 1)
            for i in range(n)
        ]
        samples = [
            ds.LabeledSample(s.id, s.features, s.observed_label, s.observed_label, s.arrival_slot)
            for s in samples
        ]
        pool = ds.StreamPool(samples)
        sched = ds.make_schedule([(1, n, 0.6)])
        noisy = ds.inject_label_noise(pool, sched, 10, seed=11)
        frac = float(noisy.clean_mask().mean())
        assert 0.58 <= frac <= 0.62

    def test_segment_fractions_concentrate(self):
        n = 12_000
        pool = ds.generate_gaussian_mixture(n, seed=8)
        sched = ds.make_schedule([(1, 6000, 0.9), (6001, n, 0.4)])
        noisy = ds.inject_label_noise(pool, sched, 2, seed=13)
        clean = noisy.clean_mask()
        for lo, hi, phi in sched.segments:
            mask = (noisy.slots >= lo) & (noisy.slots <= hi)
            measured = float(clean[mask].mean())
            m = int(mask.sum())
            assert abs(measured - phi) <= 3 * np.sqrt(phi * (1 - phi) / m)

    def test_preserves_features_and_true_labels(self):
        pool = ds.generate_gaussian_mixture(500, seed=6)
        sched = ds.make_schedule([(1, 500, 0.5)])
        noisy = ds.inject_label_noise(pool, sched, 2, seed=7)
        assert np.array_equal(noisy.features, pool.features)
        assert np.array_equal(noisy.true_labels, pool.true_labels)
        assert np.array_equal(noisy.ids, pool.ids)

    def test_bit_identical_given_seed(self):
        pool = ds.generate_gaussian_mixture(300, seed=6)
        sched = ds.make_schedule([(1, 300, 0.7)])
        a = ds.inject_label_noise(pool, sched, 2, seed=21)
        b = ds.inject_label_noise(pool, sched, 2, seed=21)
        assert a.content_hash() == b.content_hash()

    def test_uncovered_slot_errors(self):
        pool = ds.generate_gaussian_mixture(100, seed=6)
        sched = ds.make_schedule([(1, 50, 0.5)])
        with pytest.raises(ds.ScheduleError):
            ds.inject_label_noise(pool, sched, 2, seed=0)

    def test_flipped_labels_stay_valid(self):
        pool = ds.generate_gaussian_mixture(1000, seed=14)
        sched = ds.make_schedule([(1, 1000, 0.3)])
        noisy = ds.inject_label_noise(pool, sched, 2, seed=15)
        assert set(np.unique(noisy.observed)) <= {0, 1}
        flipped = noisy.observed != noisy.true_labels
        assert bool(np.all(noisy.observed[flipped] != noisy.true_labels[flipped]))


class TestCsv:
    def test_small_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,1.5,0\n-1.0,2.0,1\n0.0,0.0,1\n")
        pool = ds.load_csv(p)
        assert len(pool) == 3
        assert pool.dimension == 2
        assert pool.observed.tolist() == [0, 1, 1]
        assert pool.slots.tolist() == [1, 2, 3]

    def test_header_skipped(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x1,x2,y\n0.5,1.5,0\n")
        pool = ds.load_csv(p, has_header=True)
        assert len(pool) == 1

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(ds.DatastreamError):
            ds.load_csv(p)

    def test_parse_error_cites_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,1.5,0\nnope,2.0,1\n")
        with pytest.raises(ds.DatastreamError) as err:
            ds.load_csv(p)
        assert "line 2" in str(err.value)

    def test_inconsistent_dimension_cites_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,1.5,0\n1.0,1\n")
        with pytest.raises(ds.DatastreamError) as err:
            ds.load_csv(p)
        assert "line 2" in str(err.value)

    def test_wide_rows(self, tmp_path):
        # flattened-image-style rows: 784 features + label
        rng = np.random.default_rng(1)
        rows = []
        for i in range(5):
            feats = rng.normal(size=784)
            rows.append(",".join(f"{v:.6f}" for v in feats) + f",{i % 10}")
        p = tmp_path / "wide.csv"
        p.write_text("\n".join(rows) + "\n")
        pool = ds.load_csv(p)
        assert pool.dimension == 784
        assert len(pool) == 5

    def test_batched_arrival(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("\n".join(f"{i}.0,0.0,{i % 2}" for i in range(6)) + "\n")
        pool = ds.load_csv(p, samples_per_slot=2)
        assert pool.slots.tolist() == [1, 1, 2, 2, 3, 3]

    def test_label_column_override(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0.5,1.5\n0,-1.0,2.0\n")
        pool = ds.load_csv(p, label_column=0)
        assert pool.observed.tolist() == [1, 0]
        assert pool.dimension == 2


class TestPoolAt:
    def test_first_and_final(self):
        pool = ds.generate_gaussian_mixture(50, seed=2)
        assert len(ds.pool_at(pool, 1)) == 1
        assert len(ds.pool_at(pool, 50)) == 50

    def test_growth_is_exactly_new_arrivals(self):
        pool = ds.generate_gaussian_mixture(50, seed=2)
        for k in range(1, 50):
            before = ds.pool_at(pool, k).sample_ids()
            after = ds.pool_at(pool, k + 1).sample_ids()
            assert before <= after
            added = after - before
            assert added == {
                int(s.id) for s in pool if s.arrival_slot == k + 1
            }

    def test_out_of_range(self):
        pool = ds.generate_gaussian_mixture(10, seed=2)
        with pytest.raises(ds.DatastreamError):
            ds.pool_at(pool, 0)
        with pytest.raises(ds.DatastreamError):
            ds.pool_at(pool, 11)

    def test_one_per_slot_sizes(self):
        pool = ds.generate_gaussian_mixture(30, seed=2)
        for t in (1, 7, 30):
            assert len(ds.pool_at(pool, t)) == t


class TestSplit:
    def test_sizes_and_reindexing(self):
        pool = ds.generate_gaussian_mixture(300, seed=7)
        train, test = ds.split_pool(pool, 200)
        assert len(train) == 200 and len(test) == 100
        assert train.slots.tolist() == list(range(1, 201))
        assert test.slots.tolist() == list(range(1, 101))

    def test_partition_preserves_content(self):
        pool = ds.generate_gaussian_mixture(40, seed=7)
        train, test = ds.split_pool(pool, 25)
        merged = np.vstack([train.features, test.features])
        assert np.array_equal(merged, pool.features)
