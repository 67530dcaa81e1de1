"""Metrics, cross-validation and report emission."""

import numpy as np
import pytest

from regmap import forest as rf
from regmap.evaluate import (aggregate_metrics, classify_metrics,
                             cross_validate, emit_reports, error_overlay_png,
                             mae)
from regmap.table import SampleTable
from regmap.volume import Volume


def make_table(pairs=4, per_pair=40, seed=0):
    rng = np.random.default_rng(seed)
    n = pairs * per_pair
    X = rng.uniform(0, 1, size=(n, 3))
    y = 9.0 * X[:, 0] + 0.2 * rng.normal(size=n)
    np.clip(y, 0, None, out=y)
    pair_ids = np.repeat([f"p{i}" for i in range(pairs)], per_pair)
    return SampleTable(["a", "b", "c"], X, y, pair_ids,
                       rng.integers(0, 8, size=(n, 3)),
                       rng.uniform(0, 10, size=(n, 3)))


class TestMae:
    def test_perfect(self):
        rep = mae([1.0, 4.0, 7.0], [1.0, 4.0, 7.0])
        assert rep.overall == (0.0, 0.0)

    def test_hand_values(self):
        rep = mae([1.0, 4.0, 7.0], [2.0, 2.0, 8.0])
        assert rep.overall[0] == pytest.approx(4.0 / 3.0)
        assert rep.per_class["correct"][0] == 1.0
        assert rep.per_class["poor"][0] == 2.0
        assert rep.per_class["wrong"][0] == 1.0

    def test_symmetric_in_arguments(self):
        y = np.array([1.0, 5.0, 9.0])
        y_hat = np.array([2.0, 4.0, 6.0])
        assert mae(y, y_hat).overall[0] == mae(y_hat, y).overall[0]

    def test_absent_class_omitted(self):
        rep = mae([1.0, 2.0], [1.5, 2.5])
        assert "wrong" not in rep.per_class
        row = rep.as_row()
        assert row["mae_w"] == ""

    def test_translation_leaves_terms(self):
        y = np.array([1.0, 4.0, 7.0])
        y_hat = np.array([2.0, 2.0, 8.0])
        assert mae(y + 3, y_hat + 3).overall[0] == mae(y, y_hat).overall[0]


class TestClassifyMetrics:
    def test_perfect(self):
        rep = classify_metrics([1.0, 4.0, 7.0], [1.0, 4.0, 7.0])
        assert rep.accuracy == 1.0
        assert all(v == 1.0 for v in rep.f1.values())

    def test_hand_confusion(self):
        # true classes (c, p, w), predicted (c, c, w)
        rep = classify_metrics([1.0, 4.0, 7.0], [1.0, 1.0, 7.0])
        assert rep.accuracy == pytest.approx(2 / 3)
        assert rep.f1["correct"] == pytest.approx(2 / 3)
        assert rep.f1["poor"] == 0.0
        assert rep.f1["wrong"] == 1.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 9, 50)
        y_hat = rng.uniform(0, 9, 50)
        a = classify_metrics(y, y_hat)
        perm = rng.permutation(50)
        b = classify_metrics(y[perm], y_hat[perm])
        assert a.accuracy == b.accuracy and a.f1 == b.f1

    def test_not_symmetric(self):
        # Swapping y and y_hat transposes the confusion matrix and regroups
        # the per-class MAE, so classification metrics are not symmetric.
        y = np.array([1.0, 1.0, 7.0])
        y_hat = np.array([4.0, 1.0, 7.0])
        a = classify_metrics(y, y_hat)
        b = classify_metrics(y_hat, y)
        assert not np.array_equal(a.confusion, b.confusion)
        assert mae(y, y_hat).per_class != mae(y_hat, y).per_class

    def test_accuracy_is_weighted_recall_mean(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(0, 9, 200)
        y_hat = rng.uniform(0, 9, 200)
        rep = classify_metrics(y, y_hat)
        conf = rep.confusion
        freq = conf.sum(axis=1) / conf.sum()
        recalls = np.divide(np.diag(conf), conf.sum(axis=1),
                            out=np.zeros(3), where=conf.sum(axis=1) > 0)
        assert rep.accuracy == pytest.approx(float(np.sum(freq * recalls)))


class TestCrossValidate:
    def test_pair_disjointness(self):
        table = make_table()
        results = cross_validate(table, rf.ForestConfig(n_trees=5), k=2, seed=0)
        for r in results:
            assert not set(r.train_pairs) & set(r.test_pairs)
        covered = sorted(p for r in results for p in r.test_pairs)
        assert covered == sorted(np.unique(table.pair_ids))

    def test_deterministic(self):
        table = make_table(seed=2)
        cfg = rf.ForestConfig(n_trees=5, seed=0)
        a = cross_validate(table, cfg, k=2, seed=1)
        b = cross_validate(table, cfg, k=2, seed=1)
        assert all(np.array_equal(x.y_hat, y.y_hat) for x, y in zip(a, b))

    def test_identical_pairs_symmetric_folds(self):
        rng = np.random.default_rng(3)
        n = 30
        X = rng.uniform(size=(n, 2))
        y = 8 * X[:, 0]
        table = SampleTable(["a", "b"], np.tile(X, (2, 1)),
                            np.concatenate([y, y]),
                            np.array(["p0"] * n + ["p1"] * n),
                            np.zeros((2 * n, 3), dtype=int),
                            np.zeros((2 * n, 3)))
        results = cross_validate(table, rf.ForestConfig(n_trees=5), k=2, seed=0)
        assert results[0].mae.overall == pytest.approx(results[1].mae.overall)

    def test_repeated_split(self):
        table = make_table(pairs=6, seed=4)
        results = cross_validate(table, rf.ForestConfig(n_trees=5), seed=0,
                                 repeated=(4, 3))
        assert len(results) == 3
        for r in results:
            assert len(r.train_pairs) == 4 and len(r.test_pairs) == 2

    def test_too_few_pairs_rejected(self):
        table = make_table(pairs=2)
        with pytest.raises(ValueError):
            cross_validate(table, rf.ForestConfig(n_trees=2), k=3)


class TestReports:
    def run_reports(self, tmp_path):
        table = make_table(seed=5)
        results = cross_validate(table, rf.ForestConfig(n_trees=5), k=2, seed=0)
        emit_reports(results, tmp_path, importance={"a": 1.0, "b": 0.5})
        return results

    def test_metrics_row_count(self, tmp_path):
        results = self.run_reports(tmp_path)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert len(lines) == 1 + len(results) + 1   # header + folds + aggregate
        assert lines[-1].startswith("aggregate,")

    def test_sorted_curve_non_decreasing(self, tmp_path):
        self.run_reports(tmp_path)
        rows = (tmp_path / "sorted_curve.csv").read_text().splitlines()[1:]
        ys = [float(r.split(",")[0]) for r in rows]
        assert all(a <= b for a, b in zip(ys, ys[1:]))

    def test_scatter_and_importance_written(self, tmp_path):
        self.run_reports(tmp_path)
        assert (tmp_path / "scatter.csv").exists()
        imp = (tmp_path / "importance.csv").read_text().splitlines()
        assert imp[0] == "feature,importance" and len(imp) == 3

    def test_aggregate_is_mean_of_folds(self, tmp_path):
        results = self.run_reports(tmp_path)
        agg = aggregate_metrics(results)
        assert agg["mae"] == pytest.approx(
            np.mean([r.mae.overall[0] for r in results]))

    def test_overlay_png_dimensions(self, tmp_path):
        import struct
        rng = np.random.default_rng(6)
        fixed = Volume(rng.uniform(0, 100, (12, 10, 8)), (1, 1, 1), (0, 0, 0))
        err = fixed.like(rng.uniform(0, 9, (12, 10, 8)))
        error_overlay_png(fixed, err, tmp_path / "o.png")
        blob = (tmp_path / "o.png").read_bytes()
        assert blob[:8] == b"\x89PNG\r\n\x1a\n"
        w, h = struct.unpack(">II", blob[16:24])
        assert (w, h) == (12, 10)   # slice dims (nx, ny)
