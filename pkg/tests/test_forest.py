"""Regression forest: training, prediction, importance, serialization."""

import numpy as np
import pytest

from regmap import forest as rf


def linear_data(n=600, noise_cols=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 1 + noise_cols))
    y = 3.0 * X[:, 0]
    return X, y


class TestConfig:
    def test_defaults_match_reference(self):
        cfg = rf.ForestConfig()
        assert (cfg.n_trees, cfg.max_depth, cfg.min_samples_leaf,
                cfg.m_try) == (100, 9, 5, "sqrt")

    def test_m_features(self):
        assert rf.ForestConfig(m_try="sqrt").m_features(158) == 13
        assert rf.ForestConfig(m_try="third").m_features(9) == 3
        assert rf.ForestConfig(m_try=4).m_features(2) == 2
        assert rf.ForestConfig(m_try="sqrt").m_features(1) == 1

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            rf.ForestConfig(n_trees=0)
        with pytest.raises(ValueError):
            rf.ForestConfig(m_try="log")


class TestTrain:
    def test_constant_target_predicted_exactly(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 4))
        y = np.full(50, 2.5)
        f = rf.train(X, y, rf.ForestConfig(n_trees=5))
        assert np.all(rf.predict(f, X) == 2.5)

    def test_ample_capacity_fits_monotone_target(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, size=(5000, 11))
        y = X[:, 0].copy()
        # All features per split: capacity is limited by depth alone.
        f = rf.train(X, y, rf.ForestConfig(n_trees=30, m_try=11, seed=0))
        mae = np.abs(rf.predict(f, X) - y).mean()
        assert mae < 0.1 * y.std()

    def test_deterministic_per_seed(self):
        X, y = linear_data()
        cfg = rf.ForestConfig(n_trees=8, seed=3)
        a = rf.predict(rf.train(X, y, cfg), X)
        b = rf.predict(rf.train(X, y, cfg), X)
        assert np.array_equal(a, b)

    def test_prediction_within_target_range(self):
        X, y = linear_data(seed=4)
        f = rf.train(X, y, rf.ForestConfig(n_trees=10))
        probe = np.random.default_rng(5).uniform(-10, 10, size=(100, X.shape[1]))
        pred = rf.predict(f, probe)
        assert pred.min() >= y.min() and pred.max() <= y.max()

    def test_non_finite_rejected(self):
        X, y = linear_data(n=50)
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            rf.train(X, y)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            rf.train(np.zeros((5, 2)), np.zeros(5),
                     rf.ForestConfig(min_samples_leaf=5))

    def test_min_leaf_honoured(self):
        X, y = linear_data(n=200, seed=6)
        cfg = rf.ForestConfig(n_trees=5, min_samples_leaf=20, seed=0)
        f = rf.train(X, y, cfg)
        for tree, boot in zip(f.trees, f.bootstraps):
            # Count training rows reaching each leaf.
            node = np.zeros(len(boot), dtype=np.intp)
            active = tree.feature[node] >= 0
            Xb = X[boot]
            while active.any():
                idx = node[active]
                go_left = Xb[active, tree.feature[idx]] <= tree.threshold[idx]
                node[active] = np.where(go_left, tree.left[idx],
                                        tree.right[idx])
                active = tree.feature[node] >= 0
            counts = np.bincount(node, minlength=len(tree.feature))
            leaves = tree.feature < 0
            assert counts[leaves][counts[leaves] > 0].min() >= 20


class TestPredict:
    def test_single_tree_equals_tree(self):
        X, y = linear_data(seed=7)
        f = rf.train(X, y, rf.ForestConfig(n_trees=1))
        assert np.array_equal(rf.predict(f, X), f.trees[0].predict(X))

    def test_duplicated_trees_unchanged(self):
        X, y = linear_data(seed=8)
        f = rf.train(X, y, rf.ForestConfig(n_trees=4))
        doubled = rf.Forest(f.trees * 2, f.bootstraps * 2, f.columns,
                            f.config, f.n_rows)
        assert np.allclose(rf.predict(doubled, X), rf.predict(f, X))

    def test_feature_count_checked(self):
        X, y = linear_data(seed=9)
        f = rf.train(X, y)
        with pytest.raises(ValueError):
            rf.predict(f, X[:, :2])


class TestImportance:
    def test_perfect_predictor_dominates(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(500, 5))
        y = X[:, 2].copy()
        f = rf.train(X, y, rf.ForestConfig(n_trees=20, seed=0))
        imp = rf.oob_importance(f, X, y)
        assert np.argmax(imp) == 2

    def test_constant_column_importance_zero(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(300, 4))
        X[:, 3] = 7.0
        y = X[:, 0] + 0.1 * rng.normal(size=300)
        f = rf.train(X, y, rf.ForestConfig(n_trees=10, seed=0))
        imp = rf.oob_importance(f, X, y)
        assert imp[3] == 0.0

    def test_noise_importance_near_zero(self):
        deviations = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(300, 3))
            y = X[:, 0].copy()
            f = rf.train(X, y, rf.ForestConfig(n_trees=10, seed=seed))
            imp = rf.oob_importance(f, X, y)
            deviations.append(max(abs(imp[1]), abs(imp[2])))
        assert np.max(deviations) < 0.05 * 1.0   # Var(y) = 1

    def test_requires_training_rows(self):
        X, y = linear_data(seed=12)
        f = rf.train(X, y, rf.ForestConfig(n_trees=3))
        with pytest.raises(ValueError):
            rf.oob_importance(f, X[:10], y[:10])


class TestSerialization:
    def test_round_trip_predictions_bit_exact(self, tmp_path):
        X, y = linear_data(seed=13)
        f = rf.train(X, y, rf.ForestConfig(n_trees=6),
                     columns=[f"c{i}" for i in range(X.shape[1])])
        rf.save(f, tmp_path / "model.bin")
        g = rf.load(tmp_path / "model.bin")
        assert g.columns == f.columns
        assert np.array_equal(rf.predict(g, X), rf.predict(f, X))

    def test_magic_checked(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"NOPE" + b"\0" * 16)
        with pytest.raises(ValueError, match="not a forest"):
            rf.load(tmp_path / "bad.bin")

    def test_version_checked(self, tmp_path):
        X, y = linear_data(n=60, seed=14)
        f = rf.train(X, y, rf.ForestConfig(n_trees=2))
        rf.save(f, tmp_path / "m.bin")
        blob = bytearray((tmp_path / "m.bin").read_bytes())
        blob[4] = 99
        (tmp_path / "m.bin").write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            rf.load(tmp_path / "m.bin")

    def test_truncation_detected(self, tmp_path):
        X, y = linear_data(n=60, seed=15)
        f = rf.train(X, y, rf.ForestConfig(n_trees=2))
        rf.save(f, tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="truncated"):
            rf.load(tmp_path / "m.bin")

    def test_trailing_bytes_detected(self, tmp_path):
        X, y = linear_data(n=60, seed=16)
        f = rf.train(X, y, rf.ForestConfig(n_trees=2))
        rf.save(f, tmp_path / "m.bin")
        with open(tmp_path / "m.bin", "ab") as fh:
            fh.write(b"\0" * 4)
        with pytest.raises(ValueError, match="trailing"):
            rf.load(tmp_path / "m.bin")
