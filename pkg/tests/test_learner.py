"""Boosted-tree learner: fit fixtures, numeric oracles, splits, metrics, I/O."""

import math
import random

import numpy as np
import pytest

from srltrace.features import Dataset
from srltrace.learner import (
    ArityMismatch,
    GbdtModel,
    InsufficientGroups,
    InvalidDataset,
    TreeNode,
    confusion_counts,
    evaluate,
    fit,
    gain_importance,
    grouped_split,
    load_model,
    model_from_dict,
    model_to_dict,
    permutation_importance,
    predict_logits,
    predict_proba,
    predict_proba_matrix,
    save_model,
    split_students,
)
from srltrace.trace_model import GbdtParams


def make_ds(X, y, names=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if names is None:
        names = tuple(f"f{j}" for j in range(X.shape[1]))
    keys = tuple((f"s{i:03d}", "q1", 1) for i in range(len(y)))
    return Dataset(keys=keys, feature_names=tuple(names), X=X, y=np.asarray(y, dtype=float))


def random_ds(rng: np.random.Generator, n_rows: int, n_cols: int):
    X = np.round(rng.uniform(0.0, 10.0, size=(n_rows, n_cols)), 2)
    # Inject repeated values so ties and single-value columns get exercised.
    if n_rows >= 4:
        X[0] = X[1]
    y = (rng.uniform(size=n_rows) < 0.5).astype(float)
    return make_ds(X, y)


# ---------------------------------------------------------------------------
# Independent exhaustive split oracle (plain Python loops, same tie-breaks).
# ---------------------------------------------------------------------------

def oracle_best_split(X, g, h, idx, params):
    if len(idx) < 2:
        return None
    lam = params.lambda_l2
    best = None
    for j in range(X.shape[1]):
        vals = [float(X[i, j]) for i in idx]
        order = sorted(range(len(vals)), key=lambda k: (vals[k], k))
        v = [vals[k] for k in order]
        gs = [float(g[idx[k]]) for k in order]
        hs = [float(h[idx[k]]) for k in order]
        total_g = 0.0
        total_h = 0.0
        for a, b in zip(gs, hs):
            total_g += a
            total_h += b
        gl = 0.0
        hl = 0.0
        for i in range(len(v) - 1):
            gl += gs[i]
            hl += hs[i]
            if not v[i] < v[i + 1]:
                continue
            gr = total_g - gl
            hr = total_h - hl
            if hl < params.min_child_weight or hr < params.min_child_weight:
                continue
            gain = 0.5 * (
                gl * gl / (hl + lam) + gr * gr / (hr + lam) - total_g * total_g / (total_h + lam)
            )
            if best is None or gain > best[0]:
                best = (gain, j, (v[i] + v[i + 1]) / 2.0)
    return best


def check_fit_against_oracle(ds, params):
    """Re-derive every fitted split with the exhaustive oracle, bit-exactly."""
    model = fit(ds, params)
    X = np.asarray(ds.X, dtype=float)
    y = np.asarray(ds.y, dtype=float)
    logits = np.full(len(y), model.base_score_logit)
    oracle_gains = {name: 0.0 for name in ds.feature_names}
    for tree in model.trees:
        p = 1.0 / (1.0 + np.exp(-logits))
        g = p - y
        h = p * (1.0 - p)
        stack = [(tree, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            best = oracle_best_split(X, g, h, idx, params) if depth < params.max_depth else None
            if node.is_leaf:
                assert best is None or best[0] <= 0.0
                gsum = float(np.sum(g[idx]))
                hsum = float(np.sum(h[idx]))
                expected = -gsum / (hsum + params.lambda_l2) * params.learning_rate
                assert node.value == pytest.approx(expected, rel=1e-12, abs=1e-15)
            else:
                assert best is not None and best[0] > 0.0
                assert node.feature_index == best[1]
                assert node.threshold == best[2]
                oracle_gains[ds.feature_names[best[1]]] += best[0]
                mask = X[idx, node.feature_index] < node.threshold
                stack.append((node.left, idx[mask], depth + 1))
                stack.append((node.right, idx[~mask], depth + 1))
        # Apply this round's tree before computing the next round's gradients.
        leaf_vals = np.empty(len(y))
        walk = [(tree, np.arange(len(y)))]
        while walk:
            nd, rows = walk.pop()
            if len(rows) == 0:
                continue
            if nd.is_leaf:
                leaf_vals[rows] = nd.value
            else:
                m = X[rows, nd.feature_index] < nd.threshold
                walk.append((nd.left, rows[m]))
                walk.append((nd.right, rows[~m]))
        logits = logits + leaf_vals
    return model, oracle_gains


class TestFit:
    def test_one_class_saturates(self):
        ds = make_ds(np.arange(10.0), np.ones(10))
        model = fit(ds, GbdtParams())
        assert np.all(predict_proba_matrix(model, ds.X) >= 0.99)

    def test_one_dim_threshold_matches_oracle(self):
        X = np.array([0.0] * 5 + [1.0] * 5)
        y = X.copy()
        ds = make_ds(X, y)
        model = fit(ds, GbdtParams())
        pred = (predict_proba_matrix(model, ds.X) >= 0.5).astype(float)
        assert np.array_equal(pred, y)
        root = model.trees[0]
        assert root.feature_index == 0
        assert root.threshold == 0.5

    def test_xor_at_depth_two(self):
        # Slightly unequal corner counts: a perfectly balanced XOR gives every
        # root split exactly zero gain, which the gain<=0 rule refuses.
        corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        X = np.repeat(corners, [25, 25, 25, 24], axis=0)
        y = (X[:, 0] != X[:, 1]).astype(float)
        model = fit(make_ds(X, y), GbdtParams(max_depth=2))
        pred = (predict_proba_matrix(model, X) >= 0.5).astype(float)
        assert np.array_equal(pred, y)

    def test_base_score_is_clamped_logit_of_mean(self):
        ds = make_ds(np.arange(4.0), np.array([0.0, 0.0, 0.0, 1.0]))
        model = fit(ds, GbdtParams(n_rounds=1))
        assert model.base_score_logit == pytest.approx(math.log(0.25 / 0.75))

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidDataset):
            fit(make_ds(np.empty((0, 1)), np.empty(0)), GbdtParams())

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(InvalidDataset):
            fit(make_ds(np.arange(3.0), np.array([0.0, 0.5, 1.0])), GbdtParams())

    def test_nonfinite_features_rejected(self):
        with pytest.raises(InvalidDataset):
            fit(make_ds(np.array([0.0, np.nan, 1.0]), np.array([0.0, 1.0, 1.0])), GbdtParams())

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        ds = random_ds(rng, 30, 3)
        a = fit(ds, GbdtParams(n_rounds=20))
        b = fit(ds, GbdtParams(n_rounds=20))
        assert a == b


class TestLossMonotonicity:
    def test_training_loss_never_increases(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            ds = random_ds(rng, int(rng.integers(5, 60)), int(rng.integers(1, 5)))
            model = fit(ds, GbdtParams(n_rounds=30))
            diffs = np.diff(model.train_losses)
            assert np.all(diffs <= 1e-12)


class TestGradientHessianFiniteDifference:
    @staticmethod
    def _loss(z, y):
        p = 1.0 / (1.0 + math.exp(-z))
        return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))

    def test_matches_central_differences(self):
        rng = np.random.default_rng(99)
        eps = 1e-3
        for _ in range(100):
            z = float(rng.uniform(-3.0, 3.0))
            y = float(rng.integers(0, 2))
            p = 1.0 / (1.0 + math.exp(-z))
            g = p - y
            h = p * (1.0 - p)
            g_fd = (self._loss(z + eps, y) - self._loss(z - eps, y)) / (2.0 * eps)
            h_fd = (
                self._loss(z + eps, y) - 2.0 * self._loss(z, y) + self._loss(z - eps, y)
            ) / (eps * eps)
            assert g == pytest.approx(g_fd, rel=1e-6, abs=1e-9)
            assert h == pytest.approx(h_fd, rel=1e-6, abs=1e-9)


class TestSplitOracle:
    def test_every_fitted_split_matches_exhaustive_search(self):
        rng = np.random.default_rng(7)
        for _ in range(12):
            ds = random_ds(rng, int(rng.integers(4, 31)), int(rng.integers(1, 4)))
            params = GbdtParams(n_rounds=4, max_depth=int(rng.integers(1, 4)))
            model, oracle_gains = check_fit_against_oracle(ds, params)
            got = gain_importance(model)
            for name in ds.feature_names:
                assert got[name] == pytest.approx(oracle_gains[name], rel=1e-12, abs=1e-15)

    def test_tie_breaks_prefer_lowest_feature_then_threshold(self):
        # Two identical columns: identical gains, so feature 0 must win.
        x = np.array([0.0] * 5 + [1.0] * 5)
        ds = make_ds(np.column_stack([x, x]), x)
        model = fit(ds, GbdtParams(n_rounds=1))
        assert model.trees[0].feature_index == 0


class TestPredict:
    def test_no_trees_base_zero(self):
        model = GbdtModel(0.0, [], ("f0",), GbdtParams())
        assert predict_proba(model, [1.0]) == 0.5

    def test_single_leaf_sigmoid(self):
        model = GbdtModel(0.0, [TreeNode(value=2.0)], ("f0",), GbdtParams())
        assert predict_proba(model, [0.0]) == pytest.approx(0.8808, abs=1e-4)

    def test_zero_tree_is_identity(self):
        rng = np.random.default_rng(1)
        ds = random_ds(rng, 20, 2)
        model = fit(ds, GbdtParams(n_rounds=5))
        before = predict_logits(model, ds.X).copy()
        model.trees.append(TreeNode(value=0.0))
        assert np.array_equal(predict_logits(model, ds.X), before)

    def test_arity_mismatch(self):
        model = GbdtModel(0.0, [], ("f0", "f1"), GbdtParams())
        with pytest.raises(ArityMismatch):
            predict_proba(model, [1.0])


class TestGroupedSplit:
    def test_ten_students_fraction_point_two(self):
        students = [f"s{i}" for i in range(10)]
        train, test = split_students(students, 0.2, 1)
        assert len(test) == 2 and len(train) == 8
        assert set(train).isdisjoint(test)
        assert set(train) | set(test) == set(students)

    def test_single_student_rejected(self):
        with pytest.raises(InsufficientGroups):
            split_students(["s1", "s1"], 0.2, 1)

    def test_deterministic(self):
        students = [f"s{i}" for i in range(25)]
        assert split_students(students, 0.3, 42) == split_students(students, 0.3, 42)

    def test_rows_follow_students(self):
        rng = np.random.default_rng(8)
        ds = random_ds(rng, 30, 2)
        train, test = grouped_split(ds, 0.25, 3)
        assert set(train.student_ids).isdisjoint(test.student_ids)
        assert train.n_rows + test.n_rows == ds.n_rows


def _threshold_model():
    """Predicts pass iff feature 0 > 0.5."""
    tree = TreeNode(feature_index=0, threshold=0.5,
                    left=TreeNode(value=-5.0), right=TreeNode(value=5.0))
    return GbdtModel(0.0, [tree], ("f0",), GbdtParams())


class TestEvaluate:
    def test_perfect_predictions(self):
        y = np.array([0.0, 1.0] * 10)
        ds = make_ds(y.copy(), y)
        report = evaluate(_threshold_model(), ds)
        assert report.accuracy == 1.0
        assert report.confusion["fp"] == 0
        assert report.confusion["fn"] == 0

    def test_always_pass_predictor(self):
        y = np.array([1.0] * 12 + [0.0] * 8)
        ds = make_ds(np.zeros(20), y)
        model = GbdtModel(3.0, [], ("f0",), GbdtParams())
        report = evaluate(model, ds)
        assert report.accuracy == pytest.approx(0.6)
        assert report.recall == 1.0
        assert report.precision == pytest.approx(0.6)

    def test_hand_counted_confusion(self):
        # x=1 rows: 8 true passes, 1 true fail; x=0 rows: 9 true fails, 2 passes.
        X = np.array([1.0] * 9 + [0.0] * 11)
        y = np.array([1.0] * 8 + [0.0] * 1 + [0.0] * 9 + [1.0] * 2)
        report = evaluate(_threshold_model(), make_ds(X, y))
        assert report.confusion == {"tp": 8, "fp": 1, "tn": 9, "fn": 2}
        assert report.accuracy == pytest.approx(0.85)
        assert report.precision == pytest.approx(8 / 9)
        assert report.recall == pytest.approx(0.8)

    def test_confusion_sums_to_n(self):
        rng = np.random.default_rng(10)
        ds = random_ds(rng, 40, 2)
        model = fit(ds, GbdtParams(n_rounds=5))
        report = evaluate(model, ds)
        assert sum(report.confusion.values()) == report.n_rows == 40

    def test_confusion_counts_helper(self):
        y_true = np.array([1.0, 0.0, 1.0, 0.0])
        y_pred = np.array([1.0, 1.0, 0.0, 0.0])
        assert confusion_counts(y_true, y_pred) == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}


class TestImportance:
    def test_gain_zero_for_constant_feature(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([rng.uniform(size=30), np.full(30, 7.0)])
        y = (X[:, 0] > 0.5).astype(float)
        model = fit(make_ds(X, y), GbdtParams(n_rounds=10))
        assert gain_importance(model)["f1"] == 0.0

    def test_permutation_zero_for_constant_feature(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([rng.uniform(size=30), np.full(30, 7.0)])
        y = (X[:, 0] > 0.5).astype(float)
        ds = make_ds(X, y)
        model = fit(ds, GbdtParams(n_rounds=10))
        imp = permutation_importance(model, ds, repeats=20, seed=7)
        assert imp["f1"] == 0.0

    def test_perfect_binary_feature_drops_to_chance(self):
        y = np.array([0.0, 1.0] * 20)
        ds = make_ds(y.copy(), y)
        model = fit(ds, GbdtParams(n_rounds=10))
        imp = permutation_importance(model, ds, repeats=20, seed=7)
        assert imp["f0"] == pytest.approx(0.5, abs=0.1)

    def test_permutation_deterministic(self):
        rng = np.random.default_rng(4)
        ds = random_ds(rng, 40, 3)
        model = fit(ds, GbdtParams(n_rounds=10))
        a = permutation_importance(model, ds, repeats=10, seed=5)
        b = permutation_importance(model, ds, repeats=10, seed=5)
        assert a == b


class TestArgmaxInvariance:
    @pytest.mark.parametrize("scale", [0.25, 2.0, 1024.0, 3.0])
    def test_column_scaling_preserves_predictions(self, scale):
        rng = np.random.default_rng(55)
        ds = random_ds(rng, 40, 3)
        params = GbdtParams(n_rounds=15)
        base_pred = predict_proba_matrix(fit(ds, params), ds.X)
        X2 = ds.X.copy()
        X2[:, 1] *= scale
        ds2 = make_ds(X2, ds.y)
        scaled_pred = predict_proba_matrix(fit(ds2, params), X2)
        assert np.array_equal(base_pred, scaled_pred)


class TestModelSerialization:
    def test_save_load_identity(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = random_ds(rng, 30, 3)
        model = fit(ds, GbdtParams(n_rounds=10))
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded == model
        assert np.array_equal(
            predict_proba_matrix(loaded, ds.X), predict_proba_matrix(model, ds.X)
        )

    def test_saved_bytes_stable_after_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        model = fit(random_ds(rng, 20, 2), GbdtParams(n_rounds=5))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unknown_format_version_rejected(self):
        obj = model_to_dict(GbdtModel(0.0, [], ("f0",), GbdtParams()))
        obj["format_version"] = 999
        with pytest.raises(ValueError):
            model_from_dict(obj)
