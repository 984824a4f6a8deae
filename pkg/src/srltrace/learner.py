"""Second-order gradient-boosted trees for binary pass/fail prediction.

Exact greedy split search over midpoints of consecutive distinct sorted
feature values, L2-regularized leaf weights, logistic loss. Everything is
deterministic: ties break toward the lowest feature index, then the lowest
threshold, and all randomness (grouped splits, permutation importance) comes
from NumPy's PCG64 generator seeded explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import Dataset, assemble_dataset
from .ingest import TraceStore
from .trace_model import GbdtParams, PipelineConfig

MODEL_FORMAT_VERSION = 1


class InvalidDataset(ValueError):
    pass


class ArityMismatch(ValueError):
    pass


class InsufficientGroups(ValueError):
    pass


@dataclass
class TreeNode:
    """Internal node (feature_index/threshold/left/right) or leaf (value)."""

    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None
    gain: float = 0.0  # split gain; training metadata, not serialized

    @property
    def is_leaf(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"v": self.value}
        return {
            "f": self.feature_index,
            "t": self.threshold,
            "l": self.left.to_dict(),
            "r": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(obj: dict) -> "TreeNode":
        if "v" in obj:
            return TreeNode(value=float(obj["v"]))
        return TreeNode(
            feature_index=int(obj["f"]),
            threshold=float(obj["t"]),
            left=TreeNode.from_dict(obj["l"]),
            right=TreeNode.from_dict(obj["r"]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreeNode):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass
class GbdtModel:
    """Trained ensemble: base logit plus additive per-tree leaf contributions."""

    base_score_logit: float
    trees: list[TreeNode]
    feature_names: tuple[str, ...]
    params: GbdtParams
    train_losses: list[float] = field(default_factory=list, compare=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GbdtModel):
            return NotImplemented
        return (
            self.base_score_logit == other.base_score_logit
            and self.trees == other.trees
            and tuple(self.feature_names) == tuple(other.feature_names)
            and self.params == other.params
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def _logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, idx: np.ndarray, params: GbdtParams
) -> tuple[float, int, float] | None:
    """Best (gain, feature_index, threshold) at this node, or None.

    Cumulative g/h sums run in ascending feature-value order (stable sort),
    so the arithmetic is reproducible candidate by candidate.
    """
    if len(idx) < 2:
        return None
    lam = params.lambda_l2
    best: tuple[float, int, float] | None = None
    g_node = g[idx]
    h_node = h[idx]
    for j in range(X.shape[1]):
        vals = X[idx, j]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        cg = np.cumsum(g_node[order])
        ch = np.cumsum(h_node[order])
        total_g = cg[-1]
        total_h = ch[-1]
        boundaries = np.nonzero(v[:-1] < v[1:])[0]
        if len(boundaries) == 0:
            continue
        gl = cg[boundaries]
        hl = ch[boundaries]
        gr = total_g - gl
        hr = total_h - hl
        gains = 0.5 * (
            gl * gl / (hl + lam)
            + gr * gr / (hr + lam)
            - total_g * total_g / (total_h + lam)
        )
        gains = np.where(
            (hl >= params.min_child_weight) & (hr >= params.min_child_weight),
            gains,
            -np.inf,
        )
        k = int(np.argmax(gains))  # first max -> lowest threshold on ties
        if not np.isfinite(gains[k]):
            continue
        if best is None or gains[k] > best[0]:  # strict -> lowest feature index wins
            thr = (v[boundaries[k]] + v[boundaries[k] + 1]) / 2.0
            best = (float(gains[k]), j, float(thr))
    return best


def _leaf_value(g_sum: float, h_sum: float, params: GbdtParams) -> float:
    return -g_sum / (h_sum + params.lambda_l2) * params.learning_rate


def _build_node(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, idx: np.ndarray, depth: int, params: GbdtParams
) -> TreeNode:
    if depth < params.max_depth:
        best = _best_split(X, g, h, idx, params)
    else:
        best = None
    if best is None or best[0] <= 0.0:
        return TreeNode(value=_leaf_value(float(np.sum(g[idx])), float(np.sum(h[idx])), params))
    gain, j, thr = best
    mask = X[idx, j] < thr
    left = _build_node(X, g, h, idx[mask], depth + 1, params)
    right = _build_node(X, g, h, idx[~mask], depth + 1, params)
    return TreeNode(feature_index=j, threshold=thr, left=left, right=right, gain=gain)


def _tree_values(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=float)
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, rows = stack.pop()
        if len(rows) == 0:
            continue
        if nd.is_leaf:
            out[rows] = nd.value
        else:
            mask = X[rows, nd.feature_index] < nd.threshold
            stack.append((nd.left, rows[mask]))
            stack.append((nd.right, rows[~mask]))
    return out


def fit(dataset: Dataset, params: GbdtParams) -> GbdtModel:
    """Train the boosted ensemble; training loss must not increase per round."""
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    if len(y) == 0:
        raise InvalidDataset("dataset is empty")
    if not np.all(np.isfinite(X)):
        raise InvalidDataset("dataset contains non-finite feature values")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidDataset("labels must be binary 0/1")

    p0 = min(max(float(np.mean(y)), 1e-6), 1.0 - 1e-6)
    base = math.log(p0 / (1.0 - p0))
    logits = np.full(len(y), base)
    losses = [_logloss(y, _sigmoid(logits))]
    trees: list[TreeNode] = []
    all_rows = np.arange(len(y))
    for _ in range(params.n_rounds):
        p = _sigmoid(logits)
        g = p - y
        h = p * (1.0 - p)
        root = _build_node(X, g, h, all_rows, 0, params)
        trees.append(root)
        logits = logits + _tree_values(root, X)
        loss = _logloss(y, _sigmoid(logits))
        if loss > losses[-1] + 1e-12:
            raise RuntimeError(f"training loss increased: {losses[-1]} -> {loss}")
        losses.append(loss)
    return GbdtModel(
        base_score_logit=base,
        trees=trees,
        feature_names=tuple(dataset.feature_names),
        params=params,
        train_losses=losses,
    )


def predict_logits(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise ArityMismatch(
            f"expected {len(model.feature_names)} features, got {X.shape[1] if X.ndim == 2 else 'non-matrix'}"
        )
    logits = np.full(len(X), model.base_score_logit)
    for tree in model.trees:
        logits += _tree_values(tree, X)
    return logits


def predict_proba_matrix(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    return _sigmoid(predict_logits(model, X))


def predict_proba(model: GbdtModel, row) -> float:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or len(row) != len(model.feature_names):
        raise ArityMismatch(f"expected {len(model.feature_names)} features, got {row.shape}")
    return float(predict_proba_matrix(model, row.reshape(1, -1))[0])


def split_students(
    student_ids, test_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Seeded student-level partition; test side gets ceil(fraction * n)."""
    students = sorted(set(student_ids))
    if len(students) < 2:
        raise InsufficientGroups(f"need >= 2 distinct students, got {len(students)}")
    rng = np.random.default_rng(seed)  # PCG64
    perm = rng.permutation(len(students))
    n_test = math.ceil(test_fraction * len(students))
    test = sorted(students[i] for i in perm[:n_test])
    train = sorted(students[i] for i in perm[n_test:])
    return train, test


def grouped_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split rows by student so no student appears on both sides."""
    train_students, test_students = split_students(dataset.student_ids, test_fraction, seed)
    return dataset.subset_by_students(set(train_students)), dataset.subset_by_students(set(test_students))


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: dict[str, int]
    n_rows: int
    gain_importance: dict[str, float]
    permutation_importance: dict[str, float]
    config: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion,
            "n_rows": self.n_rows,
            "feature_importance": {
                "gain": self.gain_importance,
                "permutation": self.permutation_importance,
            },
        }
        if self.config is not None:
            out["config"] = self.config
        return out


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, int]:
    return {
        "tp": int(np.sum((y_pred == 1) & (y_true == 1))),
        "fp": int(np.sum((y_pred == 1) & (y_true == 0))),
        "tn": int(np.sum((y_pred == 0) & (y_true == 0))),
        "fn": int(np.sum((y_pred == 0) & (y_true == 1))),
    }


def _metrics(conf: dict[str, int]) -> tuple[float, float, float, float]:
    tp, fp, tn, fn = conf["tp"], conf["fp"], conf["tn"], conf["fn"]
    n = tp + fp + tn + fn
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return accuracy, precision, recall, f1


def _accuracy(model: GbdtModel, X: np.ndarray, y: np.ndarray, threshold: float) -> float:
    pred = (predict_proba_matrix(model, X) >= threshold).astype(float)
    return float(np.mean(pred == y))


def gain_importance(model: GbdtModel) -> dict[str, float]:
    """Total split gain per feature across all trees (0 for unused features)."""
    totals = {name: 0.0 for name in model.feature_names}
    stack = list(model.trees)
    while stack:
        nd = stack.pop()
        if nd.is_leaf:
            continue
        totals[model.feature_names[nd.feature_index]] += nd.gain
        stack.append(nd.left)
        stack.append(nd.right)
    return totals


def permutation_importance(
    model: GbdtModel,
    dataset: Dataset,
    repeats: int = 20,
    seed: int = 7,
    threshold: float = 0.5,
) -> dict[str, float]:
    """Mean accuracy drop from shuffling each feature column, seeded."""
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    if len(y) == 0:
        raise InvalidDataset("dataset is empty")
    base_acc = _accuracy(model, X, y, threshold)
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}
    for j, name in enumerate(model.feature_names):
        drops = []
        for _ in range(repeats):
            perm = rng.permutation(len(y))
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            drops.append(base_acc - _accuracy(model, Xp, y, threshold))
        out[name] = float(np.mean(drops))
    return out


def evaluate(
    model: GbdtModel,
    dataset: Dataset,
    decision_threshold: float = 0.5,
    importance_repeats: int = 20,
    importance_seed: int | None = None,
) -> EvalReport:
    """Threshold predictions, compute the confusion matrix and importances."""
    y = np.asarray(dataset.y, dtype=float)
    pred = (predict_proba_matrix(model, dataset.X) >= decision_threshold).astype(float)
    conf = confusion_counts(y, pred)
    accuracy, precision, recall, f1 = _metrics(conf)
    seed = model.params.seed if importance_seed is None else importance_seed
    return EvalReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=conf,
        n_rows=len(y),
        gain_importance=gain_importance(model),
        permutation_importance=permutation_importance(
            model, dataset, repeats=importance_repeats, seed=seed, threshold=decision_threshold
        ),
    )


@dataclass
class ComparisonReport:
    baseline: EvalReport
    srl: EvalReport
    accuracy_delta: float
    split_seed: int
    test_fraction: float
    train_students: list[str]
    test_students: list[str]
    config: dict

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "srl": self.srl.to_dict(),
            "accuracy_delta": self.accuracy_delta,
            "split": {
                "seed": self.split_seed,
                "test_fraction": self.test_fraction,
                "train_students": self.train_students,
                "test_students": self.test_students,
            },
            "config": self.config,
        }


def run_comparison(store: TraceStore, cfg: PipelineConfig) -> ComparisonReport:
    """Train/evaluate baseline and SRL feature sets on one shared student split."""
    base_ds = assemble_dataset(store, "baseline", cfg)
    srl_ds = assemble_dataset(store, "srl", cfg)
    train_students, test_students = split_students(
        base_ds.student_ids, cfg.test_fraction, cfg.split_seed
    )
    train_set = set(train_students)
    test_set = set(test_students)

    reports = {}
    for name, ds in (("baseline", base_ds), ("srl", srl_ds)):
        model = fit(ds.subset_by_students(train_set), cfg.gbdt)
        reports[name] = evaluate(
            model,
            ds.subset_by_students(test_set),
            decision_threshold=cfg.decision_threshold,
            importance_repeats=cfg.importance_repeats,
            importance_seed=cfg.split_seed,
        )
    return ComparisonReport(
        baseline=reports["baseline"],
        srl=reports["srl"],
        accuracy_delta=reports["srl"].accuracy - reports["baseline"].accuracy,
        split_seed=cfg.split_seed,
        test_fraction=cfg.test_fraction,
        train_students=train_students,
        test_students=test_students,
        config=cfg.to_dict(),
    )


def _params_to_dict(params: GbdtParams) -> dict:
    return {
        "n_rounds": params.n_rounds,
        "max_depth": params.max_depth,
        "learning_rate": params.learning_rate,
        "lambda_l2": params.lambda_l2,
        "min_child_weight": params.min_child_weight,
        "seed": params.seed,
    }


def model_to_dict(model: GbdtModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_names": list(model.feature_names),
        "base_score_logit": model.base_score_logit,
        "params": _params_to_dict(model.params),
        "trees": [t.to_dict() for t in model.trees],
    }


def model_from_dict(obj: dict) -> GbdtModel:
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {obj.get('format_version')!r}")
    return GbdtModel(
        base_score_logit=float(obj["base_score_logit"]),
        trees=[TreeNode.from_dict(t) for t in obj["trees"]],
        feature_names=tuple(obj["feature_names"]),
        params=GbdtParams(**obj["params"]),
    )


def save_model(model: GbdtModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | Path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
