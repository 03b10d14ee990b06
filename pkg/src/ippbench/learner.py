"""Regression forest over feature vectors and the greedy learned policy.

Plain random forest regression: bootstrap-sampled trees with axis-aligned
splits, per-node random feature subsets and mean-leaf predictions.  The
implementation is deliberately self-contained so that training is
deterministic for (data, hyperparameters, seed), every prediction stays
inside the training-target range, and the full tree structure can be
serialized to a documented JSON file that round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import features as feature_schema
from .errors import (
    ContractViolationError,
    DataFormatError,
    SchemaMismatchError,
    TrainingError,
)
from .features import FeatureVector, extract_batch
from .objective import Budget, CoverageModel, PathState
from .sensor import Belief

MODEL_FORMAT = "ippforest"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyperparameters; defaults sized for 16-dim desk-scale data."""

    tree_count: int = 50
    max_depth: int = 12
    min_leaf: int = 5
    feature_subsample: int = 4

    def __post_init__(self) -> None:
        if min(self.tree_count, self.max_depth, self.min_leaf, self.feature_subsample) < 1:
            raise ContractViolationError("forest hyperparameters must be >= 1")


@dataclass(frozen=True)
class QDatapoint:
    """One regression example: features, oracle value-to-go and timestep."""

    features: FeatureVector
    q: float
    t: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.q) or not 0.0 <= self.q <= 1.0 + 1e-9:
            raise ContractViolationError(f"q value {self.q} outside [0, 1]")
        if self.weight <= 0:
            raise ContractViolationError("datapoint weight must be positive")


@dataclass(frozen=True)
class _Tree:
    """Flat node arrays; leaves have feature == -1 and carry the mean."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class RegressionForest:
    trees: tuple[_Tree, ...]
    config: ForestConfig
    train_seed: tuple[int, ...]
    schema_version: int


def _seed_key(seed: int | Sequence[int]) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _build_tree(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, cfg: ForestConfig,
    rng: np.random.Generator,
) -> _Tree:
    n_features = X.shape[1]
    subsample = min(cfg.feature_subsample, n_features)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def add_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = add_node()
        yi = y[idx]
        wi = w[idx]
        if np.ptp(yi) == 0.0:  # constant targets stay bit-exact
            value[node] = float(yi[0])
            return node
        value[node] = float(np.dot(wi, yi) / wi.sum())
        if depth >= cfg.max_depth or idx.size < 2 * cfg.min_leaf:
            return node
        cand = rng.choice(n_features, size=subsample, replace=False)
        best_sse = math.inf
        best_feat = -1
        best_thr = 0.0
        for f in cand:
            col = X[idx, f]
            order = np.argsort(col, kind="stable")
            xs = col[order]
            ys = yi[order]
            ws = wi[order]
            cw = np.cumsum(ws)
            cwy = np.cumsum(ws * ys)
            cwy2 = np.cumsum(ws * ys * ys)
            total_w, total_wy, total_wy2 = cw[-1], cwy[-1], cwy2[-1]
            # split between positions k-1 and k; both sides need min_leaf rows
            ks = np.arange(cfg.min_leaf, idx.size - cfg.min_leaf + 1)
            if ks.size == 0:
                continue
            ks = ks[xs[ks - 1] != xs[ks]]
            if ks.size == 0:
                continue
            lw, lwy, lwy2 = cw[ks - 1], cwy[ks - 1], cwy2[ks - 1]
            rw, rwy, rwy2 = total_w - lw, total_wy - lwy, total_wy2 - lwy2
            sse = (lwy2 - lwy * lwy / lw) + (rwy2 - rwy * rwy / rw)
            k_best = int(np.argmin(sse))
            if sse[k_best] < best_sse - 1e-15:
                best_sse = float(sse[k_best])
                best_feat = int(f)
                k = int(ks[k_best])
                thr = float((xs[k - 1] + xs[k]) / 2.0)
                if thr >= xs[k]:  # midpoint rounded up; keep the split proper
                    thr = float(xs[k - 1])
                best_thr = thr
        if best_feat < 0:
            return node
        go_left = X[idx, best_feat] <= best_thr
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def fit(
    data: Sequence[QDatapoint],
    config: ForestConfig = ForestConfig(),
    seed: int | Sequence[int] = 0,
) -> RegressionForest:
    """Train the forest; deterministic for (data, config, seed)."""
    if not data:
        raise TrainingError("cannot fit a forest on an empty dataset")
    versions = {d.features.schema_version for d in data}
    if len(versions) != 1:
        raise TrainingError(f"mixed feature schema versions in training data: {versions}")
    X = np.stack([d.features.values for d in data])
    y = np.asarray([d.q for d in data], dtype=np.float64)
    w = np.asarray([d.weight for d in data], dtype=np.float64)
    key = _seed_key(seed)
    trees = []
    for k in range(config.tree_count):
        rng = np.random.default_rng(key + (k,))
        boot = rng.integers(0, X.shape[0], X.shape[0])
        trees.append(_build_tree(X[boot], y[boot], w[boot], config, rng))
    return RegressionForest(
        trees=tuple(trees),
        config=config,
        train_seed=key,
        schema_version=versions.pop(),
    )


def predict_batch(forest: RegressionForest, X: np.ndarray) -> np.ndarray:
    """Mean per-tree prediction for each row of ``X``.

    The mean uses exact summation, so it does not depend on tree order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rows = np.arange(X.shape[0])
    per_tree = np.empty((len(forest.trees), X.shape[0]))
    for k, tree in enumerate(forest.trees):
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feats = tree.feature[idx]
            active = feats >= 0
            if not active.any():
                break
            ai = idx[active]
            go_left = X[rows[active], feats[active]] <= tree.threshold[ai]
            idx[active] = np.where(go_left, tree.left[ai], tree.right[ai])
        per_tree[k] = tree.value[idx]
    n = len(forest.trees)
    return np.asarray([math.fsum(per_tree[:, i]) / n for i in range(X.shape[0])])


def predict(forest: RegressionForest, features: FeatureVector | np.ndarray) -> float:
    if isinstance(features, FeatureVector):
        if features.schema_version != forest.schema_version:
            raise SchemaMismatchError(
                f"features use schema v{features.schema_version}, "
                f"forest was trained on v{forest.schema_version}"
            )
        features = features.values
    return float(predict_batch(forest, features)[0])


@dataclass(frozen=True)
class LearnedPolicy:
    """Greedy action selection with respect to predicted value-to-go."""

    forest: RegressionForest


def select_action(
    policy: LearnedPolicy,
    state: PathState,
    belief: Belief,
    model: CoverageModel,
    budget: Budget,
) -> int | None:
    """Feasible action with the highest predicted value; None if terminal.

    Ties break to the lowest node index.
    """
    if policy.forest.schema_version != feature_schema.SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"model schema v{policy.forest.schema_version} does not match "
            f"running feature schema v{feature_schema.SCHEMA_VERSION}"
        )
    actions = model.feasible_actions(state, budget)
    if not actions:
        return None
    X = extract_batch(state, actions, belief, model.nodeset, budget, model.sensor)
    preds = predict_batch(policy.forest, X)
    return actions[int(np.argmax(preds))]


# ---------------------------------------------------------------------------
# Model files: JSON with full tree structure; floats round-trip exactly
# ---------------------------------------------------------------------------

def save_model(forest: RegressionForest, path: str) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema_version": forest.schema_version,
        "train_seed": list(forest.train_seed),
        "hyperparams": {
            "tree_count": forest.config.tree_count,
            "max_depth": forest.config.max_depth,
            "min_leaf": forest.config.min_leaf,
            "feature_subsample": forest.config.feature_subsample,
        },
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "value": tree.value.tolist(),
            }
            for tree in forest.trees
        ],
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(
    path: str, expected_schema_version: int = feature_schema.SCHEMA_VERSION
) -> RegressionForest:
    """Load a model file; refuses other formats and stale feature schemas."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: not a valid model file: {exc}") from None
    try:
        if doc["format"] != MODEL_FORMAT or doc["version"] != MODEL_VERSION:
            raise DataFormatError(
                f"{path}: unsupported model format {doc.get('format')!r} "
                f"v{doc.get('version')!r}"
            )
        schema_version = int(doc["schema_version"])
        if schema_version != expected_schema_version:
            raise SchemaMismatchError(
                f"{path}: model schema v{schema_version} incompatible with "
                f"running feature schema v{expected_schema_version}"
            )
        hp = doc["hyperparams"]
        config = ForestConfig(
            tree_count=int(hp["tree_count"]),
            max_depth=int(hp["max_depth"]),
            min_leaf=int(hp["min_leaf"]),
            feature_subsample=int(hp["feature_subsample"]),
        )
        trees = tuple(
            _Tree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                value=np.asarray(t["value"], dtype=np.float64),
            )
            for t in doc["trees"]
        )
        train_seed = tuple(int(s) for s in doc["train_seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed model document: {exc}") from None
    if len(trees) != config.tree_count:
        raise DataFormatError(f"{path}: tree count does not match hyperparams")
    return RegressionForest(
        trees=trees, config=config, train_seed=train_seed,
        schema_version=schema_version,
    )
