"""Extra-trees regression on full training samples with randomized cuts.

Every tree sees all training samples (no bootstrapping).  At each node a
random subset of candidate features is drawn, each non-constant candidate
gets random cut values drawn uniformly inside its value range over the
node's samples, and the feature-cut pair with the lowest summed left and
right squared error (over all output dimensions) wins.  Predictions are
the mean over trees of the leaf label means; importances are normalized
mean decrease in impurity.
"""

from __future__ import annotations

import gzip
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import _kernels

SERIALIZATION_VERSION = 1


@dataclass(frozen=True)
class EtrConfig:
    """Forest shape and randomization knobs.

    max_features=None uses all input features (the regression convention);
    max_depth=None grows until the other stop conditions fire.  seed feeds
    the per-tree xoshiro256** streams documented in _kernels.
    """

    n_trees: int = 100
    max_features: int | None = None
    n_random_cuts_per_feature: int = 1
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError(f"max_features must be >= 1, got {self.max_features}")
        if self.n_random_cuts_per_feature < 1:
            raise ValueError(
                f"n_random_cuts_per_feature must be >= 1, "
                f"got {self.n_random_cuts_per_feature}"
            )
        if self.min_samples_split < 2:
            raise ValueError(
                f"min_samples_split must be >= 2, got {self.min_samples_split}"
            )
        if self.min_samples_leaf < 1:
            raise ValueError(
                f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}"
            )
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_features": self.max_features,
            "n_random_cuts_per_feature": self.n_random_cuts_per_feature,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "max_depth": self.max_depth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EtrConfig":
        return cls(**d)


class EtrEnsemble:
    """A fitted forest.  Immutable once built; safe to share.

    Nodes of all trees are stored in flat arrays (tree_offsets delimits
    trees; child links are tree-local).  Leaves reference a [lo, hi)
    slice of the per-tree sample permutation; leaf values are means of
    the referenced label rows.
    """

    def __init__(
        self,
        config: EtrConfig,
        n_input_features: int,
        n_outputs: int,
        tree_offsets: np.ndarray,
        node_feature: np.ndarray,
        node_threshold: np.ndarray,
        node_left: np.ndarray,
        node_right: np.ndarray,
        node_n: np.ndarray,
        node_impurity: np.ndarray,
        node_drop: np.ndarray,
        leaf_lo: np.ndarray,
        leaf_hi: np.ndarray,
        idx_all: np.ndarray,
        idx_stride: int,
        labels: np.ndarray,
        feature_importances: np.ndarray,
        label_min: np.ndarray,
        label_max: np.ndarray,
    ):
        self.config = config
        self.n_input_features = n_input_features
        self.n_outputs = n_outputs
        self.tree_offsets = tree_offsets
        self.node_feature = node_feature
        self.node_threshold = node_threshold
        self.node_left = node_left
        self.node_right = node_right
        self.node_n = node_n
        self.node_impurity = node_impurity
        self.node_drop = node_drop
        self.leaf_lo = leaf_lo
        self.leaf_hi = leaf_hi
        self.idx_all = idx_all
        self.idx_stride = idx_stride
        self.labels = labels
        self.feature_importances = feature_importances
        self.label_min = label_min
        self.label_max = label_max

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets) - 1

    def tree_n_nodes(self, t: int) -> int:
        return int(self.tree_offsets[t + 1] - self.tree_offsets[t])

    def predict(self, samples) -> np.ndarray:
        """Mean over trees of the leaf value reached by each sample row.

        Output components are clamped to the per-dimension training label
        bounds (the mean lies inside them mathematically; the clamp only
        absorbs last-ulp rounding).
        """
        X = np.ascontiguousarray(np.asarray(samples, dtype=float))
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_input_features:
            raise ValueError(
                f"samples must be (M, {self.n_input_features}), got shape {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("samples contain non-finite values")
        out = np.empty((X.shape[0], self.n_outputs))
        _kernels.predict_kernel(
            X, self.tree_offsets, self.node_feature, self.node_threshold,
            self.node_left, self.node_right, self.leaf_lo, self.leaf_hi,
            self.idx_all, self.idx_stride, self.labels, out,
        )
        np.clip(out, self.label_min, self.label_max, out=out)
        return out

    def leaf_value(self, t: int, node: int) -> np.ndarray:
        """Mean label vector of a leaf node (tree-local node index)."""
        base = int(self.tree_offsets[t])
        if self.node_feature[base + node] >= 0:
            raise ValueError(f"node {node} of tree {t} is not a leaf")
        lo = int(self.leaf_lo[base + node])
        hi = int(self.leaf_hi[base + node])
        rows = self.idx_all[t * self.idx_stride + lo : t * self.idx_stride + hi]
        return self.labels[rows].mean(axis=0)

    # -- serialization ----------------------------------------------------

    def tree_to_records(self, t: int) -> dict:
        """Nested record form of one tree (node 0 is the root)."""
        base = int(self.tree_offsets[t])
        n_nodes = self.tree_n_nodes(t)
        # children have larger preorder ids than their parent, so a reverse
        # sweep sees both subtrees before linking them
        recs: list[dict | None] = [None] * n_nodes
        for node in range(n_nodes - 1, -1, -1):
            a = base + node
            rec = {
                "n": int(self.node_n[a]),
                "impurity": float(self.node_impurity[a]),
            }
            if self.node_feature[a] < 0:
                rec["value"] = [float(v) for v in self.leaf_value(t, node)]
            else:
                rec["feature"] = int(self.node_feature[a])
                rec["cut"] = float(self.node_threshold[a])
                rec["drop"] = float(self.node_drop[a])
                rec["left"] = recs[int(self.node_left[a])]
                rec["right"] = recs[int(self.node_right[a])]
            recs[node] = rec
        return recs[0]

    def to_jsonable(self) -> dict:
        return {
            "format": "treedox-etr",
            "version": SERIALIZATION_VERSION,
            "config": self.config.to_dict(),
            "n_input_features": self.n_input_features,
            "n_outputs": self.n_outputs,
            "label_min": [float(v) for v in self.label_min],
            "label_max": [float(v) for v in self.label_max],
            "feature_importances": [float(v) for v in self.feature_importances],
            "trees": [self.tree_to_records(t) for t in range(self.n_trees)],
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "EtrEnsemble":
        if doc.get("format") != "treedox-etr":
            raise ValueError(f"not an ensemble document: format={doc.get('format')!r}")
        if doc.get("version") != SERIALIZATION_VERSION:
            raise ValueError(f"unsupported ensemble version {doc.get('version')!r}")
        config = EtrConfig.from_dict(doc["config"])
        n_outputs = int(doc["n_outputs"])
        trees = doc["trees"]

        feature, threshold, left, right = [], [], [], []
        nn, imp, drop, llo, lhi = [], [], [], [], []
        offsets = [0]
        leaf_values = []
        idx_parts = []
        for tree in trees:
            t_leaf_rows = []
            base = offsets[-1]
            stack = [(tree, -1, False)]
            while stack:
                node, parent, is_left = stack.pop()
                nid = len(feature) - base
                if parent >= 0:
                    if is_left:
                        left[base + parent] = nid
                    else:
                        right[base + parent] = nid
                nn.append(int(node["n"]))
                imp.append(float(node["impurity"]))
                if "value" in node:
                    feature.append(-1)
                    threshold.append(0.0)
                    left.append(-1)
                    right.append(-1)
                    drop.append(0.0)
                    row = len(leaf_values)
                    leaf_values.append(node["value"])
                    llo.append(len(t_leaf_rows))
                    lhi.append(len(t_leaf_rows) + 1)
                    t_leaf_rows.append(row)
                else:
                    feature.append(int(node["feature"]))
                    threshold.append(float(node["cut"]))
                    left.append(-1)
                    right.append(-1)
                    drop.append(float(node["drop"]))
                    llo.append(0)
                    lhi.append(0)
                    stack.append((node["right"], nid, False))
                    stack.append((node["left"], nid, True))
            offsets.append(len(feature))
            idx_parts.append(np.asarray(t_leaf_rows, dtype=np.int32))

        # loaded leaves point at single rows of the stored leaf-mean matrix,
        # so on-demand leaf means reproduce the saved values exactly
        labels = np.asarray(leaf_values, dtype=float).reshape(len(leaf_values), n_outputs)
        stride = max(p.size for p in idx_parts)
        idx_all = np.zeros(len(trees) * stride, dtype=np.int32)
        for t, part in enumerate(idx_parts):
            idx_all[t * stride : t * stride + part.size] = part

        return cls(
            config=config,
            n_input_features=int(doc["n_input_features"]),
            n_outputs=n_outputs,
            tree_offsets=np.asarray(offsets, dtype=np.int64),
            node_feature=np.asarray(feature, dtype=np.int32),
            node_threshold=np.asarray(threshold, dtype=float),
            node_left=np.asarray(left, dtype=np.int32),
            node_right=np.asarray(right, dtype=np.int32),
            node_n=np.asarray(nn, dtype=np.int32),
            node_impurity=np.asarray(imp, dtype=float),
            node_drop=np.asarray(drop, dtype=float),
            leaf_lo=np.asarray(llo, dtype=np.int32),
            leaf_hi=np.asarray(lhi, dtype=np.int32),
            idx_all=idx_all,
            idx_stride=stride,
            labels=labels,
            feature_importances=np.asarray(doc["feature_importances"], dtype=float),
            label_min=np.asarray(doc["label_min"], dtype=float),
            label_max=np.asarray(doc["label_max"], dtype=float),
        )

    def save(self, path: str) -> None:
        doc = self.to_jsonable()
        # json.dump recurses through nested tree records; allow deep trees
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 100000))
        try:
            if str(path).endswith(".gz"):
                with gzip.open(path, "wt", encoding="utf-8") as fh:
                    json.dump(doc, fh)
            else:
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(doc, fh)
        finally:
            sys.setrecursionlimit(old)

    @classmethod
    def load(cls, path: str) -> "EtrEnsemble":
        if str(path).endswith(".gz"):
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        return cls.from_jsonable(doc)


def fit(features, labels, config: EtrConfig = EtrConfig()) -> EtrEnsemble:
    """Fit an extra-trees ensemble on the full sample set.

    features: (N, F) matrix; labels: (N,) or (N, D) matrix.  Deterministic
    given config.seed.  Raises ValueError on empty or non-finite input.
    """
    X = np.asarray(features, dtype=float)
    Y = np.asarray(labels, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError(
            f"features and labels must be 2-D, got {X.shape} and {Y.shape}"
        )
    if X.shape[0] == 0 or X.shape[1] == 0 or Y.shape[1] == 0:
        raise ValueError(f"empty input: features {X.shape}, labels {Y.shape}")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"features and labels disagree on N: {X.shape[0]} vs {Y.shape[0]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    if not np.all(np.isfinite(Y)):
        raise ValueError("labels contain non-finite values")

    N, F = X.shape
    D = Y.shape[1]
    max_features = F if config.max_features is None else config.max_features
    if max_features > F:
        raise ValueError(
            f"max_features={max_features} exceeds n_input_features={F}"
        )
    max_depth = -1 if config.max_depth is None else config.max_depth

    Xc = np.ascontiguousarray(X)
    Yc = np.ascontiguousarray(Y)
    q = np.einsum("nd,nd->n", Yc, Yc)

    cap = 2 * N + 1
    s_feature = np.empty(cap, dtype=np.int32)
    s_threshold = np.empty(cap, dtype=float)
    s_left = np.empty(cap, dtype=np.int32)
    s_right = np.empty(cap, dtype=np.int32)
    s_n = np.empty(cap, dtype=np.int32)
    s_imp = np.empty(cap, dtype=float)
    s_drop = np.empty(cap, dtype=float)
    s_llo = np.empty(cap, dtype=np.int32)
    s_lhi = np.empty(cap, dtype=np.int32)

    seed_u = np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF)

    parts = {name: [] for name in (
        "feature", "threshold", "left", "right", "n", "imp", "drop", "llo", "lhi"
    )}
    idx_all = np.empty(config.n_trees * N, dtype=np.int32)
    offsets = np.empty(config.n_trees + 1, dtype=np.int64)
    offsets[0] = 0

    for t in range(config.n_trees):
        rng = _kernels.stream_state(seed_u, np.uint64(t))
        idx = idx_all[t * N : (t + 1) * N]
        idx[:] = np.arange(N, dtype=np.int32)
        n_nodes = _kernels.build_tree(
            Xc, Yc, q, rng,
            max_features, config.n_random_cuts_per_feature,
            config.min_samples_split, config.min_samples_leaf, max_depth,
            idx,
            s_feature, s_threshold, s_left, s_right,
            s_n, s_imp, s_drop, s_llo, s_lhi,
        )
        parts["feature"].append(s_feature[:n_nodes].copy())
        parts["threshold"].append(s_threshold[:n_nodes].copy())
        parts["left"].append(s_left[:n_nodes].copy())
        parts["right"].append(s_right[:n_nodes].copy())
        parts["n"].append(s_n[:n_nodes].copy())
        parts["imp"].append(s_imp[:n_nodes].copy())
        parts["drop"].append(s_drop[:n_nodes].copy())
        parts["llo"].append(s_llo[:n_nodes].copy())
        parts["lhi"].append(s_lhi[:n_nodes].copy())
        offsets[t + 1] = offsets[t] + n_nodes

    node_feature = np.concatenate(parts["feature"])
    node_n = np.concatenate(parts["n"])
    node_drop = np.concatenate(parts["drop"])
    fi, _ = _kernels.accumulate_importances(offsets, node_feature, node_n, node_drop, N, F)
    total = fi.sum()
    if total > 0.0:
        fi = fi / total

    return EtrEnsemble(
        config=config,
        n_input_features=F,
        n_outputs=D,
        tree_offsets=offsets,
        node_feature=node_feature,
        node_threshold=np.concatenate(parts["threshold"]),
        node_left=np.concatenate(parts["left"]),
        node_right=np.concatenate(parts["right"]),
        node_n=node_n,
        node_impurity=np.concatenate(parts["imp"]),
        node_drop=node_drop,
        leaf_lo=np.concatenate(parts["llo"]),
        leaf_hi=np.concatenate(parts["lhi"]),
        idx_all=idx_all,
        idx_stride=N,
        labels=Yc.copy(),
        feature_importances=fi,
        label_min=Yc.min(axis=0),
        label_max=Yc.max(axis=0),
        )


def predict(ensemble: EtrEnsemble, samples) -> np.ndarray:
    return ensemble.predict(samples)


def feature_importances(ensemble: EtrEnsemble) -> np.ndarray:
    """Normalized mean-decrease-impurity importances (zeros if no splits)."""
    return ensemble.feature_importances.copy()
