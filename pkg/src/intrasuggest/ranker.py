"""Gradient-boosted regression trees trained with LambdaMART gradients.

Each boosting round computes, per impression group, a lambda (and a
second-order weight) for every candidate by summing over positive/negative
swap pairs the absolute truncated-nDCG change of the swap times the
pairwise sigmoid term.  A variance-reducing regression tree is fitted to
the lambdas, its leaf values are set by one Newton step (sum of lambdas
over sum of weights), and the learning-rate-scaled tree is added to the
ensemble.  There is no randomness in training: results depend only on the
data and the configuration.

Groups whose labels are all equal produce zero lambdas and therefore
contribute nothing to any tree; a dataset consisting only of such groups
trains to an ensemble of zero-valued stumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class FeatureMismatchError(ValueError):
    """Input width does not match the ensemble's feature fingerprint."""


@dataclass(frozen=True)
class TrainConfig:
    """Boosting configuration.

    min_instances_per_leaf = 200 suits production-size logs; desk-scale
    experiments override it to 10 so small groups can still split.
    rng_seed is recorded with the run for provenance but training itself
    is deterministic.
    """

    num_trees: int = 100
    num_leaves: int = 10
    min_instances_per_leaf: int = 200
    learning_rate: float = 0.15
    ndcg_truncation: int = 10
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_trees < 1 or self.min_instances_per_leaf < 1:
            raise ValueError("num_trees and min_instances_per_leaf must be positive")
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.learning_rate <= 0 or self.ndcg_truncation < 1:
            raise ValueError("learning_rate and ndcg_truncation must be positive")


@dataclass
class RegressionTree:
    """Flat-array binary tree; feature[i] == -1 marks node i as a leaf.

    Children always have larger indices than their parent, so a single
    ascending pass routes every sample.  Routing is `go left iff
    feature value < threshold`.
    """

    feature: list[int] = field(default_factory=lambda: [-1])
    threshold: list[float] = field(default_factory=lambda: [0.0])
    left: list[int] = field(default_factory=lambda: [-1])
    right: list[int] = field(default_factory=lambda: [-1])
    value: list[float] = field(default_factory=lambda: [0.0])

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf output for every row of X."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        out = np.zeros(n, dtype=np.float64)
        for nid in range(len(self.feature)):
            mask = node == nid
            if not mask.any():
                continue
            f = self.feature[nid]
            if f < 0:
                out[mask] = self.value[nid]
            else:
                rows = np.nonzero(mask)[0]
                go_left = X[rows, f] < self.threshold[nid]
                node[rows[go_left]] = self.left[nid]
                node[rows[~go_left]] = self.right[nid]
        return out


@dataclass
class RankingEnsemble:
    trees: list[RegressionTree]
    learning_rate: float
    feature_names: tuple[str, ...]

    @property
    def fingerprint(self) -> str:
        return ",".join(self.feature_names)


def _as_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return X


def predict(ensemble: RankingEnsemble, features: np.ndarray) -> np.ndarray:
    """Ensemble scores: the learning-rate-scaled sum of tree outputs.

    An empty ensemble scores everything 0.  Raises FeatureMismatchError
    when the input width disagrees with the fingerprint.
    """
    X = _as_matrix(features)
    if X.shape[1] != len(ensemble.feature_names):
        raise FeatureMismatchError(
            f"got {X.shape[1]} features, ensemble expects "
            f"{len(ensemble.feature_names)} ({ensemble.fingerprint})"
        )
    scores = np.zeros(X.shape[0], dtype=np.float64)
    for tree in ensemble.trees:
        scores += ensemble.learning_rate * tree.apply(X)
    return scores


def rerank(ensemble: RankingEnsemble, candidates: Sequence, features: np.ndarray) -> list:
    """Stable sort of candidates by descending score; ties keep base order."""
    scores = predict(ensemble, features)
    order = np.argsort(-scores, kind="stable")
    return [candidates[i] for i in order]


def _discount_table(size: int) -> np.ndarray:
    ranks = np.arange(1, size + 1, dtype=np.float64)
    return 1.0 / np.log2(ranks + 1.0)


class _Group:
    """Pre-extracted per-impression arrays used by the lambda pass."""

    __slots__ = ("start", "size", "pos", "neg", "ideal_dcg", "trainable")

    def __init__(self, start: int, labels: np.ndarray, truncation: int):
        self.start = start
        self.size = len(labels)
        self.pos = np.nonzero(labels == 1)[0]
        self.neg = np.nonzero(labels == 0)[0]
        self.trainable = len(self.pos) > 0 and len(self.neg) > 0
        n_ideal = min(truncation, len(self.pos))
        self.ideal_dcg = float(_discount_table(n_ideal).sum()) if n_ideal else 0.0


def _lambda_pass(
    scores: np.ndarray,
    groups: list[_Group],
    discounts: np.ndarray,
    truncation: int,
) -> tuple[np.ndarray, np.ndarray]:
    lambdas = np.zeros_like(scores)
    weights = np.zeros_like(scores)
    for g in groups:
        if not g.trainable:
            continue
        s = scores[g.start : g.start + g.size]
        order = np.argsort(-s, kind="stable")
        rank_of = np.empty(g.size, dtype=np.int64)
        rank_of[order] = np.arange(g.size)
        disc = np.where(rank_of < truncation, discounts[rank_of], 0.0)
        for i in g.pos:
            delta = np.abs(disc[i] - disc[g.neg]) / g.ideal_dcg
            s_diff = np.clip(s[i] - s[g.neg], -50.0, 50.0)
            rho = 1.0 / (1.0 + np.exp(s_diff))
            contrib = rho * delta
            hess = rho * (1.0 - rho) * delta
            lambdas[g.start + i] += contrib.sum()
            np.subtract.at(lambdas, g.start + g.neg, contrib)
            weights[g.start + i] += hess.sum()
            np.add.at(weights, g.start + g.neg, hess)
    return lambdas, weights


def _best_split(
    X: np.ndarray, y: np.ndarray, idx: np.ndarray, min_leaf: int
) -> Optional[tuple[float, int, float, np.ndarray, np.ndarray]]:
    """Highest variance-reduction split of the samples in idx.

    Returns (gain, feature, threshold, left_idx, right_idx) or None when
    no split satisfies the minimum leaf size.  Feature index order and
    first-occurrence argmax keep the choice deterministic under ties.
    """
    n = len(idx)
    if n < 2 * min_leaf:
        return None
    best: Optional[tuple[float, int, float, np.ndarray, np.ndarray]] = None
    y_node = y[idx]
    total = float(y_node.sum())
    base = total * total / n
    for f in range(X.shape[1]):
        values = X[idx, f]
        order = np.argsort(values, kind="stable")
        vs = values[order]
        prefix = np.cumsum(y_node[order])
        counts = np.arange(1, n, dtype=np.float64)  # left sizes for split after p
        boundary = vs[:-1] < vs[1:]
        sizes_ok = (counts >= min_leaf) & (counts <= n - min_leaf)
        valid = boundary & sizes_ok
        if not valid.any():
            continue
        left_sum = prefix[:-1]
        gains = left_sum**2 / counts + (total - left_sum) ** 2 / (n - counts) - base
        gains = np.where(valid, gains, -np.inf)
        p = int(np.argmax(gains))
        gain = float(gains[p])
        if best is None or gain > best[0]:
            thr = (float(vs[p]) + float(vs[p + 1])) / 2.0
            if not (vs[p] < thr <= vs[p + 1]):
                thr = float(vs[p + 1])  # adjacent floats: fall back to the exact boundary
            best = (gain, f, thr, idx[order[: p + 1]], idx[order[p + 1 :]])
    if best is None or best[0] <= 0.0:
        return None
    return best


def _fit_tree(
    X: np.ndarray,
    lambdas: np.ndarray,
    weights: np.ndarray,
    config: TrainConfig,
) -> tuple[RegressionTree, np.ndarray]:
    """Best-first leaf growth to num_leaves; Newton-step leaf values.

    Also returns the per-sample leaf output so training can update scores
    without re-traversing the tree.
    """
    tree = RegressionTree(feature=[], threshold=[], left=[], right=[], value=[])

    def new_node() -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(0.0)
        return len(tree.feature) - 1

    root = new_node()
    all_idx = np.arange(X.shape[0], dtype=np.int64)
    leaf_samples: dict[int, np.ndarray] = {root: all_idx}
    # Candidate splits per leaf node id; None = unsplittable.
    candidates = {root: _best_split(X, lambdas, all_idx, config.min_instances_per_leaf)}

    while len(leaf_samples) < config.num_leaves:
        split_node = -1
        split_gain = -math.inf
        for nid in sorted(candidates):
            cand = candidates[nid]
            if cand is not None and cand[0] > split_gain:
                split_gain = cand[0]
                split_node = nid
        if split_node < 0:
            break
        gain, f, thr, left_idx, right_idx = candidates.pop(split_node)
        del leaf_samples[split_node]
        left_id = new_node()
        right_id = new_node()
        tree.feature[split_node] = f
        tree.threshold[split_node] = thr
        tree.left[split_node] = left_id
        tree.right[split_node] = right_id
        leaf_samples[left_id] = left_idx
        leaf_samples[right_id] = right_idx
        candidates[left_id] = _best_split(X, lambdas, left_idx, config.min_instances_per_leaf)
        candidates[right_id] = _best_split(X, lambdas, right_idx, config.min_instances_per_leaf)

    outputs = np.zeros(X.shape[0], dtype=np.float64)
    for nid, idx in leaf_samples.items():
        denom = float(weights[idx].sum())
        leaf_value = float(lambdas[idx].sum()) / denom if denom > 0.0 else 0.0
        tree.value[nid] = leaf_value
        outputs[idx] = leaf_value
    return tree, outputs


def train_lambdamart(
    groups: Sequence[tuple[np.ndarray, Sequence[int]]],
    config: TrainConfig,
    feature_names: Optional[Sequence[str]] = None,
) -> RankingEnsemble:
    """Boost num_trees regression trees on per-impression lambda gradients.

    ``groups`` holds one (feature matrix, binary label vector) pair per
    impression.  Groups without both a positive and a negative label are
    skipped by the gradient computation but still receive predictions.
    """
    if not groups:
        raise ValueError("no trainable group: the training set is empty")
    matrices = []
    metas: list[_Group] = []
    offset = 0
    width: Optional[int] = None
    for X, labels in groups:
        X = _as_matrix(X)
        labels = np.asarray(labels, dtype=np.int64)
        if X.shape[0] != len(labels):
            raise ValueError("feature matrix and labels disagree on group size")
        if width is None:
            width = X.shape[1]
        elif X.shape[1] != width:
            raise ValueError("inconsistent feature width across groups")
        matrices.append(X)
        metas.append(_Group(offset, labels, config.ndcg_truncation))
        offset += X.shape[0]
    X_all = np.vstack(matrices)
    assert width is not None
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(width))
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != width:
            raise FeatureMismatchError(
                f"{len(feature_names)} feature names for width-{width} matrices"
            )

    max_group = max(g.size for g in metas)
    discounts = _discount_table(max_group)
    scores = np.zeros(X_all.shape[0], dtype=np.float64)
    trees: list[RegressionTree] = []
    for _ in range(config.num_trees):
        lambdas, weights = _lambda_pass(scores, metas, discounts, config.ndcg_truncation)
        if not np.all(np.isfinite(lambdas)):
            raise RuntimeError(
                "non-finite lambda gradient; scores have diverged "
                f"(max |score| = {np.abs(scores).max():.3g})"
            )
        tree, outputs = _fit_tree(X_all, lambdas, weights, config)
        trees.append(tree)
        scores += config.learning_rate * outputs
    return RankingEnsemble(trees=trees, learning_rate=config.learning_rate,
                           feature_names=feature_names)


FORMAT_HEADER = "intrasuggest-ensemble v1"


def save_ensemble(ensemble: RankingEnsemble, path: str | Path) -> None:
    """Versioned text format: trees as preorder split/leaf records (a
    split's left subtree precedes its right), floats written with repr."""
    with open(path, "w", encoding="utf-8") as out:
        out.write(FORMAT_HEADER + "\n")
        out.write(f"learning_rate {ensemble.learning_rate!r}\n")
        out.write(f"features {ensemble.fingerprint}\n")
        out.write(f"trees {len(ensemble.trees)}\n")
        for tree in ensemble.trees:
            out.write(f"tree {len(tree.feature)}\n")

            def emit(nid: int) -> None:
                if tree.feature[nid] < 0:
                    out.write(f"leaf {tree.value[nid]!r}\n")
                else:
                    out.write(f"split {tree.feature[nid]} {tree.threshold[nid]!r}\n")
                    emit(tree.left[nid])
                    emit(tree.right[nid])

            emit(0)
        out.write("end\n")


def load_ensemble(path: str | Path) -> RankingEnsemble:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError(f"{path}: not an ensemble file (bad header)")
    pos = 1
    if not lines[pos].startswith("learning_rate "):
        raise ValueError(f"{path}: missing learning_rate")
    learning_rate = float(lines[pos].split(" ", 1)[1])
    pos += 1
    if not lines[pos].startswith("features "):
        raise ValueError(f"{path}: missing feature fingerprint")
    feature_names = tuple(lines[pos].split(" ", 1)[1].split(","))
    pos += 1
    n_trees = int(lines[pos].split(" ", 1)[1])
    pos += 1
    trees = []
    for _ in range(n_trees):
        header = lines[pos].split(" ")
        if header[0] != "tree":
            raise ValueError(f"{path}: expected tree header at line {pos + 1}")
        n_nodes = int(header[1])
        pos += 1
        tree = RegressionTree(feature=[], threshold=[], left=[], right=[], value=[])

        def read_node() -> int:
            nonlocal pos
            parts = lines[pos].split(" ")
            pos += 1
            nid = len(tree.feature)
            if parts[0] == "leaf":
                tree.feature.append(-1)
                tree.threshold.append(0.0)
                tree.left.append(-1)
                tree.right.append(-1)
                tree.value.append(float(parts[1]))
            elif parts[0] == "split":
                tree.feature.append(int(parts[1]))
                tree.threshold.append(float(parts[2]))
                tree.left.append(-1)
                tree.right.append(-1)
                tree.value.append(0.0)
                tree.left[nid] = read_node()
                tree.right[nid] = read_node()
            else:
                raise ValueError(f"{path}: bad node record {parts[0]!r}")
            return nid

        root = read_node()
        assert root == 0
        if len(tree.feature) != n_nodes:
            raise ValueError(f"{path}: tree node count mismatch")
        trees.append(tree)
    if lines[pos] != "end":
        raise ValueError(f"{path}: truncated file")
    return RankingEnsemble(trees=trees, learning_rate=learning_rate,
                           feature_names=feature_names)
