"""From-scratch regression forest with out-of-bootstrap permutation importance.

Trees are grown on with-replacement bootstraps, splitting on a random
feature subset per node by minimizing the weighted child sum of squared
errors.  All randomness is derived from (seed, tree index) or
(seed, tree index, feature index), so results are reproducible and
independent of execution order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ForestConfig", "Tree", "Forest", "train", "predict",
           "oob_importance", "save", "load"]

_MAGIC = b"RGMF"
_VERSION = 1
_TIE_EPS = 1e-12


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 9
    min_samples_leaf: int = 5
    m_try: str | int = "sqrt"     # "sqrt", "third", or an explicit count
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees, max_depth and min_samples_leaf must be >= 1")
        if isinstance(self.m_try, str) and self.m_try not in ("sqrt", "third"):
            raise ValueError("m_try must be 'sqrt', 'third' or an integer")

    def m_features(self, n_features: int) -> int:
        if self.m_try == "sqrt":
            m = int(round(np.sqrt(n_features)))
        elif self.m_try == "third":
            m = n_features // 3
        else:
            m = int(self.m_try)
        return min(max(m, 1), n_features)


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32, self index at leaves
    right: np.ndarray      # int32
    value: np.ndarray      # float64 leaf / node mean

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = node[active]
            go_left = X[active, self.feature[idx]] <= self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class Forest:
    trees: list[Tree]
    bootstraps: list[np.ndarray]
    columns: list[str]
    config: ForestConfig
    n_rows: int


def _best_split(X, y, rows, feats, min_leaf, parent_sse):
    """Best (feature, threshold, sse) over candidate features, or None."""
    n = len(rows)
    if n - 2 * min_leaf + 1 <= 0:
        return None
    Xs = X[rows][:, feats]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[rows][order]
    c1 = np.cumsum(ys, axis=0)
    c2 = np.cumsum(ys * ys, axis=0)
    tot1 = c1[-1]
    tot2 = c2[-1]

    sl = slice(min_leaf - 1, n - min_leaf)               # left sizes - 1
    l1, l2 = c1[sl], c2[sl]
    nl = np.arange(min_leaf, n - min_leaf + 1, dtype=float)[:, None]
    nr = n - nl
    sse = (l2 - l1 * l1 / nl) + ((tot2 - l2) - (tot1 - l1) ** 2 / nr)
    valid = xs[min_leaf - 1:n - min_leaf] < xs[min_leaf:n - min_leaf + 1]
    sse[~valid] = np.inf

    flat = np.argmin(sse)
    best = sse.reshape(-1)[flat]
    if not np.isfinite(best) or parent_sse - best <= _TIE_EPS * max(parent_sse, 1.0):
        return None
    # Tie-break: among equal SSE candidates prefer the lowest column index.
    pos_idx, feat_idx = np.unravel_index(flat, sse.shape)
    tie_mask = sse <= best + _TIE_EPS * max(best, 1.0)
    if np.count_nonzero(tie_mask) > 1:
        ties = np.argwhere(tie_mask)
        cols = feats[ties[:, 1]]
        k = np.lexsort((ties[:, 0], cols))[0]
        pos_idx, feat_idx = ties[k]
    split_i = pos_idx + min_leaf
    thr = 0.5 * (xs[split_i - 1, feat_idx] + xs[split_i, feat_idx])
    if thr >= xs[split_i, feat_idx]:
        # Adjacent floats: the midpoint rounded up to the right-hand value,
        # which would route every row left.  Split on the left value instead.
        thr = xs[split_i - 1, feat_idx]
    return int(feats[feat_idx]), float(thr)


def _grow_tree(X, y, rows, cfg: ForestConfig, rng) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    n_features = X.shape[1]
    m = cfg.m_features(n_features)
    stack = [(rows, 0, None, None)]   # rows, depth, parent slot, side
    while stack:
        node_rows, depth, parent, side = stack.pop()
        slot = len(feature)
        if parent is not None:
            (left if side == "L" else right)[parent] = slot
        yn = y[node_rows]
        mean = float(yn.mean())
        feature.append(-1)
        threshold.append(0.0)
        left.append(slot)
        right.append(slot)
        value.append(mean)

        n = len(node_rows)
        if depth >= cfg.max_depth or n < 2 * cfg.min_samples_leaf:
            continue
        sse = float(np.sum((yn - mean) ** 2))
        if sse <= 0.0:
            continue
        feats = rng.choice(n_features, size=m, replace=False)
        found = _best_split(X, y, node_rows, feats, cfg.min_samples_leaf, sse)
        if found is None:
            continue
        f, thr = found
        go_left = X[node_rows, f] <= thr
        if go_left.all() or not go_left.any():
            continue  # degenerate threshold: keep the node as a leaf
        feature[slot] = f
        threshold[slot] = thr
        # Push right first so the left child is laid out next (stable layout).
        stack.append((node_rows[~go_left], depth + 1, slot, "R"))
        stack.append((node_rows[go_left], depth + 1, slot, "L"))
    return Tree(np.array(feature, dtype=np.int32),
                np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int32),
                np.array(right, dtype=np.int32),
                np.array(value, dtype=np.float64))


def train(X, y, cfg: ForestConfig | None = None,
          columns: list[str] | None = None) -> Forest:
    """Grow a bagged forest of MSE-split regression trees."""
    cfg = cfg or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (N, F) with matching y")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    n = len(y)
    if n < 2 * cfg.min_samples_leaf:
        raise ValueError("not enough rows to honour min_samples_leaf")
    if columns is None:
        columns = [f"f{j}" for j in range(X.shape[1])]
    if len(columns) != X.shape[1]:
        raise ValueError("column names disagree with feature count")

    trees, bootstraps = [], []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([int(cfg.seed), t])
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X, y, boot, cfg, rng))
        bootstraps.append(boot.astype(np.uint32))
    return Forest(trees, bootstraps, list(columns), cfg, n)


def predict(forest: Forest, X) -> np.ndarray:
    """Mean of per-tree leaf means."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(forest.columns):
        raise ValueError(f"expected {len(forest.columns)} features, "
                         f"got {X.shape[1]}")
    out = np.zeros(len(X))
    for tree in forest.trees:
        out += tree.predict(X)
    return out / len(forest.trees)


def oob_importance(forest: Forest, X, y) -> np.ndarray:
    """Permutation importance: OOB MSE increase per feature, averaged over trees."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != forest.n_rows:
        raise ValueError("importance requires the training rows")
    n_features = X.shape[1]
    imp = np.zeros(n_features)
    for t, (tree, boot) in enumerate(zip(forest.trees, forest.bootstraps)):
        oob = np.ones(len(X), dtype=bool)
        oob[boot] = False
        if not oob.any():
            raise ValueError(f"tree {t} has no out-of-bootstrap samples")
        Xo = X[oob]
        yo = y[oob]
        base = float(np.mean((tree.predict(Xo) - yo) ** 2))
        used = np.unique(tree.feature[tree.feature >= 0])
        for f in range(n_features):
            if f not in used:
                continue  # permutation cannot change an unused feature's path
            rng = np.random.default_rng([int(forest.config.seed), t, 7919 + f])
            Xp = Xo.copy()
            Xp[:, f] = Xo[rng.permutation(len(Xo)), f]
            imp[f] += float(np.mean((tree.predict(Xp) - yo) ** 2)) - base
    return imp / len(forest.trees)


# ---------------------------------------------------------------------------
# Serialization (byte layout documented in docs/model_format.md)

def save(forest: Forest, path) -> None:
    header = {
        "config": {"n_trees": forest.config.n_trees,
                   "max_depth": forest.config.max_depth,
                   "min_samples_leaf": forest.config.min_samples_leaf,
                   "m_try": forest.config.m_try,
                   "seed": forest.config.seed},
        "columns": forest.columns,
        "n_rows": forest.n_rows,
        "node_counts": [len(t.feature) for t in forest.trees],
    }
    blob = json.dumps(header).encode()
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(blob)), blob]
    for tree in forest.trees:
        parts += [tree.feature.astype("<i4").tobytes(),
                  tree.threshold.astype("<f8").tobytes(),
                  tree.left.astype("<i4").tobytes(),
                  tree.right.astype("<i4").tobytes(),
                  tree.value.astype("<f8").tobytes()]
    for boot in forest.bootstraps:
        parts.append(boot.astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _take(buf: memoryview, pos: int, count: int, dtype: str):
    size = count * np.dtype(dtype).itemsize
    if pos + size > len(buf):
        raise ValueError("model file truncated")
    return np.frombuffer(buf[pos:pos + size], dtype=dtype).copy(), pos + size


def load(path) -> Forest:
    raw = memoryview(Path(path).read_bytes())
    if len(raw) < 12 or bytes(raw[:4]) != _MAGIC:
        raise ValueError("not a forest model file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise ValueError(f"unsupported model format version {version}")
    if 12 + hlen > len(raw):
        raise ValueError("model file truncated")
    header = json.loads(bytes(raw[12:12 + hlen]).decode())
    cfg = ForestConfig(**header["config"])
    pos = 12 + hlen
    trees = []
    for count in header["node_counts"]:
        feature, pos = _take(raw, pos, count, "<i4")
        threshold, pos = _take(raw, pos, count, "<f8")
        left, pos = _take(raw, pos, count, "<i4")
        right, pos = _take(raw, pos, count, "<i4")
        value, pos = _take(raw, pos, count, "<f8")
        trees.append(Tree(feature, threshold, left, right, value))
    bootstraps = []
    for _ in header["node_counts"]:
        boot, pos = _take(raw, pos, header["n_rows"], "<u4")
        bootstraps.append(boot)
    if pos != len(raw):
        raise ValueError("model file has trailing bytes")
    return Forest(trees, bootstraps, list(header["columns"]), cfg,
                  header["n_rows"])
