"""Canonical correlation forest: oblique decision trees split on projections
that maximize the correlation between features and one-hot labels.

Each tree samples a feature subset per node, projects the node's samples onto
the canonical components of that subset against the labels, and searches every
midpoint threshold on every component for the split with the largest Shannon
information gain. The ensemble's predictions are accumulated into a votes cube
(rows x cols x 17) whose per-pixel sum equals the tree count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from . import N_LCZ_LABELS
from .errors import NumericalError

_RIDGE_LADDER = (0.0, 1e-8, 1e-6, 1e-4, 1e-2)


@dataclass
class CCFParams:
    n_trees: int = 20
    min_leaf: int = 1
    lambda_features: int | None = None  # None -> ceil(sqrt(n_features))
    max_depth: int | None = None
    projection: str = "cca"  # "cca" or "axis" (axis-aligned baseline)
    seed: int = 0
    n_labels: int = N_LCZ_LABELS

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.projection not in ("cca", "axis"):
            raise ValueError(f"unknown projection mode {self.projection!r}")


class CCTNode:
    """Binary tree node; internal nodes carry an oblique split, leaves carry
    the class counts of the training samples that reached them."""

    __slots__ = ("feature_idx", "weights", "threshold", "left", "right",
                 "class_counts", "majority")

    def __init__(self):
        self.feature_idx = None
        self.weights = None
        self.threshold = None
        self.left = None
        self.right = None
        self.class_counts = None
        self.majority = None

    @property
    def is_leaf(self):
        return self.left is None


@dataclass
class CCFModel:
    trees: list
    params: CCFParams
    feature_names: list


@dataclass
class VotesCube:
    """Per-pixel ensemble votes over the 17 labels.

    Classified pixels sum to the tree count along the label axis until a
    fusion step reweights them; unclassified pixels stay all-zero with
    classified=False.
    """

    votes: np.ndarray  # (rows, cols, n_labels) float64
    classified: np.ndarray  # (rows, cols) bool

    @property
    def shape(self):
        return self.votes.shape[:2]

    def copy(self):
        return VotesCube(self.votes.copy(), self.classified.copy())


def _center(M):
    mean = M.mean(axis=0)
    return M - mean, mean


def cca_project(X, Y):
    """Canonical projection vectors of X (n, p) against one-hot Y (n, c).

    Returns (A, corrs): A has one unit-norm column per canonical component,
    up to min(p, c-1) of them; corrs are the canonical correlations in [0, 1],
    descending. Singular covariance is handled by an escalating ridge on both
    covariance blocks (base 1e-8), never an error.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, p = X.shape
    c = Y.shape[1]
    if n < 2 or p < 1 or c < 2:
        raise ValueError("CCA needs n >= 2 samples, p >= 1 features, c >= 2 classes")
    Xc, _ = _center(X)
    Yc, _ = _center(Y[:, : c - 1])  # one-hot is rank c-1 after centering
    Sxx = Xc.T @ Xc / (n - 1)
    Syy = Yc.T @ Yc / (n - 1)
    Sxy = Xc.T @ Yc / (n - 1)
    k = min(p, c - 1)

    last_exc = None
    for ridge in _RIDGE_LADDER:
        try:
            Lx = linalg.cholesky(Sxx + ridge * np.eye(p), lower=True)
            Ly = linalg.cholesky(Syy + ridge * np.eye(c - 1), lower=True)
            M = linalg.solve_triangular(Lx, Sxy, lower=True)
            M = linalg.solve_triangular(Ly, M.T, lower=True).T
            U, s, _ = linalg.svd(M, full_matrices=False)
            A = linalg.solve_triangular(Lx.T, U[:, :k], lower=False)
            break
        except linalg.LinAlgError as exc:
            last_exc = exc
    else:
        raise NumericalError(f"CCA failed even with maximal ridge: {last_exc}")

    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = 1.0
    A = A / norms
    # sign convention: largest-magnitude entry positive, for determinism
    signs = np.sign(A[np.abs(A).argmax(axis=0), np.arange(A.shape[1])])
    signs[signs == 0] = 1.0
    A = A * signs
    corrs = np.clip(s[:k], 0.0, 1.0)
    return A, corrs


def _entropy(counts, total):
    nz = counts[counts > 0]
    p = nz / total
    return float(-(p * np.log2(p)).sum())


def _best_split_on_component(z, y_idx, n_classes, min_leaf):
    """Best (gain, threshold) over midpoints of sorted projected values.

    Candidates where consecutive values tie or a child would fall under
    min_leaf are skipped; returns (-inf, nan) when no candidate exists.
    """
    n = len(z)
    order = np.argsort(z, kind="stable")
    zs = z[order]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]  # left child counts at cut i
    total = left[-1] + onehot[-1]
    right = total[None, :] - left
    nl = np.arange(1, n)
    nr = n - nl

    with np.errstate(divide="ignore", invalid="ignore"):
        pl = left / nl[:, None]
        pr = right / nr[:, None]
        hl = -np.nansum(np.where(pl > 0, pl * np.log2(pl), 0.0), axis=1)
        hr = -np.nansum(np.where(pr > 0, pr * np.log2(pr), 0.0), axis=1)
    h0 = _entropy(total, n)
    gains = h0 - (nl * hl + nr * hr) / n

    feasible = (zs[:-1] < zs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not feasible.any():
        return -np.inf, np.nan
    gains = np.where(feasible, gains, -np.inf)
    best = int(np.argmax(gains))
    return float(gains[best]), float((zs[best] + zs[best + 1]) / 2.0)


def _make_leaf(node, counts):
    node.class_counts = counts
    node.majority = int(np.argmax(counts)) + 1  # ties -> lowest label


def train_cct(X, y, params, rng, trace=None):
    """Grow one canonical correlation tree on X (n, p) with labels y in 1..17.

    Recursion stops on purity, fewer than 2*min_leaf samples, max_depth, or no
    positive information gain. When `trace` is a list, every internal split is
    appended as a dict for oracle cross-checking.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, p = X.shape
    lam = params.lambda_features or int(np.ceil(np.sqrt(p)))
    lam = min(max(lam, 1), p)

    root = CCTNode()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=params.n_labels + 1)[1:].astype(np.float64)
        present = np.flatnonzero(counts)
        if (
            len(present) <= 1
            or len(idx) < 2 * params.min_leaf
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            _make_leaf(node, counts)
            continue

        feats = rng.choice(p, size=lam, replace=False)
        Xs = X[np.ix_(idx, feats)]
        y_node = y[idx]
        class_map = {int(label) + 1: i for i, label in enumerate(present)}
        y_idx = np.array([class_map[int(v)] for v in y_node])
        n_classes = len(present)

        if params.projection == "cca":
            onehot = np.zeros((len(idx), n_classes))
            onehot[np.arange(len(idx)), y_idx] = 1.0
            A, _ = cca_project(Xs, onehot)
            Z = Xs @ A
        else:
            A = np.eye(lam)
            Z = Xs

        best_gain, best_thr, best_comp = -np.inf, np.nan, -1
        for comp in range(Z.shape[1]):
            gain, thr = _best_split_on_component(
                Z[:, comp], y_idx, n_classes, params.min_leaf
            )
            if gain > best_gain + 1e-15:
                best_gain, best_thr, best_comp = gain, thr, comp
        if best_gain <= 1e-12:
            _make_leaf(node, counts)
            continue

        w = A[:, best_comp].copy()
        z = Xs @ w
        go_left = z <= best_thr
        if trace is not None:
            trace.append(
                {
                    "depth": depth,
                    "sample_idx": idx.copy(),
                    "feature_idx": feats.copy(),
                    "components": (Xs @ A).copy(),
                    "chosen_component": best_comp,
                    "gain": best_gain,
                    "threshold": best_thr,
                }
            )
        node.feature_idx = feats
        node.weights = w
        node.threshold = best_thr
        node.left = CCTNode()
        node.right = CCTNode()
        stack.append((node.right, idx[~go_left], depth + 1))
        stack.append((node.left, idx[go_left], depth + 1))
    return root


def train_ccf(table, params=None, trace=None):
    """Train the forest on the labeled, finite rows of a feature table."""
    params = params or CCFParams()
    if table.labels is None:
        raise ValueError("feature table has no labels")
    labeled = table.labeled_subset()
    if len(labeled) == 0:
        raise ValueError("no labeled rows with finite features")
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng((params.seed, t))
        tree_trace = None if trace is None else []
        trees.append(train_cct(labeled.rows, labeled.labels, params, rng, tree_trace))
        if trace is not None:
            trace.append(tree_trace)
    return CCFModel(trees, params, list(table.feature_names))


def _route_tree(root, X):
    """Vectorized tree traversal; returns the per-row leaf majority label."""
    n = len(X)
    out = np.empty(n, dtype=np.int64)
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if node.is_leaf:
            out[idx] = node.majority
            continue
        z = X[np.ix_(idx, node.feature_idx)] @ node.weights
        go_left = z <= node.threshold
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))
    return out


def predict_matrix(model, X):
    """Per-row vote counts (n, n_labels); rows with non-finite features get
    all-zero votes."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    n_labels = model.params.n_labels
    votes = np.zeros((n, n_labels))
    ok = np.isfinite(X).all(axis=1)
    if ok.any():
        Xok = X[ok]
        acc = np.zeros((ok.sum(), n_labels))
        for tree in model.trees:
            labels = _route_tree(tree, Xok)
            acc[np.arange(len(Xok)), labels - 1] += 1.0
        votes[ok] = acc
    return votes


def predict_labels(model, X):
    """Per-row argmax label (ties -> lowest); 0 where the row is unclassified."""
    votes = predict_matrix(model, X)
    labels = np.argmax(votes, axis=1) + 1
    labels[votes.sum(axis=1) == 0] = 0
    return labels


def predict_votes(model, table, grid_shape):
    """Scatter per-row votes into a (rows, cols, n_labels) cube."""
    if list(table.feature_names) != list(model.feature_names):
        raise ValueError("feature names of the table do not match the model")
    rows, cols = grid_shape
    votes = np.zeros((rows, cols, model.params.n_labels))
    classified = np.zeros((rows, cols), dtype=bool)
    per_row = predict_matrix(model, table.rows)
    i = table.patch_coords[:, 0]
    j = table.patch_coords[:, 1]
    if (i < 0).any() or (i >= rows).any() or (j < 0).any() or (j >= cols).any():
        raise ValueError("patch coordinates fall outside the votes grid")
    votes[i, j] = per_row
    classified[i, j] = per_row.sum(axis=1) > 0
    return VotesCube(votes, classified)


def save_model(model, path):
    """Versioned flat text serialization: params, names, pre-order node list."""
    lines = [
        "lczfuse-ccf-model v1",
        f"n_trees={model.params.n_trees}",
        f"min_leaf={model.params.min_leaf}",
        f"lambda_features={model.params.lambda_features or ''}",
        f"max_depth={model.params.max_depth if model.params.max_depth is not None else ''}",
        f"projection={model.params.projection}",
        f"seed={model.params.seed}",
        f"n_labels={model.params.n_labels}",
        "feature_names=" + ",".join(model.feature_names),
    ]

    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t}")
        stack = [tree]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                lines.append("L " + ",".join(repr(float(v)) for v in node.class_counts))
            else:
                lines.append(
                    "N "
                    + ",".join(str(int(f)) for f in node.feature_idx)
                    + " "
                    + ",".join(repr(float(w)) for w in node.weights)
                    + " "
                    + repr(float(node.threshold))
                )
                stack.append(node.right)
                stack.append(node.left)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "lczfuse-ccf-model v1":
        raise ValueError(f"{path} is not a ccf model file")
    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tree "):
        key, val = lines[pos].split("=", 1)
        header[key] = val
        pos += 1
    params = CCFParams(
        n_trees=int(header["n_trees"]),
        min_leaf=int(header["min_leaf"]),
        lambda_features=int(header["lambda_features"]) if header["lambda_features"] else None,
        max_depth=int(header["max_depth"]) if header["max_depth"] else None,
        projection=header["projection"],
        seed=int(header["seed"]),
        n_labels=int(header["n_labels"]),
    )
    feature_names = header["feature_names"].split(",") if header["feature_names"] else []

    def parse_tree(pos):
        # pre-order: attach each parsed node to the pending (parent, side) slot
        root = CCTNode()
        pending = [root]
        while pending:
            node = pending.pop()
            line = lines[pos]
            pos += 1
            if line.startswith("L "):
                node.class_counts = np.array([float(v) for v in line[2:].split(",")])
                node.majority = int(np.argmax(node.class_counts)) + 1
            elif line.startswith("N "):
                fpart, wpart, tpart = line[2:].split(" ")
                node.feature_idx = np.array([int(v) for v in fpart.split(",")])
                node.weights = np.array([float(v) for v in wpart.split(",")])
                node.threshold = float(tpart)
                node.left = CCTNode()
                node.right = CCTNode()
                pending.append(node.right)
                pending.append(node.left)
            else:
                raise ValueError(f"{path}: unexpected node line {line!r}")
        return root, pos

    trees = []
    while pos < len(lines):
        if not lines[pos].startswith("tree "):
            raise ValueError(f"{path}: expected tree header at line {pos + 1}")
        root, pos = parse_tree(pos + 1)
        trees.append(root)
    if len(trees) != params.n_trees:
        raise ValueError(f"{path}: header claims {params.n_trees} trees, found {len(trees)}")
    return CCFModel(trees, params, feature_names)


def feature_importance(table, params=None, folds=5, seed=0):
    """Permutation importance through k-fold cross-validation.

    Per fold: train on the other folds, measure held-out overall accuracy,
    then re-measure with each feature column shuffled; the importance of a
    feature is its mean accuracy drop across folds (possibly negative).
    Returns (name, importance) pairs ranked descending, ties kept in feature
    order.
    """
    from .features import FeatureTable

    params = params or CCFParams()
    labeled = table.labeled_subset()
    n = len(labeled)
    if n < folds * 2:
        raise ValueError(f"need at least {folds * 2} labeled rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold_idx = np.array_split(perm, folds)
    n_feats = len(labeled.feature_names)
    drops = np.zeros((folds, n_feats))

    for f, test_idx in enumerate(fold_idx):
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        train_tab = FeatureTable(
            labeled.feature_names,
            labeled.rows[train_mask],
            labeled.patch_coords[train_mask],
            labeled.labels[train_mask],
        )
        model = train_ccf(train_tab, replace(params, seed=params.seed + f))
        X_test = labeled.rows[test_idx]
        y_test = labeled.labels[test_idx]
        base = float((predict_labels(model, X_test) == y_test).mean())
        shuffle_rng = np.random.default_rng((seed, f))
        for col in range(n_feats):
            shuffled = X_test.copy()
            shuffled[:, col] = shuffled[shuffle_rng.permutation(len(X_test)), col]
            acc = float((predict_labels(model, shuffled) == y_test).mean())
            drops[f, col] = base - acc

    importance = drops.mean(axis=0)
    order = np.argsort(-importance, kind="stable")
    return [(labeled.feature_names[i], float(importance[i])) for i in order]
