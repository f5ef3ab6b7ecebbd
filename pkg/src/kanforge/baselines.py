"""MLP and random-forest regressors used as comparison baselines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ShapeError, TrainingError

# ---------------------------------------------------------------- MLP


@dataclass
class MlpModel:
    """tanh hidden layers, identity output; ``predict = shift + scale * net``."""

    sizes: list
    weights: list  # (fan_in, fan_out) per layer
    biases: list
    output_shift: float = 0.0
    output_scale: float = 1.0

    def __post_init__(self):
        for W, b, n_in, n_out in zip(self.weights, self.biases, self.sizes[:-1], self.sizes[1:]):
            if W.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(f"layer shapes {W.shape}, {b.shape} do not match sizes {self.sizes}")

    @classmethod
    def init(cls, sizes, seed: int = 0) -> "MlpModel":
        """Glorot-uniform hidden weights; the output layer starts at zero so the
        untrained model is the constant ``output_shift`` predictor."""
        rng = np.random.Generator(np.random.Philox(seed))
        Ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (n_in + n_out))
            Ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        Ws[-1][:] = 0.0
        return cls(list(sizes), Ws, bs)

    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def with_flat(self, v) -> "MlpModel":
        v = np.asarray(v, dtype=float)
        Ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(v[pos:pos + W.size].reshape(W.shape)); pos += W.size
            bs.append(v[pos:pos + b.size].copy()); pos += b.size
        if pos != v.size:
            raise ShapeError(f"expected {pos} parameters, got {v.size}")
        return MlpModel(self.sizes, Ws, bs, self.output_shift, self.output_scale)

    def net(self, X) -> np.ndarray:
        h = np.asarray(X, dtype=float)
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if l < last:
                h = np.tanh(h)
        return h

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected {self.sizes[0]} features, got {X.shape[1]}")
        return self.output_shift + self.output_scale * self.net(X)[:, 0]

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "sizes": self.sizes,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "output_shift": self.output_shift,
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        return cls(d["sizes"], [np.asarray(W, dtype=float) for W in d["weights"]],
                   [np.asarray(b, dtype=float) for b in d["biases"]], d["output_shift"], d["output_scale"])


def mlp_loss_grad(model: MlpModel, X, y):
    """MSE of the raw network output against ``y`` and its gradient (flat layout)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    err = acts[-1] - y
    loss = float(np.mean(err ** 2))
    g = 2.0 * err / err.size
    grads = []
    for l in range(last, -1, -1):
        grads.append((acts[l].T @ g, g.sum(axis=0)))
        if l > 0:
            g = (g @ model.weights[l].T) * (1.0 - acts[l] ** 2)
    flat = np.concatenate([p.ravel() for pair in reversed(grads) for p in pair])
    return loss, flat


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple = (64, 64, 64)
    epochs: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def train_mlp(X, y, seed: int = 0, cfg: MlpConfig = MlpConfig()) -> MlpModel:
    """Full-batch Adam on standardized targets, keeping the best-on-train weights.

    ``X`` holds normalized features; predictions come back in ``y``'s units.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ShapeError("X and y row counts differ")
    shift = float(y.mean())
    scale = float(y.std()) or 1.0
    z = (y - shift) / scale
    model = MlpModel.init([X.shape[1], *cfg.hidden, 1], seed)
    model.output_shift, model.output_scale = shift, scale
    theta = model.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best, best_loss = theta.copy(), np.inf
    for t in range(1, cfg.epochs + 1):
        loss, g = mlp_loss_grad(model.with_flat(theta), X, z)
        if not np.isfinite(loss):
            raise TrainingError(f"MLP loss became non-finite at epoch {t}")
        if loss < best_loss:
            best, best_loss = theta.copy(), loss
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        theta = theta - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    loss, _ = mlp_loss_grad(model.with_flat(theta), X, z)
    if loss < best_loss:
        best = theta
    return model.with_flat(best)


# ---------------------------------------------------------- random forest


@dataclass
class RegressionTree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def _add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}


def best_split(X, y):
    """Best ``(feature, threshold, sse_reduction)`` over midpoints of sorted unique values.

    Returns ``None`` when no split reduces the squared error.
    """
    n, p = X.shape
    total = float(np.sum((y - y.mean()) ** 2))
    best = None
    for f in range(p):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        sl, sl2 = cs[:-1], cs2[:-1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        nr = n - nl
        sse = (sl2 - sl * sl / nl) + (sr2 - sr * sr / nr)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        sse = np.where(valid, sse, np.inf)
        i = int(np.argmin(sse))
        gain = total - float(sse[i])
        if gain > 1e-12 * max(total, 1e-300) and (best is None or gain > best[2]):
            best = (f, 0.5 * (xs[i] + xs[i + 1]), gain)
    return best


def build_tree(X, y, max_depth: int = 10) -> RegressionTree:
    tree = RegressionTree()

    def grow(idx, depth):
        node = tree._add(y[idx].mean())
        if depth >= max_depth or len(idx) < 2:
            return node
        split = best_split(X[idx], y[idx])
        if split is None:
            return node
        f, thr, _ = split
        mask = X[idx, f] <= thr
        tree.feature[node], tree.threshold[node] = int(f), float(thr)
        tree.left[node] = grow(idx[mask], depth + 1)
        tree.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


@dataclass
class ForestModel:
    trees: list
    max_depth: int
    n_features: int

    def predict(self, X) -> np.ndarray:
        """Arithmetic mean of the per-tree predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"kind": "forest", "max_depth": self.max_depth, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "ForestModel":
        trees = [RegressionTree(**{k: list(v) for k, v in t.items()}) for t in d["trees"]]
        return cls(trees, d["max_depth"], d["n_features"])


def train_forest(X, y, seed: int = 0, n_trees: int = 100, max_depth: int = 10,
                 bootstrap: bool = True) -> ForestModel:
    """Bagged variance-reduction regression trees; tree ``i`` uses seed ``seed + i``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise InvalidArgumentError("random forest needs at least 2 samples")
    if X.shape[0] != len(y):
        raise ShapeError("X and y row counts differ")
    trees = []
    for i in range(n_trees):
        if bootstrap:
            rng = np.random.Generator(np.random.Philox(seed + i))
            idx = rng.integers(0, len(y), len(y))
        else:
            idx = np.arange(len(y))
        trees.append(build_tree(X[idx], y[idx], max_depth))
    return ForestModel(trees, max_depth, X.shape[1])
