"""Loss, exact gradients and LBFGS training for KAN models."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import lbfgs
from .errors import InvalidArgumentError, ShapeError, TrainingError
from .network import (
    KanModel,
    flatten_params,
    forward,
    silu_prime,
    unflatten_params,
    update_grid_from_samples,
)
from .splines import basis_derivative

log = logging.getLogger(__name__)

ENTROPY_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 200
    lbfgs_history: int = 10
    grad_tol: float = 1e-7
    lambda_sparsity: float = 0.01
    lambda_entropy: float = 0.01
    seed: int = 0
    # re-fit hidden-layer spline domains to observed ranges every this many
    # iterations (0 = never), only before ``stop_grid_update``
    grid_update_every: int = 0
    stop_grid_update: int = 50
    # fraction of the observed range added on each side at a grid update
    grid_margin: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1 or self.lbfgs_history < 1:
            raise InvalidArgumentError("max_iters and lbfgs_history must be >= 1")
        if self.grad_tol <= 0:
            raise InvalidArgumentError("grad_tol must be > 0")
        if self.lambda_sparsity < 0 or self.lambda_entropy < 0:
            raise InvalidArgumentError("regularization weights must be >= 0")


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)  # (iteration, train_loss, reg, grad_norm)
    reason: str = ""

    def append(self, iteration, train_loss, reg, grad_norm):
        values = (train_loss, reg, grad_norm)
        if not all(np.isfinite(v) for v in values):
            raise TrainingError(f"non-finite trace values at iteration {iteration}")
        if self.records and iteration <= self.records[-1][0]:
            raise InvalidArgumentError("trace iterations must be strictly increasing")
        self.records.append((int(iteration), float(train_loss), float(reg), float(grad_norm)))

    def extend(self, other: "TrainTrace"):
        offset = self.records[-1][0] if self.records else 0
        for it, loss_, reg, gn in other.records:
            self.append(it + offset, loss_, reg, gn)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "train_loss", "reg", "grad_norm"])
            for it, l_, r, gn in self.records:
                w.writerow([it, repr(l_), repr(r), repr(gn)])

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        tr = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                tr.append(int(row["iteration"]), float(row["train_loss"]),
                          float(row["reg"]), float(row["grad_norm"]))
        return tr


def _targets(model: KanModel, X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.shape != (X.shape[0], model.widths[-1]):
        raise ShapeError(f"X {X.shape} and Y {Y.shape} do not match widths {model.widths}")
    return X, Y


def _layer_entropy(A):
    m = A.size
    T = A.sum() + m * ENTROPY_EPS
    q = (A + ENTROPY_EPS) / T
    H = -float(np.sum(q * np.log(q)))
    dH = -(np.log(q) + H) / T
    return H, dH


def _loss_and_grad(model: KanModel, X, Y, cfg: TrainConfig, want_grad: bool):
    out, caches = forward(model, X, capture=True)
    n = X.shape[0]
    err = out - Y
    data_mse = float(np.mean(err ** 2))
    reg = 0.0
    dreg_dphi = []
    for c in caches:
        A = np.abs(c.phi).mean(axis=0)
        H, dH = _layer_entropy(A)
        reg += cfg.lambda_sparsity * float(A.sum()) + cfg.lambda_entropy * H
        if want_grad:
            dA = cfg.lambda_sparsity + cfg.lambda_entropy * dH
            dreg_dphi.append(dA[None] * np.sign(c.phi) / n)
    total = data_mse + reg
    if not want_grad:
        return total, data_mse, reg, None

    g_out = 2.0 * err / err.size * model.output_scale  # (n, out)
    grads = []
    for layer, c, dr in zip(reversed(model.layers), reversed(caches), reversed(dreg_dphi)):
        gphi = g_out[:, :, None] + dr  # (n, out, in)
        d_ws = np.einsum("noi,noi->oi", gphi, c.spline)
        d_wb = np.einsum("noi,ni->oi", gphi, c.base)
        d_coef = np.einsum("noi,nib->oib", gphi * layer.w_spline[None], c.B)
        grads.append(np.concatenate([d_coef, d_wb[..., None], d_ws[..., None]], axis=-1).ravel())
        dB = np.stack([basis_derivative(g, c.x[:, i]) for i, g in enumerate(layer.grids)], axis=1)
        dspl = np.einsum("nib,oib->noi", dB, layer.coeffs)
        dphi_dx = layer.w_base[None] * silu_prime(c.x)[:, None, :] + layer.w_spline[None] * dspl
        g_out = np.einsum("noi,noi->ni", gphi, dphi_dx)
    return total, data_mse, reg, np.concatenate(grads[::-1])


def loss(model: KanModel, X, Y, cfg: TrainConfig):
    """Return ``(total, data_mse, reg)`` on normalized inputs ``X``."""
    X, Y = _targets(model, X, Y)
    total, mse, reg, _ = _loss_and_grad(model, X, Y, cfg, want_grad=False)
    return total, mse, reg


def grad(model: KanModel, X, Y, cfg: TrainConfig) -> np.ndarray:
    """Gradient of the total loss in :func:`flatten_params` layout."""
    X, Y = _targets(model, X, Y)
    return _loss_and_grad(model, X, Y, cfg, want_grad=True)[3]


def lbfgs_minimize(model: KanModel, X, Y, cfg: TrainConfig, trainable=None):
    """Train ``model`` in place of a copy; returns ``(model', TrainTrace)``.

    ``trainable`` is an optional boolean mask over the flattened parameters;
    masked-out entries stay fixed.
    """
    X, Y = _targets(model, X, Y)
    if cfg.grid_update_every > 0:
        return _train_with_grid_updates(model, X, Y, cfg, trainable)
    v0 = flatten_params(model)
    mask = np.ones(v0.shape, bool) if trainable is None else np.asarray(trainable, bool)
    if mask.shape != v0.shape:
        raise ShapeError("trainable mask must match the parameter vector")
    last = {}

    def fun(z):
        v = v0.copy()
        v[mask] = z
        m = unflatten_params(model, v)
        total, mse, reg, g = _loss_and_grad(m, X, Y, cfg, want_grad=True)
        last["z"], last["reg"] = z, reg
        return total, g[mask]

    trace = TrainTrace()

    def record(it, z, f, g):
        if not np.array_equal(last.get("z"), z):
            fun(z)
        trace.append(it, f, last["reg"], float(np.max(np.abs(g))) if g.size else 0.0)

    try:
        res = lbfgs.minimize(fun, v0[mask], history=cfg.lbfgs_history, max_iters=cfg.max_iters,
                             grad_tol=cfg.grad_tol, callback=record)
    except TrainingError as exc:
        raise TrainingError(f"training aborted: {exc}") from exc
    trace.reason = res.reason
    v = v0.copy()
    v[mask] = res.x
    log.debug("lbfgs stopped after %d iterations (%s), loss %.6g", res.iterations, res.reason, res.f)
    return unflatten_params(model, v), trace


def _train_with_grid_updates(model, X, Y, cfg, trainable):
    # each grid update changes the parameterization, so LBFGS restarts
    bounds = list(range(0, min(cfg.stop_grid_update, cfg.max_iters), cfg.grid_update_every))
    chunks = [b - a for a, b in zip(bounds, bounds[1:] + [cfg.max_iters])]
    trace = TrainTrace()
    m = model
    for steps in chunks:
        m = update_grid_from_samples(m, X, margin=cfg.grid_margin)
        m, tr = lbfgs_minimize(m, X, Y, replace(cfg, grid_update_every=0, max_iters=steps), trainable)
        trace.extend(tr)
        trace.reason = tr.reason
    return m, trace
