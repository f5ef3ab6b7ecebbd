"""Node-level pruning of hidden KAN nodes by activation magnitude."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .network import KanLayer, KanModel, activation_stats


@dataclass(frozen=True)
class PruneConfig:
    theta: float = 0.01

    def __post_init__(self):
        if not self.theta > 0:
            raise InvalidArgumentError(f"theta must be > 0, got {self.theta}")


@dataclass
class PruneReport:
    theta: float
    widths_before: list
    widths_after: list
    # one entry per hidden layer: lists of incoming / outgoing scores and kept flags
    scores: list = field(default_factory=list)
    kept: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "widths_before": list(self.widths_before),
            "widths_after": list(self.widths_after),
            "hidden_layers": [
                {
                    "incoming_score": [float(a) for a, _ in sc],
                    "outgoing_score": [float(b) for _, b in sc],
                    "kept": [bool(k) for k in kp],
                }
                for sc, kp in zip(self.scores, self.kept)
            ],
        }


def node_scores(model: KanModel, X) -> list:
    """``(incoming, outgoing)`` scores for each node of each hidden layer.

    Returns a list over hidden layers of ``(width, 2)`` arrays; empty for a
    model without hidden layers.
    """
    if model.depth < 2:
        return []
    stats = activation_stats(model, X)
    out = []
    for l in range(model.depth - 1):
        incoming = stats[l].max(axis=1)  # over inputs of layer l, per output node
        outgoing = stats[l + 1].max(axis=0)  # over outputs of layer l+1, per input node
        out.append(np.column_stack([incoming, outgoing]))
    return out


def _keep_masks(scores, theta):
    masks = []
    for sc in scores:
        s = sc.min(axis=1)
        keep = s >= theta
        if not keep.any():
            keep[int(np.argmax(s))] = True
        masks.append(keep)
    return masks


def prune(model: KanModel, X, cfg: PruneConfig = PruneConfig()):
    """Drop hidden nodes whose ``min(incoming, outgoing)`` score is below theta.

    Edges touching a dropped node are discarded. Returns ``(model', masks)``
    with one boolean keep-mask per hidden layer. If every node of a layer
    falls below theta the best-scoring one is kept.
    """
    pruned, masks, _ = prune_with_report(model, X, cfg)
    return pruned, masks


def prune_with_report(model: KanModel, X, cfg: PruneConfig = PruneConfig()):
    scores = node_scores(model, X)
    masks = _keep_masks(scores, cfg.theta)
    out = model.copy()
    keep_in = np.ones(model.widths[0], bool)
    new_layers = []
    for l, layer in enumerate(model.layers):
        keep_out = masks[l] if l < len(masks) else np.ones(layer.out_dim, bool)
        new_layers.append(KanLayer(
            [g for g, k in zip(layer.grids, keep_in) if k],
            layer.coeffs[keep_out][:, keep_in].copy(),
            layer.w_base[keep_out][:, keep_in].copy(),
            layer.w_spline[keep_out][:, keep_in].copy(),
        ))
        keep_in = keep_out
    out.layers = new_layers
    out.widths = [model.widths[0]] + [int(m.sum()) for m in masks] + [model.widths[-1]]
    report = PruneReport(cfg.theta, list(model.widths), list(out.widths), scores, masks)
    return out, masks, report
