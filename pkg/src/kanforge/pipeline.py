"""Sparse training, pruning, refinement and symbolic extraction end to end."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import PumpDataset, SplitIndices, mse, split, target_index
from .errors import InvalidArgumentError
from .network import KanModel, extend_model_grid, forward, new_kan
from .pruning import PruneConfig, PruneReport, prune_with_report
from .symbolic import SymbolicFormula, extract_formula
from .training import TrainConfig, TrainTrace, lbfgs_minimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Arch:
    widths: tuple
    grid_G: int
    degree_k: int
    seed: int = 0
    # grid used for the refinement stage; None doubles grid_G
    refine_grid: int | None = None

    @property
    def refine_G(self) -> int:
        return self.refine_grid if self.refine_grid is not None else 2 * self.grid_G


PAPER_ARCHS = {
    "pressure": Arch((5, 2, 1), grid_G=2, degree_k=3, seed=0),
    "flow_rate": Arch((5, 6, 1), grid_G=4, degree_k=4, seed=0),
}
PAPER_ARCHS["flow"] = PAPER_ARCHS["flow_rate"]

STAGE1 = TrainConfig(grid_update_every=10)
STAGE2 = TrainConfig(max_iters=1000, lambda_sparsity=0.0, lambda_entropy=0.0,
                     grid_update_every=100, stop_grid_update=10 ** 9)
FEATURE_LABELS = ["x1", "x2", "x3", "x4", "x5"]


def default_arch(target: str) -> Arch:
    target_index(target)
    return PAPER_ARCHS[target]


def init_model(arch: Arch, y_train) -> KanModel:
    """Fresh KAN taking [0, 1]-normalized features, predicting in target units."""
    model = new_kan(arch.widths, arch.grid_G, arch.degree_k, arch.seed)
    model.input_lo = np.zeros(model.widths[0])
    model.input_hi = np.ones(model.widths[0])
    y_train = np.asarray(y_train, dtype=float)
    model.output_shift = float(y_train.mean())
    model.output_scale = float(y_train.std()) or 1.0
    return model


def fit_stage(model: KanModel, X01, y, cfg: TrainConfig):
    """Train on standardized targets using the model's own output affine.

    ``X01`` are [0, 1]-normalized features; ``y`` is in target units. The
    regularization weights therefore act on a unit-variance problem.
    """
    Xn = model.normalize_inputs(X01)
    z = (np.asarray(y, dtype=float) - model.output_shift) / model.output_scale
    work = model.copy()
    work.output_shift, work.output_scale = 0.0, 1.0
    trained, trace = lbfgs_minimize(work, Xn, z, cfg)
    trained.output_shift, trained.output_scale = model.output_shift, model.output_scale
    return trained, trace


def prune_model(model: KanModel, X01, cfg: PruneConfig):
    return prune_with_report(model, model.normalize_inputs(X01), cfg)


def refine_model(model: KanModel, X01, y, cfg: TrainConfig = STAGE2, new_grid: int | None = None):
    """Optional grid extension followed by unregularized training."""
    if new_grid is not None and new_grid > model.grid_G:
        model = extend_model_grid(model, new_grid)
    cfg = replace(cfg, lambda_sparsity=0.0, lambda_entropy=0.0)
    return fit_stage(model, X01, y, cfg)


def symbolify(model: KanModel, X01) -> SymbolicFormula:
    return extract_formula(model, model.normalize_inputs(X01), labels=FEATURE_LABELS[: model.widths[0]])


def predict(model: KanModel, X01) -> np.ndarray:
    return model.predict(X01)[:, 0]


@dataclass
class PipelineResult:
    model: KanModel
    split: SplitIndices
    traces: dict
    reports: dict
    prune_report: PruneReport
    formula: SymbolicFormula | None = None
    stage_models: dict = field(default_factory=dict)


def run_pipeline(dataset: PumpDataset, target: str, arch: Arch | None = None,
                 cfg_stage1: TrainConfig = STAGE1, prune_cfg: PruneConfig = PruneConfig(),
                 cfg_stage2: TrainConfig = STAGE2, split_seed: int = 0,
                 train_fraction: float = 0.9, symbolic: bool = True) -> PipelineResult:
    """Sparse train -> prune -> refine (-> symbolic) on one target.

    ``reports`` maps each stage to its train and held-out MSE in target units.
    """
    t = target_index(target)
    arch = arch or default_arch(target)
    if arch.widths[0] != 5 or arch.widths[-1] != 1:
        raise InvalidArgumentError(f"pump models need widths [5, ..., 1], got {list(arch.widths)}")
    sp = split(len(dataset), train_fraction, split_seed)
    tr, te = list(sp.train), list(sp.test)
    X01 = dataset.X_norm
    y = dataset.Y[:, t]
    Xtr, ytr, Xte, yte = X01[tr], y[tr], X01[te], y[te]

    def scores(m):
        return {"train_mse": mse(predict(m, Xtr), ytr), "test_mse": mse(predict(m, Xte), yte)}

    model = init_model(arch, ytr)
    m1, trace1 = fit_stage(model, Xtr, ytr, cfg_stage1)
    m2, _, prune_report = prune_model(m1, Xtr, prune_cfg)
    m3, trace2 = refine_model(m2, Xtr, ytr, cfg_stage2, arch.refine_G)
    reports = {"sparse": scores(m1), "pruned": scores(m2), "refined": scores(m3)}
    reports["test_variance"] = float(np.var(yte))
    formula = None
    if symbolic:
        formula = symbolify(m3, Xtr)
        reports["symbolic"] = {
            "train_mse": mse(formula(Xtr)[:, 0], ytr),
            "test_mse": mse(formula(Xte)[:, 0], yte),
            "fidelity_mse": formula.fidelity_mse,
        }
    log.info("%s pipeline: widths %s -> %s, test MSE %.6g", target, list(arch.widths),
             m2.widths, reports["refined"]["test_mse"])
    return PipelineResult(m3, sp, {"stage1": trace1, "stage2": trace2}, reports, prune_report,
                          formula, {"sparse": m1, "pruned": m2})
