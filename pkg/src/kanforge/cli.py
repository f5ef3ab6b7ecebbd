"""Command-line interface: ``kanforge <verb> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MlpConfig, train_forest, train_mlp
from .checkpoint import load_kan, save_kan
from .dataset import (
    DEFAULT_NOISE,
    PumpDataset,
    format_csv,
    generate_synthetic,
    load_csv,
    mse,
    split,
    target_index,
)
from .errors import KanForgeError
from .pipeline import (
    PAPER_ARCHS,
    STAGE1,
    STAGE2,
    Arch,
    fit_stage,
    init_model,
    predict,
    prune_model,
    refine_model,
    run_pipeline,
    symbolify,
)
from .pruning import PruneConfig
from .svg import layer_svg, trace_svg
from .training import TrainTrace

log = logging.getLogger("kanforge")

PAPER_TABLE = {
    ("KAN", "pressure"): 12.186, ("KAN", "flow_rate"): 0.012,
    ("RandomForest", "pressure"): 1750.017, ("RandomForest", "flow_rate"): 0.040,
    ("MLP", "pressure"): 78.329, ("MLP", "flow_rate"): 0.002,
}
MODELS = ("KAN", "RandomForest", "MLP")
TARGETS = ("pressure", "flow_rate")


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("KANFORGE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"KANFORGE_SEED must be an integer, got {raw!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _target(text):
    try:
        target_index(text)
    except KanForgeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return "flow_rate" if text == "flow" else text


def _load_dataset(path) -> PumpDataset:
    if path is None:
        raise UsageError("no dataset given (use --data)")
    if not Path(path).is_file():
        raise UsageError(f"dataset file not found: {path}")
    return PumpDataset(load_csv(path))


def _train_rows(model, data_arg):
    meta = model.meta
    ds = _load_dataset(data_arg or meta.get("data"))
    sp = split(len(ds), meta.get("train_fraction", 0.9), meta.get("split_seed", 0))
    t = target_index(meta.get("target", "pressure"))
    tr = list(sp.train)
    return ds, sp, ds.X_norm[tr], ds.Y[tr, t]


def _load_ckpt(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_kan(path)


def _write(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _stage_report(model, ds, sp):
    t = target_index(model.meta["target"])
    te = list(sp.test)
    return {"test_mse": mse(predict(model, ds.X_norm[te]), ds.Y[te, t])}


# ------------------------------------------------------------------ verbs


def cmd_gen(args):
    samples = generate_synthetic(args.n, args.noise, args.seed)
    text = format_csv(samples, comment=f"kanforge synthetic dataset n={args.n} seed={args.seed} "
                                       f"noise={args.noise[0]!r},{args.noise[1]!r}")
    _write(args.out, text)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_train(args):
    ds = _load_dataset(args.data)
    base = PAPER_ARCHS[args.target]
    arch = Arch(tuple(args.width or base.widths), args.grid or base.grid_G, args.k or base.degree_k, args.seed)
    if arch.widths[0] != 5 or arch.widths[-1] != 1:
        raise UsageError(f"--width must start with 5 and end with 1, got {list(arch.widths)}")
    sp = split(len(ds), args.train_fraction, args.split_seed)
    tr = list(sp.train)
    t = target_index(args.target)
    cfg = replace(STAGE1, lambda_sparsity=args.lam, lambda_entropy=args.lambda_entropy,
                  max_iters=args.max_iters, seed=args.seed)
    model = init_model(arch, ds.Y[tr, t])
    model.meta = {
        "target": args.target, "data": str(args.data), "split_seed": args.split_seed,
        "train_fraction": args.train_fraction, "stage": "sparse",
        "arch": {"widths": list(arch.widths), "grid": arch.grid_G, "k": arch.degree_k, "seed": arch.seed},
    }
    model, trace = fit_stage(model, ds.X_norm[tr], ds.Y[tr, t], cfg)
    model.meta["report"] = _stage_report(model, ds, sp)
    save_kan(model, args.out)
    trace.to_csv(args.trace or _sibling(args.out, "_trace.csv"))
    print(f"trained {list(arch.widths)}: test MSE {model.meta['report']['test_mse']:.6g} -> {args.out}")


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def cmd_prune(args):
    model = _load_ckpt(args.ckpt)
    ds, sp, Xtr, _ = _train_rows(model, args.data)
    pruned, _, report = prune_model(model, Xtr, PruneConfig(args.theta))
    pruned.meta = {**model.meta, "stage": "pruned"}
    pruned.meta["report"] = _stage_report(pruned, ds, sp)
    save_kan(pruned, args.out)
    _write(args.report or _sibling(args.out, "_prune.json"),
           json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"pruned {report.widths_before} -> {report.widths_after} (theta={args.theta:g}) -> {args.out}")


def cmd_refine(args):
    model = _load_ckpt(args.ckpt)
    ds, sp, Xtr, ytr = _train_rows(model, args.data)
    new_grid = args.grid if args.grid is not None else 2 * model.grid_G
    refined, trace = refine_model(model, Xtr, ytr, replace(STAGE2, max_iters=args.max_iters), new_grid)
    refined.meta = {**model.meta, "stage": "refined"}
    refined.meta["report"] = _stage_report(refined, ds, sp)
    save_kan(refined, args.out)
    trace.to_csv(args.trace or _sibling(args.out, "_trace.csv"))
    print(f"refined on grid {refined.grid_G}: test MSE {refined.meta['report']['test_mse']:.6g} -> {args.out}")


def cmd_symbolify(args):
    model = _load_ckpt(args.ckpt)
    _, _, Xtr, _ = _train_rows(model, args.data)
    formula = symbolify(model, Xtr)
    prefix = Path(args.out)
    infix = formula.to_infix()
    _write(prefix.with_suffix(".txt"), infix + "\n")
    _write(prefix.with_suffix(".json"), formula.to_json() + "\n")
    rows = ["layer,out,in,primitive,r2"]
    for l, layer in enumerate(formula.wraps):
        for j, row in enumerate(layer):
            for i, w in enumerate(row):
                name = "const" if w.is_constant else w.primitive.name
                rows.append(f"{l},{j},{i},{name},{formula.edge_r2[l][j][i]!r}")
    _write(prefix.with_name(prefix.name + "_r2.csv"), "\n".join(rows) + "\n")
    flag = " (low fidelity)" if formula.low_fidelity else ""
    print(f"y = {infix}")
    print(f"fidelity MSE vs network: {formula.fidelity_mse:.6g}{flag}")


def compare(ds: PumpDataset, seed: int = 0, mlp_cfg: MlpConfig = MlpConfig(), train_fraction=0.9):
    """Train all three model kinds on both targets over one shared split."""
    sp = split(len(ds), train_fraction, seed)
    tr, te = list(sp.train), list(sp.test)
    X01, Xraw = ds.X_norm, ds.X
    rows = []
    results = {}
    for target in TARGETS:
        t = target_index(target)
        y = ds.Y[:, t]
        kan = run_pipeline(ds, target, replace(PAPER_ARCHS[target], seed=seed), split_seed=seed,
                           train_fraction=train_fraction, symbolic=False)
        assert kan.split == sp
        results[("KAN", target)] = kan.reports["refined"]["test_mse"]
        forest = train_forest(Xraw[tr], y[tr], seed=seed)
        results[("RandomForest", target)] = mse(forest.predict(Xraw[te]), y[te])
        mlp = train_mlp(X01[tr], y[tr], seed=seed, cfg=mlp_cfg)
        results[("MLP", target)] = mse(mlp.predict(X01[te]), y[te])
    for name in MODELS:
        for target in TARGETS:
            log.info("model=%s target=%s test_rows=%s", name, target, list(sp.test))
            rows.append({"model": name, "target": target, "test_mse": results[(name, target)],
                         "paper_mse": PAPER_TABLE[(name, target)]})
    return rows, sp


def format_table(rows) -> str:
    lines = [f"{'model':<14}{'target':<11}{'test MSE':>14}{'paper MSE':>12}"]
    for r in rows:
        lines.append(f"{r['model']:<14}{r['target']:<11}{r['test_mse']:>14.6g}{r['paper_mse']:>12g}")
    return "\n".join(lines)


def cmd_compare(args):
    ds = _load_dataset(args.data)
    rows, sp = compare(ds, args.seed, replace(MlpConfig(), epochs=args.mlp_epochs))
    print(format_table(rows))
    report = {
        "metadata": {"dataset": str(args.data), "seed": args.seed, "n_samples": len(ds),
                     "train_indices": list(sp.train), "test_indices": list(sp.test),
                     "version": __version__},
        "rows": rows,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if args.out:
        _write(args.out, json.dumps(report, indent=1, sort_keys=True) + "\n")


def cmd_plot_splines(args):
    model = _load_ckpt(args.ckpt)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for l in range(model.depth):
            path = out / f"layer{l}.svg"
            path.write_text(layer_svg(model, l), encoding="utf-8")
            print(path)
    except OSError as exc:
        raise KanForgeError(f"cannot write plots to {out}: {exc}") from exc


def cmd_plot_trace(args):
    if not Path(args.trace).is_file():
        raise UsageError(f"trace file not found: {args.trace}")
    trace = TrainTrace.from_csv(args.trace)
    try:
        _write(args.out, trace_svg(trace.records, Path(args.trace).stem))
    except OSError as exc:
        raise KanForgeError(f"cannot write {args.out}: {exc}") from exc
    print(args.out)


# ------------------------------------------------------------------ parser


def build_parser(seed: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kanforge", description="KAN surrogate models for EHD pumps")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--n", type=int, default=98)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--noise", type=_float_pair, default=DEFAULT_NOISE, help="pressure,flow sigmas")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="sparse-regularized LBFGS training (stage 1)")
    t.add_argument("--data", required=True)
    t.add_argument("--target", type=_target, required=True)
    t.add_argument("--width", type=_int_list)
    t.add_argument("--grid", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--seed", type=int, default=seed)
    t.add_argument("--split-seed", type=int, default=seed)
    t.add_argument("--train-fraction", type=float, default=0.9)
    t.add_argument("--lambda", dest="lam", type=float, default=STAGE1.lambda_sparsity)
    t.add_argument("--lambda-entropy", type=float, default=STAGE1.lambda_entropy)
    t.add_argument("--max-iters", type=int, default=STAGE1.max_iters)
    t.add_argument("--out", default="kan_sparse.json")
    t.add_argument("--trace")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("prune", help="remove weak hidden nodes (stage 2)")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data")
    pr.add_argument("--theta", type=float, default=PruneConfig().theta)
    pr.add_argument("--out", default="kan_pruned.json")
    pr.add_argument("--report")
    pr.set_defaults(func=cmd_prune)

    r = sub.add_parser("refine", help="grid extension + unregularized training (stage 3)")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data")
    r.add_argument("--grid", type=int, help="refinement grid (default: twice the current grid)")
    r.add_argument("--max-iters", type=int, default=STAGE2.max_iters)
    r.add_argument("--out", default="kan_refined.json")
    r.add_argument("--trace")
    r.set_defaults(func=cmd_refine)

    s = sub.add_parser("symbolify", help="snap edges to closed-form primitives")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data")
    s.add_argument("--out", default="formula", help="output prefix for .txt/.json/_r2.csv")
    s.set_defaults(func=cmd_symbolify)

    c = sub.add_parser("compare", help="KAN vs random forest vs MLP on both targets")
    c.add_argument("--data", required=True)
    c.add_argument("--seed", type=int, default=seed)
    c.add_argument("--mlp-epochs", type=int, default=MlpConfig().epochs)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    ps = sub.add_parser("plot-splines", help="SVG of every edge activation and the basis")
    ps.add_argument("--ckpt", required=True)
    ps.add_argument("--out", default="plots")
    ps.set_defaults(func=cmd_plot_splines)

    pt = sub.add_parser("plot-trace", help="SVG line chart of a training trace CSV")
    pt.add_argument("--trace", required=True)
    pt.add_argument("--out", default="trace.svg")
    pt.set_defaults(func=cmd_plot_trace)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser(default_seed())
    except UsageError as exc:
        print(f"kanforge: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"kanforge: error: {exc}", file=sys.stderr)
        return 2
    except (KanForgeError, OSError) as exc:
        print(f"kanforge: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
