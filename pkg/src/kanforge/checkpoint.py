"""JSON checkpoints for KAN and baseline models."""
from __future__ import annotations

import json

import numpy as np

from .baselines import ForestModel, MlpModel
from .errors import CheckpointError
from .network import KanLayer, KanModel
from .splines import SplineGrid

SCHEMA_VERSION = 1


def _dump(doc) -> str:
    # repr-based float output round-trips every double exactly
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def kan_to_dict(model: KanModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "kan",
        "widths": list(model.widths),
        "grid_G": model.grid_G,
        "degree_k": model.degree_k,
        "seed": model.seed,
        "normalizer": {
            "input_lo": model.input_lo.tolist(),
            "input_hi": model.input_hi.tolist(),
            "output_shift": model.output_shift,
            "output_scale": model.output_scale,
        },
        "meta": model.meta,
        "layers": [
            {
                "grids": [{"domain_lo": g.domain_lo, "domain_hi": g.domain_hi} for g in layer.grids],
                "edges": [
                    {
                        "coeffs": layer.coeffs[j, i].tolist(),
                        "w_base": float(layer.w_base[j, i]),
                        "w_spline": float(layer.w_spline[j, i]),
                    }
                    for j in range(layer.out_dim)
                    for i in range(layer.in_dim)
                ],
            }
            for layer in model.layers
        ],
    }


def kan_from_dict(doc: dict) -> KanModel:
    _check_envelope(doc, "kan")
    try:
        widths = [int(w) for w in doc["widths"]]
        G, k = int(doc["grid_G"]), int(doc["degree_k"])
        layers = []
        for n_in, n_out, ld in zip(widths[:-1], widths[1:], doc["layers"]):
            grids = [SplineGrid(G, k, g["domain_lo"], g["domain_hi"]) for g in ld["grids"]]
            edges = ld["edges"]
            if len(grids) != n_in or len(edges) != n_in * n_out:
                raise CheckpointError("layer shape does not match widths")
            coeffs = np.array([e["coeffs"] for e in edges], dtype=float).reshape(n_out, n_in, G + k)
            wb = np.array([e["w_base"] for e in edges], dtype=float).reshape(n_out, n_in)
            ws = np.array([e["w_spline"] for e in edges], dtype=float).reshape(n_out, n_in)
            layers.append(KanLayer(grids, coeffs, wb, ws))
        if len(layers) != len(widths) - 1:
            raise CheckpointError("layer count does not match widths")
        norm = doc["normalizer"]
        return KanModel(
            widths, G, k, int(doc["seed"]), layers,
            np.asarray(norm["input_lo"], dtype=float), np.asarray(norm["input_hi"], dtype=float),
            float(norm["output_shift"]), float(norm["output_scale"]), dict(doc.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed KAN checkpoint: {exc}") from exc


def _check_envelope(doc, kind):
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema_version {doc.get('schema_version') if isinstance(doc, dict) else None!r}"
        )
    if doc.get("kind") != kind:
        raise CheckpointError(f"expected a {kind!r} checkpoint, got {doc.get('kind')!r}")


def save_kan(model: KanModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump(kan_to_dict(model)))


def load_kan(path) -> KanModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    return kan_from_dict(doc)


def baseline_to_dict(model) -> dict:
    return {"schema_version": SCHEMA_VERSION, **model.to_dict()}


def baseline_from_dict(doc):
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "mlp":
        _check_envelope(doc, "mlp")
        return MlpModel.from_dict(doc)
    if kind == "forest":
        _check_envelope(doc, "forest")
        return ForestModel.from_dict(doc)
    raise CheckpointError(f"unknown baseline kind {kind!r}")


def save_baseline(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump(baseline_to_dict(model)))
