"""KAN layers and models.

Each edge computes ``w_base * silu(x) + w_spline * spline(x)`` and each node
sums its incoming edges (no biases). Parameters are stored per layer as dense
arrays; :class:`KanEdge` is a lightweight view for single-edge work.

Flattened parameter layout (frozen, used by checkpoints and the optimizer):
layer-major, then edges row-major over ``(out, in)``, and per edge the
``G + k`` spline coefficients followed by ``w_base`` then ``w_spline``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError, ShapeError
from .splines import SplineFunction, SplineGrid, basis_derivative, basis_eval

INIT_SCALE = 0.1


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class KanEdge:
    spline: SplineFunction
    w_base: float = 1.0
    w_spline: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.w_base) and np.isfinite(self.w_spline)):
            raise InvalidArgumentError("edge weights must be finite")


def edge_eval(edge: KanEdge, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("edge input must be finite")
    return edge.w_base * silu(x) + edge.w_spline * edge.spline(x)


@dataclass
class KanLayer:
    """Dense ``out_dim x in_dim`` block of edges.

    All edges leaving input node ``i`` share ``grids[i]``.
    """

    grids: list
    coeffs: np.ndarray  # (out, in, G + k)
    w_base: np.ndarray  # (out, in)
    w_spline: np.ndarray  # (out, in)

    @property
    def in_dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def out_dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def basis_count(self) -> int:
        return self.coeffs.shape[2]

    @property
    def param_count(self) -> int:
        return self.out_dim * self.in_dim * (self.basis_count + 2)

    def edge(self, j: int, i: int) -> KanEdge:
        return KanEdge(
            SplineFunction(self.grids[i], self.coeffs[j, i].copy()),
            float(self.w_base[j, i]),
            float(self.w_spline[j, i]),
        )

    def set_edge(self, j: int, i: int, edge: KanEdge):
        if edge.spline.grid != self.grids[i]:
            raise ShapeError("edge grid does not match the layer grid for this input")
        self.coeffs[j, i] = edge.spline.coefficients
        self.w_base[j, i] = edge.w_base
        self.w_spline[j, i] = edge.w_spline


@dataclass
class KanModel:
    widths: list
    grid_G: int
    degree_k: int
    seed: int
    layers: list
    # raw feature -> [-1, 1] per input: 2 (x - lo) / (hi - lo) - 1
    input_lo: np.ndarray = field(default=None)
    input_hi: np.ndarray = field(default=None)
    # prediction = output_shift + output_scale * network(x)
    output_shift: float = 0.0
    output_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_in = self.widths[0]
        if self.input_lo is None:
            self.input_lo = -np.ones(n_in)
        if self.input_hi is None:
            self.input_hi = np.ones(n_in)
        self.input_lo = np.asarray(self.input_lo, dtype=float)
        self.input_hi = np.asarray(self.input_hi, dtype=float)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def copy(self) -> "KanModel":
        return copy.deepcopy(self)

    def normalize_inputs(self, X_raw) -> np.ndarray:
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        return 2.0 * (X_raw - self.input_lo) / (self.input_hi - self.input_lo) - 1.0

    def predict(self, X_raw) -> np.ndarray:
        """Predictions for un-normalized rows; returns shape ``(n, widths[-1])``."""
        return forward(self, self.normalize_inputs(X_raw))


def new_kan(widths, grid_G: int, degree_k: int, seed: int = 0) -> KanModel:
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise InvalidArgumentError(f"widths must have >= 2 entries, all >= 1; got {widths}")
    if grid_G < 1 or degree_k < 1:
        raise InvalidArgumentError(f"need grid_G >= 1 and degree_k >= 1; got {grid_G}, {degree_k}")
    rng = np.random.Generator(np.random.Philox(seed))
    nb = grid_G + degree_k
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        grids = [SplineGrid(grid_G, degree_k) for _ in range(n_in)]
        coeffs = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_out, n_in, nb))
        layers.append(KanLayer(grids, coeffs, np.ones((n_out, n_in)), np.ones((n_out, n_in))))
    return KanModel(widths, grid_G, degree_k, seed, layers)


@dataclass
class LayerCache:
    x: np.ndarray  # (n, in) layer input
    B: np.ndarray  # (n, in, nb)
    base: np.ndarray  # (n, in)
    spline: np.ndarray  # (n, out, in)
    phi: np.ndarray  # (n, out, in) edge outputs


def _layer_forward(layer: KanLayer, x: np.ndarray) -> LayerCache:
    B = np.stack([basis_eval(g, x[:, i]) for i, g in enumerate(layer.grids)], axis=1)
    base = silu(x)
    spl = np.einsum("nib,oib->noi", B, layer.coeffs)
    phi = layer.w_base[None] * base[:, None, :] + layer.w_spline[None] * spl
    return LayerCache(x, B, base, spl, phi)


def _check_input(model: KanModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.widths[0]:
        raise ShapeError(f"expected input rows of length {model.widths[0]}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("network input must be finite")
    return X


def forward(model: KanModel, X, capture: bool = False):
    """Evaluate the network on normalized rows ``X`` (shape ``(n, widths[0])``).

    With ``capture=True`` also returns the per-layer caches holding every
    edge's pre-activation (``x``) and post-activation (``phi``) values.
    """
    X = _check_input(model, X)
    caches = []
    h = X
    for layer in model.layers:
        c = _layer_forward(layer, h)
        caches.append(c)
        h = c.phi.sum(axis=2)
    out = model.output_shift + model.output_scale * h
    if capture:
        return out, caches
    return out


def flatten_params(model: KanModel) -> np.ndarray:
    parts = []
    for layer in model.layers:
        block = np.concatenate(
            [layer.coeffs, layer.w_base[..., None], layer.w_spline[..., None]], axis=-1
        )
        parts.append(block.ravel())
    return np.concatenate(parts)


def unflatten_params(model: KanModel, v) -> KanModel:
    """Return a copy of ``model`` with parameters taken from ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.param_count,):
        raise ShapeError(f"expected {model.param_count} parameters, got shape {v.shape}")
    out = model.copy()
    pos = 0
    for layer in out.layers:
        n = layer.param_count
        block = v[pos:pos + n].reshape(layer.out_dim, layer.in_dim, layer.basis_count + 2)
        layer.coeffs = block[..., :-2].copy()
        layer.w_base = block[..., -2].copy()
        layer.w_spline = block[..., -1].copy()
        pos += n
    return out


def activation_stats(model: KanModel, X) -> list:
    """Mean |edge output| over the rows of ``X``, one ``(out, in)`` array per layer."""
    X = np.asarray(X, dtype=float)
    if X.size == 0 or (X.ndim == 2 and X.shape[0] == 0):
        raise InvalidInputError("activation_stats needs at least one sample")
    _, caches = forward(model, X, capture=True)
    return [np.abs(c.phi).mean(axis=0) for c in caches]


def layer_input_ranges(model: KanModel, X) -> list:
    """Observed (min, max) of every node feeding each layer, for grid updates."""
    _, caches = forward(model, X, capture=True)
    return [(c.x.min(axis=0), c.x.max(axis=0)) for c in caches]


def _refit_layer(layer: KanLayer, new_grids: list, samples: int = 0) -> KanLayer:
    """Least-squares transfer of every edge spline onto ``new_grids``."""
    from .splines import lstsq_coefficients

    coeffs = np.empty(layer.coeffs.shape[:2] + (new_grids[0].basis_count,))
    for i, (old, new) in enumerate(zip(layer.grids, new_grids)):
        n = samples or 10 * new.basis_count
        xs = np.linspace(new.domain_lo, new.domain_hi, n)
        old_vals = basis_eval(old, xs) @ layer.coeffs[:, i, :].T  # (n, out)
        coeffs[:, i, :] = lstsq_coefficients(basis_eval(new, xs), old_vals).T
    return KanLayer(list(new_grids), coeffs, layer.w_base.copy(), layer.w_spline.copy())


def extend_model_grid(model: KanModel, new_G: int) -> KanModel:
    """Grid extension for every edge of the model."""
    if new_G < model.grid_G:
        raise InvalidArgumentError(f"new grid ({new_G}) must be >= current grid ({model.grid_G})")
    out = model.copy()
    if new_G == model.grid_G:
        return out
    out.layers = [
        _refit_layer(layer, [g.with_interior_count(new_G) for g in layer.grids])
        for layer in model.layers
    ]
    out.grid_G = new_G
    return out


def update_grid_from_samples(model: KanModel, X, margin: float = 0.0, first_layer: bool = False) -> KanModel:
    """Move hidden-layer spline domains to the observed node ranges.

    The first layer keeps its normalized ``[-1, 1]`` domain unless
    ``first_layer`` is set. Each spline is re-fitted so the edge function is
    preserved as closely as the new span allows.
    """
    ranges = layer_input_ranges(model, X)
    out = model.copy()
    start = 0 if first_layer else 1
    for li in range(start, model.depth):
        lo, hi = ranges[li]
        layer = model.layers[li]
        new_grids = []
        for i, g in enumerate(layer.grids):
            a, b = float(lo[i]), float(hi[i])
            width = b - a
            if width < 1e-6:
                a, b = a - 1.0, b + 1.0
            else:
                a, b = a - margin * width, b + margin * width
            new_grids.append(g.with_domain(a, b))
        out.layers[li] = _refit_layer(layer, new_grids)
    return out
