"""Snap learned edge functions to closed-form primitives.

Each edge is approximated by ``c * f(a * x + b) + d`` for ``f`` from a fixed
library; the snapped edges are then composed along the network topology into
a :class:`SymbolicFormula`.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .errors import InvalidArgumentError
from .formulas import eval_paper_formula  # noqa: F401  re-exported
from .network import KanEdge, KanModel, edge_eval, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: object
    # exp-type families are only distinguishable with a fixed sign of ``a``
    positive_slope_only: bool = False
    # canonical sign handling: "odd" f(-u) = -f(u), "even" f(-u) = f(u)
    symmetry: str | None = None

    def __call__(self, u):
        return self.fn(u)


def _log_shifted(u):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(u > -1.0, np.log1p(np.maximum(u, -1.0)), np.nan)


def _exp(u):
    with np.errstate(over="ignore"):
        return np.exp(u)


def _neg_exp(u):
    with np.errstate(over="ignore"):
        return np.exp(-u)


# ordered by complexity; ties in r2 resolve to the earlier entry
LIBRARY = (
    Primitive("identity", lambda u: u, symmetry="odd"),
    Primitive("square", lambda u: u ** 2, symmetry="even"),
    Primitive("cube", lambda u: u ** 3, symmetry="odd"),
    Primitive("quartic", lambda u: u ** 4, symmetry="even"),
    Primitive("tanh", np.tanh, symmetry="odd"),
    Primitive("sin", np.sin, symmetry="odd"),
    Primitive("exp", _exp, positive_slope_only=True),
    Primitive("neg_exp_decay", _neg_exp, positive_slope_only=True),
    Primitive("log_shifted", _log_shifted),
)
PRIMITIVES = {p.name: p for p in LIBRARY}
COMPLEXITY = {p.name: i for i, p in enumerate(LIBRARY)}

A_GRID = np.logspace(-1, 1, 41)
B_GRID = np.linspace(-5, 5, 41)
REFINE_ROUNDS = 3
R2_DECIMALS = 12
LOW_FIDELITY_R2 = 0.5


def get_primitive(name) -> Primitive:
    if isinstance(name, Primitive):
        return name
    try:
        return PRIMITIVES[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown primitive {name!r}") from None


@dataclass
class AffineWrap:
    """``x -> c * f(a * x + b) + d``; ``c == 0`` denotes a constant."""

    primitive: Primitive
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    @property
    def is_constant(self) -> bool:
        return self.c == 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            return np.full(x.shape, self.d)
        return self.c * self.primitive(self.a * x + self.b) + self.d

    def to_dict(self) -> dict:
        return {"primitive": self.primitive.name, "a": self.a, "b": self.b, "c": self.c, "d": self.d}

    @classmethod
    def from_dict(cls, d) -> "AffineWrap":
        return cls(get_primitive(d["primitive"]), d["a"], d["b"], d["c"], d["d"])

    def compose_input(self, scale: float, shift: float) -> "AffineWrap":
        """Wrap of ``x -> self(scale * x + shift)``."""
        return AffineWrap(self.primitive, self.a * scale, self.a * shift + self.b, self.c, self.d)


def _closed_form_cd(F, y):
    """Best ``(c, d, sse)`` per row of ``F`` for ``y ~ c F + d``; invalid rows get inf sse."""
    n = y.shape[0]
    valid = np.all(np.isfinite(F), axis=-1)
    F = np.where(valid[..., None], F, 0.0)
    Fm = F.mean(axis=-1, keepdims=True)
    Fc = F - Fm
    yc = y - y.mean()
    sff = np.sum(Fc * Fc, axis=-1)
    sfy = Fc @ yc
    syy = float(yc @ yc)
    ok = valid & (sff > 1e-12 * n * np.maximum(1.0, np.abs(Fm[..., 0]) ** 2))
    c = np.where(ok, sfy / np.where(ok, sff, 1.0), 0.0)
    d = y.mean() - c * Fm[..., 0]
    sse = np.where(ok, syy - c * sfy, np.inf)
    return c, d, np.maximum(sse, 0.0)


INVALID_SSE = 1e100


def _sse_ab(prim, xs, ys, a, b):
    with np.errstate(all="ignore"):
        F = prim(a * xs + b)
    c, d, sse = _closed_form_cd(F[None, :], ys)
    # finite stand-in keeps the bounded scalar search arithmetic well defined
    return min(float(sse[0]), INVALID_SSE), float(c[0]), float(d[0])


def _canonical(prim: Primitive, a, b, c, d):
    if prim.symmetry == "odd" and a < 0:
        a, b, c = -a, -b, -c
    elif prim.symmetry == "even" and a < 0:
        a, b = -a, -b
    if prim.name == "sin":
        if c < 0:
            b, c = b + math.pi, -c
        b = math.remainder(b, 2 * math.pi)
    return a, b, c, d


def fit_affine(primitive, xs, ys):
    """Fit ``c * f(a x + b) + d`` to samples; returns ``(AffineWrap, r2)``.

    Grid search over ``(a, b)`` (41 log-spaced slope magnitudes of each
    admissible sign, 41 offsets in [-5, 5]) with closed-form ``(c, d)``,
    then three rounds of coordinate descent and a Levenberg-Marquardt polish
    on all four parameters. The search runs on ``xs`` rescaled to [-1, 1].
    """
    prim = get_primitive(primitive)
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape or len(xs) < 8:
        raise InvalidArgumentError("fit_affine needs at least 8 matching (x, y) pairs")
    sst = float(np.sum((ys - ys.mean()) ** 2))
    if sst <= 1e-24 * max(1.0, float(np.max(np.abs(ys)))) ** 2 * len(ys):
        return AffineWrap(prim, 1.0, 0.0, 0.0, float(ys.mean())), 1.0
    center = 0.5 * (xs.max() + xs.min())
    half = 0.5 * (xs.max() - xs.min()) or 1.0
    t = (xs - center) / half

    slopes = A_GRID if prim.positive_slope_only else np.concatenate([-A_GRID[::-1], A_GRID])
    A, B = np.meshgrid(slopes, B_GRID, indexing="ij")
    with np.errstate(all="ignore"):
        F = prim(A[..., None] * t + B[..., None])
    _, _, sse = _closed_form_cd(F, ys)
    best = float(np.min(sse))
    if not np.isfinite(best):
        return AffineWrap(prim, 1.0, 0.0, 0.0, float(ys.mean())), 0.0
    # powers and exponentials have exact (a, b, c) symmetries, so the grid
    # minimum is usually a tie; take the one nearest unit slope, zero offset
    tied = np.flatnonzero(sse.ravel() <= best * (1 + 1e-9) + 1e-15 * sst)
    k = min(tied, key=lambda i: (abs(math.log(abs(A.flat[i]))), abs(B.flat[i])))
    a, b = float(A.flat[k]), float(B.flat[k])

    da = abs(a) * (A_GRID[1] / A_GRID[0] - 1.0)
    db = B_GRID[1] - B_GRID[0]
    for _ in range(REFINE_ROUNDS):
        lo, hi = (a - da, a + da)
        if prim.positive_slope_only:
            lo = max(lo, 1e-6)
        a = minimize_scalar(lambda v: _sse_ab(prim, t, ys, v, b)[0], bounds=(lo, hi),
                            method="bounded", options={"xatol": 1e-10}).x
        b = minimize_scalar(lambda v: _sse_ab(prim, t, ys, a, v)[0], bounds=(b - db, b + db),
                            method="bounded", options={"xatol": 1e-10}).x
        da, db = da / 2, db / 2
    sse0, c, d = _sse_ab(prim, t, ys, a, b)

    def resid(p):
        with np.errstate(all="ignore"):
            r = p[2] * prim(p[0] * t + p[1]) + p[3] - ys
        return np.where(np.isfinite(r), r, 1e150)

    try:
        sol = least_squares(resid, [a, b, c, d], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        sse1 = float(np.sum(sol.fun ** 2))
        if np.all(np.isfinite(sol.x)) and sse1 < sse0 and sol.x[0] != 0:
            a, b, c, d = (float(v) for v in sol.x)
            if prim.positive_slope_only and a < 0:
                raise ValueError
            sse0 = sse1
    except ValueError:
        sse0, c, d = _sse_ab(prim, t, ys, a, b)
    # undo the input rescaling: a t + b with t = (x - center) / half
    a_x, b_x = a / half, b - a * center / half
    a_x, b_x, c, d = _canonical(prim, a_x, b_x, c, d)
    r2 = 1.0 - sse0 / sst
    return AffineWrap(prim, float(a_x), float(b_x), float(c), float(d)), float(r2)


def rank_key(item):
    name, r2 = item
    return (-round(r2, R2_DECIMALS), COMPLEXITY[name])


def snap_function(fn, lo: float, hi: float, n: int = 101, library=LIBRARY):
    """Snap an arbitrary univariate callable over ``[lo, hi]``."""
    if not hi > lo:
        x0 = float(lo)
        const = float(np.asarray(fn(np.array([x0])))[0])
        best = AffineWrap(library[0], 1.0, 0.0, 0.0, const)
        return best, [(p.name, 1.0) for p in library]
    xs = np.linspace(lo, hi, n)
    ys = np.asarray(fn(xs), dtype=float)
    fits = {p.name: fit_affine(p, xs, ys) for p in library}
    ranked = sorted(((name, r2) for name, (_, r2) in fits.items()), key=rank_key)
    return fits[ranked[0][0]][0], ranked


def snap_edge(edge: KanEdge, X_column):
    """Best ``AffineWrap`` for one edge plus the full ``(primitive, r2)`` ranking.

    The edge is sampled on a dense grid spanning the observed input range.
    """
    X_column = np.asarray(X_column, dtype=float).ravel()
    return snap_function(lambda x: edge_eval(edge, x), float(X_column.min()), float(X_column.max()))


@dataclass
class SymbolicFormula:
    """Snapped network in the model's un-normalized input coordinates.

    ``wraps[l][j][i]`` maps node ``i`` of layer ``l`` to node ``j`` of layer
    ``l + 1``; node values are sums over incoming wraps.
    """

    wraps: list
    output_shift: float = 0.0
    output_scale: float = 1.0
    labels: list = field(default_factory=list)
    edge_r2: list = field(default_factory=list)
    rankings: list = field(default_factory=list)
    fidelity_mse: float = float("nan")
    low_fidelity: bool = False

    @property
    def n_inputs(self) -> int:
        return len(self.wraps[0][0])

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        h = [X[:, i] for i in range(X.shape[1])]
        for layer in self.wraps:
            h = [sum((w(h[i]) for i, w in enumerate(row)), np.zeros(X.shape[0])) for row in layer]
        return self.output_shift + self.output_scale * np.column_stack(h)

    # -- serialization -------------------------------------------------
    def to_tree(self, output: int = 0) -> dict:
        def node(l, j):
            if l < 0:
                return {"op": "input", "params": {"index": j, "label": self.labels[j]}, "children": []}
            children = [
                {"op": w.primitive.name if not w.is_constant else "const",
                 "params": {"a": w.a, "b": w.b, "c": w.c, "d": w.d},
                 "children": [] if w.is_constant else [node(l - 1, i)]}
                for i, w in enumerate(self.wraps[l][j])
            ]
            return {"op": "sum", "params": {}, "children": children}

        top = len(self.wraps) - 1
        return {"op": "affine", "params": {"shift": self.output_shift, "scale": self.output_scale},
                "children": [node(top, output)]}

    def to_json(self) -> str:
        return json.dumps({
            "labels": self.labels,
            "output_shift": self.output_shift,
            "output_scale": self.output_scale,
            "layers": [[[w.to_dict() for w in row] for row in layer] for layer in self.wraps],
            "edge_r2": self.edge_r2,
            "fidelity_mse": self.fidelity_mse,
            "low_fidelity": self.low_fidelity,
            "trees": [self.to_tree(j) for j in range(len(self.wraps[-1]))],
        }, indent=2, sort_keys=True)

    def to_infix(self, output: int = 0, digits: int = 4) -> str:
        fmt = lambda v: _fmt(v, digits)

        def node(l, j):
            if l < 0:
                return self.labels[j]
            const = 0.0
            terms = []
            for i, w in enumerate(self.wraps[l][j]):
                inner = node(l - 1, i)
                if w.is_constant or isinstance(inner, float):
                    xval = 0.0 if w.is_constant else inner
                    const += float(w(np.array([xval]))[0])
                else:
                    const += w.d
                    terms.append(_wrap_infix(w, inner, fmt))
            if not terms:
                return const
            s = " + ".join(terms)
            if const != 0.0:
                s += f" + {fmt(const)}"
            return s.replace("+ -", "- ")

        body = node(len(self.wraps) - 1, output)
        if isinstance(body, float):
            return fmt(self.output_shift + self.output_scale * body)
        if self.output_scale != 1.0:
            body = f"{fmt(self.output_scale)}*({body})"
        if self.output_shift != 0.0:
            body = f"{body} + {fmt(self.output_shift)}"
        return body.replace("+ -", "- ")


def _fmt(v: float, digits: int) -> str:
    if v == 0:
        return "0"
    return format(v, f".{digits}g")


def _wrap_infix(w: AffineWrap, inner: str, fmt) -> str:
    arg = f"{fmt(w.a)}*({inner})" if " " in inner else f"{fmt(w.a)}*{inner}"
    if w.b != 0:
        arg = f"{arg} + {fmt(w.b)}"
    name = w.primitive.name
    if name == "identity":
        slope, icpt = w.c * w.a, w.c * w.b
        core = f"{fmt(slope)}*({inner})" if " " in inner else f"{fmt(slope)}*{inner}"
        if icpt != 0:
            core = f"{core} + {fmt(icpt)}"
        return core.replace("+ -", "- ")
    if name in ("square", "cube", "quartic"):
        p = {"square": 2, "cube": 3, "quartic": 4}[name]
        core = f"({arg})^{p}"
    elif name == "neg_exp_decay":
        core = f"exp(-({arg}))"
    elif name == "log_shifted":
        core = f"log(1 + {arg})"
    else:
        core = f"{name}({arg})"
    return f"{fmt(w.c)}*{core}".replace("+ -", "- ")


def _polish(formula: SymbolicFormula, X_raw, target):
    """Jointly re-fit every wrap's parameters to the network output.

    Primitive choices stay fixed; only ``(a, b, c, d)`` move.
    """
    wraps = [w for layer in formula.wraps for row in layer for w in row]
    live = [w for w in wraps if not w.is_constant]
    p0 = np.array([v for w in live for v in (w.a, w.b, w.c, w.d)]
                  + [w.d for w in wraps if w.is_constant], dtype=float)
    if p0.size == 0:
        return

    def assign(p):
        it = iter(p)
        for w in live:
            w.a, w.b, w.c, w.d = (float(next(it)) for _ in range(4))
        for w in wraps:
            if w.is_constant:
                w.d = float(next(it))

    def resid(p):
        assign(p)
        with np.errstate(all="ignore"):
            r = (formula(X_raw) - target).ravel()
        return np.where(np.isfinite(r), r, 1e10)

    before = float(np.sum(resid(p0) ** 2))
    try:
        sol = least_squares(resid, p0, method="trf", x_scale="jac", max_nfev=200 * p0.size)
        after = float(np.sum(sol.fun ** 2))
        best = sol.x if np.isfinite(after) and after < before else p0
    except (ValueError, np.linalg.LinAlgError):
        best = p0
    assign(best)
    for w in live:
        if w.primitive.positive_slope_only and w.a <= 0:
            assign(p0)
            break
    for w in live:
        w.a, w.b, w.c, w.d = _canonical(w.primitive, w.a, w.b, w.c, w.d)


def extract_formula(model: KanModel, X, labels=None, polish: bool = True) -> SymbolicFormula:
    """Snap every edge of ``model`` using the values that reach it on ``X``.

    ``X`` holds normalized rows (as passed to :func:`forward`). The returned
    formula takes the model's un-normalized inputs; its ``fidelity_mse``
    compares it with the network on ``X``. With ``polish`` the snapped
    parameters are afterwards re-fitted jointly against the network output.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out, caches = forward(model, X, capture=True)
    labels = list(labels) if labels else [f"x{i + 1}" for i in range(model.widths[0])]
    # normalized = scale * raw + shift
    span = model.input_hi - model.input_lo
    in_scale = 2.0 / span
    in_shift = -2.0 * model.input_lo / span - 1.0
    wraps, edge_r2, rankings = [], [], []
    for l, (layer, c) in enumerate(zip(model.layers, caches)):
        rows, r2_rows, rank_rows = [], [], []
        for j in range(layer.out_dim):
            row, r2_row, rank_row = [], [], []
            for i in range(layer.in_dim):
                best, ranked = snap_edge(layer.edge(j, i), c.x[:, i])
                if l == 0:
                    best = best.compose_input(in_scale[i], in_shift[i])
                row.append(best)
                r2_row.append(ranked[0][1])
                rank_row.append(ranked)
            rows.append(row)
            r2_rows.append(r2_row)
            rank_rows.append(rank_row)
        wraps.append(rows)
        edge_r2.append(r2_rows)
        rankings.append(rank_rows)
    formula = SymbolicFormula(wraps, model.output_shift, model.output_scale, labels, edge_r2, rankings)
    X_raw = model.input_lo + (X + 1.0) * span / 2.0
    if polish:
        _polish(formula, X_raw, out)
    with np.errstate(all="ignore"):
        diff = formula(X_raw) - out
    formula.fidelity_mse = float(np.mean(diff ** 2))
    formula.low_fidelity = any(r < LOW_FIDELITY_R2 for layer in edge_r2 for row in layer for r in row)
    if formula.low_fidelity:
        log.warning("symbolic extraction: at least one edge has best r2 < %.2f", LOW_FIDELITY_R2)
    return formula
