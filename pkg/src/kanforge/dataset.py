"""EHD pump dataset: schema, CSV I/O, normalization, splitting, synthesis."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import astuple, dataclass

import numpy as np

from .errors import DatasetFormatError, DatasetParseError, InvalidArgumentError, ShapeError
from .formulas import eval_paper_formula

log = logging.getLogger(__name__)

FEATURES = ("channel_height_mm", "overlap_mm", "voltage_kV", "gap_mm", "apex_angle_rad")
TARGETS = ("pressure_pa", "flow_ml_min")
COLUMNS = FEATURES + TARGETS

HEIGHTS = (1.0, 0.5, 0.15)
OVERLAPS = (8.0, 4.0, 0.0)
VOLTAGE_RANGE = (0.0, 11.0)
GAPS = (0.3, 0.6, 0.9, 1.2)
APEX_ANGLES = (math.pi, math.pi / 2, math.pi / 3, math.pi / 6)

FEATURE_BOUNDS = {
    "channel_height_mm": (min(HEIGHTS), max(HEIGHTS)),
    "overlap_mm": (min(OVERLAPS), max(OVERLAPS)),
    "voltage_kV": VOLTAGE_RANGE,
    "gap_mm": (min(GAPS), max(GAPS)),
    "apex_angle_rad": (min(APEX_ANGLES), max(APEX_ANGLES)),
}
_CATEGORICAL = {
    "channel_height_mm": HEIGHTS,
    "overlap_mm": OVERLAPS,
    "gap_mm": GAPS,
    "apex_angle_rad": APEX_ANGLES,
}

TARGET_ALIASES = {"pressure": 0, "flow_rate": 1, "flow": 1}
DEFAULT_NOISE = (3.0, 0.05)


def target_index(target: str) -> int:
    try:
        return TARGET_ALIASES[target]
    except KeyError:
        raise InvalidArgumentError(f"unknown target {target!r}; use 'pressure' or 'flow_rate'") from None


@dataclass
class PumpSample:
    channel_height_mm: float
    overlap_mm: float
    voltage_kV: float
    gap_mm: float
    apex_angle_rad: float
    pressure_pa: float
    flow_ml_min: float

    @property
    def features(self) -> tuple:
        return astuple(self)[:5]

    def off_schema_fields(self) -> list:
        bad = []
        for name, allowed in _CATEGORICAL.items():
            v = getattr(self, name)
            if not any(math.isclose(v, a, rel_tol=0, abs_tol=1e-9) for a in allowed):
                bad.append(name)
        lo, hi = VOLTAGE_RANGE
        if not lo <= self.voltage_kV <= hi:
            bad.append("voltage_kV")
        return bad


@dataclass(frozen=True)
class Normalizer:
    """Per-feature min-max map from raw units into ``[0, 1]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise InvalidArgumentError("normalizer needs hi > lo for every feature")

    @classmethod
    def default(cls) -> "Normalizer":
        return cls(tuple(FEATURE_BOUNDS[f][0] for f in FEATURES),
                   tuple(FEATURE_BOUNDS[f][1] for f in FEATURES))

    def transform(self, X):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return (np.asarray(X, dtype=float) - lo) / (hi - lo)

    def inverse(self, Z):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.asarray(Z, dtype=float) * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


class PumpDataset:
    """Feature matrix (raw units), two-target matrix, and a normalizer."""

    def __init__(self, samples, normalizer: Normalizer | None = None):
        self.samples = list(samples)
        self.normalizer = normalizer or Normalizer.default()
        rows = np.array([astuple(s) for s in self.samples], dtype=float).reshape(-1, 7)
        self.X = rows[:, :5]
        self.Y = rows[:, 5:]

    def __len__(self):
        return len(self.samples)

    @property
    def X_norm(self) -> np.ndarray:
        return self.normalizer.transform(self.X)

    def target(self, target: str) -> np.ndarray:
        return self.Y[:, target_index(target)]


def load_csv(path) -> list:
    """Read samples; ``#`` comment lines are skipped.

    Off-schema categorical values are logged, not rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    return parse_csv(text)


def parse_csv(text: str) -> list:
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DatasetFormatError("missing header row")
    header_line, header = lines[0]
    cols = [c.strip() for c in next(csv.reader([header]))]
    if tuple(cols) != COLUMNS:
        missing = [c for c in COLUMNS if c not in cols]
        raise DatasetFormatError(
            f"bad header on line {header_line}: expected {','.join(COLUMNS)}"
            + (f"; missing {missing}" if missing else "")
        )
    samples = []
    for lineno, ln in lines[1:]:
        cells = next(csv.reader([ln]))
        if len(cells) != len(COLUMNS):
            raise DatasetParseError(f"expected {len(COLUMNS)} columns, got {len(cells)}", line=lineno)
        values = []
        for name, cell in zip(COLUMNS, cells):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetParseError(f"non-numeric value {cell.strip()!r}", line=lineno, column=name) from None
            if not math.isfinite(v):
                raise DatasetParseError(f"non-finite value {cell.strip()!r}", line=lineno, column=name)
            values.append(v)
        s = PumpSample(*values)
        bad = s.off_schema_fields()
        if bad:
            log.warning("line %d: values outside the tested parameter sets: %s", lineno, ", ".join(bad))
        samples.append(s)
    return samples


def format_csv(samples, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        for c in comment.splitlines():
            buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for s in samples:
        w.writerow([repr(float(v)) for v in astuple(s)])
    return buf.getvalue()


def write_csv(path, samples, comment: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_csv(samples, comment))


@dataclass(frozen=True)
class SplitIndices:
    train: tuple
    test: tuple
    seed: int


def split(n: int, train_fraction: float = 0.9, seed: int = 0) -> SplitIndices:
    """Seeded Fisher-Yates shuffle; the first ``round(n * fraction)`` go to train."""
    if n < 2 or not 0 < train_fraction < 1:
        raise InvalidArgumentError(f"need n >= 2 and 0 < fraction < 1, got n={n}, fraction={train_fraction}")
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise InvalidArgumentError(f"split of n={n} at {train_fraction} leaves an empty side")
    rng = np.random.Generator(np.random.Philox(seed))
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return SplitIndices(tuple(sorted(perm[:n_train])), tuple(sorted(perm[n_train:])), seed)


def generate_synthetic(n: int, noise_sigma=DEFAULT_NOISE, seed: int = 0) -> list:
    """Sample factor settings, then targets from the closed-form surrogates.

    Gaussian noise with per-target sigma is added and noisy targets are
    clamped at zero. A target with sigma 0 is the formula value verbatim
    (the pressure surrogate dips slightly below zero in one corner).
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    s_p, s_f = (float(s) for s in noise_sigma)
    if s_p < 0 or s_f < 0:
        raise InvalidArgumentError("noise sigmas must be >= 0")
    rng = np.random.Generator(np.random.Philox(seed))
    X = np.column_stack([
        np.asarray(HEIGHTS)[rng.integers(0, len(HEIGHTS), n)],
        np.asarray(OVERLAPS)[rng.integers(0, len(OVERLAPS), n)],
        rng.uniform(*VOLTAGE_RANGE, n),
        np.asarray(GAPS)[rng.integers(0, len(GAPS), n)],
        np.asarray(APEX_ANGLES)[rng.integers(0, len(APEX_ANGLES), n)],
    ])
    Z = Normalizer.default().transform(X)
    p = eval_paper_formula("Y1", Z) + s_p * rng.standard_normal(n)
    f = eval_paper_formula("Y2", Z) + s_f * rng.standard_normal(n)
    if s_p > 0:
        p = np.maximum(p, 0.0)
    if s_f > 0:
        f = np.maximum(f, 0.0)
    return [PumpSample(*map(float, row), float(pi), float(fi)) for row, pi, fi in zip(X, p, f)]


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.size == 0:
        raise ShapeError("mse of empty sequences")
    return float(np.mean((pred - truth) ** 2))
