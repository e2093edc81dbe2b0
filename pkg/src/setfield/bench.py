"""Local-maxima benchmark: random smooth fields, their grid peaks, and a codec round trip.

A field is one draw of a squared-exponential Gaussian process on
[-3, 3]^2, approximated by random Fourier features and multiplied by a
separable cosine taper that vanishes on the boundary. Its grid local maxima
are the ground-truth set; the codec encodes that set, samples it, decodes,
and is scored with the exact-count / epsilon-ball criterion.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.spatial.distance import cdist

from .decode import DecodeOptions, decode_set
from .encode import ObjectSet, encode_field
from .errors import SetFieldError, InvalidArgument
from .kernels import KernelSpec
from .rng import child_seed, make_rng
from .sampling import SamplerConfig

DOMAIN = 3.0
EPSILON = 0.24  # domain width 6 over 25
CSV_COLUMNS = ("seed", "n_true", "n_pred", "correct", "max_pair_dist", "decode_ms")


@dataclass(frozen=True)
class BenchConfig:
    lengthscale: float = 0.9
    amplitude: float = 1.5
    num_features: int = 150
    margin: float = 0.8
    envelope: str = "taper"  # "taper": 1 inside, 0 on the edge; "literal": the printed clip formula
    grid_n: int = 181
    threshold_rel: float = 0.05
    min_distance: int = 3
    max_peaks: int = 50
    sigma: float = 0.06
    n_points: int = 4096
    n_subsample: int = 2048
    epsilon: float = EPSILON
    decoder: str = "codec"  # or "oracle"
    timing: bool = False

    def __post_init__(self):
        if self.envelope not in ("taper", "literal"):
            raise InvalidArgument(f"unknown envelope {self.envelope!r}")
        if self.decoder not in ("codec", "oracle"):
            raise InvalidArgument(f"unknown decoder {self.decoder!r}")
        if not (self.lengthscale > 0 and self.num_features >= 1 and self.margin > 0):
            raise InvalidArgument("need lengthscale > 0, num_features >= 1 and margin > 0")
        if self.grid_n < 3:
            raise InvalidArgument("grid_n must be at least 3")
        if not 1 <= self.n_subsample <= self.n_points:
            raise InvalidArgument("need 1 <= n_subsample <= n_points")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        return cls(**d)


@dataclass
class RffField:
    weights_w: np.ndarray  # (D, 2)
    phases_b: np.ndarray  # (D,)
    amplitude: float
    lengthscale: float
    envelope_margin: float = 0.8
    envelope: str = "taper"

    @property
    def num_features(self) -> int:
        return self.phases_b.shape[0]

    def raw(self, r) -> np.ndarray:
        r = np.atleast_2d(np.asarray(r, dtype=float))
        d = self.num_features
        return self.amplitude * math.sqrt(2.0 / d) * np.cos(r @ self.weights_w.T + self.phases_b).sum(axis=1)

    def __call__(self, r) -> np.ndarray:
        r = np.atleast_2d(np.asarray(r, dtype=float))
        return self.raw(r) * envelope(r, self.envelope_margin, self.envelope)


def sample_rff_field(lengthscale: float, amplitude: float = 1.5, num_features: int = 150,
                     rng_seed: int = 0, margin: float = 0.8, envelope_kind: str = "taper") -> RffField:
    if not lengthscale > 0 or num_features < 1:
        raise InvalidArgument("need lengthscale > 0 and num_features >= 1")
    rng = make_rng(rng_seed, "rff")
    # unit normals scaled by 1/l: paired seeds give the same field shape at every l
    w = rng.standard_normal((num_features, 2)) / lengthscale
    b = rng.uniform(0.0, 2.0 * math.pi, size=num_features)
    return RffField(w, b, float(amplitude), float(lengthscale), float(margin), envelope_kind)


def envelope_1d(x, margin: float = 0.8, kind: str = "taper") -> np.ndarray:
    """Half-cosine frame factor: 1 for |x| <= 3 - m, 0 at |x| = 3."""
    u = np.clip(np.abs(np.asarray(x, dtype=float)) - (DOMAIN - margin), 0.0, margin) / margin
    if kind == "literal":
        return 0.5 * (1.0 - np.cos(math.pi * u))
    return 0.5 * (1.0 + np.cos(math.pi * u))


def envelope(r, margin: float = 0.8, kind: str = "taper") -> np.ndarray:
    r = np.atleast_2d(np.asarray(r, dtype=float))
    return envelope_1d(r[:, 0], margin, kind) * envelope_1d(r[:, 1], margin, kind)


def apply_envelope(value, r, margin: float = 0.8, kind: str = "taper"):
    return np.asarray(value, dtype=float) * envelope(r, margin, kind)


def grid_axis(grid_n: int = 181) -> np.ndarray:
    return np.linspace(-DOMAIN, DOMAIN, grid_n)


def evaluate_grid(fld: RffField, grid_n: int = 181) -> np.ndarray:
    """Enveloped field on the grid, indexed ``[ix, iy]``."""
    ax = grid_axis(grid_n)
    # cos(wx x + wy y + b) = cos(wx x) cos(wy y + b) - sin(wx x) sin(wy y + b)
    ax_x = np.outer(ax, fld.weights_w[:, 0])
    ax_y = np.outer(ax, fld.weights_w[:, 1]) + fld.phases_b
    raw = np.cos(ax_x) @ np.cos(ax_y).T - np.sin(ax_x) @ np.sin(ax_y).T
    raw *= fld.amplitude * math.sqrt(2.0 / fld.num_features)
    env = envelope_1d(ax, fld.envelope_margin, fld.envelope)
    return raw * np.outer(env, env)


def peak_indices(image, min_distance: int = 3, threshold_rel: float = 0.05, max_peaks: int = 50) -> np.ndarray:
    """Grid local maxima with Chebyshev spacing, highest first.

    A cell is a candidate when it equals the maximum of its
    (2 min_distance + 1)^2 window, lies at least ``min_distance`` cells from
    the border, and exceeds ``threshold_rel`` times the global maximum.
    Candidates are accepted in descending value (ties by flat index) unless
    an accepted peak lies within Chebyshev distance ``min_distance``.
    """
    img = np.asarray(image, dtype=float)
    peak = float(img.max())
    if peak <= 0.0:
        return np.zeros((0, 2), dtype=int)
    size = 2 * min_distance + 1
    is_max = img == maximum_filter(img, size=size, mode="nearest")
    thr = max(threshold_rel * peak, float(img.min()))
    cand = is_max & (img > thr)
    border = min_distance
    cand[:border] = cand[-border:] = False
    cand[:, :border] = cand[:, -border:] = False
    idx = np.argwhere(cand)
    order = np.lexsort((np.ravel_multi_index(idx.T, img.shape), -img[cand]))
    idx = idx[order]
    kept = []
    for p in idx:
        if all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) > min_distance for q in kept):
            kept.append(p)
            if len(kept) == max_peaks:
                break
    return np.array(kept, dtype=int).reshape(-1, 2)


def grid_peaks(fld: RffField, grid_n: int = 181, threshold_rel: float = 0.05, min_distance: int = 3,
               max_peaks: int = 50) -> np.ndarray:
    """Peak coordinates (K, 2) of the enveloped field, highest first."""
    idx = peak_indices(evaluate_grid(fld, grid_n), min_distance, threshold_rel, max_peaks)
    ax = grid_axis(grid_n)
    return np.column_stack([ax[idx[:, 0]], ax[idx[:, 1]]]) if idx.size else np.zeros((0, 2))


def maxima_accuracy(predicted, truth, epsilon: float = EPSILON) -> tuple[bool, float]:
    """Exact-count criterion; returns ``(correct, max assigned distance)``.

    Each prediction is paired with its nearest truth point (truths may be
    reused); correct iff the counts agree and every pair is within epsilon.
    """
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    pred = np.asarray(predicted, dtype=float).reshape(-1, 2)
    tru = np.asarray(truth, dtype=float).reshape(-1, 2)
    if pred.shape[0] == 0 or tru.shape[0] == 0:
        return pred.shape[0] == tru.shape[0], 0.0
    dist = cdist(pred, tru).min(axis=1)
    worst = float(dist.max())
    return bool(pred.shape[0] == tru.shape[0] and worst <= epsilon), worst


@dataclass
class BenchReport:
    config: BenchConfig
    rng_seed: int
    rows: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.mean([r["correct"] for r in self.rows])) if self.rows else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# lengthscale={self.config.lengthscale} sigma={self.config.sigma} "
                  f"epsilon={self.config.epsilon} decoder={self.config.decoder} seed={self.rng_seed} "
                  f"accuracy={self.accuracy:.6f}\n")
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "correct": int(r["correct"]), "max_pair_dist": f"{r['max_pair_dist']:.12g}",
                        "decode_ms": "" if r["decode_ms"] is None else f"{r['decode_ms']:.3f}"})
        return buf.getvalue()


def run_instance(cfg: BenchConfig, seed: int, opts: DecodeOptions = DecodeOptions()) -> dict:
    fld = sample_rff_field(cfg.lengthscale, cfg.amplitude, cfg.num_features, seed, cfg.margin, cfg.envelope)
    truth = grid_peaks(fld, cfg.grid_n, cfg.threshold_rel, cfg.min_distance, cfg.max_peaks)
    start = time.perf_counter()
    if cfg.decoder == "oracle":
        pred = truth.copy()
    elif truth.shape[0] == 0:
        pred = np.zeros((0, 2))
    else:
        try:
            spec = KernelSpec("gaussian", cfg.sigma, 2)
            samples = encode_field(ObjectSet(truth), spec, SamplerConfig(), cfg.n_points, seed)
            keep = make_rng(seed, "subsample").choice(cfg.n_points, size=cfg.n_subsample, replace=False)
            pred = decode_set(samples.subset(np.sort(keep)), spec, opts, seed).centers
        except SetFieldError:
            pred = None
    elapsed = 1e3 * (time.perf_counter() - start)
    if pred is None:
        correct, worst, n_pred = False, math.nan, -1
    else:
        correct, worst = maxima_accuracy(pred, truth, cfg.epsilon)
        n_pred = pred.shape[0]
    return {
        "seed": seed,
        "n_true": truth.shape[0],
        "n_pred": n_pred,
        "correct": correct,
        "max_pair_dist": worst,
        "decode_ms": elapsed if cfg.timing else None,
    }


def run_benchmark(n_instances: int, cfg: BenchConfig = BenchConfig(), rng_seed: int = 0,
                  opts: DecodeOptions = DecodeOptions()) -> BenchReport:
    """Score ``n_instances`` fields; instance i uses ``child_seed(rng_seed, i)``.

    Decoder failures count as incorrect. Seeds depend only on ``rng_seed``
    and the index, so runs at different length-scales are paired.
    """
    if n_instances < 1:
        raise InvalidArgument("n_instances must be at least 1")
    report = BenchReport(cfg, rng_seed)
    for i in range(n_instances):
        report.rows.append(run_instance(cfg, child_seed(rng_seed, i), opts))
    return report


def oracle_accuracy(n_instances: int, cfg: Optional[BenchConfig] = None, rng_seed: int = 0) -> float:
    cfg = cfg or BenchConfig()
    return run_benchmark(n_instances, BenchConfig(**{**cfg.to_dict(), "decoder": "oracle"}), rng_seed).accuracy
