"""Random test scenes and round-trip scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decode import DecodeResult, match_hungarian
from .encode import ObjectSet
from .errors import InvalidArgument
from .kernels import KernelSpec
from .rng import make_rng


def separated_positions(rng: np.random.Generator, n: int, dim: int, min_sep: float,
                        side: Optional[float] = None, max_tries: int = 100000) -> np.ndarray:
    """``n`` uniform points in a cube, pairwise at least ``min_sep`` apart (rejection sampling).

    The default cube side gives a packing fraction low enough for rejection
    to succeed quickly: ``max(1, min_sep * (4 n)^(1/d))``.
    """
    if side is None:
        side = max(1.0, min_sep * (4.0 * max(n, 1)) ** (1.0 / dim))
    pts = np.zeros((0, dim))
    tries = 0
    while pts.shape[0] < n:
        tries += 1
        if tries > max_tries:
            raise InvalidArgument(f"could not place {n} points {min_sep} apart in a cube of side {side}")
        p = rng.random(dim) * side
        if pts.shape[0] == 0 or np.min(np.linalg.norm(pts - p, axis=1)) >= min_sep:
            pts = np.vstack([pts, p])
    return pts


@dataclass(frozen=True)
class SceneConfig:
    sigma: float = 0.05
    dims: tuple = (2, 3)
    n_range: tuple = (1, 20)
    feature_dims: tuple = (1, 4, 16)
    min_sep_sigmas: float = 6.0


def random_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> tuple[ObjectSet, KernelSpec]:
    """A well-separated random object set with Gaussian features, and its kernel."""
    rng = make_rng(seed, "scene")
    d = int(rng.choice(cfg.dims))
    n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
    dx = int(rng.choice(cfg.feature_dims))
    pos = separated_positions(rng, n, d, cfg.min_sep_sigmas * cfg.sigma)
    feats = rng.normal(size=(n, dx))
    return ObjectSet(pos, feats), KernelSpec("gaussian", cfg.sigma, d)


def score_roundtrip(result: DecodeResult, truth: ObjectSet, sigma: float) -> dict:
    """Count exactness plus assigned position RMSE (in sigma) and feature error.

    Feature error is the largest row-wise relative error
    ``|x_hat - x| / |x|`` over optimally assigned pairs.
    """
    out = {"count_exact": result.count == truth.n, "count": result.count, "n_true": truth.n,
           "rmse_sigma": None, "feature_rel_error": None}
    if not out["count_exact"] or truth.n == 0:
        return out
    pi, ti = match_hungarian(result.centers, truth.positions)
    d = np.linalg.norm(result.centers[pi] - truth.positions[ti], axis=1)
    out["rmse_sigma"] = float(np.sqrt(np.mean(d ** 2))) / sigma
    if truth.n_features:
        num = np.linalg.norm(result.features[pi] - truth.features[ti], axis=1)
        den = np.maximum(np.linalg.norm(truth.features[ti], axis=1), np.finfo(float).tiny)
        out["feature_rel_error"] = float(np.max(num / den))
    return out
