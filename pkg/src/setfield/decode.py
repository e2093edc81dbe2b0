"""Inverse map: fields sampled at scattered points back to an object set.

Three stages: the count from the weighted density mass, centers from a
mixture fit refined by kernel matching, and features from the Monte-Carlo
Gram system built with the same sample weights.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .encode import FieldSamples
from .errors import SetFieldError, InsufficientPoints, InvalidField
from .gmm import BIC_MARGIN, default_delta, fit_candidates, fit_with_count, select_components
from .kernels import KernelSpec, kernel_mass, kernel_matrix
from .optimize import LbfgsConfig, PositionObjective, lbfgs_minimize

GRAM_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class DecodeOptions:
    lbfgs: LbfgsConfig = LbfgsConfig()
    fit_amplitude: bool = True
    log_space: bool = False
    log_floor: float = 1e-8
    bic_search: bool = True
    bic_delta: Optional[int] = None  # None: round(0.15 * N_hat)
    bic_margin: float = BIC_MARGIN
    bic_override_count: bool = False
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    gmm_weighted: bool = True
    tikhonov: float = 1e-4  # relative to the mean Gram diagonal
    count_scale: float = 1.0  # calibration factor for unnormalized weights
    categorical: tuple = ()  # (start, stop) channel blocks decoded by argmax
    low_separation: float = 2.0  # in units of sigma
    feature_spec: Optional[KernelSpec] = None  # defaults to the density kernel

    def to_dict(self) -> dict:
        return {
            "lbfgs": dict(self.lbfgs.__dict__),
            "fit_amplitude": self.fit_amplitude,
            "log_space": self.log_space,
            "log_floor": self.log_floor,
            "bic_search": self.bic_search,
            "bic_delta": self.bic_delta,
            "bic_margin": self.bic_margin,
            "bic_override_count": self.bic_override_count,
            "gmm_max_iter": self.gmm_max_iter,
            "gmm_tol": self.gmm_tol,
            "gmm_weighted": self.gmm_weighted,
            "tikhonov": self.tikhonov,
            "count_scale": self.count_scale,
            "categorical": [list(b) for b in self.categorical],
            "low_separation": self.low_separation,
            "feature_spec": None if self.feature_spec is None else self.feature_spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeOptions":
        d = dict(d)
        d["lbfgs"] = LbfgsConfig(**d.get("lbfgs", {}))
        d["categorical"] = tuple(tuple(b) for b in d.get("categorical", ()))
        fs = d.get("feature_spec")
        d["feature_spec"] = None if fs is None else KernelSpec.from_dict(fs)
        return cls(**d)


@dataclass
class DecodeResult:
    count: int
    raw_mass: float
    centers: np.ndarray
    features: np.ndarray
    amplitude: float = 1.0
    residual: float = 0.0
    gram_condition: float = 1.0
    fallback_used: bool = False
    categorical_labels: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


@contextmanager
def _step(name):
    try:
        yield
    except SetFieldError as err:
        if not getattr(err, "step", None):
            err.step = name
            err.args = (f"[{name}] {err.args[0] if err.args else ''}",) + err.args[1:]
        raise


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def estimate_count(samples: FieldSamples, count_scale: float = 1.0) -> tuple[float, int]:
    """Weighted mass ``sum(rho * w)`` and its nearest integer (ties round up)."""
    if samples.m == 0:
        raise InvalidField("no samples")
    raw = float(samples.density @ samples.weights) * count_scale
    if not math.isfinite(raw):
        raise InvalidField("density mass is not finite")
    if raw < 0:
        raise InvalidField(f"negative density mass {raw}")
    return raw, max(0, round_half_up(raw))


def fit_positions(samples: FieldSamples, spec: KernelSpec, count: int,
                  opts: DecodeOptions = DecodeOptions(), rng_seed: int = 0):
    """Mixture-fit seeds followed by L-BFGS kernel matching.

    Returns ``(centers, amplitude, residual, info)``; ``info`` carries the
    mixture fit, optimizer status and the low-separation flag.
    """
    if count == 0:
        return np.zeros((0, spec.dim)), 1.0, 0.0, {}
    if samples.m < count:
        raise InsufficientPoints(f"{samples.m} samples cannot support {count} centers")
    gw = None
    if opts.gmm_weighted:
        gw = np.maximum(samples.density * samples.weights, 0.0)
        if gw.sum() <= 0:
            gw = None
    if not opts.bic_search:
        delta = 0
    else:
        delta = default_delta(count) if opts.bic_delta is None else opts.bic_delta
    fits = fit_candidates(samples.points, count, delta, rng_seed, gw, opts.gmm_max_iter, opts.gmm_tol)
    fit = select_components(samples.points, count, delta, margin=opts.bic_margin, fits=fits)
    info = {"gmm": fit.to_dict(), "gmm_selected_k": fit.k}
    seeds = fit.means
    if fit.k != count and not opts.bic_override_count:
        seeds = fit_with_count(samples.points, count, fits, rng_seed, gw,
                               opts.gmm_max_iter, opts.gmm_tol).means
    obj = PositionObjective(samples.points, samples.density, spec, opts.fit_amplitude,
                            opts.log_space, opts.log_floor)
    centers, amp, value, iters, conv, res = lbfgs_minimize(obj, seeds, opts.lbfgs)
    info.update(lbfgs_iterations=iters, lbfgs_converged=conv, lbfgs_message=res.message,
                lbfgs_trace=[[int(i), float(v), float(g)] for i, v, g in res.trace])
    sep = float(pdist(centers).min()) if centers.shape[0] > 1 else math.inf
    info["min_center_separation"] = sep
    info["low_separation"] = bool(sep < opts.low_separation * spec.sigma)
    return centers, amp, value, info


def recover_features(samples: FieldSamples, spec: KernelSpec, centers, tikhonov: float = 1e-4):
    """Solve the Monte-Carlo Gram system for the feature matrix.

    Returns ``(features, gram_condition, fallback_used)``. A numerically
    singular Gram (e.g. coincident centers) switches to the minimum-norm
    least-squares solution.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, spec.dim)
    kmat = kernel_matrix(spec, samples.points, centers)
    kw = kmat * samples.weights[:, None]
    gram = kmat.T @ kw
    rhs = kw.T @ samples.features
    alpha = kernel_mass(spec)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(gram)) if gram.size else 1.0
    fallback = not math.isfinite(cond) or cond > GRAM_SINGULAR_COND
    x = None
    if not fallback:
        eps = tikhonov * float(np.mean(np.diag(gram)))
        try:
            cf = scipy.linalg.cho_factor(gram + eps * np.eye(gram.shape[0]))
            x = scipy.linalg.cho_solve(cf, rhs)
        except (np.linalg.LinAlgError, ValueError):
            fallback = True
    if fallback:
        x = np.linalg.lstsq(gram, rhs, rcond=1e-10)[0]
    return alpha * x, cond, fallback


def decode_set(samples: FieldSamples, spec: KernelSpec, opts: DecodeOptions = DecodeOptions(),
               rng_seed: int = 0) -> DecodeResult:
    if samples.dim != spec.dim:
        raise InvalidField(f"samples are {samples.dim}-dimensional but the kernel is {spec.dim}-dimensional")
    with _step("count"):
        raw, count = estimate_count(samples, opts.count_scale)
    dx = samples.features.shape[1]
    if count == 0:
        return DecodeResult(0, raw, np.zeros((0, spec.dim)), np.zeros((0, dx)),
                            categorical_labels=np.zeros(0, dtype=int) if opts.categorical else None)
    with _step("positions"):
        centers, amp, residual, info = fit_positions(samples, spec, count, opts, rng_seed)
    if opts.bic_override_count:
        count = centers.shape[0]
    fspec = opts.feature_spec or spec
    with _step("features"):
        if dx:
            feats, cond, fallback = recover_features(samples, fspec, centers, opts.tikhonov)
        else:
            feats, cond, fallback = np.zeros((count, 0)), 1.0, False
    labels = None
    if opts.categorical:
        labels = np.stack([np.argmax(feats[:, a:b], axis=1) for a, b in opts.categorical], axis=1)
        if labels.shape[1] == 1:
            labels = labels[:, 0]
    return DecodeResult(count, raw, centers, feats, amp, residual, cond, fallback, labels, info)


def decode_batch(batch: Sequence[FieldSamples], spec: KernelSpec, opts: DecodeOptions = DecodeOptions(),
                 seeds: Optional[Sequence[int]] = None, workers: Optional[int] = None) -> list:
    """Decode independent instances, optionally on a thread pool (``SETFIELD_THREADS``)."""
    seeds = list(range(len(batch))) if seeds is None else list(seeds)
    if workers is None:
        workers = int(os.environ.get("SETFIELD_THREADS", "1"))
    if workers <= 1:
        return [decode_set(s, spec, opts, sd) for s, sd in zip(batch, seeds)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: decode_set(a[0], spec, opts, a[1]), zip(batch, seeds)))


# ---------------------------------------------------------------------------
# matching for evaluation


def match_hungarian(pred, truth):
    """Optimal assignment on Euclidean cost; returns (pred_idx, truth_idx)."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.size == 0 or truth.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return linear_sum_assignment(cdist(pred, truth))


def match_nearest(pred, truth):
    """Greedy nearest-truth assignment for each prediction (may reuse truths)."""
    pred = np.asarray(pred, dtype=float).reshape(len(pred), -1)
    truth = np.asarray(truth, dtype=float).reshape(len(truth), -1)
    if pred.size == 0 or truth.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.arange(len(pred)), np.argmin(cdist(pred, truth), axis=1)
