"""Isotropic Gaussian mixtures with a single shared variance.

Fitted by (optionally sample-weighted) EM from a k-means++ start; used to
produce coarse center estimates for the position fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import InsufficientPoints, InvalidArgument
from .rng import make_rng

BIC_MARGIN = 10.0
LOCAL_TRIALS = 10


@dataclass
class GmmFit:
    means: np.ndarray
    shared_variance: float
    mixing_weights: np.ndarray
    log_likelihood: float
    bic: float
    iterations: int
    n_params: int = 0
    variance_floor: float = 0.0
    collapsed: bool = False
    restarted: bool = False
    converged: bool = False
    trace: list = field(default_factory=list)
    candidates: dict = field(default_factory=dict)  # K -> BIC, filled by select_components

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "shared_variance": self.shared_variance,
            "mixing_weights": self.mixing_weights.tolist(),
            "log_likelihood": self.log_likelihood,
            "bic": self.bic,
            "iterations": self.iterations,
            "n_params": self.n_params,
            "collapsed": self.collapsed,
            "candidates": {str(k): v for k, v in self.candidates.items()},
        }


def _sq_to_means(points, means):
    d2 = (
        np.einsum("ij,ij->i", points, points)[:, None]
        + np.einsum("ij,ij->i", means, means)[None, :]
        - 2.0 * points @ means.T
    )
    return np.maximum(d2, 0.0)


@njit(cache=True)
def _em_pass(xc, w, means, var, logmix):
    """One fused E-step plus the sufficient statistics for the M-step.

    Returns (per-point log-likelihood, N_k, sum_i r_ik w_i x_i).
    """
    m, d = xc.shape
    k = means.shape[0]
    point_ll = np.empty(m)
    nk = np.zeros(k)
    sx = np.zeros((k, d))
    logp = np.empty(k)
    const = -0.5 * d * math.log(2.0 * math.pi * var)
    inv = 0.5 / var
    for i in range(m):
        mx = -np.inf
        for j in range(k):
            d2 = 0.0
            for a in range(d):
                t = xc[i, a] - means[j, a]
                d2 += t * t
            v = logmix[j] + const - inv * d2
            logp[j] = v
            if v > mx:
                mx = v
        se = 0.0
        for j in range(k):
            t = logp[j] - mx
            # exp(-40) < 5e-18: below double resolution relative to the max term
            logp[j] = math.exp(t) if t > -40.0 else 0.0
            se += logp[j]
        point_ll[i] = mx + math.log(se)
        scale = w[i] / se
        for j in range(k):
            if logp[j] == 0.0:
                continue
            r = logp[j] * scale
            nk[j] += r
            for a in range(d):
                sx[j, a] += r * xc[i, a]
    return point_ll, nk, sx


def kmeanspp_init(points, k: int, rng_seed: int, sample_weight=None, n_local_trials: Optional[int] = None):
    """k-means++ seeding with the D^2 rule (greedy variant with local trials).

    The first seed is drawn in proportion to ``sample_weight`` (uniform when
    omitted); each later seed is the best of ``n_local_trials`` D^2-weighted
    candidates.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if k < 1:
        raise InvalidArgument("number of components must be at least 1")
    if m < k:
        raise InsufficientPoints(f"need at least {k} points for {k} components, got {m}")
    w = np.ones(m) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    w = w / w.sum()
    rng = make_rng(rng_seed, "gmm")
    if n_local_trials is None:
        n_local_trials = LOCAL_TRIALS

    xx = np.einsum("ij,ij->i", x, x)
    chosen = [int(rng.choice(m, p=w))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        pot = closest * w
        total = pot.sum()
        if total <= 0.0:
            # every remaining point coincides with a seed
            free = np.setdiff1d(np.arange(m), chosen)
            chosen.append(int(rng.choice(free)))
            continue
        cand = rng.choice(m, size=n_local_trials, p=pot / total)
        xcand = x[cand]
        d_cand = np.maximum(
            np.einsum("ij,ij->i", xcand, xcand)[:, None] + xx[None, :] - 2.0 * (xcand @ x.T), 0.0
        )
        new_closest = np.minimum(closest[None, :], d_cand)
        best = int(np.argmin(new_closest @ w))
        chosen.append(int(cand[best]))
        closest = new_closest[best]
    return x[np.array(chosen)].copy()


def _canonical(x: np.ndarray, w: Optional[np.ndarray]):
    # lexicographic point order makes every fit independent of input order
    order = np.lexsort(x.T[::-1])
    return x[order], (None if w is None else w[order])


def variance_floor_for(points) -> float:
    x = np.asarray(points, dtype=float)
    diam = float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))
    return (1e-4 * diam) ** 2 if diam > 0 else 1e-24


def n_params(k: int, d: int) -> int:
    # means + free mixing weights + one shared variance
    return k * d + (k - 1) + 1


def fit_gmm(points, k: int, rng_seed: int, max_iter: int = 200, tol: float = 1e-6,
            sample_weight=None, init_means=None) -> GmmFit:
    """EM for a K-component isotropic mixture with one shared variance.

    ``sample_weight`` turns every sum over points into a weighted sum (the
    weights are rescaled to total M, so BIC keeps its usual form). Stops
    when the relative log-likelihood change drops below ``tol``.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m, d = x.shape
    if k < 1:
        raise InvalidArgument("number of components must be at least 1")
    if m < k:
        raise InsufficientPoints(f"need at least {k} points for {k} components, got {m}")
    if sample_weight is None:
        w = np.ones(m)
    else:
        w = np.asarray(sample_weight, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise InvalidArgument("sample weights must be finite, nonnegative and not all zero")
        w = w * (m / w.sum())
    x, w = _canonical(x, w)
    wsum = float(m)

    floor = variance_floor_for(x)
    means = kmeanspp_init(x, k, rng_seed, sample_weight=w) if init_means is None else np.array(init_means, float)
    # work in coordinates centred on the weighted mean to limit cancellation
    origin = (w @ x) / wsum
    xc = x - origin
    means = means - origin
    xx = np.einsum("ij,ij->i", xc, xc)
    wxx = float(w @ xx)
    var = max(float((w * _sq_to_means(xc, means).min(axis=1)).sum() / (d * wsum)), floor)
    mix = np.full(k, 1.0 / k)

    def logmix(mix):
        with np.errstate(divide="ignore"):
            return np.log(mix)

    trace = []
    restarted = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        point_ll, nk, sx = _em_pass(xc, w, means, var, logmix(mix))
        ll = float(w @ point_ll)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            converged = True
            break

        empty = nk < 1e-10 * wsum
        if np.any(empty) and not restarted:
            worst = np.argsort(point_ll)
            for j, idx in zip(np.flatnonzero(empty), worst):
                means[j] = xc[idx]
            mix = np.full(k, 1.0 / k)
            restarted = True
            # monotonicity is only claimed from the restart onwards
            trace = []
            continue

        mix = np.maximum(nk / wsum, 0.0)
        mix = mix / mix.sum()
        safe = np.where(nk > 0, nk, 1.0)
        means = np.where(nk[:, None] > 0, sx / safe[:, None], means)
        # sum_ik r_ik w_i |x_i - mu_k|^2 with mu_k the weighted component mean
        var = max((wxx - float(nk @ np.einsum("ij,ij->i", means, means))) / (d * wsum), floor)

    point_ll, _, _ = _em_pass(xc, w, means, var, logmix(mix))
    ll = float(w @ point_ll)
    if not trace or ll != trace[-1]:
        trace.append(ll)
    means = means + origin
    p = n_params(k, d)
    bic = -2.0 * ll + p * math.log(m)
    collapsed = bool(var <= floor and np.any(mix < 1e-6))
    return GmmFit(means, var, mix, ll, bic, it, p, floor, collapsed, restarted, converged, trace)


def default_delta(n_hat: int) -> int:
    return int(math.floor(0.15 * n_hat + 0.5))


def fit_candidates(points, n_hat: int, delta: int, rng_seed: int = 0, sample_weight=None,
                   max_iter: int = 200, tol: float = 1e-6) -> dict:
    """Fits for every K in [max(1, n_hat - delta), n_hat + delta] with K <= M."""
    if n_hat < 1:
        raise InvalidArgument("n_hat must be at least 1")
    if delta < 0:
        raise InvalidArgument("delta must be nonnegative")
    m = np.asarray(points).shape[0]
    if m < n_hat:
        raise InsufficientPoints(f"need at least {n_hat} points for {n_hat} components, got {m}")
    ks = range(max(1, n_hat - delta), min(n_hat + delta, m) + 1)
    x = np.asarray(points, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    sw = None if sample_weight is None else np.asarray(sample_weight, dtype=float)
    x, sw = _canonical(x, sw)
    # greedy seeding is sequential in one stream, so the K-seed set is a
    # prefix of the (K+1)-seed set: seed once at the largest K
    seeds = kmeanspp_init(x, ks[-1], rng_seed, sample_weight=sw)
    return {
        k: fit_gmm(x, k, rng_seed, max_iter=max_iter, tol=tol, sample_weight=sw, init_means=seeds[:k])
        for k in ks
    }


def select_components(points, n_hat: int, delta: Optional[int] = None, rng_seed: int = 0,
                      margin: float = BIC_MARGIN, sample_weight=None, max_iter: int = 200,
                      tol: float = 1e-6, fits: Optional[dict] = None) -> GmmFit:
    """Fit K in [max(1, n_hat - delta), n_hat + delta] and pick by BIC.

    The ``n_hat`` fit is kept unless some neighbour's BIC is lower by more
    than ``margin``; then the minimum-BIC neighbour wins.
    """
    if delta is None:
        delta = default_delta(n_hat)
    if fits is None:
        fits = fit_candidates(points, n_hat, delta, rng_seed, sample_weight, max_iter, tol)
    best = fits[n_hat]
    others = [f for kk, f in fits.items() if kk != n_hat]
    if others:
        challenger = min(others, key=lambda f: f.bic)
        if challenger.bic < best.bic - margin:
            best = challenger
    best.candidates = {kk: f.bic for kk, f in fits.items()}
    return best


def merge_to(means, weights, k: int) -> np.ndarray:
    """Merge the closest pair of means (mass-weighted) until ``k`` remain."""
    means = np.array(means, dtype=float)
    weights = np.array(weights, dtype=float)
    while means.shape[0] > k:
        d2 = _sq_to_means(means, means)
        np.fill_diagonal(d2, np.inf)
        i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
        wi, wj = weights[i], weights[j]
        tot = wi + wj
        means[i] = (wi * means[i] + wj * means[j]) / tot if tot > 0 else 0.5 * (means[i] + means[j])
        weights[i] = tot
        means = np.delete(means, j, axis=0)
        weights = np.delete(weights, j)
    return means


def fit_with_count(points, n: int, fits: dict, rng_seed: int = 0, sample_weight=None,
                   max_iter: int = 200, tol: float = 1e-6) -> GmmFit:
    """Best-likelihood ``n``-component fit given a set of candidate fits.

    Richer fits (K > n) are merged down to ``n`` means and refined by EM;
    this repairs a direct ``n`` fit that lumped two clusters together.
    """
    best = fits[n]
    for k, f in sorted(fits.items()):
        if k <= n:
            continue
        init = merge_to(f.means, f.mixing_weights, n)
        alt = fit_gmm(points, n, rng_seed, max_iter=max_iter, tol=tol,
                      sample_weight=sample_weight, init_means=init)
        if alt.log_likelihood > best.log_likelihood + 1e-9 * abs(best.log_likelihood):
            best = alt
    return best
