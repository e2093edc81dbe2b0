"""Sample-location generation and Monte-Carlo weights.

Weights are exact by default: ``Vol/M`` for uniform boxes and
``1 / (M q(r))`` with ``q`` the fully normalized proposal for importance
sampling, so ``sum(rho * w)`` estimates the object count without any
calibration. ``weight_mode="unnormalized"`` uses the shortcut of ``1/M`` for
uniform boxes and an unnormalized mixture ``q`` for importance sampling;
the unknown constant cancels in the feature solve but not in the count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyProposalError, InvalidArgument
from .kernels import KernelSpec, kernel_matrix, profile_mass, sample_offsets
from .rng import make_rng

SCHEMES = ("uniform", "importance")
WEIGHT_MODES = ("exact", "unnormalized")


@dataclass(frozen=True)
class SamplerConfig:
    scheme: str = "importance"
    box: Optional[tuple] = None  # (lo, hi), each a length-d sequence
    proposal_sigma: Optional[float] = None
    temperature: float = 1.0
    importance_fraction: float = 1.0
    weight_mode: str = "exact"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"unknown sampling scheme {self.scheme!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidArgument(f"unknown weight mode {self.weight_mode!r}")
        if self.proposal_sigma is not None and not self.proposal_sigma > 0:
            raise InvalidArgument("proposal_sigma must be positive")
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if not 0.0 <= self.importance_fraction <= 1.0:
            raise InvalidArgument("importance_fraction must lie in [0, 1]")
        if self.box is not None:
            lo, hi = (tuple(float(v) for v in np.ravel(b)) for b in self.box)
            object.__setattr__(self, "box", (lo, hi))

    @property
    def scheme_label(self) -> str:
        if self.scheme == "importance" and self.importance_fraction < 1.0:
            return "mixed"
        return self.scheme

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "box": None if self.box is None else [list(self.box[0]), list(self.box[1])],
            "proposal_sigma": self.proposal_sigma,
            "temperature": self.temperature,
            "importance_fraction": self.importance_fraction,
            "weight_mode": self.weight_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        box = d.get("box")
        return cls(
            scheme=d["scheme"],
            box=None if box is None else (tuple(box[0]), tuple(box[1])),
            proposal_sigma=d.get("proposal_sigma"),
            temperature=d.get("temperature", 1.0),
            importance_fraction=d.get("importance_fraction", 1.0),
            weight_mode=d.get("weight_mode", "exact"),
        )


def _box_arrays(box, dim=None):
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1 or (dim is not None and lo.size != dim):
        raise InvalidArgument("box bounds must be two length-d vectors")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise InvalidArgument("box bounds must be finite")
    if np.any(hi <= lo):
        raise InvalidArgument("degenerate box: zero or negative extent on some axis")
    return lo, hi


def default_box(positions: np.ndarray, sigma: float, padding: float = 6.0):
    """Bounding box of ``positions`` padded by ``padding * sigma``."""
    return positions.min(axis=0) - padding * sigma, positions.max(axis=0) + padding * sigma


def sample_uniform(box, m: int, rng_seed: int, weight_mode: str = "exact"):
    """``m`` i.i.d. uniform points in ``box``; returns (points, weights)."""
    if m < 1:
        raise InvalidArgument("sample count must be at least 1")
    lo, hi = _box_arrays(box)
    rng = make_rng(rng_seed, "sampling")
    points = lo + (hi - lo) * rng.random((m, lo.size))
    vol = float(np.prod(hi - lo))
    w = (vol if weight_mode == "exact" else 1.0) / m
    return points, np.full(m, w)


def component_probabilities(centers: np.ndarray, spec: KernelSpec, temperature: float) -> np.ndarray:
    """Mixture weights over centers.

    Each center is weighted by its own density value raised to ``1/T - 1``,
    so ``T = 1`` is uniform and ``T < 1`` favours centers sitting in
    high-density clusters.
    """
    n = centers.shape[0]
    if temperature == 1.0:
        return np.full(n, 1.0 / n)
    peak = kernel_matrix(spec, centers, centers).sum(axis=1)
    logp = (1.0 / temperature - 1.0) * np.log(peak)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def proposal_density(points: np.ndarray, centers: np.ndarray, probs: np.ndarray,
                     prop_spec: KernelSpec, normalized: bool = True) -> np.ndarray:
    """q(r) = sum_u p_u kappa_prop(r; c_u); unnormalized drops the kernel constant."""
    q = kernel_matrix(prop_spec, points, centers) @ probs
    if not normalized:
        q = q * profile_mass(prop_spec.family, prop_spec.sigma, prop_spec.dim)
    return q


def sample_importance(objects, spec: KernelSpec, cfg: SamplerConfig, m: int, rng_seed: int):
    """Draw from the kernel mixture around the objects.

    Returns (points, weights, q) where q is the proposal density actually
    used in the weights (including the uniform part of a mixed scheme).
    """
    if objects.n == 0:
        raise EmptyProposalError("importance sampling needs at least one object to build a proposal")
    if m < 1:
        raise InvalidArgument("sample count must be at least 1")
    rng = make_rng(rng_seed, "sampling")
    centers = objects.positions
    psigma = cfg.proposal_sigma if cfg.proposal_sigma is not None else spec.sigma
    prop_spec = KernelSpec(spec.family, psigma, spec.dim, True)
    probs = component_probabilities(centers, spec, cfg.temperature)

    frac = cfg.importance_fraction
    n_imp = int(round(frac * m))
    n_uni = m - n_imp
    box = None
    if n_uni > 0:
        box = _box_arrays(cfg.box if cfg.box is not None else default_box(centers, spec.sigma), spec.dim)

    comp = rng.choice(centers.shape[0], size=n_imp, p=probs)
    pts_imp = centers[comp] + sample_offsets(spec.family, psigma, spec.dim, n_imp, rng)
    if n_uni > 0:
        lo, hi = box
        pts_uni = lo + (hi - lo) * rng.random((n_uni, spec.dim))
        points = np.vstack([pts_imp, pts_uni])
    else:
        points = pts_imp

    exact = cfg.weight_mode == "exact"
    q = proposal_density(points, centers, probs, prop_spec, normalized=exact)
    if n_uni > 0:
        lo, hi = box
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        vol = float(np.prod(hi - lo))
        q = frac * q + (1.0 - frac) * inside / vol
    # q can underflow for points far from every center; floor it so weights stay finite
    q = np.maximum(q, np.finfo(float).tiny)
    weights = 1.0 / (m * q)
    return points, weights, q


def draw_samples(objects, spec: KernelSpec, cfg: SamplerConfig, m: int, rng_seed: int):
    """Dispatch on ``cfg.scheme``; returns (points, weights, proposal_meta)."""
    meta = {"weight_mode": cfg.weight_mode}
    if cfg.scheme == "uniform":
        if cfg.box is not None:
            box = cfg.box
        elif objects.n:
            box = default_box(objects.positions, spec.sigma)
        else:
            raise InvalidArgument("uniform sampling of an empty set needs an explicit box")
        lo, hi = _box_arrays(box, spec.dim)
        if objects.n and (np.any(objects.positions.min(axis=0) - 5 * spec.sigma < lo)
                          or np.any(objects.positions.max(axis=0) + 5 * spec.sigma > hi)):
            raise InvalidArgument("uniform box must contain every center with at least 5 sigma padding")
        points, weights = sample_uniform((lo, hi), m, rng_seed, cfg.weight_mode)
        meta["box"] = [lo.tolist(), hi.tolist()]
        return points, weights, meta
    points, weights, _ = sample_importance(objects, spec, cfg, m, rng_seed)
    meta.update(
        proposal_sigma=cfg.proposal_sigma if cfg.proposal_sigma is not None else spec.sigma,
        temperature=cfg.temperature,
        importance_fraction=cfg.importance_fraction,
    )
    return points, weights, meta
