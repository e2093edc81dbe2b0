"""Forward map from object sets to density and feature fields."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InvalidArgument
from .kernels import KernelSpec, kernel_mass, kernel_matrix


@dataclass
class ObjectSet:
    """N objects: positions (N, d) and features (N, d_x); d_x may be 0."""

    positions: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2:
            raise InvalidArgument("positions must be an (N, d) array")
        if self.features is None:
            feats = np.zeros((pos.shape[0], 0))
        else:
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim == 1:
                feats = feats[:, None]
        if feats.shape[0] != pos.shape[0]:
            raise InvalidArgument(
                f"features have {feats.shape[0]} rows but there are {pos.shape[0]} positions"
            )
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(feats))):
            raise InvalidArgument("object set contains non-finite values")
        self.positions = pos
        self.features = feats

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def permuted(self, perm) -> "ObjectSet":
        perm = np.asarray(perm)
        return ObjectSet(self.positions[perm], self.features[perm])

    def min_separation(self) -> float:
        if self.n < 2:
            return np.inf
        return float(pdist(self.positions).min())


@dataclass
class FieldSamples:
    """Fields evaluated at M sample locations, with Monte-Carlo weights."""

    points: np.ndarray
    density: np.ndarray
    features: np.ndarray
    weights: np.ndarray
    scheme: str = "importance"
    proposal_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        m = self.points.shape[0]
        self.density = np.asarray(self.density, dtype=float).reshape(m)
        self.features = np.asarray(self.features, dtype=float).reshape(m, -1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(m)
        if self.scheme not in ("uniform", "importance", "mixed", "grid"):
            raise InvalidArgument(f"unknown sampling scheme {self.scheme!r}")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "FieldSamples":
        """Rows ``idx``; weights are rescaled by M / len(idx) to stay unbiased."""
        idx = np.asarray(idx)
        scale = self.m / len(idx)
        return FieldSamples(
            self.points[idx],
            self.density[idx],
            self.features[idx],
            self.weights[idx] * scale,
            self.scheme,
            dict(self.proposal_meta),
        )


def encode_at(objects: ObjectSet, spec: KernelSpec, queries) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (rho, h) at query points; returns (M,) density and (M, d_x) features."""
    if objects.n and objects.dim != spec.dim:
        raise InvalidArgument(f"object dimension {objects.dim} does not match kernel dimension {spec.dim}")
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q[:, None] if spec.dim == 1 else q[None, :]
    if q.shape[1] != spec.dim:
        raise InvalidArgument(f"query dimension {q.shape[1]} does not match kernel dimension {spec.dim}")
    if objects.n == 0:
        return np.zeros(q.shape[0]), np.zeros((q.shape[0], objects.n_features))
    if objects.n > 1 and objects.min_separation() < 1e-9 * spec.sigma:
        warnings.warn("coincident object positions: encoding is defined but not decodable", stacklevel=2)
    # canonical object order makes the float summation permutation invariant
    order = np.lexsort(np.hstack([objects.positions, objects.features]).T[::-1])
    pos, feats = objects.positions[order], objects.features[order]
    k = kernel_matrix(spec, q, pos) / kernel_mass(spec)
    return k.sum(axis=1), k @ feats


def encode_field(objects: ObjectSet, spec: KernelSpec, sampler, count: int, rng_seed: int) -> FieldSamples:
    """Sample ``count`` locations with ``sampler`` and evaluate the fields there."""
    from .sampling import draw_samples

    if count < 1:
        raise InvalidArgument("sample count must be at least 1")
    points, weights, meta = draw_samples(objects, spec, sampler, count, rng_seed)
    density, feats = encode_at(objects, spec, points)
    return FieldSamples(points, density, feats, weights, sampler.scheme_label, meta)
