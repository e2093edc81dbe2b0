"""Radial kernels used to smear objects into fields.

Three families are supported, all functions of the distance ``t = |r - s|``:

* ``gaussian``      exp(-t^2 / 2 sigma^2)
* ``laplacian``     exp(-t / sigma)
* ``epanechnikov``  max(0, 1 - t^2 / sigma^2)

With ``normalized=True`` (the default) each profile is divided by its
integral over R^d, so the kernel mass ``alpha`` is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedOperation

FAMILIES = ("gaussian", "laplacian", "epanechnikov")


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    sigma: float = 1.0
    dim: int = 1
    normalized: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown kernel family {self.family!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidArgument(f"sigma must be positive and finite, got {self.sigma}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidArgument(f"dim must be a positive integer, got {self.dim}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "sigma": float(self.sigma),
            "dim": int(self.dim),
            "normalized": bool(self.normalized),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], float(d["sigma"]), int(d["dim"]), bool(d["normalized"]))

    def with_sigma(self, sigma: float) -> "KernelSpec":
        return KernelSpec(self.family, sigma, self.dim, self.normalized)


def profile_mass(family: str, sigma: float, dim: int) -> float:
    """Integral over R^dim of the unnormalized profile."""
    d = dim
    if family == "gaussian":
        return (2.0 * math.pi * sigma**2) ** (d / 2.0)
    if family == "laplacian":
        # surface area of S^{d-1} times Gamma(d) sigma^d
        return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0) * math.gamma(d) * sigma**d
    if family == "epanechnikov":
        ball = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
        return ball * sigma**d * 2.0 / (d + 2.0)
    raise InvalidArgument(f"unknown kernel family {family!r}")


def kernel_mass(spec: KernelSpec) -> float:
    """The kernel mass alpha (1 for normalized kernels)."""
    if spec.normalized:
        return 1.0
    return profile_mass(spec.family, spec.sigma, spec.dim)


def _scale(spec: KernelSpec) -> float:
    if spec.normalized:
        return 1.0 / profile_mass(spec.family, spec.sigma, spec.dim)
    return 1.0


def _as_points(x, dim: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and dim == 1 and a.size != 1:
        a = a[:, None]
    a = np.atleast_2d(a)
    if a.shape[-1] != dim:
        raise InvalidArgument(f"{name} has dimension {a.shape[-1]}, kernel expects {dim}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} contains non-finite values")
    return a


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # explicit differences: the expanded |a|^2+|b|^2-2ab form loses the exact
    # symmetry and translation invariance the tests rely on
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("mnd,mnd->mn", diff, diff)


def _profile(family: str, sigma: float, sq: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return np.exp(-0.5 * sq / sigma**2)
    if family == "laplacian":
        return np.exp(-np.sqrt(sq) / sigma)
    u = 1.0 - sq / sigma**2
    return np.where(u > 0.0, u, 0.0)


def kernel_eval(spec: KernelSpec, r, s) -> float:
    """K(r; s) for single points r and s."""
    r = _as_points(np.reshape(np.asarray(r, dtype=float), (1, -1)), spec.dim, "r")
    s = _as_points(np.reshape(np.asarray(s, dtype=float), (1, -1)), spec.dim, "s")
    return float(kernel_matrix(spec, r, s)[0, 0])


def kernel_matrix(spec: KernelSpec, points, centers) -> np.ndarray:
    """Matrix ``K[m, n] = K(points[m]; centers[n])`` of shape (M, N)."""
    points = _as_points(points, spec.dim, "points")
    centers = np.asarray(centers, dtype=float).reshape(-1, spec.dim)
    if centers.shape[0] == 0:
        return np.zeros((points.shape[0], 0))
    if points.shape[0] * centers.shape[0] > 4096:
        sq = _sq_dists_fast(points, centers)
    else:
        sq = _sq_dists(points, centers)
    return _scale(spec) * _profile(spec.family, spec.sigma, sq)


def _sq_dists_fast(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # expanded form on coordinates re-centered at the centers' mean; rounding
    # error is ~1e-16 * (extent / sigma)^2 in the exponent
    o = centers.mean(axis=0)
    p = points - o
    c = centers - o
    sq = np.einsum("ij,ij->i", p, p)[:, None] + np.einsum("ij,ij->i", c, c)[None, :] - 2.0 * (p @ c.T)
    return np.maximum(sq, 0.0)


def kernel_matrix_with_grad(spec: KernelSpec, points: np.ndarray, centers: np.ndarray):
    """Kernel matrix plus the radial factor ``g`` with dK/dc = g * (r - c).

    Returns ``(K, g)``, both (M, N). For the Laplacian the factor is set to
    zero at t = 0 (the cusp), and for Epanechnikov it uses the interior
    derivative up to the support edge.
    """
    sq = _sq_dists_fast(points, centers)
    c = _scale(spec)
    s2 = spec.sigma**2
    if spec.family == "gaussian":
        k = c * np.exp(-0.5 / s2 * sq)
        g = k * (1.0 / s2)
    elif spec.family == "laplacian":
        t = np.sqrt(sq)
        k = c * np.exp(-t / spec.sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(t > 0.0, k / (spec.sigma * t), 0.0)
    else:
        u = 1.0 - sq / s2
        inside = u > 0.0
        k = c * np.where(inside, u, 0.0)
        g = np.where(inside, 2.0 * c / s2, 0.0)
    return k, g


def gaussian_overlap(spec: KernelSpec, s1, s2) -> float:
    """Closed-form integral of K(r; s1) K(r; s2) over R^d for normalized Gaussians."""
    return float(gaussian_gram(spec, np.vstack([np.ravel(s1), np.ravel(s2)]))[0, 1])


def gaussian_gram(spec: KernelSpec, centers) -> np.ndarray:
    """Analytic Gram matrix of normalized Gaussian translates."""
    if spec.family != "gaussian" or not spec.normalized:
        raise UnsupportedOperation("analytic overlap is only available for normalized Gaussians")
    centers = _as_points(centers, spec.dim, "centers")
    sq = _sq_dists(centers, centers)
    s2 = spec.sigma**2
    return (4.0 * math.pi * s2) ** (-spec.dim / 2.0) * np.exp(-sq / (4.0 * s2))


def sample_offsets(family: str, sigma: float, dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` displacement vectors distributed as the normalized kernel."""
    if family == "gaussian":
        return sigma * rng.standard_normal((n, dim))
    if family == "laplacian":
        # radius ~ Gamma(dim, sigma), isotropic direction
        direction = rng.standard_normal((n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.gamma(dim, sigma, size=n)
        return direction * radius[:, None]
    if family == "epanechnikov":
        # projecting a uniform point of the (dim+2)-ball onto R^dim gives density ~ (1 - |x|^2)
        g = rng.standard_normal((n, dim + 2))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radius = rng.random(n) ** (1.0 / (dim + 2))
        return sigma * g[:, :dim] * radius[:, None]
    raise InvalidArgument(f"unknown kernel family {family!r}")
