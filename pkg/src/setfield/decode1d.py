"""Light-curve fields on a uniform time grid and their grid-specialized decoder.

A burst component is (t0, A, tau_rise, skew). The encoder places a unit
normalized Gaussian of width ``sigma_rho`` at each onset in the density
channel, and feature-weighted Gaussians of width ``sigma_feat`` in the
feature channels (amplitude and rise time in log10 by default).

The simulator's pulse shape is a convention of this package: an exponential
rise with time constant tau_rise up to a peak of height A at t0, followed by
an exponential decay with time constant skew * tau_rise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decode import DecodeOptions, recover_features, round_half_up
from .encode import FieldSamples
from .errors import InvalidArgument, InvalidField
from .kernels import KernelSpec, kernel_matrix
from .optimize import LbfgsConfig, PositionObjective, lbfgs_minimize
from .rng import make_rng

CHANNELS = ("amplitude", "rise", "skew")
EXP_CLAMP = 12.0
EDGE_SIGMAS = 5.0


@dataclass(frozen=True)
class FrbPrior:
    n_max: int = 6
    t0_range: tuple = (0.2, 0.8)
    log10_amplitude_range: tuple = (1.0, 2.477)
    log10_rise_range: tuple = (-3.0, -0.222)
    skew_range: tuple = (1.0, 6.0)
    background: float = 5.0
    n_grid: int = 1000
    min_onset_separation: float = 0.0

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FrbPrior":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class FieldConfig1D:
    n_grid: int = 1000
    sigma_rho: float = 0.01
    sigma_feat: float = 0.015
    log_channels: tuple = (True, True, False)  # base-10 per channel

    def __post_init__(self):
        if self.n_grid < 3:
            raise InvalidArgument("need at least 3 grid points")
        if not (self.sigma_rho > 0 and self.sigma_feat > 0):
            raise InvalidArgument("kernel widths must be positive")

    def to_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "sigma_rho": self.sigma_rho,
            "sigma_feat": self.sigma_feat,
            "log_channels": list(self.log_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig1D":
        d = dict(d)
        d["log_channels"] = tuple(d.get("log_channels", (True, True, False)))
        return cls(**d)


@dataclass
class Bursts:
    """A set of burst components; all arrays have length N."""

    t0: np.ndarray
    amplitude: np.ndarray
    rise: np.ndarray
    skew: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.t0, self.amplitude, self.rise, self.skew)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise InvalidArgument("burst parameter arrays must be 1D and of equal length")
        self.t0, self.amplitude, self.rise, self.skew = arrs

    @property
    def n(self) -> int:
        return self.t0.shape[0]

    def feature_matrix(self, log_channels=(True, True, False)) -> np.ndarray:
        cols = [self.amplitude, self.rise, self.skew]
        return np.stack([np.log10(c) if lg else c for c, lg in zip(cols, log_channels)], axis=1)

    def sorted(self) -> "Bursts":
        o = np.argsort(self.t0, kind="stable")
        return Bursts(self.t0[o], self.amplitude[o], self.rise[o], self.skew[o])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("t0", "amplitude", "rise", "skew")}


@dataclass
class GridField1D:
    times: np.ndarray
    density: np.ndarray
    feature_channels: np.ndarray  # (C, T)
    sigma_rho: float
    sigma_feat: float
    log_channels: tuple = (True, True, False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.density = np.asarray(self.density, dtype=float).ravel()
        self.feature_channels = np.atleast_2d(np.asarray(self.feature_channels, dtype=float))
        t = self.times
        if t.size < 3:
            raise InvalidField("need at least 3 grid points")
        if self.density.shape != t.shape or self.feature_channels.shape[1] != t.size:
            raise InvalidField("density and feature channels must match the time grid")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise InvalidField("times must be strictly increasing")
        if np.max(np.abs(steps - steps.mean())) > 1e-12 * max(abs(steps.mean()), abs(t).max()):
            raise InvalidField("times must be a uniform grid")
        if not (np.all(np.isfinite(self.density)) and np.all(np.isfinite(self.feature_channels))):
            raise InvalidField("field contains non-finite values")
        # a predicted field can dip below zero; the density is a nonnegative quantity
        self.density = np.maximum(self.density, 0.0)
        self.log_channels = tuple(self.log_channels)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    @property
    def n_grid(self) -> int:
        return self.times.size

    def mass(self) -> float:
        return float(np.trapezoid(self.density, dx=self.dt))

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "density": self.density.tolist(),
            "feature_channels": self.feature_channels.tolist(),
            "sigma_rho": self.sigma_rho,
            "sigma_feat": self.sigma_feat,
            "log_channels": list(self.log_channels),
        }


@dataclass
class LightcurveResult:
    count: int
    raw_mass: float
    onsets: np.ndarray
    log_features: np.ndarray  # (N, C) as decoded, log channels still in log10
    bursts: Optional[Bursts]
    shortfall: bool = False
    edge_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    subpixel_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    gram_condition: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "raw_mass": self.raw_mass,
            "onsets": self.onsets.tolist(),
            "log_features": self.log_features.tolist(),
            "bursts": None if self.bursts is None else self.bursts.to_dict(),
            "shortfall": self.shortfall,
            "edge_flags": self.edge_flags.tolist(),
            "subpixel_flags": self.subpixel_flags.tolist(),
            "gram_condition": self.gram_condition,
        }


def time_grid(n_grid: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_grid)


def pulse(times, t0: float, amplitude: float, rise: float, skew: float) -> np.ndarray:
    """Peak-normalized two-sided exponential pulse (simulator convention)."""
    t = np.asarray(times, dtype=float)
    before = t < t0
    out = np.empty_like(t)
    out[before] = np.exp((t[before] - t0) / rise)
    out[~before] = np.exp(-(t[~before] - t0) / (skew * rise))
    return amplitude * out


def rate_curve(bursts: Bursts, times, background: float = 5.0) -> np.ndarray:
    rate = np.full(np.shape(times), float(background))
    for u in range(bursts.n):
        rate += pulse(times, bursts.t0[u], bursts.amplitude[u], bursts.rise[u], bursts.skew[u])
    return rate


def sample_bursts(prior: FrbPrior, rng: np.random.Generator, n: Optional[int] = None) -> Bursts:
    if n is None:
        n = int(rng.integers(1, prior.n_max + 1))
    lo, hi = prior.t0_range
    t0 = np.empty(n)
    k = 0
    tries = 0
    # rejection keeps onset order and the prior marginal away from collisions
    while k < n:
        tries += 1
        if tries > 100000:
            raise InvalidArgument("cannot place onsets with the requested separation")
        c = rng.uniform(lo, hi)
        if k and np.min(np.abs(t0[:k] - c)) < prior.min_onset_separation:
            continue
        t0[k] = c
        k += 1
    amp = 10.0 ** rng.uniform(*prior.log10_amplitude_range, size=n)
    rise = 10.0 ** rng.uniform(*prior.log10_rise_range, size=n)
    skew = rng.uniform(*prior.skew_range, size=n)
    return Bursts(t0, amp, rise, skew)


def simulate_frb(prior_seed: int, prior: FrbPrior = FrbPrior(), n: Optional[int] = None,
                 zero_amplitude: bool = False):
    """Draw burst parameters from the prior and Poisson counts on the grid."""
    rng = make_rng(prior_seed, "frb")
    bursts = sample_bursts(prior, rng, n)
    if zero_amplitude:
        bursts = Bursts(bursts.t0, np.zeros(bursts.n), bursts.rise, bursts.skew)
    times = time_grid(prior.n_grid)
    counts = rng.poisson(rate_curve(bursts, times, prior.background))
    return bursts, counts


def encode_lightcurve(bursts: Bursts, cfg: FieldConfig1D = FieldConfig1D()) -> GridField1D:
    times = time_grid(cfg.n_grid)
    t0 = bursts.t0[:, None]
    k_rho = kernel_matrix(KernelSpec("gaussian", cfg.sigma_rho, 1), times[:, None], t0)
    k_feat = kernel_matrix(KernelSpec("gaussian", cfg.sigma_feat, 1), times[:, None], t0)
    feats = bursts.feature_matrix(cfg.log_channels)
    return GridField1D(times, k_rho.sum(axis=1), (k_feat @ feats).T, cfg.sigma_rho, cfg.sigma_feat,
                       cfg.log_channels)


def downsample(field: GridField1D, factor: int) -> GridField1D:
    """Average-pool by ``factor``; a trailing partial block is dropped."""
    if factor < 1:
        raise InvalidArgument("downsample factor must be at least 1")
    if factor == 1:
        return field
    t = field.n_grid // factor
    if t < 3:
        raise InvalidArgument("downsampled grid would have fewer than 3 points")
    n = t * factor

    def pool(a):
        return a[..., :n].reshape(*a.shape[:-1], t, factor).mean(axis=-1)

    return GridField1D(pool(field.times), pool(field.density), pool(field.feature_channels),
                       field.sigma_rho, field.sigma_feat, field.log_channels)


def nms_peaks(density, k: int, min_sep: int) -> list:
    """Greedy non-maximum suppression; ties go to the lower index.

    Picks up to ``k`` indices in descending density order and suppresses
    ``+-min_sep`` around each pick. Stops early once only zero density is
    left, so the result may be shorter than ``k``.
    """
    if k < 0 or min_sep < 1:
        raise InvalidArgument("need k >= 0 and min_sep >= 1")
    rho = np.asarray(density, dtype=float).ravel()
    order = np.argsort(-rho, kind="stable")
    free = np.ones(rho.size, dtype=bool)
    picks = []
    for i in order:
        if len(picks) >= k or rho[i] <= 0.0:
            break
        if not free[i]:
            continue
        picks.append(int(i))
        free[max(0, i - min_sep): i + min_sep + 1] = False
    return picks


def subpixel_refine(density, index: int, dt: float, t_start: float = 0.0) -> tuple[float, bool]:
    """Vertex of the parabola through three neighbouring bins.

    Returns ``(time, flagged)``. The offset is clipped to half a bin; a
    boundary index or non-negative curvature returns the bin center with
    ``flagged=True``.
    """
    rho = np.asarray(density, dtype=float).ravel()
    center = t_start + index * dt
    if index < 1 or index > rho.size - 2:
        return center, True
    y0, y1, y2 = rho[index - 1], rho[index], rho[index + 1]
    curv = y0 - 2.0 * y1 + y2
    if curv >= 0.0:
        return center, True
    off = 0.5 * (y0 - y2) / curv
    return center + float(np.clip(off, -0.5, 0.5)) * dt, False


def decode_lightcurve(field: GridField1D, lbfgs: LbfgsConfig = LbfgsConfig(),
                      tikhonov: float = DecodeOptions().tikhonov) -> LightcurveResult:
    raw = field.mass()
    count = max(0, round_half_up(raw))
    c = field.feature_channels.shape[0]
    if count == 0:
        return LightcurveResult(0, raw, np.zeros(0), np.zeros((0, c)), _to_bursts(np.zeros(0), np.zeros((0, c)), field))
    dt = field.dt
    t_start = float(field.times[0])
    min_sep = max(1, int(round(2.0 * field.sigma_rho / dt)))
    picks = nms_peaks(field.density, count, min_sep)
    shortfall = len(picks) < count
    refined = [subpixel_refine(field.density, i, dt, t_start) for i in picks]
    seeds = np.array([r[0] for r in refined])
    sub_flags = np.array([r[1] for r in refined], dtype=bool)
    info = {"min_sep": min_sep, "seeds": seeds.tolist()}
    if seeds.size:
        spec = KernelSpec("gaussian", field.sigma_rho, 1)
        obj = PositionObjective(field.times[:, None], field.density, spec)
        centers, _, residual, iters, conv, res = lbfgs_minimize(obj, seeds[:, None], lbfgs)
        onsets = centers[:, 0]
        info.update(residual=residual, lbfgs_iterations=iters, lbfgs_message=res.message)
    else:
        onsets = np.zeros(0)
    order = np.argsort(onsets, kind="stable")
    onsets = onsets[order]
    sub_flags = sub_flags[order]

    cond = 1.0
    if onsets.size:
        samples = FieldSamples(field.times[:, None], field.density, field.feature_channels.T,
                               np.full(field.n_grid, dt), "grid")
        fspec = KernelSpec("gaussian", field.sigma_feat, 1)
        feats, cond, fallback = recover_features(samples, fspec, onsets[:, None], tikhonov)
        info["fallback_used"] = fallback
    else:
        feats = np.zeros((0, c))
    lo, hi = field.times[0], field.times[-1]
    edge = (onsets - lo < EDGE_SIGMAS * field.sigma_rho) | (hi - onsets < EDGE_SIGMAS * field.sigma_rho)
    return LightcurveResult(onsets.size, raw, onsets, feats, _to_bursts(onsets, feats, field),
                            shortfall, edge, sub_flags, cond, info)


def _to_bursts(onsets, feats, field: GridField1D) -> Optional[Bursts]:
    if feats.shape[1] != len(CHANNELS):
        return None
    cols = []
    for j, lg in enumerate(field.log_channels):
        col = feats[:, j]
        cols.append(10.0 ** np.clip(col, -EXP_CLAMP, EXP_CLAMP) if lg else col)
    return Bursts(onsets, *cols)


def align_by_onset(pred, truth):
    """Greedy nearest-onset alignment of two equal-length onset lists.

    Returns ``(pred_idx, truth_idx)``; pairs are taken in order of
    increasing distance, each index used once.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    dist = np.abs(pred[:, None] - truth[None, :])
    pi, ti = [], []
    used_p, used_t = set(), set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = divmod(int(flat), truth.size)
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        pi.append(i)
        ti.append(j)
    o = np.argsort(ti)
    return np.array(pi, dtype=int)[o], np.array(ti, dtype=int)[o]

