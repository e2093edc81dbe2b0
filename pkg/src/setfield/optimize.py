"""Kernel-matching objective and an L-BFGS minimizer for refining centers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument, OptimizationDiverged
from .kernels import KernelSpec, kernel_mass, kernel_matrix_with_grad


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iter: int = 50
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    grad_tol: float = 1e-8
    max_ls_steps: int = 20

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise InvalidArgument("need 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_iter < 1:
            raise InvalidArgument("memory and max_iter must be at least 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)  # (iteration, value, grad inf-norm)


# ---------------------------------------------------------------------------
# line search


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    if not (math.isfinite(fa) and math.isfinite(fb)):
        return None
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    if not math.isfinite(t):
        return None
    return t


def _interpolate(a, fa, ga, b, fb, gb):
    lo, hi = min(a, b), max(a, b)
    t = _cubic_min(a, fa, ga, b, fb, gb)
    width = hi - lo
    # keep the trial safely inside the bracket
    if t is None or t < lo + 0.1 * width or t > hi - 0.1 * width:
        t = 0.5 * (lo + hi)
    return t


def strong_wolfe(phi: Callable, f0: float, g0: float, step: float, c1: float, c2: float, max_steps: int = 20):
    """Strong-Wolfe line search with cubic interpolation.

    ``phi(t)`` returns ``(value, directional_derivative, payload)``. Returns
    ``(t, value, payload, ok)``; on failure the best sufficient-decrease
    point seen is returned with ``ok=False`` (or t=0 if none).
    """
    t_prev, f_prev, g_prev = 0.0, f0, g0
    t = step
    best = (0.0, f0, None)
    evals = 0

    def zoom(lo, flo, glo, hi, fhi, ghi, evals, best):
        while evals < max_steps:
            tj = _interpolate(lo, flo, glo, hi, fhi, ghi)
            fj, gj, pj = phi(tj)
            evals += 1
            if not math.isfinite(fj):
                hi, fhi, ghi = tj, math.inf, 0.0
                continue
            if fj > f0 + c1 * tj * g0 or fj >= flo:
                hi, fhi, ghi = tj, fj, gj
            else:
                if fj < best[1]:
                    best = (tj, fj, pj)
                if abs(gj) <= -c2 * g0:
                    return tj, fj, pj, True
                if gj * (hi - lo) >= 0:
                    hi, fhi, ghi = lo, flo, glo
                lo, flo, glo = tj, fj, gj
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return best[0], best[1], best[2], False

    while evals < max_steps:
        ft, gt, pt = phi(t)
        evals += 1
        if not math.isfinite(ft):
            # shrink back into the finite region
            return zoom(t_prev, f_prev, g_prev, t, math.inf, 0.0, evals, best)
        if ft > f0 + c1 * t * g0 or (evals > 1 and ft >= f_prev):
            return zoom(t_prev, f_prev, g_prev, t, ft, gt, evals, best)
        if ft < best[1]:
            best = (t, ft, pt)
        if abs(gt) <= -c2 * g0:
            return t, ft, pt, True
        if gt >= 0:
            return zoom(t, ft, gt, t_prev, f_prev, g_prev, evals, best)
        t_prev, f_prev, g_prev = t, ft, gt
        t = 2.0 * t
    return best[0], best[1], best[2], False


# ---------------------------------------------------------------------------
# L-BFGS


def lbfgs(fun: Callable, x0, cfg: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    """Minimize ``fun(x) -> (value, grad)`` by L-BFGS (two-loop recursion)."""
    x = np.array(x0, dtype=float).ravel()
    f, g = fun(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise OptimizationDiverged("objective is not finite at the starting point", last_good=x)
    s_hist, y_hist, rho_hist = [], [], []
    trace = [(0, f, float(np.max(np.abs(g))) if g.size else 0.0)]
    if trace[0][2] <= cfg.grad_tol:
        return LbfgsResult(x, f, 0, True, "gradient tolerance reached", trace)

    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = r * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            gamma = 1.0 / max(np.linalg.norm(g), 1e-300)
        z = gamma * q
        for s, y, r, a in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            b = r * (y @ z)
            z += s * (a - b)
        d = -z
        gd = float(g @ d)
        if gd >= 0:
            # not a descent direction: reset memory, fall back to steepest descent
            s_hist, y_hist, rho_hist = [], [], []
            d = -g / max(np.linalg.norm(g), 1e-300)
            gd = float(g @ d)

        def phi(t, x=x, d=d):
            xt = x + t * d
            ft, gt = fun(xt)
            if not (math.isfinite(ft) and np.all(np.isfinite(gt))):
                return math.inf, 0.0, None
            return ft, float(gt @ d), (xt, gt)

        t, f_new, payload, _ = strong_wolfe(phi, f, gd, 1.0, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_ls_steps)
        if payload is None or f_new > f:
            message = "line search failed"
            it -= 1
            break
        x_new, g_new = payload
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        trace.append((it, f, gnorm))
        if gnorm <= cfg.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
    return LbfgsResult(x, f, it, converged, message, trace)


# ---------------------------------------------------------------------------
# kernel-matching objective


@dataclass
class PositionObjective:
    """Mean squared mismatch between observed density and a sum of kernels.

    ``log_floor`` is relative to the peak observed density.
    """

    points: np.ndarray
    density: np.ndarray
    spec: KernelSpec
    fit_amplitude: bool = False
    log_space: bool = False
    log_floor: float = 1e-8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, self.spec.dim)
        self.density = np.asarray(self.density, dtype=float).ravel()

    @property
    def floor(self) -> float:
        peak = float(self.density.max()) if self.density.size else 0.0
        return self.log_floor * peak if peak > 0 else self.log_floor


def objective_eval(obj: PositionObjective, centers, log_amplitude: float = 0.0):
    """Value and analytic gradient of the kernel-matching loss.

    The gradient is flattened over centers (row-major), followed by the
    derivative with respect to ``log_amplitude`` when ``obj.fit_amplitude``.
    """
    c = np.asarray(centers, dtype=float).reshape(-1, obj.spec.dim)
    if c.shape[0] == 0:
        raise InvalidArgument("position objective needs at least one center")
    s = obj.points.shape[0]
    amp = math.exp(log_amplitude)
    k, g = kernel_matrix_with_grad(obj.spec, obj.points, c)
    scale = amp / kernel_mass(obj.spec)
    pred = scale * k.sum(axis=1)
    if obj.log_space:
        fl = obj.floor
        active = pred > fl
        res = np.log(np.maximum(obj.density, fl)) - np.log(np.maximum(pred, fl))
        # d log(pred) = d pred / pred where the floor is inactive
        coef = np.where(active, -2.0 * res / (s * np.where(active, pred, 1.0)), 0.0)
    else:
        res = obj.density - pred
        coef = -2.0 * res / s
    value = float(res @ res) / s
    # d pred_s / d c_u = scale * g_su * (r_s - c_u)
    wg = coef[:, None] * g
    grad_c = scale * (wg.T @ obj.points - wg.sum(axis=0)[:, None] * c)
    grad = grad_c.ravel()
    if obj.fit_amplitude:
        grad = np.append(grad, float(coef @ pred))
    return value, grad


def lbfgs_minimize(obj: PositionObjective, centers0, cfg: LbfgsConfig = LbfgsConfig(),
                   log_amplitude0: float = 0.0):
    """Refine centers (and optionally the amplitude) from ``centers0``.

    Optimizes in units of sigma with the loss divided by a fixed positive
    constant, which leaves the minimizers and the descent order unchanged.
    Returns ``(centers, amplitude, value, iterations, converged, result)``.
    """
    c0 = np.asarray(centers0, dtype=float).reshape(-1, obj.spec.dim)
    k = c0.shape[0]
    sig = obj.spec.sigma
    if obj.log_space:
        norm = 1.0
    else:
        norm = float(obj.density @ obj.density) / max(obj.density.size, 1)
        if norm <= 0:
            norm = 1.0

    def fun(z):
        cz = z[: k * obj.spec.dim].reshape(k, obj.spec.dim) * sig
        la = z[-1] if obj.fit_amplitude else log_amplitude0
        v, gr = objective_eval(obj, cz, la)
        gz = gr.copy()
        gz[: k * obj.spec.dim] *= sig
        return v / norm, gz / norm

    z0 = (c0 / sig).ravel()
    if obj.fit_amplitude:
        z0 = np.append(z0, log_amplitude0)
    try:
        res = lbfgs(fun, z0, cfg)
    except OptimizationDiverged as err:
        if err.last_good is not None:
            err.last_good = err.last_good[: k * obj.spec.dim].reshape(k, obj.spec.dim) * sig
        raise
    centers = res.x[: k * obj.spec.dim].reshape(k, obj.spec.dim) * sig
    amp = math.exp(res.x[-1]) if obj.fit_amplitude else math.exp(log_amplitude0)
    return centers, amp, res.value * norm, res.iterations, res.converged, res
