import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from setfield.errors import InvalidArgument, UnsupportedOperation
from setfield.kernels import (
    FAMILIES,
    KernelSpec,
    gaussian_gram,
    gaussian_overlap,
    kernel_eval,
    kernel_mass,
    kernel_matrix,
    kernel_matrix_with_grad,
    profile_mass,
    sample_offsets,
)

from conftest import grid_box

coords = st.floats(-5, 5, allow_nan=False)


def radial_mass(family, sigma, dim):
    """Independent oracle: surface area times the radial integral of the profile."""
    prof = {
        "gaussian": lambda t: math.exp(-0.5 * t * t / sigma**2),
        "laplacian": lambda t: math.exp(-t / sigma),
        "epanechnikov": lambda t: max(0.0, 1.0 - t * t / sigma**2),
    }[family]
    upper = sigma if family == "epanechnikov" else 60 * sigma
    area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    val, _ = integrate.quad(lambda t: t ** (dim - 1) * prof(t), 0, upper, limit=200)
    return area * val


def test_gaussian_1d_peak():
    assert kernel_eval(KernelSpec("gaussian", 1.0, 1), [0.0], [0.0]) == pytest.approx(0.398942, abs=1e-6)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_epanechnikov_zero_outside_support(dim):
    spec = KernelSpec("epanechnikov", 0.7, dim)
    s = np.zeros(dim)
    for t in (0.7, 0.7000001, 3.0):
        r = np.zeros(dim)
        r[0] = t
        assert kernel_eval(spec, r, s) == 0.0


def test_gaussian_2d_matches_quadrature_normalized_profile():
    sigma = 0.5
    # half-width 10 sigma: a +-5 sigma box already truncates ~1e-6 of the mass
    pts, w = grid_box(-10 * sigma, 10 * sigma, 401, 2)
    prof = np.exp(-0.5 * np.sum(pts**2, axis=1) / sigma**2)
    norm = float(prof @ w)
    want = math.exp(-0.5 * 0.25 / sigma**2) / norm
    got = kernel_eval(KernelSpec("gaussian", sigma, 2), [0.5, 0.0], [0.0, 0.0])
    assert got == pytest.approx(want, rel=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_profile_mass_matches_radial_quadrature(family, dim):
    assert profile_mass(family, 0.3, dim) == pytest.approx(radial_mass(family, 0.3, dim), rel=1e-8)


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
def test_normalized_unit_mass_2d_trapezoid(family):
    spec = KernelSpec(family, 0.4, 2)
    pts, w = grid_box(-5 * 0.4, 5 * 0.4, 601, 2)
    total = float(kernel_matrix(spec, pts, np.zeros((1, 2)))[:, 0] @ w)
    assert total == pytest.approx(1.0, rel=1e-4)


def test_normalized_unit_mass_laplacian_2d_trapezoid():
    # the cusp and the heavy tail need a wider, finer box
    spec = KernelSpec("laplacian", 0.2, 2)
    pts, w = grid_box(-30 * 0.2, 30 * 0.2, 1501, 2)
    total = float(kernel_matrix(spec, pts, np.zeros((1, 2)))[:, 0] @ w)
    assert total == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("family", FAMILIES)
def test_unit_mass_monte_carlo(family):
    sigma = 0.3
    dim = 2
    spec = KernelSpec(family, sigma, dim)
    half = 5 * sigma if family != "laplacian" else 15 * sigma
    rng = np.random.default_rng(1)
    r = rng.uniform(-half, half, size=(10**6, dim))
    vals = kernel_matrix(spec, r, np.zeros((1, dim)))[:, 0] * (2 * half) ** dim
    est = vals.mean()
    se = vals.std() / math.sqrt(vals.size)
    tail = 0.0 if family != "laplacian" else 16 * math.exp(-15)  # mass outside the box is negligible
    assert abs(est - 1.0) < 3 * se + tail


def test_unnormalized_masses():
    assert kernel_mass(KernelSpec("gaussian", 1.0, 2, normalized=False)) == pytest.approx(2 * math.pi)
    assert kernel_mass(KernelSpec("epanechnikov", 1.0, 1, normalized=False)) == pytest.approx(4 / 3)
    val, _ = integrate.quad(lambda x: 1 - x * x, -1, 1)
    assert kernel_mass(KernelSpec("epanechnikov", 1.0, 1, normalized=False)) == pytest.approx(val)
    for fam in FAMILIES:
        assert kernel_mass(KernelSpec(fam, 0.3, 3)) == 1.0


def test_overlap_values():
    spec1 = KernelSpec("gaussian", 1.0, 1)
    assert gaussian_overlap(spec1, [0.0], [0.0]) == pytest.approx(0.282095, abs=1e-6)
    assert gaussian_overlap(spec1, [0.0], [20.0]) < 1e-40
    spec = KernelSpec("gaussian", 0.3, 2)
    s1, s2 = np.array([0.0, 0.0]), np.array([0.6, 0.0])
    pts, w = grid_box(-3.0, 3.6, 701, 2)
    pts = pts + np.array([0.0, 0.3])
    prod = kernel_matrix(spec, pts, s1[None])[:, 0] * kernel_matrix(spec, pts, s2[None])[:, 0]
    assert gaussian_overlap(spec, s1, s2) == pytest.approx(float(prod @ w), rel=1e-6)


def test_overlap_requires_normalized_gaussian():
    with pytest.raises(UnsupportedOperation):
        gaussian_overlap(KernelSpec("laplacian", 1.0, 1), [0.0], [0.0])
    with pytest.raises(UnsupportedOperation):
        gaussian_gram(KernelSpec("gaussian", 1.0, 1, normalized=False), [[0.0]])


@pytest.mark.parametrize("bad", [dict(sigma=0.0), dict(sigma=-1.0), dict(sigma=math.inf), dict(dim=0),
                                 dict(family="cauchy")])
def test_spec_validation(bad):
    with pytest.raises(InvalidArgument):
        KernelSpec(**{"family": "gaussian", "sigma": 1.0, "dim": 1, **bad})


def test_nonfinite_input_rejected():
    spec = KernelSpec("gaussian", 1.0, 2)
    with pytest.raises(InvalidArgument):
        kernel_eval(spec, [math.nan, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidArgument):
        kernel_eval(spec, [0.0, 0.0], [math.inf, 0.0])


def test_spec_dict_roundtrip():
    spec = KernelSpec("laplacian", 0.25, 3, False)
    assert KernelSpec.from_dict(spec.to_dict()) == spec
    assert spec.to_dict() == {"family": "laplacian", "sigma": 0.25, "dim": 3, "normalized": False}


@given(st.sampled_from(FAMILIES), st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2))
def test_symmetry_and_positivity(family, r, s):
    spec = KernelSpec(family, 0.8, 2)
    a = kernel_eval(spec, r, s)
    assert a == kernel_eval(spec, s, r)
    assert a >= 0.0


@given(st.sampled_from(FAMILIES), st.lists(coords, min_size=3, max_size=3),
       st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3))
def test_translation_invariance(family, r, s, shift):
    spec = KernelSpec(family, 1.3, 3)
    a = kernel_eval(spec, r, s)
    b = kernel_eval(spec, np.add(r, shift), np.add(s, shift))
    assert b == pytest.approx(a, rel=1e-9, abs=1e-300)


def test_fast_and_direct_distance_paths_agree():
    rng = np.random.default_rng(3)
    spec = KernelSpec("gaussian", 0.1, 2)
    pts = rng.random((3000, 2))
    centers = rng.random((5, 2))
    big = kernel_matrix(spec, pts, centers)  # expanded-form path
    small = np.vstack([kernel_matrix(spec, pts[i:i + 100], centers) for i in range(0, 3000, 100)])
    np.testing.assert_allclose(big, small, rtol=1e-10, atol=1e-12 * big.max())


@pytest.mark.parametrize("family", FAMILIES)
def test_grad_factor_matches_finite_differences(family):
    spec = KernelSpec(family, 0.5, 2)
    rng = np.random.default_rng(4)
    pts = rng.normal(scale=0.4, size=(50, 2))
    c = np.array([[0.05, -0.02]])
    _, g = kernel_matrix_with_grad(spec, pts, c)
    h = 1e-7
    for a in range(2):
        e = np.zeros((1, 2))
        e[0, a] = h
        fd = (kernel_matrix(spec, pts, c + e) - kernel_matrix(spec, pts, c - e))[:, 0] / (2 * h)
        an = g[:, 0] * (pts[:, a] - c[0, a])
        keep = np.abs(np.linalg.norm(pts - c, axis=1) - spec.sigma) > 1e-3  # away from the Epanechnikov edge
        np.testing.assert_allclose(an[keep], fd[keep], rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("family,second_moment", [
    ("gaussian", lambda d: d),
    ("laplacian", lambda d: d * (d + 1)),
    ("epanechnikov", lambda d: d / (d + 4)),
])
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sample_offsets_second_moment(family, second_moment, dim):
    rng = np.random.default_rng(5)
    x = sample_offsets(family, 1.0, dim, 200000, rng)
    r2 = np.sum(x**2, axis=1)
    assert abs(r2.mean() - second_moment(dim)) < 4 * r2.std() / math.sqrt(r2.size)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * x.std(axis=0) / math.sqrt(x.shape[0]))


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
def test_l1_shift_is_lipschitz(family):
    spec = KernelSpec(family, 0.5, 2)
    pts, w = grid_box(-3.0, 3.0, 401, 2)
    base = kernel_matrix(spec, pts, np.zeros((1, 2)))[:, 0]
    ratios = []
    for angle in np.linspace(0, math.pi, 5):
        for eps in (1e-2, 5e-3):
            t = eps * np.array([[math.cos(angle), math.sin(angle)]])
            l1 = float(np.abs(kernel_matrix(spec, pts, t)[:, 0] - base) @ w)
            ratios.append(l1 / eps)
    ratios = np.array(ratios)
    assert np.all(np.isfinite(ratios))
    assert ratios.max() / ratios.min() < 1.1
