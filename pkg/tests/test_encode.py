import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from setfield.encode import FieldSamples, ObjectSet, encode_at, encode_field
from setfield.errors import EmptyProposalError, InvalidArgument
from setfield.kernels import KernelSpec
from setfield.sampling import SamplerConfig

from conftest import grid_box

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_empty_set_encodes_to_zero():
    spec = KernelSpec("gaussian", 0.1, 2)
    rho, h = encode_at(ObjectSet(np.zeros((0, 2)), np.zeros((0, 3))), spec, np.random.rand(7, 2))
    assert np.all(rho == 0) and h.shape == (7, 3) and np.all(h == 0)


def test_single_kernel_peak():
    spec = KernelSpec("gaussian", 1.0, 1)
    rho, h = encode_at(ObjectSet([[0.0]], [[2.5, -1.0]]), spec, [[0.0]])
    peak = 1 / math.sqrt(2 * math.pi)
    assert rho[0] == pytest.approx(peak)
    np.testing.assert_allclose(h[0], [2.5 * peak, -1.0 * peak])


def test_density_integrates_to_count():
    rng = np.random.default_rng(0)
    sigma = 0.1
    obj = ObjectSet(rng.random((3, 2)))
    pts, w = grid_box(-10 * sigma, 1 + 10 * sigma, 301, 2)
    rho, _ = encode_at(obj, KernelSpec("gaussian", sigma, 2), pts)
    assert float(rho @ w) == pytest.approx(3.0, abs=1e-3)


def test_unnormalized_kernel_divides_by_mass():
    spec = KernelSpec("gaussian", 0.3, 2, normalized=False)
    pts, w = grid_box(-3.0, 3.0, 301, 2)
    rho, h = encode_at(ObjectSet([[0.0, 0.0], [0.5, 0.5]], [[1.0], [3.0]]), spec, pts)
    assert float(rho @ w) == pytest.approx(2.0, rel=1e-6)
    assert float(h[:, 0] @ w) == pytest.approx(4.0, rel=1e-6)


def test_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        encode_at(ObjectSet(np.zeros((2, 3))), KernelSpec("gaussian", 1.0, 2), np.zeros((1, 2)))
    with pytest.raises(InvalidArgument):
        encode_at(ObjectSet(np.zeros((2, 2))), KernelSpec("gaussian", 1.0, 2), np.zeros((1, 3)))


def test_object_set_validation():
    with pytest.raises(InvalidArgument):
        ObjectSet(np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(InvalidArgument):
        ObjectSet([[0.0, math.nan]])
    assert ObjectSet(np.zeros((4, 2))).n_features == 0


def test_coincident_positions_warn():
    spec = KernelSpec("gaussian", 1.0, 2)
    with pytest.warns(UserWarning, match="coincident"):
        encode_at(ObjectSet([[0.0, 0.0], [0.0, 0.0]]), spec, [[0.0, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        encode_at(ObjectSet([[0.0, 0.0], [0.0, 1e-3]]), spec, [[0.0, 0.0]])


def test_encode_field_is_deterministic(six_scene):
    obj, spec = six_scene
    for cfg in (SamplerConfig(), SamplerConfig(scheme="uniform"), SamplerConfig(importance_fraction=0.6)):
        a = encode_field(obj, spec, cfg, 512, 11)
        b = encode_field(obj, spec, cfg, 512, 11)
        for name in ("points", "density", "features", "weights"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        c = encode_field(obj, spec, cfg, 512, 12)
        assert not np.array_equal(a.points, c.points)


def test_encode_field_errors(six_scene):
    obj, spec = six_scene
    with pytest.raises(InvalidArgument):
        encode_field(obj, spec, SamplerConfig(), 0, 0)
    with pytest.raises(EmptyProposalError):
        encode_field(ObjectSet(np.zeros((0, 2))), spec, SamplerConfig(), 10, 0)


def test_uniform_mass_within_half():
    rng = np.random.default_rng(7)
    obj = ObjectSet(rng.random((5, 2)) * 0.5)
    spec = KernelSpec("gaussian", 0.1, 2)
    box = ((-0.5, -0.5), (1.0, 1.0))
    hits = 0
    for seed in range(100):
        s = encode_field(obj, spec, SamplerConfig(scheme="uniform", box=box), 4096, seed)
        hits += abs(s.density @ s.weights - 5) < 0.5
        assert np.all(s.weights == s.weights[0])
    assert hits >= 99


def test_importance_mass_within_half():
    rng = np.random.default_rng(8)
    obj = ObjectSet(rng.random((7, 2)))
    spec = KernelSpec("gaussian", 0.05, 2)
    masses = [encode_field(obj, spec, SamplerConfig(), 4096, s).density
              @ encode_field(obj, spec, SamplerConfig(), 4096, s).weights for s in range(100)]
    assert np.all(np.abs(np.array(masses) - 7) < 0.5)


def test_subset_rescales_weights(six_scene):
    obj, spec = six_scene
    s = encode_field(obj, spec, SamplerConfig(), 4096, 0)
    sub = s.subset(np.arange(0, 4096, 2))
    assert sub.m == 2048
    np.testing.assert_allclose(sub.weights, 2 * s.weights[::2])


def test_field_samples_scheme_validation():
    with pytest.raises(InvalidArgument):
        FieldSamples(np.zeros((2, 1)), np.zeros(2), np.zeros((2, 0)), np.ones(2), scheme="sobol")


@given(arrays(float, (6, 2), elements=finite), arrays(float, (6, 3), elements=finite), st.permutations(range(6)),
       st.sampled_from(["gaussian", "laplacian", "epanechnikov"]))
def test_permutation_invariance_exact(pos, feats, perm, family):
    spec = KernelSpec(family, 0.7, 2)
    q = np.random.default_rng(0).uniform(-3, 3, size=(5000, 2))  # large enough for the fast path
    obj = ObjectSet(pos, feats)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = encode_at(obj, spec, q)
        b = encode_at(obj.permuted(perm), spec, q)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@given(arrays(float, (4, 2), elements=finite), arrays(float, (4, 2), elements=finite),
       arrays(float, (4, 2), elements=finite))
def test_feature_linearity(pos, x, y):
    spec = KernelSpec("gaussian", 0.5, 2)
    q = np.random.default_rng(1).uniform(-3, 3, size=(50, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        hx = encode_at(ObjectSet(pos, x), spec, q)[1]
        hy = encode_at(ObjectSet(pos, y), spec, q)[1]
        hxy = encode_at(ObjectSet(pos, x + y), spec, q)[1]
    scale = max(np.abs(hx).max(), np.abs(hy).max(), 1e-300)
    assert np.max(np.abs(hxy - hx - hy)) <= 1e-12 * scale


def test_superposition_of_disjoint_sets():
    rng = np.random.default_rng(2)
    a, b = rng.random((3, 2)), rng.random((4, 2)) + 2
    spec = KernelSpec("laplacian", 0.3, 2)
    q = rng.uniform(-1, 4, size=(200, 2))
    ra = encode_at(ObjectSet(a), spec, q)[0]
    rb = encode_at(ObjectSet(b), spec, q)[0]
    rab = encode_at(ObjectSet(np.vstack([a, b])), spec, q)[0]
    np.testing.assert_allclose(rab, ra + rb, rtol=1e-13)
