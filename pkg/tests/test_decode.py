import math

import numpy as np
import pytest

from setfield.decode import (
    DecodeOptions,
    DecodeResult,
    decode_batch,
    decode_set,
    estimate_count,
    fit_positions,
    match_hungarian,
    match_nearest,
    recover_features,
    round_half_up,
)
from setfield.encode import FieldSamples, ObjectSet, encode_at
from setfield.errors import InsufficientPoints, InvalidField, SetFieldError
from setfield.kernels import KernelSpec, gaussian_gram, kernel_matrix

from conftest import encode, grid_box


def samples_from(points, density, features, weights):
    return FieldSamples(np.asarray(points, float), np.asarray(density, float),
                        np.asarray(features, float), np.asarray(weights, float))


def test_round_half_up():
    assert [round_half_up(x) for x in (0.49, 0.5, 1.5, 2.5, 2.4999)] == [0, 1, 2, 3, 2]


def test_zero_density_counts_zero():
    s = samples_from(np.zeros((5, 2)), np.zeros(5), np.zeros((5, 1)), np.ones(5))
    assert estimate_count(s) == (0.0, 0)


def test_negative_mass_rejected():
    s = samples_from(np.zeros((2, 1)), [-1.0, -1.0], np.zeros((2, 0)), [1.0, 1.0])
    with pytest.raises(InvalidField):
        estimate_count(s)


def test_count_seven_over_seeds():
    rng = np.random.default_rng(0)
    pos = rng.random((7, 2))
    spec = KernelSpec("gaussian", 0.05, 2)
    for seed in range(100):
        raw, n = estimate_count(encode(ObjectSet(pos), spec, 4096, seed))
        assert 6.5 < raw < 7.5 and n == 7


def test_uniform_count_unbiased():
    spec = KernelSpec("gaussian", 0.1, 2)
    s = encode(ObjectSet([[0.5, 0.5]]), spec, 100_000, 0, scheme="uniform", box=((0, 0), (1, 1)))
    vals = s.density * s.weights
    se = vals.std(ddof=1) * math.sqrt(vals.size)
    assert abs(estimate_count(s)[0] - 1.0) < 3 * se


def test_single_center_position():
    spec = KernelSpec("gaussian", 0.05, 2)
    s = encode(ObjectSet([[0.3, 0.7]]), spec)
    centers, _, _, _ = fit_positions(s, spec, 1)
    assert np.linalg.norm(centers[0] - [0.3, 0.7]) < 1e-4 * 0.05


def test_five_separated_centers():
    from setfield.scenes import separated_positions

    sigma = 0.05
    spec = KernelSpec("gaussian", sigma, 2)
    for seed in range(20):
        truth = separated_positions(np.random.default_rng(seed), 5, 2, 6 * sigma)
        s = encode(ObjectSet(truth), spec, 4096, seed)
        centers = fit_positions(s, spec, 5, rng_seed=seed)[0]
        pi, ti = match_hungarian(centers, truth)
        assert np.max(np.linalg.norm(centers[pi] - truth[ti], axis=1)) < 0.02 * sigma


def test_close_pair_flagged():
    spec = KernelSpec("gaussian", 0.05, 2)
    s = encode(ObjectSet([[0.0, 0.0], [0.025, 0.0]]), spec)
    info = fit_positions(s, spec, 2)[3]
    assert info["low_separation"]


def test_insufficient_points():
    spec = KernelSpec("gaussian", 0.05, 1)
    s = samples_from([[0.0], [1.0]], [1.0, 1.0], np.zeros((2, 0)), [1.0, 1.0])
    with pytest.raises(InsufficientPoints):
        fit_positions(s, spec, 3)


def test_single_feature_ratio():
    spec = KernelSpec("gaussian", 0.05, 2)
    s = encode(ObjectSet([[0.2, 0.2]], [[1.5, -0.5]]), spec)
    x, _, _ = recover_features(s, spec, [[0.2, 0.2]])
    k = np.exp(-np.sum((s.points - 0.2) ** 2, axis=1) / (2 * 0.05**2))
    ratio = (k * s.weights) @ s.features / ((k * k) @ s.weights)
    np.testing.assert_allclose(x[0], ratio * 2 * math.pi * 0.05**2, rtol=1e-3)
    np.testing.assert_allclose(x[0], [1.5, -0.5], rtol=1e-3)


def test_dense_grid_recovers_features_exactly():
    sigma = 0.1
    spec = KernelSpec("gaussian", sigma, 2)
    truth = np.array([[0.0, 0.0], [0.5, 0.1], [0.2, 0.6]])
    feats = np.array([[1.0, 2.0], [-3.0, 0.5], [0.25, -1.0]])
    pts, w = grid_box(-1.0, 1.6, 521, 2)
    rho, h = encode_at(ObjectSet(truth, feats), spec, pts)
    s = samples_from(pts, rho, h, w)
    x, cond, fb = recover_features(s, spec, truth, tikhonov=0.0)
    assert not fb and np.isfinite(cond)
    np.testing.assert_allclose(x, feats, rtol=1e-6, atol=1e-6)


def test_quadrature_gram_matches_overlap_and_is_spd():
    sigma = 0.1
    spec = KernelSpec("gaussian", sigma, 2)
    centers = np.array([[0.0, 0.0], [0.05, 0.0], [0.3, 0.3]])
    pts, w = grid_box(-1.0, 1.3, 461, 2)
    km = kernel_matrix(spec, pts, centers)
    gram = km.T @ (km * w[:, None])
    np.testing.assert_allclose(gram, gaussian_gram(spec, centers), rtol=1e-8)
    assert np.linalg.eigvalsh(gram).min() > 0


def test_coincident_centers_fall_back():
    spec = KernelSpec("gaussian", 0.05, 2)
    s = encode(ObjectSet([[0.0, 0.0]], [[2.0]]), spec)
    x, cond, fb = recover_features(s, spec, [[0.0, 0.0], [0.0, 0.0]])
    assert fb
    # minimum-norm: the mass splits evenly
    np.testing.assert_allclose(x[:, 0], [1.0, 1.0], rtol=1e-3)


def test_weight_scale_cancels(six_scene):
    obj, spec = six_scene
    s = encode(obj, spec)
    a = recover_features(s, spec, obj.positions)[0]
    s.weights = s.weights * 123.0
    b = recover_features(s, spec, obj.positions)[0]
    np.testing.assert_allclose(b, a, rtol=1e-10)


def test_roundtrip_six(six_scene):
    obj, spec = six_scene
    res = decode_set(encode(obj, spec), spec)
    assert res.count == 6
    pi, ti = match_hungarian(res.centers, obj.positions)
    assert np.max(np.linalg.norm(res.centers[pi] - obj.positions[ti], axis=1)) < 0.02 * spec.sigma
    err = np.linalg.norm(res.features[pi] - obj.features[ti], axis=1) / np.linalg.norm(obj.features[ti], axis=1)
    assert err.max() < 1e-2
    assert not res.fallback_used and np.isfinite(res.gram_condition)


def test_empty_field():
    spec = KernelSpec("gaussian", 0.05, 2)
    s = samples_from(np.random.default_rng(0).random((20, 2)), np.zeros(20), np.zeros((20, 3)), np.ones(20))
    res = decode_set(s, spec)
    assert res.count == 0 and res.centers.shape == (0, 2) and res.features.shape == (0, 3)


def test_one_hot_labels():
    from setfield.scenes import separated_positions

    spec = KernelSpec("gaussian", 0.05, 2)
    rng = np.random.default_rng(1)
    pos = separated_positions(rng, 8, 2, 0.3)
    labels = rng.integers(0, 10, size=8)
    res = decode_set(encode(ObjectSet(pos, np.eye(10)[labels]), spec), spec, DecodeOptions(categorical=((0, 10),)))
    pi, ti = match_hungarian(res.centers, pos)
    np.testing.assert_array_equal(res.categorical_labels[pi], labels[ti])


def test_unnormalized_kernel_roundtrip():
    spec = KernelSpec("gaussian", 0.05, 2, normalized=False)
    obj = ObjectSet([[0.0, 0.0], [0.4, 0.1]], [[1.0], [-2.0]])
    res = decode_set(encode(obj, spec), spec)
    assert res.count == 2
    pi, ti = match_hungarian(res.centers, obj.positions)
    np.testing.assert_allclose(res.features[pi], obj.features[ti], rtol=1e-2)


def test_dimension_mismatch_attributed():
    s = samples_from(np.zeros((3, 2)), np.ones(3), np.zeros((3, 0)), np.ones(3))
    with pytest.raises(InvalidField):
        decode_set(s, KernelSpec("gaussian", 0.1, 3))


def test_errors_name_their_step():
    spec = KernelSpec("gaussian", 0.05, 1)
    s = samples_from([[0.0], [1.0]], [5.0, 5.0], np.zeros((2, 0)), [1.0, 1.0])
    with pytest.raises(SetFieldError, match=r"\[positions\]") as info:
        decode_set(s, spec)
    assert info.value.step == "positions"
    bad = samples_from([[0.0]], [-1.0], np.zeros((1, 0)), [1.0])
    with pytest.raises(SetFieldError, match=r"\[count\]"):
        decode_set(bad, spec)


def test_batch_matches_serial(six_scene, monkeypatch):
    obj, spec = six_scene
    batch = [encode(obj, spec, 2048, s) for s in range(4)]
    serial = decode_batch(batch, spec, workers=1)
    monkeypatch.setenv("SETFIELD_THREADS", "3")
    threaded = decode_batch(batch, spec)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.centers, b.centers) and np.array_equal(a.features, b.features)


def test_unnormalized_weights_with_calibration():
    spec = KernelSpec("gaussian", 0.05, 2)
    obj = ObjectSet([[0.0, 0.0], [0.5, 0.5], [0.0, 0.5]])
    s = encode(obj, spec, weight_mode="unnormalized")
    # uncalibrated mass is off by the proposal normaliser
    const = 2 * math.pi * 0.05**2
    assert estimate_count(s)[0] == pytest.approx(3 / const, rel=1e-12)
    scale = const
    assert decode_set(s, spec, DecodeOptions(count_scale=scale)).count == 3


def test_options_roundtrip():
    opts = DecodeOptions(categorical=((0, 3), (3, 5)), bic_delta=2, feature_spec=KernelSpec("laplacian", 0.2, 2))
    assert DecodeOptions.from_dict(opts.to_dict()) == opts


def test_matchers():
    pred = np.array([[0.0, 0.0], [1.0, 0.0]])
    truth = np.array([[1.1, 0.0], [0.1, 0.0]])
    pi, ti = match_hungarian(pred, truth)
    assert list(ti[np.argsort(pi)]) == [1, 0]
    assert list(match_nearest(pred, truth)[1]) == [1, 0]
    assert match_hungarian(np.zeros((0, 2)), truth)[0].size == 0


def test_result_type():
    assert isinstance(decode_set(encode(ObjectSet([[0.0, 0.0]]), KernelSpec("gaussian", 0.05, 2)),
                                 KernelSpec("gaussian", 0.05, 2)), DecodeResult)
