"""Brown polynomial corrections and the kNN residual regressor."""

from __future__ import annotations

import numpy as np
import pytest

from spherecal.distortion import (
    BrownParams,
    brown_correction,
    brown_param_jacobian,
    brown_point_jacobian,
    cv_folds,
    knn_cross_validate,
    knn_fit,
    knn_predict,
    load_knn_map,
    save_knn_map,
)
from spherecal.errors import ConfigError
from spherecal.geometry import InteriorOrientation

IOP = InteriorOrientation(c=28.0)
FULL = ("k1", "k2", "k3", "p1", "p2", "a1", "a2")


def oracle_brown(xb, yb, k1, k2, k3, p1, p2, a1, a2):
    """Independently coded polynomial evaluation (term-by-term powers)."""
    r = np.sqrt(xb**2 + yb**2)
    s = k1 * r**2 + k2 * r**4 + k3 * r**6
    dx = xb * s + p1 * (r**2 + 2 * xb**2) + 2 * p2 * xb * yb + a1 * xb + a2 * yb
    dy = yb * s + p2 * (r**2 + 2 * yb**2) + 2 * p1 * xb * yb
    return dx, dy


def random_params(rng):
    vals = {
        "k1": rng.uniform(-1e-4, 1e-4),
        "k2": rng.uniform(-1e-7, 1e-7),
        "k3": rng.uniform(-1e-10, 1e-10),
        "p1": rng.uniform(-1e-5, 1e-5),
        "p2": rng.uniform(-1e-5, 1e-5),
        "a1": rng.uniform(-1e-4, 1e-4),
        "a2": rng.uniform(-1e-4, 1e-4),
    }
    return BrownParams.with_terms(FULL, **vals)


# -- Brown model -------------------------------------------------------------

def test_brown_zero_at_principal_point():
    p = random_params(np.random.default_rng(0))
    dx, dy = brown_correction(IOP.xp, IOP.yp, IOP, p)
    assert dx == 0.0 and dy == 0.0


def test_brown_single_term_arithmetic():
    p = BrownParams.with_terms(("k1",), k1=1e-4)
    dx, dy = brown_correction(10.0, 0.0, IOP, p)
    assert abs(dx - 0.1) < 1e-15
    assert dy == 0.0


def test_brown_matches_independent_oracle():
    rng = np.random.default_rng(1)
    p = random_params(rng)
    for _ in range(20):
        x, y = rng.uniform(-15, 15, 2)
        dx, dy = brown_correction(x, y, IOP, p)
        ex, ey = oracle_brown(x - IOP.xp, y - IOP.yp, p.k1, p.k2, p.k3, p.p1, p.p2, p.a1, p.a2)
        assert abs(dx - ex) < 1e-12
        assert abs(dy - ey) < 1e-12


def test_brown_respects_principal_point_offset():
    iop = InteriorOrientation(c=28.0, xp=0.7, yp=-0.3)
    p = BrownParams.with_terms(("k1",), k1=1e-4)
    dx, dy = brown_correction(10.7, -0.3, iop, p)
    assert abs(dx - 0.1) < 1e-15
    assert abs(dy) < 1e-15


def test_brown_radial_terms_odd_symmetry():
    rng = np.random.default_rng(2)
    p = BrownParams.with_terms(("k1", "k2", "k3"), k1=3e-5, k2=-2e-8, k3=1e-11)
    for _ in range(20):
        x, y = rng.uniform(-15, 15, 2)
        dx1, dy1 = brown_correction(x, y, IOP, p)
        dx2, dy2 = brown_correction(-x, -y, IOP, p)
        np.testing.assert_allclose([dx2, dy2], [-dx1, -dy1], atol=1e-14)


def test_brown_inactive_terms_must_be_zero():
    with pytest.raises(ConfigError, match="inactive"):
        BrownParams(k2=1e-6, active=("k1",))


def test_brown_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    xs, ys = rng.uniform(-12, 12, (2, 30))
    dx, dy = brown_correction(xs, ys, IOP, p)
    for i in range(30):
        sx, sy = brown_correction(xs[i], ys[i], IOP, p)
        assert dx[i] == sx and dy[i] == sy


def test_brown_param_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = random_params(rng)
    xs, ys = rng.uniform(-12, 12, (2, 10))
    jx, jy = brown_param_jacobian(xs, ys, IOP, FULL)
    base = np.array(p.values())
    # corrections are linear in the coefficients, so generous steps are exact
    steps = {"k1": 1e-5, "k2": 1e-8, "k3": 1e-11, "p1": 1e-5, "p2": 1e-5, "a1": 1e-4, "a2": 1e-4}
    for j, name in enumerate(FULL):
        h = steps[name]
        vals_hi = dict(zip(FULL, base))
        vals_lo = dict(zip(FULL, base))
        vals_hi[name] += h
        vals_lo[name] -= h
        dxh, dyh = brown_correction(xs, ys, IOP, BrownParams.with_terms(FULL, **vals_hi))
        dxl, dyl = brown_correction(xs, ys, IOP, BrownParams.with_terms(FULL, **vals_lo))
        np.testing.assert_allclose(jx[:, j], (dxh - dxl) / (2 * h), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(jy[:, j], (dyh - dyl) / (2 * h), rtol=1e-6, atol=1e-9)


def test_brown_point_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    for _ in range(10):
        x, y = rng.uniform(-12, 12, 2)
        dxx, dxy, dyx, dyy = brown_point_jacobian(x, y, IOP, p)
        h = 1e-6
        num_dxx = (brown_correction(x + h, y, IOP, p)[0] - brown_correction(x - h, y, IOP, p)[0]) / (2 * h)
        num_dxy = (brown_correction(x, y + h, IOP, p)[0] - brown_correction(x, y - h, IOP, p)[0]) / (2 * h)
        num_dyx = (brown_correction(x + h, y, IOP, p)[1] - brown_correction(x - h, y, IOP, p)[1]) / (2 * h)
        num_dyy = (brown_correction(x, y + h, IOP, p)[1] - brown_correction(x, y - h, IOP, p)[1]) / (2 * h)
        np.testing.assert_allclose([dxx, dxy, dyx, dyy],
                                   [num_dxx, num_dxy, num_dyx, num_dyy],
                                   rtol=1e-5, atol=1e-10)


# -- kNN regressor -----------------------------------------------------------

def brute_force_predict(features, labels, k, qx, qy):
    """Linear-scan oracle for inverse-distance weighted kNN."""
    d = np.hypot(features[:, 0] - qx, features[:, 1] - qy)
    order = np.argsort(d, kind="stable")[:k]
    dd = d[order]
    if dd[0] < 1e-12:
        return labels[order[0]].copy()
    w = 1.0 / dd
    return (w[:, None] * labels[order]).sum(axis=0) / w.sum()


def test_knn_single_sample_returns_label_everywhere():
    cmap = knn_fit([[0.0, 0.0]], [[0.5, -0.25]], k=1)
    for q in ([3.0, 4.0], [-100.0, 2.0], [0.0, 0.0]):
        dx, dy = knn_predict(cmap, q[0], q[1])
        assert (dx, dy) == (0.5, -0.25)


def test_knn_grid_node_exact_match():
    g = np.linspace(-5, 5, 10)
    gx, gy = np.meshgrid(g, g)
    feats = np.column_stack([gx.ravel(), gy.ravel()])
    labels = np.column_stack([np.sin(feats[:, 0]), np.cos(feats[:, 1])])
    cmap = knn_fit(feats, labels, k=1)
    i = 37
    dx, dy = knn_predict(cmap, feats[i, 0], feats[i, 1])
    assert dx == labels[i, 0] and dy == labels[i, 1]


def test_knn_equidistant_mean():
    cmap = knn_fit([[-1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [3.0, 0.0]], k=2)
    dx, dy = knn_predict(cmap, 0.0, 0.0)
    assert abs(dx - 2.0) < 1e-15 and dy == 0.0


def test_knn_coincident_query_short_circuit():
    feats = [[0.0, 0.0], [1e-9, 0.0], [2.0, 2.0]]
    labels = [[5.0, 5.0], [-7.0, -7.0], [0.0, 0.0]]
    cmap = knn_fit(feats, labels, k=3)
    dx, dy = knn_predict(cmap, 0.0, 0.0)
    assert (dx, dy) == (5.0, 5.0)


def test_knn_matches_linear_scan_oracle():
    rng = np.random.default_rng(6)
    feats = rng.uniform(-20, 20, (500, 2))
    labels = rng.standard_normal((500, 2))
    cmap = knn_fit(feats, labels, k=5)
    qx, qy = rng.uniform(-20, 20, (2, 50))
    px, py = knn_predict(cmap, qx, qy)
    for i in range(50):
        exp = brute_force_predict(feats, labels, 5, qx[i], qy[i])
        assert abs(px[i] - exp[0]) < 1e-12
        assert abs(py[i] - exp[1]) < 1e-12


def test_knn_prediction_is_convex_combination():
    rng = np.random.default_rng(7)
    feats = rng.uniform(-10, 10, (200, 2))
    labels = rng.uniform(-3, 3, (200, 2))
    cmap = knn_fit(feats, labels, k=7)
    qx, qy = rng.uniform(-10, 10, (2, 100))
    px, py = knn_predict(cmap, qx, qy)
    assert np.all(px >= labels[:, 0].min() - 1e-12) and np.all(px <= labels[:, 0].max() + 1e-12)
    assert np.all(py >= labels[:, 1].min() - 1e-12) and np.all(py <= labels[:, 1].max() + 1e-12)


def test_knn_prediction_bitwise_reproducible():
    rng = np.random.default_rng(8)
    feats = rng.uniform(-10, 10, (300, 2))
    labels = rng.standard_normal((300, 2))
    cmap = knn_fit(feats, labels, k=4)
    qx, qy = rng.uniform(-10, 10, (2, 40))
    a = knn_predict(cmap, qx, qy)
    b = knn_predict(cmap, qx, qy)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_knn_fit_validation_errors():
    with pytest.raises(ConfigError):
        knn_fit(np.empty((0, 2)), np.empty((0, 2)), k=1)
    with pytest.raises(ConfigError):
        knn_fit([[0.0, 0.0]], [[0.0, 0.0]], k=2)


# -- cross-validation --------------------------------------------------------

def test_cv_fold_sizes_and_determinism():
    folds = cv_folds(103, 10)
    sizes = sorted(len(f) for f in folds)
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == 103
    all_idx = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(all_idx, np.arange(103))
    again = cv_folds(103, 10)
    for a, b in zip(folds, again):
        np.testing.assert_array_equal(a, b)


def test_cv_requires_ten_samples():
    rng = np.random.default_rng(9)
    feats = rng.uniform(-1, 1, (9, 2))
    with pytest.raises(ConfigError):
        knn_cross_validate(feats, feats.copy())


def test_cv_smooth_function_beats_noise_ceiling():
    rng = np.random.default_rng(10)
    n = 400
    feats = rng.uniform(-15, 15, (n, 2))
    r2 = (feats**2).sum(axis=1)
    truth = np.column_stack([feats[:, 0] * 1e-4 * r2, feats[:, 1] * 1e-4 * r2])
    sigma = 0.02
    labels = truth + rng.normal(0, sigma, truth.shape)
    best_k, scores = knn_cross_validate(feats, labels)
    noise_var = 2 * sigma**2
    assert best_k <= 15
    assert scores[best_k] <= 10 * noise_var


def test_cv_pure_noise_never_beats_noise_floor():
    rng = np.random.default_rng(11)
    sigma = 1.0
    noise_var = 2 * sigma**2
    medians: dict[int, list[float]] = {}
    for trial in range(7):
        feats = rng.uniform(-10, 10, (200, 2))
        labels = rng.normal(0, sigma, (200, 2))
        _, scores = knn_cross_validate(feats, labels, seed=1789 + trial)
        for k, s in scores.items():
            medians.setdefault(k, []).append(s)
    for k, vals in medians.items():
        assert np.median(vals) >= noise_var


def test_cv_duplicated_samples_match_paired_folds():
    rng = np.random.default_rng(12)
    n = 60
    feats = rng.uniform(-10, 10, (n, 2))
    labels = np.column_stack([np.sin(feats[:, 0] / 3), np.cos(feats[:, 1] / 3)])
    base_folds = cv_folds(n, 10)
    # duplicate every sample; keep both copies in the same fold
    feats2 = np.vstack([feats, feats])
    labels2 = np.vstack([labels, labels])
    paired = [np.sort(np.concatenate([f, f + n])) for f in base_folds]
    ks = [1, 2, 4, 8]
    _, s_orig = knn_cross_validate(feats, labels, ks, folds=base_folds)
    _, s_dup = knn_cross_validate(feats2, labels2, [2 * k for k in ks], folds=paired)
    for k in ks:
        assert abs(s_dup[2 * k] - s_orig[k]) < 1e-12


def test_cv_deterministic_repeat():
    rng = np.random.default_rng(13)
    feats = rng.uniform(-5, 5, (80, 2))
    labels = rng.standard_normal((80, 2))
    r1 = knn_cross_validate(feats, labels)
    r2 = knn_cross_validate(feats, labels)
    assert r1[0] == r2[0]
    assert r1[1] == r2[1]


# -- serialization -----------------------------------------------------------

def test_knn_map_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(14)
    feats = rng.uniform(-18, 18, (150, 2))
    labels = rng.standard_normal((150, 2)) * 0.03
    cmap = knn_fit(feats, labels, k=6, ref_xp=0.123456789012345, ref_yp=-0.5, cv_score=0.0123)
    path = tmp_path / "map.txt"
    save_knn_map(cmap, path)
    loaded = load_knn_map(path)
    assert loaded.k == 6
    assert loaded.ref_xp == cmap.ref_xp and loaded.ref_yp == cmap.ref_yp
    np.testing.assert_array_equal(loaded.features, cmap.features)
    np.testing.assert_array_equal(loaded.labels, cmap.labels)
    qx, qy = rng.uniform(-18, 18, (2, 25))
    pa = knn_predict(cmap, qx, qy)
    pb = knn_predict(loaded, qx, qy)
    assert np.array_equal(pa[0], pb[0]) and np.array_equal(pa[1], pb[1])
