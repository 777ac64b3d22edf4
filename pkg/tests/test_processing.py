import numpy as np
import pytest

from turnscan.pointcloud import Aabb, PointCloud
from turnscan.processing import (
    CloudTooSmall,
    DegenerateGeometry,
    NoConvergence,
    NonPositiveRadius,
    NonPositiveScale,
    ScaleCalibration,
    SorParams,
    SphereFit,
    apply_scale,
    calibrate_scale,
    crop_roi,
    fit_sphere_ransac,
    sor_filter,
)
from turnscan.synth import fibonacci_sphere

from oracles import sor_removed_brute


def grid(n):
    return np.stack(np.meshgrid(*[np.arange(float(n))] * 3, indexing="ij"), -1).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Cropping
# ---------------------------------------------------------------------------


def test_crop_keeps_closed_box_preserving_order():
    pts = np.array(
        [[2.0, 2.0, 2.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [-0.1, 0.5, 0.5]]
    )
    colors = np.arange(15, dtype=np.uint8).reshape(5, 3)
    kept = crop_roi(PointCloud(pts, colors), Aabb([0, 0, 0], [1, 1, 1]))
    np.testing.assert_array_equal(kept.positions, pts[[1, 2, 3]])
    np.testing.assert_array_equal(kept.colors, colors[[1, 2, 3]])


def test_crop_degenerate_box_and_idempotence():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.0, 0.0]])
    point_box = Aabb([0, 0, 0], [0, 0, 0])
    kept = crop_roi(PointCloud(pts), point_box)
    np.testing.assert_array_equal(kept.positions, [[0.0, 0.0, 0.0]])

    box = Aabb([-1, -1, -1], [0.6, 1, 1])
    once = crop_roi(PointCloud(pts), box)
    twice = crop_roi(once, box)
    np.testing.assert_array_equal(once.positions, twice.positions)


def test_crop_can_empty_a_cloud():
    kept = crop_roi(PointCloud(np.ones((4, 3))), Aabb([5, 5, 5], [6, 6, 6]))
    assert len(kept) == 0


# ---------------------------------------------------------------------------
# Statistical outlier removal
# ---------------------------------------------------------------------------


def test_sor_removes_exactly_the_injected_outlier():
    pts = np.concatenate([grid(10), [[50.0, 50.0, 50.0]]])
    filtered, removed = sor_filter(PointCloud(pts))
    np.testing.assert_array_equal(removed, [1000])
    assert len(filtered) == 1000
    np.testing.assert_array_equal(filtered.positions, pts[:1000])


def test_sor_keeps_a_clean_grid():
    _, removed = sor_filter(PointCloud(grid(5)), SorParams(k_neighbors=20, std_ratio=3.0))
    assert removed.size == 0


def test_sor_too_small():
    with pytest.raises(CloudTooSmall):
        sor_filter(PointCloud(np.random.default_rng(0).normal(size=(20, 3))))
    # One above k works.
    filtered, removed = sor_filter(
        PointCloud(np.random.default_rng(0).normal(size=(21, 3)))
    )
    assert len(filtered) + removed.size == 21


def test_sor_params_validation():
    with pytest.raises(ValueError):
        SorParams(k_neighbors=0)
    with pytest.raises(ValueError):
        SorParams(std_ratio=0.0)


def test_sor_matches_brute_force():
    rng = np.random.default_rng(100)
    for trial in range(6):
        n = int(rng.integers(30, 300))
        pts = rng.normal(size=(n, 3))
        if trial % 2:  # sprinkle genuine outliers
            pts[: trial + 1] *= 8.0
        k = int(rng.integers(2, 10))
        ratio = float(rng.uniform(0.8, 2.5))
        _, removed = sor_filter(PointCloud(pts), SorParams(k, ratio))
        np.testing.assert_array_equal(removed, sor_removed_brute(pts, k, ratio))


def test_sor_handles_duplicate_points():
    pts = np.concatenate([grid(5), grid(5)[:7], [[40.0, 0.0, 0.0]]])
    _, removed = sor_filter(PointCloud(pts), SorParams(5, 2.0))
    np.testing.assert_array_equal(removed, sor_removed_brute(pts, 5, 2.0))


# ---------------------------------------------------------------------------
# Sphere fitting and scale calibration
# ---------------------------------------------------------------------------


def test_sphere_fit_noiseless():
    center = np.array([0.1, -0.2, 0.3])
    pts = fibonacci_sphere(200, 0.08, center)
    fit = fit_sphere_ransac(PointCloud(pts), iterations=200, inlier_tol=1e-3, seed=0)
    np.testing.assert_allclose(fit.center, center, atol=1e-9)
    assert fit.radius == pytest.approx(0.08, abs=1e-9)
    assert fit.inlier_count == 200
    assert fit.rms_residual < 1e-9


def test_sphere_fit_noisy_radius():
    rng = np.random.default_rng(42)
    pts = fibonacci_sphere(500, 0.08, (0.1, 0.2, 0.3)) + rng.normal(scale=1e-3, size=(500, 3))
    fit = fit_sphere_ransac(PointCloud(pts), iterations=500, inlier_tol=2e-3, seed=0)
    assert fit.radius == pytest.approx(0.08, abs=1e-2)


def test_sphere_fit_deterministic():
    rng = np.random.default_rng(1)
    pts = fibonacci_sphere(300, 1.0, (0, 0, 0)) + rng.normal(scale=5e-4, size=(300, 3))
    a = fit_sphere_ransac(PointCloud(pts), seed=3)
    b = fit_sphere_ransac(PointCloud(pts), seed=3)
    assert a.radius == b.radius and a.inlier_count == b.inlier_count
    np.testing.assert_array_equal(a.center, b.center)


def test_sphere_fit_ignores_outlier_fraction():
    rng = np.random.default_rng(7)
    ball = fibonacci_sphere(400, 0.08, (0.0, 0.0, 0.0))
    junk = rng.uniform(-0.5, 0.5, size=(100, 3))
    fit = fit_sphere_ransac(PointCloud(np.concatenate([ball, junk])), iterations=500, seed=0)
    assert fit.radius == pytest.approx(0.08, abs=1e-6)
    assert fit.inlier_count >= 400


def test_sphere_fit_degenerate_inputs():
    with pytest.raises(DegenerateGeometry):
        fit_sphere_ransac(PointCloud(np.zeros((3, 3))))
    th = np.linspace(0, 2 * np.pi, 300, endpoint=False)
    flat = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
    with pytest.raises(DegenerateGeometry):
        fit_sphere_ransac(PointCloud(flat), iterations=50, seed=0)
    with pytest.raises(NoConvergence):
        fit_sphere_ransac(
            PointCloud(np.random.default_rng(0).uniform(size=(500, 3))),
            iterations=100,
            inlier_tol=1e-6,
            seed=1,
        )
    with pytest.raises(ValueError):
        fit_sphere_ransac(PointCloud(np.eye(4, 3) + np.arange(12).reshape(4, 3)), inlier_tol=0.0)


def test_calibrate_scale_ratio():
    fit = SphereFit(np.zeros(3), 0.08, 100, 0.0)
    cal = calibrate_scale(fit, 0.04)
    assert cal.scale_factor == 0.5
    assert cal.reference_radius_m == 0.04
    assert calibrate_scale(SphereFit(np.zeros(3), 0.02, 10, 0.0)).scale_factor == 2.0

    with pytest.raises(NonPositiveRadius):
        calibrate_scale(fit, 0.0)
    with pytest.raises(NonPositiveRadius):
        calibrate_scale(fit, float("nan"))
    with pytest.raises(ValueError):
        SphereFit(np.zeros(3), -1.0, 10, 0.0)
    with pytest.raises(ValueError):
        ScaleCalibration(0.0)


def test_apply_scale_scales_distances_exactly():
    rng = np.random.default_rng(9)
    cloud = PointCloud(rng.normal(size=(50, 3)), rng.integers(0, 255, (50, 3), dtype=np.uint8))
    doubled = apply_scale(cloud, 2.0)
    d0 = np.linalg.norm(cloud.positions[:1] - cloud.positions, axis=1)
    d1 = np.linalg.norm(doubled.positions[:1] - doubled.positions, axis=1)
    np.testing.assert_array_equal(d1, 2.0 * d0)  # powers of two scale exactly
    np.testing.assert_array_equal(doubled.colors, cloud.colors)
    with pytest.raises(NonPositiveScale):
        apply_scale(cloud, 0.0)
    with pytest.raises(NonPositiveScale):
        apply_scale(cloud, float("inf"))


def test_refit_after_scaling_returns_reference_radius():
    pts = fibonacci_sphere(300, 0.08, (1.0, 2.0, 3.0))
    cal = calibrate_scale(fit_sphere_ransac(PointCloud(pts), seed=0), 0.04)
    rescaled = apply_scale(PointCloud(pts), cal.scale_factor)
    refit = fit_sphere_ransac(rescaled, seed=0)
    assert refit.radius == pytest.approx(0.04, abs=1e-9)
