import numpy as np
import pytest

from turnscan.geometry import RigidTransform, apply_points, axis_angle_rotation, invert
from turnscan.pointcloud import PointCloud
from turnscan.registration import (
    DegenerateCovariance,
    IcpParams,
    TooFewCorrespondences,
    best_fit_transform,
    icp_point_to_point,
    transform_cloud,
)
from turnscan.synth import make_eval_pair


def blob(seed, n=500, scale=0.5):
    return PointCloud(np.random.default_rng(seed).normal(scale=scale, size=(n, 3)))


def wide_params(**kw):
    base = dict(max_correspondence_dist=100.0, convergence_delta_rmse=1e-12, max_iterations=100)
    base.update(kw)
    return IcpParams(**base)


# ---------------------------------------------------------------------------
# Closed-form step
# ---------------------------------------------------------------------------


def test_best_fit_recovers_known_transform():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(100, 3))
    G = RigidTransform(axis_angle_rotation((1, 2, 3), 0.8), np.array([0.5, -1.0, 2.0]))
    T = best_fit_transform(src, apply_points(G, src))
    np.testing.assert_allclose(T.rotation, G.rotation, atol=1e-12)
    np.testing.assert_allclose(T.translation, G.translation, atol=1e-12)


def test_best_fit_reflection_guard():
    # Mirrored correspondences must still produce a proper rotation.
    rng = np.random.default_rng(1)
    src = rng.normal(size=(200, 3))
    dst = src * np.array([-1.0, 1.0, 1.0])  # reflection, not achievable rigidly
    T = best_fit_transform(src, dst)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0, abs=1e-12)


def test_best_fit_degenerate_and_small_inputs():
    line = np.outer(np.linspace(0, 1, 10), [1.0, 1.0, 0.0])
    with pytest.raises(DegenerateCovariance):
        best_fit_transform(line, line + [0.0, 0.0, 1.0])
    with pytest.raises(TooFewCorrespondences):
        best_fit_transform(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        best_fit_transform(np.zeros((4, 3)), np.zeros((5, 3)))


def test_best_fit_step_is_optimal():
    # The SVD solution beats random rigid perturbations of itself.
    rng = np.random.default_rng(2)
    src = rng.normal(size=(80, 3))
    dst = apply_points(
        RigidTransform(axis_angle_rotation((0, 1, 0), 0.4), np.array([1.0, 0.0, -0.5])), src
    ) + rng.normal(scale=0.05, size=(80, 3))
    T = best_fit_transform(src, dst)
    best_cost = ((apply_points(T, src) - dst) ** 2).sum()
    for _ in range(200):
        ax = rng.normal(size=3)
        wiggle = RigidTransform(
            axis_angle_rotation(ax, rng.uniform(-0.1, 0.1)), rng.normal(scale=0.02, size=3)
        )
        R2 = wiggle.rotation @ T.rotation
        t2 = wiggle.rotation @ T.translation + wiggle.translation
        cost = ((src @ R2.T + t2 - dst) ** 2).sum()
        assert cost >= best_cost - 1e-9


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


def test_icp_identity_is_a_fixed_point():
    cloud = blob(3)
    res = icp_point_to_point(cloud, cloud, IcpParams())
    assert res.converged
    assert res.iterations_run == 1
    assert res.final_rmse <= 1e-12
    assert res.correspondence_count == len(cloud)
    np.testing.assert_allclose(res.transform.matrix, np.eye(4), atol=1e-9)


def test_icp_recovers_small_offset():
    target = blob(4, n=800)
    G = RigidTransform(axis_angle_rotation((0, 0, 1), np.deg2rad(4.0)), np.array([0.02, -0.01, 0.015]))
    source = transform_cloud(target, G)
    res = icp_point_to_point(source, target, wide_params())
    assert res.converged
    Ginv = invert(G)
    np.testing.assert_allclose(res.transform.rotation, Ginv.rotation, atol=1e-8)
    np.testing.assert_allclose(res.transform.translation, Ginv.translation, atol=1e-8)
    assert res.final_rmse < 1e-9


def test_icp_rmse_history_non_increasing():
    psc, pgt = make_eval_pair(
        blob(5, n=2000),
        RigidTransform(axis_angle_rotation((1, 0.5, 0), np.deg2rad(8.0)), np.array([0.05, 0.02, -0.04])),
    )
    res = icp_point_to_point(psc, pgt, wide_params())
    assert res.rmse_history
    assert res.final_rmse == res.rmse_history[-1]
    for a, b in zip(res.rmse_history, res.rmse_history[1:]):
        assert b <= a + 1e-12
    assert res.iterations_run == len(res.rmse_history)


def test_icp_respects_iteration_cap():
    psc, pgt = make_eval_pair(
        blob(6, n=1000),
        RigidTransform(axis_angle_rotation((0, 1, 0), np.deg2rad(9.0)), np.array([0.05, 0.0, 0.0])),
    )
    res = icp_point_to_point(psc, pgt, wide_params(max_iterations=2, convergence_delta_rmse=1e-300))
    assert res.iterations_run == 2
    assert not res.converged


def test_icp_initial_guess_and_subsampling():
    target = blob(7, n=3000)
    G = RigidTransform(axis_angle_rotation((0, 0, 1), 0.6), np.array([1.0, 0.0, 0.0]))
    source = transform_cloud(target, G)
    # 0.6 rad is far outside the basin from identity, trivial from the truth.
    params = wide_params(initial_guess=invert(G), subsample_to=500, seed=1)
    res = icp_point_to_point(source, target, params)
    assert res.correspondence_count == 500
    np.testing.assert_allclose(res.transform.matrix, invert(G).matrix, atol=1e-6)


def test_icp_gate_starves_correspondences():
    src = PointCloud(np.eye(3) * 0.001)
    dst = PointCloud(np.eye(3) * 0.001 + 10.0)
    with pytest.raises(TooFewCorrespondences):
        icp_point_to_point(src, dst, IcpParams(max_correspondence_dist=0.05))
    with pytest.raises(TooFewCorrespondences):
        icp_point_to_point(PointCloud(np.zeros((2, 3))), dst)


def test_icp_degenerate_geometry():
    line = PointCloud(np.outer(np.linspace(0, 1, 50), [1.0, 0.0, 0.0]))
    with pytest.raises(DegenerateCovariance):
        icp_point_to_point(line, line, wide_params())


def test_icp_params_validation():
    with pytest.raises(ValueError):
        IcpParams(max_iterations=0)
    with pytest.raises(ValueError):
        IcpParams(max_correspondence_dist=0.0)
    with pytest.raises(ValueError):
        IcpParams(convergence_delta_rmse=0.0)


def test_transform_cloud_matches_apply_points():
    cloud = PointCloud(
        np.arange(9, dtype=float).reshape(3, 3),
        np.arange(9, dtype=np.uint8).reshape(3, 3),
        "lbl",
    )
    T = RigidTransform(axis_angle_rotation((0, 0, 1), 0.3), np.array([1.0, 2.0, 3.0]))
    out = transform_cloud(cloud, T)
    np.testing.assert_array_equal(out.positions, apply_points(T, cloud.positions))
    np.testing.assert_array_equal(out.colors, cloud.colors)
    assert out.source_label == "lbl"
