"""Spherical poses, look-at cameras, pixel cones, and pose perturbation."""

import numpy as np
import pytest

from nerflab import geometry as G

INTR = G.Intrinsics(focal=100.0, width=64, height=64, near=2.0, far=6.0)


# ------------------------------------------------------------ pose_from_sphere


def test_pose_on_x_axis():
    cam = G.pose_from_sphere(G.SphericalPose(2.0, 0.0, np.pi / 2), INTR)
    np.testing.assert_allclose(cam.position, [2.0, 0.0, 0.0], atol=1e-12)


def test_pose_on_y_axis():
    cam = G.pose_from_sphere(G.SphericalPose(1.0, np.pi / 2, np.pi / 2), INTR)
    np.testing.assert_allclose(cam.position, [0.0, 1.0, 0.0], atol=1e-12)


def test_pose_trig_oracle_and_aim():
    f, az, po = 4.0, 0.7, 1.1
    cam = G.pose_from_sphere(G.SphericalPose(f, az, po), INTR)
    expected = f * np.array(
        [np.sin(po) * np.cos(az), np.sin(po) * np.sin(az), np.cos(po)]
    )
    np.testing.assert_allclose(cam.position, expected, atol=1e-12)
    # camera -z axis points at the origin
    aim = -cam.position / np.linalg.norm(cam.position)
    np.testing.assert_allclose(cam.forward, aim, atol=1e-12)


def test_rotation_is_orthonormal_right_handed(rng):
    for _ in range(20):
        s = G.SphericalPose(rng.uniform(1, 5), rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 3.0))
        r = G.pose_from_sphere(s, INTR).rotation
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_degenerate_polar_rejected():
    with pytest.raises(ValueError):
        G.SphericalPose(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        G.SphericalPose(1.0, 0.0, np.pi)


def test_spherical_round_trip(rng):
    for _ in range(50):
        s = G.SphericalPose(
            rng.uniform(1, 5), rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 3.0)
        )
        back = G.spherical_from_position(s.position())
        assert back.radius == pytest.approx(s.radius, abs=1e-9)
        assert back.azimuth == pytest.approx(s.azimuth, abs=1e-9)
        assert back.polar == pytest.approx(s.polar, abs=1e-9)


# ---------------------------------------------------------------- perturbation


def test_zero_width_perturbation_is_identity(rng):
    s = G.SphericalPose(4.0, 1.0, 1.2)
    pair = G.perturb_pose(s, G.TauRanges(radius=0.0, azimuth=0.0, polar=0.0), rng)
    p = pair.perturbed[0]
    assert (p.radius, p.azimuth, p.polar) == (s.radius, s.azimuth, s.polar)


def test_single_component_perturbation(rng):
    s = G.SphericalPose(4.0, 1.0, 1.2)

    class FixedRng:
        def uniform(self, lo, hi):
            return hi  # always the upper end

    pair = G.perturb_pose(s, G.TauRanges(radius=0.025, azimuth=0.0, polar=0.0), FixedRng())
    p = pair.perturbed[0]
    assert p.radius == pytest.approx(4.1, abs=1e-12)
    assert p.azimuth == pytest.approx(s.azimuth, abs=1e-12)
    assert p.polar == pytest.approx(s.polar, abs=1e-12)


def test_perturbation_draw_statistics(rng):
    s = G.SphericalPose(4.0, 3.0, 1.0)
    ranges = G.TauRanges(radius=0.0, azimuth=0.02, polar=0.0)
    taus = []
    for _ in range(10_000):
        pair = G.perturb_pose(s, ranges, rng)
        taus.append(pair.taus[0][1])
    taus = np.array(taus)
    assert np.all(np.abs(taus) <= 0.02)
    # mean of U(-0.02, 0.02) has sigma = 0.02/sqrt(3)/sqrt(n)
    assert abs(taus.mean()) < 3 * 0.02 / np.sqrt(3) / np.sqrt(taus.size)


def test_small_perturbation_keeps_axes_close(rng):
    for _ in range(100):
        s = G.SphericalPose(4.0, rng.uniform(0, 2 * np.pi), rng.uniform(0.3, 2.8))
        ranges = G.TauRanges(radius=0.005, azimuth=0.02, polar=0.02)
        pair = G.perturb_pose(s, ranges, rng)
        a = G.pose_from_sphere(s, INTR).forward
        b = G.pose_from_sphere(pair.perturbed[0], INTR).forward
        angle = np.arccos(np.clip(a @ b, -1.0, 1.0))
        assert angle <= 0.05


def test_taus_recorded_exactly(rng):
    s = G.SphericalPose(4.0, 1.0, 1.2)
    pair = G.perturb_pose(s, G.TauRanges(), rng, count=3)
    assert len(pair.perturbed) == 3 and len(pair.taus) == 3
    for p, (tf, ta, tp) in zip(pair.perturbed, pair.taus):
        assert p.radius == pytest.approx(s.radius + tf, abs=1e-12)
        assert p.azimuth == pytest.approx((s.azimuth + ta) % (2 * np.pi), abs=1e-12)
        assert p.polar == pytest.approx(s.polar + tp, abs=1e-12)


# ------------------------------------------------------------------ pixel cones


def _cam():
    return G.pose_from_sphere(G.SphericalPose(4.0, 0.7, 1.1), INTR)


def test_center_cone_is_forward():
    # even image: the geometric center falls between the 4 central pixels, so
    # average the 4 central-pixel directions
    cam = _cam()
    dirs = []
    for r, c in ((31, 31), (31, 32), (32, 31), (32, 32)):
        dirs.append(G.pixel_cone(cam, r, c).direction)
    mean = np.mean(dirs, axis=0)
    mean /= np.linalg.norm(mean)
    np.testing.assert_allclose(mean, cam.forward, atol=1e-6)


def test_mirrored_pixels_symmetric():
    cam = _cam()
    left = G.pixel_cone(cam, 20, 10).direction
    right = G.pixel_cone(cam, 20, 53).direction  # mirror of col 10 in width 64
    # components along the camera right axis are opposite, rest equal
    right_axis = cam.rotation[:, 0]
    assert left @ right_axis == pytest.approx(-(right @ right_axis), abs=1e-12)
    perp_l = left - (left @ right_axis) * right_axis
    perp_r = right - (right @ right_axis) * right_axis
    np.testing.assert_allclose(perp_l, perp_r, atol=1e-12)


def test_corner_pixel_matches_pinhole_oracle():
    cam = _cam()
    cone = G.pixel_cone(cam, 0, 0)
    x = (0.5 - 32.0) / 100.0
    y = -(0.5 - 32.0) / 100.0
    d = cam.rotation @ np.array([x, y, -1.0])
    d /= np.linalg.norm(d)
    np.testing.assert_allclose(cone.direction, d, atol=1e-12)
    np.testing.assert_allclose(cone.origin, cam.position, atol=1e-12)


def test_all_directions_unit_length(rng):
    cam = _cam()
    rows = rng.integers(0, 64, size=200)
    cols = rng.integers(0, 64, size=200)
    batch = G.pixel_cones(cam, rows, cols)
    np.testing.assert_allclose(
        np.linalg.norm(batch.directions, axis=-1), 1.0, atol=1e-9
    )
    assert np.all(batch.base_radii > 0)


def test_pixel_out_of_bounds_rejected():
    with pytest.raises(ValueError):
        G.pixel_cone(_cam(), 64, 0)


# ------------------------------------------------------------ unseen pose draw


def test_degenerate_bounds_give_exact_pose(rng):
    b = G.PoseBounds(radius=4.0, azimuth_range=(1.5, 1.5), polar_range=(1.0, 1.0))
    s = G.sample_unseen_pose(b, rng)
    assert (s.radius, s.azimuth, s.polar) == (4.0, 1.5, 1.0)


def test_fixed_polar_draws_lie_on_one_circle(rng):
    b = G.PoseBounds(radius=3.0, azimuth_range=(0.0, 2 * np.pi), polar_range=(0.8, 0.8))
    zs = [G.sample_unseen_pose(b, rng).position()[2] for _ in range(100)]
    np.testing.assert_allclose(zs, 3.0 * np.cos(0.8), atol=1e-12)


def test_draws_respect_bounds(rng):
    b = G.PoseBounds(radius=4.0, azimuth_range=(0.2, 0.9), polar_range=(0.5, 1.3))
    for _ in range(1000):
        s = G.sample_unseen_pose(b, rng)
        assert s.radius == 4.0
        assert 0.2 <= s.azimuth <= 0.9
        assert 0.5 <= s.polar <= 1.3


def test_empty_range_rejected():
    with pytest.raises(ValueError):
        G.PoseBounds(radius=1.0, azimuth_range=(2.0, 1.0))


def test_patch_pixel_grid_layout():
    rows, cols = G.patch_pixel_grid(3, 5, 2)
    np.testing.assert_array_equal(rows, [3, 3, 4, 4])
    np.testing.assert_array_equal(cols, [5, 6, 5, 6])
