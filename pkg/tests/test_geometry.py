import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import binary_erosion

from atomgs.fixtures import front_camera, orbit_cameras, random_scene, sphere_depth
from atomgs.geometry import (curvature_map, edge_map, geometry_backward, geometry_maps, normal_map, pixel_grid,
                             unproject_depth)
from atomgs.projection import project
from atomgs.rasterizer import render
from atomgs.scene import Camera
from conftest import central_fd, rel_err


def pinhole_point(cam, i, j, d):
    """World point seen at the centre of pixel (i, j) at camera depth d, from the intrinsics alone."""
    p_cam = np.array([(j - cam.cx) / cam.fx * d, (i - cam.cy) / cam.fy * d, d])
    return cam.rotation.T @ (p_cam - cam.translation)


def test_project_unproject_recovers_point(rng):
    cam = orbit_cameras(1, distance=4.0, width=40, height=30, offset=0.2)[0]
    for _ in range(20):
        i, j, d = rng.integers(30), rng.integers(40), rng.uniform(2.0, 6.0)
        x = pinhole_point(cam, i, j, d)
        p = project(x[None], np.eye(3)[None] * 1e-4, cam)
        np.testing.assert_allclose(p.means2d[0], [j, i], atol=1e-9)
        depth = np.zeros((30, 40))
        depth[int(round(p.means2d[0, 1])), int(round(p.means2d[0, 0]))] = p.depth[0]
        pos, valid = unproject_depth(depth, cam)
        assert valid.sum() == 1
        assert np.linalg.norm(pos[i, j] - x) < 1e-4


def test_constant_depth_is_planar():
    cam = front_camera(24, 20)
    pos, valid = unproject_depth(np.full((20, 24), 3.5), cam)
    assert valid.all()
    np.testing.assert_allclose(pos[..., 2], 3.5, rtol=0, atol=1e-6)


def test_corner_pixels_normalise_to_unit():
    xn, yn = pixel_grid(7, 9)
    assert (xn[0, 0], xn[0, -1], yn[0, 0], yn[-1, 0]) == (-1.0, 1.0, -1.0, 1.0)


def test_zero_depth_is_invalid():
    depth = np.full((5, 6), 2.0)
    depth[2, 3] = 0.0
    _, valid = unproject_depth(depth, front_camera(6, 5))
    assert not valid[2, 3] and valid.sum() == 29


def test_identity_camera_centre_pixel():
    cam = Camera(np.eye(4), 33, 33, 33.0, 33.0)
    pos, _ = unproject_depth(np.ones((33, 33)), cam)
    np.testing.assert_allclose(pos[16, 16], [0, 0, 1], atol=1e-12)


def test_round_trip_within_half_pixel(rng):
    for cam in orbit_cameras(3, distance=4.0, width=48, height=40) + [front_camera(48, 40)]:
        scene = random_scene(rng, 8, depth=0.0 if cam.center.any() else 4.0)
        out = render(scene, cam)
        pos, valid = unproject_depth(out.median_depth, cam)
        assert valid.any()
        p = project(pos[valid], np.zeros((valid.sum(), 3, 3)), cam)
        ii, jj = np.nonzero(valid)
        err = np.abs(p.means2d - np.stack([jj, ii], axis=1)).max()
        assert err <= 0.51


def test_facing_plane_normals():
    cam = front_camera(20, 16)
    pos, valid = unproject_depth(np.full((16, 20), 5.0), cam)
    n, ok = normal_map(pos, valid, cam.center)
    assert ok.all()
    np.testing.assert_allclose(n[1:-1, 1:-1], np.broadcast_to([0, 0, -1.0], (14, 18, 3)), atol=1e-12)


def test_tilted_plane_normals():
    cam = front_camera(24, 24)
    c = 6.0
    # camera ray (a, b, 1) hits x + z = c at z = c / (1 + a)
    xn, _ = np.meshgrid((np.arange(24) - cam.cx) / cam.fx, np.arange(24))
    depth = c / (1.0 + xn)
    pos, valid = unproject_depth(depth, cam)
    n, ok = normal_map(pos, valid, cam.center)
    expect = np.array([-1.0, 0.0, -1.0]) / np.sqrt(2.0)
    np.testing.assert_allclose(n[ok], np.broadcast_to(expect, (ok.sum(), 3)), atol=1e-9)


def test_sphere_normals_match_analytic():
    cam = orbit_cameras(1, distance=3.0, width=128, height=128, offset=0.3)[0]
    depth = sphere_depth(cam, 1.0)
    maps = geometry_maps(depth, cam)
    inner = binary_erosion(depth > 0, iterations=3) & maps.normal_valid
    true_n = maps.positions[inner] / np.linalg.norm(maps.positions[inner], axis=1, keepdims=True)
    cosang = np.sum(maps.normals[inner] * true_n, axis=1)
    assert inner.sum() > 5000
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 3.0
    np.testing.assert_allclose(np.linalg.norm(maps.normals[maps.normal_valid], axis=1), 1.0, atol=1e-6)
    interior = maps.curvature[binary_erosion(maps.valid, iterations=2)]
    assert interior.min() > 0.0 and interior.max() < 1.0


def test_normals_face_camera(rng):
    cam = orbit_cameras(1, distance=3.0, width=48, height=48, offset=0.6)[0]
    maps = geometry_maps(sphere_depth(cam, 1.0), cam)
    v = maps.positions - cam.center
    assert np.all(np.sum(maps.normals * v, axis=-1)[maps.normal_valid] < 0)


def test_invalid_pixels_mask_their_stencil():
    cam = front_camera(10, 10)
    depth = np.full((10, 10), 3.0)
    depth[5, 5] = 0.0
    maps = geometry_maps(depth, cam)
    assert not maps.normal_valid[4:7, 5].any() and not maps.normal_valid[5, 4:7].any()
    assert not maps.normals[~maps.normal_valid].any()
    assert not maps.curvature[~maps.valid].any()


def test_constant_normals_have_zero_curvature():
    n = np.broadcast_to([0.0, 0.6, 0.8], (9, 11, 3)).copy()
    curv, ok = curvature_map(n)
    assert ok.all() and not curv.any()


def test_curvature_reaches_its_bound():
    s = np.array([1.0, 1.0, -1.0, -1.0] * 4)
    n = np.zeros((16, 16, 3))
    n[..., 2] = np.outer(s, s)  # every interior central difference of n_z is +-1 along both axes
    curv, _ = curvature_map(n)
    np.testing.assert_array_equal(curv[1:-1, 1:-1], 1.0)


def test_alternating_columns_saturate_at_the_border():
    n = np.zeros((6, 8, 3))
    n[..., 2] = np.where(np.arange(8) % 2, -1.0, 1.0)
    curv, _ = curvature_map(n)
    np.testing.assert_array_equal(curv[:, [0, -1]], 1.0)
    np.testing.assert_array_equal(curv[:, 1:-1], 0.0)  # central differences cancel on a period-2 pattern


def test_edge_map_examples():
    assert not edge_map(np.full((8, 8, 3), 0.3)).any()
    img = np.zeros((8, 10, 3))
    img[:, 5:] = 1.0
    e = edge_map(img)
    assert set(np.unique(np.argmax(e, axis=1))) == {4}
    np.testing.assert_allclose(e[:, 4], e[:, 5])
    checker = np.zeros((8, 8, 3))
    checker[:, 2::4] = checker[:, 3::4] = 1.0
    tilted = (checker + checker.transpose(1, 0, 2)) % 2
    assert edge_map(tilted)[1:-1, 1:-1].max() == pytest.approx(1.0)


images = arrays(np.float64, (7, 9, 3), elements=st.floats(0, 1))


@given(images)
def test_edge_map_bounded_and_transposable(img):
    e = edge_map(img)
    assert e.min() >= 0 and e.max() <= 1
    np.testing.assert_allclose(edge_map(img.transpose(1, 0, 2)), e.T, atol=1e-12)


@given(arrays(np.float64, (6, 8, 3), elements=st.floats(-1, 1)).filter(lambda a: np.all(np.linalg.norm(a, axis=-1) > 0.1)))
def test_curvature_bounded_and_transposable(raw):
    n = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
    c, _ = curvature_map(n)
    assert c.min() >= 0 and c.max() <= 1
    np.testing.assert_allclose(curvature_map(n.transpose(1, 0, 2))[0], c.T, atol=1e-12)


def test_depth_gradient_matches_finite_differences(rng):
    cam = orbit_cameras(1, distance=3.0, width=14, height=12, offset=0.1)[0]
    depth = sphere_depth(cam, 1.3) + 0.01 * rng.normal(size=(12, 14))
    depth[sphere_depth(cam, 1.3) == 0] = 0.0
    weights = rng.uniform(size=(12, 14))

    def loss():
        return float(np.sum(geometry_maps(depth, cam).curvature * weights))

    maps = geometry_maps(depth, cam, keep_cache=True)
    g = geometry_backward(maps, weights)
    idx = [tuple(ix) for ix in np.argwhere(maps.depth_valid)[::3]]
    num = central_fd(loss, depth, h=1e-6, index=idx)
    assert rel_err(np.array([g[ix] for ix in idx]), np.array([num[ix] for ix in idx])) < 1e-4
