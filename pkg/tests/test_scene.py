import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomgs.plyio import PlyError, write_ply
from atomgs.scene import (SH_C0, Camera, CameraError, GaussianSet, InitializationError, SfMPointCloud,
                          atom_scale, camera_from_c2w, init_gaussians, load_cameras, load_points,
                          load_scene, nearest3_mean_distances, save_cameras, scene_radius)


def brute_nearest3(pts):
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, :3].mean(axis=1)


def tetrahedron():
    return np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0],
                     [0.5, math.sqrt(3) / 6, math.sqrt(2.0 / 3.0)]])


def test_nearest3_tetrahedron():
    np.testing.assert_allclose(nearest3_mean_distances(tetrahedron()), 1.0, rtol=1e-12)


def test_nearest3_collinear():
    d = nearest3_mean_distances(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]))
    assert d[0] == pytest.approx(2.0)


@pytest.mark.parametrize("n", [5, 37, 200])
def test_nearest3_matches_brute_force(rng, n):
    pts = rng.normal(size=(n, 3))
    np.testing.assert_allclose(nearest3_mean_distances(pts), brute_nearest3(pts), rtol=1e-13, atol=0)


def test_nearest3_needs_four_points():
    with pytest.raises(InitializationError):
        nearest3_mean_distances(np.zeros((3, 3)))


def test_atom_scale_nearest_rank():
    assert atom_scale(np.arange(1, 101), 1) == 1
    assert atom_scale([5, 5, 5], 37) == 5
    assert atom_scale(np.arange(1, 101), 100) == 100


def test_atom_scale_matches_sort_oracle(rng):
    d = rng.uniform(size=50)
    assert atom_scale(d, 10) == np.sort(d)[math.ceil(0.1 * 50) - 1]


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40), st.floats(0.01, 100), st.floats(0.01, 100))
def test_atom_scale_monotone_in_percentile(d, a, b):
    lo, hi = sorted([a, b])
    assert atom_scale(d, lo) <= atom_scale(d, hi)


def test_atom_scale_rejects_bad_percentile():
    with pytest.raises(ValueError):
        atom_scale([1.0], 0)


def test_scene_radius():
    assert scene_radius([[1, 0, 0], [-1, 0, 0]]) == 1.0
    assert scene_radius([[3, 2, 1]]) == 0.0


def test_scene_radius_oracle(rng):
    c = rng.normal(size=(10, 3))
    assert scene_radius(c) == pytest.approx(max(np.linalg.norm(x - c.mean(0)) for x in c), rel=1e-14)


def test_init_gaussians_tetrahedron():
    cloud = SfMPointCloud(tetrahedron(), np.ones((4, 3)))
    g = init_gaussians(cloud, init_opacity=0.1)
    assert g.count == 4
    np.testing.assert_allclose(g.scales, 1.0, rtol=1e-12)
    np.testing.assert_allclose(g.sh[:, 0], (1 - 0.5) / 0.2820947917, rtol=1e-9)
    assert np.all(g.sh[:, 1:] == 0)
    np.testing.assert_allclose(g.opacities, 0.1, rtol=1e-12)
    np.testing.assert_array_equal(g.quaternions, np.tile([1.0, 0, 0, 0], (4, 1)))
    assert not g.is_atom.any()


def test_init_duplicate_points_get_floor_scale():
    pts = np.zeros((5, 3))
    g = init_gaussians(SfMPointCloud(pts, np.full((5, 3), 0.5)), sh_degree=0)
    assert np.all(g.scales > 0)
    assert np.allclose(g.scales, 1e-7)


def test_gaussian_set_invariants(rng):
    g = init_gaussians(SfMPointCloud(rng.normal(size=(10, 3)), rng.uniform(size=(10, 3))))
    g.check()
    assert np.all(g.scales > 0)
    assert np.all((g.opacities > 0) & (g.opacities < 1))
    sub = g.select([1, 3])
    assert sub.count == 2 and sub.sh.shape == (2, 16, 3)
    assert g.select(np.zeros(0, dtype=int)).sh.shape == (0, 16, 3)


def test_camera_look_at_centre_pixel():
    cam = Camera.look_at([0, 0, -2], [0, 0, 0], 33, 33, np.radians(60), up=(0, -1, 0))
    np.testing.assert_allclose(cam.center, [0, 0, -2], atol=1e-12)
    np.testing.assert_allclose(cam.full, cam.proj @ cam.view, rtol=1e-12)


def test_camera_rejects_non_orthonormal_rotation():
    view = np.eye(4)
    view[0, 0] = 1.1
    with pytest.raises(CameraError):
        Camera(view, 10, 10, 5, 5)


def test_camera_from_c2w_conventions():
    cv = camera_from_c2w(np.eye(4), 10, 10, 10, convention="opencv")
    np.testing.assert_allclose(cv.view, np.eye(4))
    gl = camera_from_c2w(np.eye(4), 10, 10, 10, convention="opengl")
    # an OpenGL camera looks down -z: its forward axis in world space is -z
    np.testing.assert_allclose(gl.rotation[2], [0, 0, -1], atol=1e-15)
    with pytest.raises(CameraError):
        camera_from_c2w(np.eye(4), 10, 10, 10, convention="bogus")


def test_camera_from_c2w_reorthonormalises_small_drift():
    c2w = np.eye(4)
    c2w[0, 1] = 1e-5
    cam = camera_from_c2w(c2w, 10, 10, 10, convention="opencv")
    np.testing.assert_allclose(cam.rotation @ cam.rotation.T, np.eye(3), atol=1e-12)
    c2w[0, 1] = 0.5
    with pytest.raises(CameraError):
        camera_from_c2w(c2w, 10, 10, 10, convention="opencv")


def _write_scene(tmp_path, pts, frames=1):
    write_ply(tmp_path / "p.ply", {"x": pts[:, 0].astype(np.float32), "y": pts[:, 1].astype(np.float32),
                                   "z": pts[:, 2].astype(np.float32),
                                   "red": np.full(len(pts), 255, np.uint8),
                                   "green": np.zeros(len(pts), np.uint8), "blue": np.zeros(len(pts), np.uint8)})
    doc = {"camera_angle_x": 2 * math.atan(0.5), "w": 8, "h": 8,
           "frames": [{"file_path": f"img{k}", "transform_matrix": np.eye(4).tolist()} for k in range(frames)]}
    (tmp_path / "c.json").write_text(json.dumps(doc))


def test_load_scene_minimal_then_init_fails(tmp_path):
    _write_scene(tmp_path, np.zeros((1, 3)))
    cloud, cams = load_scene(tmp_path / "p.ply", tmp_path / "c.json")
    assert len(cloud.points) == 1 and len(cams) == 1
    np.testing.assert_allclose(cloud.colors, [[1.0, 0.0, 0.0]])
    assert cams[0].fx == pytest.approx(8.0)
    assert cams[0].image_path.endswith("img0.png")
    with pytest.raises(InitializationError):
        init_gaussians(cloud)


def test_load_points_missing_z(tmp_path):
    write_ply(tmp_path / "p.ply", {"x": np.zeros(2, np.float32), "y": np.zeros(2, np.float32)})
    with pytest.raises(PlyError, match="'z'"):
        load_points(tmp_path / "p.ply")


def test_load_points_without_colour_defaults_to_grey(tmp_path):
    write_ply(tmp_path / "p.ply", {k: np.zeros(2, np.float32) for k in "xyz"})
    np.testing.assert_array_equal(load_points(tmp_path / "p.ply").colors, 0.5)


def test_camera_file_round_trip(tmp_path):
    cams = [Camera.look_at([3, 1, 2], [0, 0, 0], 20, 16, 0.8), Camera.look_at([-2, 2, 1], [0, 0, 0], 20, 16, 0.8)]
    save_cameras(tmp_path / "c.json", cams)
    back = load_cameras(tmp_path / "c.json")
    for a, b in zip(cams, back):
        np.testing.assert_allclose(a.view, b.view, atol=1e-12)
        assert (a.fx, a.width, a.height) == (b.fx, b.width, b.height)


@pytest.mark.parametrize("doc, fragment", [
    ({"w": 8, "h": 8, "camera_angle_x": 1.0}, "no 'frames'"),
    ({"w": 8, "h": 8, "frames": [{"transform_matrix": np.eye(4).tolist()}]}, "camera_angle_x"),
    ({"camera_angle_x": 1.0, "frames": [{"transform_matrix": np.eye(4).tolist()}]}, "image size"),
    ({"w": 8, "h": 8, "camera_angle_x": 1.0, "frames": [{}]}, "transform_matrix"),
])
def test_camera_file_errors(tmp_path, doc, fragment):
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(CameraError, match=fragment):
        load_cameras(tmp_path / "c.json")


def test_sh_dc_constant():
    assert SH_C0 == pytest.approx(0.2820947917, abs=1e-10)


def test_gaussian_set_rejects_non_square_sh():
    with pytest.raises(ValueError):
        GaussianSet(np.zeros((1, 3)), [[1, 0, 0, 0]], np.zeros((1, 3)), [0.0], np.zeros((1, 3, 3)))
