import json

import numpy as np
import pytest
from conftest import pinhole
from PIL import Image
from scipy.spatial.transform import Rotation

from meshforge import iso, scene_io
from meshforge.errors import SceneError
from meshforge.gradcheck import finite_difference
from meshforge.scene_io import CameraView, Scene


def random_camera(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    K = np.array([[rng.uniform(50, 200), 0, rng.uniform(10, 50)], [0, rng.uniform(50, 200), rng.uniform(10, 50)],
                  [0, 0, 1]])
    return CameraView(K, np.c_[R, rng.standard_normal(3)], 64, 48)


# -- projection ----------------------------------------------------------------


def test_project_optical_axis():
    cam = CameraView(np.eye(3), np.c_[np.eye(3), np.zeros(3)], 4, 4)
    u, v, z, behind = scene_io.project(cam, np.array([0.0, 0.0, 1.0]))
    assert (u, v, z, behind) == (0.0, 0.0, 1.0, False)


def test_project_camera_center_is_behind():
    cam = CameraView(np.eye(3), np.c_[np.eye(3), [0.5, -1.0, 2.0]], 4, 4)
    u, v, z, behind = scene_io.project(cam, cam.center)
    assert behind and z == 0.0 and np.isnan(u)


def test_project_matches_homogeneous_oracle():
    for seed in range(5):
        cam = random_camera(seed)
        p = np.random.default_rng(seed + 10).standard_normal((20, 3))
        P = cam.intrinsics @ cam.world_to_camera  # 3x4
        h = np.c_[p, np.ones(20)] @ P.T
        u, v, z, behind = scene_io.project(cam, p)
        ok = ~behind
        np.testing.assert_allclose(u[ok], h[ok, 0] / h[ok, 2], rtol=1e-12)
        np.testing.assert_allclose(v[ok], h[ok, 1] / h[ok, 2], rtol=1e-12)
        np.testing.assert_allclose(z, (np.c_[p, np.ones(20)] @ cam.world_to_camera.T)[:, 2], rtol=1e-12)


def test_project_jacobian_finite_differences():
    cam = random_camera(3)
    p = cam.center + 3.0 * cam.R[2] + 0.2 * np.random.default_rng(0).standard_normal(3)
    J = scene_io.project_jacobian(cam, p)
    for row in range(3):
        num = finite_difference(lambda x: float(scene_io.project(cam, x)[row]), p, 1e-6)
        np.testing.assert_allclose(J[row], num, rtol=1e-6, atol=1e-6 * np.abs(num).max())


def test_look_at_points_camera_at_target():
    E = scene_io.look_at([3.0, 1.0, -2.0], [0.1, 0.2, 0.3])
    cam = CameraView(np.eye(3), E, 4, 4)
    assert np.allclose(cam.R @ cam.R.T, np.eye(3)) and np.isclose(np.linalg.det(cam.R), 1)
    c = np.array([0.1, 0.2, 0.3]) - cam.center
    assert np.isclose(cam.R[2] @ c, np.linalg.norm(c))


# -- validation ------------------------------------------------------------------


def test_rotation_tolerance():
    cam = pinhole()
    cam.world_to_camera[0, 0] += 2e-5
    cam.validate()
    cam.world_to_camera[0, 0] += 1e-4
    with pytest.raises(SceneError):
        cam.validate()


def test_image_dimension_mismatch():
    cam = pinhole()
    cam.image = np.zeros((10, 10, 3))
    with pytest.raises(SceneError):
        cam.validate()


def test_one_view_rejected(tmp_path):
    cam = pinhole(8, 8)
    cam.image = np.zeros((8, 8, 3))
    scene = Scene([cam, cam], np.zeros(3), np.ones(3))
    scene_io.save_scene(scene, tmp_path)
    meta = json.loads((tmp_path / "cameras.json").read_text())
    meta["views"] = meta["views"][:1]
    (tmp_path / "cameras.json").write_text(json.dumps(meta))
    with pytest.raises(SceneError, match="at least 2 views required"):
        scene_io.load_scene(tmp_path)


def test_missing_and_garbled_camera_file(tmp_path):
    with pytest.raises(SceneError, match="missing"):
        scene_io.load_scene(tmp_path)
    (tmp_path / "cameras.json").write_text("{not json")
    with pytest.raises(SceneError, match="garbled"):
        scene_io.load_scene(tmp_path)


# -- dataset round trip ---------------------------------------------------------


def tiny_scene(W=16, H=12):
    rng = np.random.default_rng(0)
    views = []
    for i in range(3):
        E = scene_io.look_at(3.0 * np.array([np.cos(i), 0.3, np.sin(i)]), np.zeros(3))
        K = np.array([[20.0, 0, W / 2], [0, 20.0, H / 2], [0, 0, 1]])
        v = CameraView(K, E, W, H, rng.random((H, W, 3)), (rng.random((H, W)) > 0.5).astype(float),
                       rng.random((H, W)) + 2.0, np.ones((H, W)), env_index=i)
        views.append(v)
    return Scene(views, -np.ones(3), np.ones(3), meta={"note": "x"})


def test_round_trip_bit_exact(tmp_path):
    scene_io.save_scene(tiny_scene(), tmp_path / "a")
    first = scene_io.load_scene(tmp_path / "a")
    scene_io.save_scene(first, tmp_path / "b")
    second = scene_io.load_scene(tmp_path / "b")
    for a, b in zip(first.views, second.views):
        for name in ("intrinsics", "world_to_camera", "image", "mask", "depth", "valid"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name
        assert a.env_index == b.env_index
    assert np.array_equal(first.domain_min, second.domain_min) and first.meta["note"] == "x"


def test_missing_masks_default_to_ones(tmp_path):
    scene = tiny_scene()
    for v in scene.views:
        v.mask = None
        v.valid = None
    scene_io.save_scene(scene, tmp_path)
    assert not (tmp_path / "masks" / "000.png").exists()
    loaded = scene_io.load_scene(tmp_path)
    for v in loaded.views:
        assert np.all(v.mask == 1) and np.all(v.valid == 0)


def test_images_are_linearized(tmp_path):
    img = np.zeros((2, 2, 3), np.uint8)
    img[0, 0] = 188  # sRGB 188 is ~0.5 linear
    Image.fromarray(img).save(tmp_path / "x.png")
    lin = scene_io.read_png_linear(tmp_path / "x.png")
    assert abs(lin[0, 0, 0] - 0.5) < 0.005 and lin[1, 1, 0] == 0


# -- images ---------------------------------------------------------------------------


def test_export_image_zero_and_clamp(tmp_path):
    png, pfm = scene_io.export_image(np.zeros((4, 5, 3)), tmp_path / "z")
    assert np.all(np.asarray(Image.open(png)) == 0) and np.all(scene_io.read_pfm(pfm) == 0)
    img = np.full((2, 3, 3), 1.5)
    png, pfm = scene_io.export_image(img, tmp_path / "c")
    assert np.all(np.asarray(Image.open(png)) == 255) and np.all(scene_io.read_pfm(pfm) == 1.5)


def test_export_image_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        scene_io.export_image(np.array([[np.nan]]), tmp_path / "n")


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((7, 5), (4, 6, 3)):
        a = (rng.standard_normal(shape) * 1e3).astype(np.float32)
        scene_io.write_pfm(tmp_path / "a.pfm", a)
        assert np.array_equal(scene_io.read_pfm(tmp_path / "a.pfm"), a)
    header = (tmp_path / "a.pfm").read_bytes()[:20]
    assert header.startswith(b"PF\n6 4\n-1.0\n")


# -- meshes ---------------------------------------------------------------------------


def unit_cube():
    v = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return iso.TriangleMesh(v, f)


def test_export_cube_obj(tmp_path):
    mesh = unit_cube()
    params = np.tile([0.2, 0.5, 0.8, 0.04, 0.04, 0.04, 0.5], (8, 1))
    path = scene_io.export_mesh(mesh, params, tmp_path, "cube", atlas_size=64)
    lines = path.read_text().splitlines()
    assert sum(ln.startswith("v ") for ln in lines) == 8
    assert sum(ln.startswith("f ") for ln in lines) == 12
    for suffix in ("_diffuse.png", "_specular.png", "_roughness.png", ".mtl"):
        assert (tmp_path / f"cube{suffix}").exists()
    v, f = scene_io.load_obj(path)
    assert np.array_equal(v, mesh.vertices) and np.array_equal(f, mesh.faces)
    atlas = scene_io.read_png_linear(tmp_path / "cube_diffuse.png")
    used = atlas.sum(-1) > 0
    np.testing.assert_allclose(atlas[used].mean(0), [0.2, 0.5, 0.8], atol=0.01)


def test_export_round_trip_float_exact(tmp_path):
    rng = np.random.default_rng(0)
    mesh = iso.TriangleMesh(rng.standard_normal((30, 3)), rng.integers(0, 30, (40, 3)))
    path = scene_io.export_mesh(mesh, rng.random((30, 7)), tmp_path, atlas_size=128)
    v, f = scene_io.load_obj(path)
    assert np.array_equal(v, mesh.vertices) and np.array_equal(f, mesh.faces)


def test_export_empty_mesh_rejected(tmp_path):
    with pytest.raises(ValueError):
        scene_io.export_mesh(iso.TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), np.zeros((0, 7)), tmp_path)
