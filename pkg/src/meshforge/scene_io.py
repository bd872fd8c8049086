"""Calibrated multi-view scenes and the file formats around them.

Camera convention: pinhole, camera x right / y down / z forward. Image
coordinates put the top-left corner of the top-left pixel at ``(0, 0)`` so the
centre of pixel ``(row j, col i)`` is ``(i + 0.5, j + 0.5)``.

Dataset layout::

    cameras.json        views + optional domain_box
    images/000.png      8-bit sRGB
    masks/000.png       optional; nonzero = object
    depths/000.pfm      optional; camera-space z
    depths/000_valid.png
"""

from __future__ import annotations

import json
import logging
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SceneError

log = logging.getLogger(__name__)

ROTATION_TOL = 1e-4


@dataclass
class CameraView:
    intrinsics: np.ndarray
    world_to_camera: np.ndarray
    width: int
    height: int
    image: np.ndarray | None = None
    mask: np.ndarray | None = None
    depth: np.ndarray | None = None
    valid: np.ndarray | None = None
    env_index: int = 0

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=float).reshape(3, 4)

    @property
    def R(self) -> np.ndarray:
        return self.world_to_camera[:, :3]

    @property
    def t(self) -> np.ndarray:
        return self.world_to_camera[:, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    def scaled(self, factor: int) -> "CameraView":
        """Same camera at ``factor`` times the resolution (no image data)."""
        K = self.intrinsics.copy()
        K[:2] *= factor
        return CameraView(K, self.world_to_camera, self.width * factor, self.height * factor)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError("focal lengths must be positive")
        err = np.linalg.norm(self.R.T @ self.R - np.eye(3))
        if err >= ROTATION_TOL or np.linalg.det(self.R) <= 0:
            raise SceneError(f"rotation is not orthonormal (|R^T R - I| = {err:.2e})")
        shape = (self.height, self.width)
        for name in ("image", "mask", "depth", "valid"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[:2] != shape:
                raise SceneError(f"{name} has shape {arr.shape[:2]}, expected {shape}")


@dataclass
class Scene:
    views: list[CameraView]
    domain_min: np.ndarray
    domain_max: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.domain_min = np.asarray(self.domain_min, dtype=float)
        self.domain_max = np.asarray(self.domain_max, dtype=float)

    @property
    def extent(self) -> np.ndarray:
        return self.domain_max - self.domain_min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def to_unit(self, p):
        return (np.asarray(p) - self.domain_min) / self.extent

    def to_world(self, x):
        return self.domain_min + np.asarray(x) * self.extent

    def validate(self) -> None:
        if len(self.views) < 2:
            raise SceneError("at least 2 views required")
        if not np.all(self.extent > 0):
            raise SceneError("domain_box must have positive extent on every axis")
        for v in self.views:
            v.validate()


# --------------------------------------------------------------------------
# projection


def project(camera: CameraView, p):
    """Project world points ``(..., 3)``.

    Returns ``(u, v, z, behind)``; ``behind`` flags ``z <= 0`` and those points
    get NaN pixel coordinates.
    """
    p = np.asarray(p, dtype=float)
    xc = p @ camera.R.T + camera.t
    z = xc[..., 2]
    behind = z <= 0
    zs = np.where(behind, np.nan, z)
    u = camera.fx * xc[..., 0] / zs + camera.cx
    v = camera.fy * xc[..., 1] / zs + camera.cy
    return u, v, z, behind


def project_jacobian(camera: CameraView, p) -> np.ndarray:
    """``d(u, v, z) / dp`` as ``(..., 3, 3)``."""
    p = np.asarray(p, dtype=float)
    xc = p @ camera.R.T + camera.t
    x, y, z = xc[..., 0], xc[..., 1], xc[..., 2]
    R = camera.R
    J = np.empty(p.shape[:-1] + (3, 3))
    J[..., 0, :] = camera.fx * (R[0] / z[..., None] - (x / z**2)[..., None] * R[2])
    J[..., 1, :] = camera.fy * (R[1] / z[..., None] - (y / z**2)[..., None] * R[2])
    J[..., 2, :] = R[2]
    return J


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera ``3x4`` for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 0.0, 1.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return np.concatenate([R, (-R @ eye)[:, None]], axis=1)


# --------------------------------------------------------------------------
# images


def srgb_to_linear(c):
    c = np.asarray(c, dtype=float)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


_SRGB_LUT = srgb_to_linear(np.arange(256) / 255.0)


def read_png_linear(path) -> np.ndarray:
    """8-bit sRGB PNG -> linear float RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return _SRGB_LUT[arr]


def write_png_linear(path, img) -> None:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.round(linear_to_srgb(img) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(float)


def write_mask(path, mask) -> None:
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path)


def write_pfm(path, img) -> None:
    """Little-endian PFM (scale -1). Rows are stored bottom-up per the format."""
    img = np.asarray(img, dtype="<f4")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        kind = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError("PFM holds 1- or 3-channel images")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(kind + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if m is None:
        raise SceneError(f"{path}: not a PFM file")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    ch = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, offset=m.end(), count=w * h * ch)
    arr = arr.reshape((h, w, ch) if ch == 3 else (h, w))[::-1]
    return arr.astype(np.float32)


def export_image(img, path_stem) -> tuple[Path, Path]:
    """Write ``<stem>.png`` (clamped, sRGB) and ``<stem>.pfm`` (raw linear)."""
    img = np.asarray(img, dtype=float)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    stem = Path(path_stem)
    png, pfm = stem.with_suffix(".png"), stem.with_suffix(".pfm")
    write_png_linear(png, img)
    write_pfm(pfm, img)
    return png, pfm


# --------------------------------------------------------------------------
# scene load / save


def load_scene(dataset_dir, compute_domain: bool = True) -> Scene:
    """Read and validate a dataset directory."""
    root = Path(dataset_dir)
    cam_file = root / "cameras.json"
    try:
        meta = json.loads(cam_file.read_text())
        entries = meta["views"]
    except FileNotFoundError as exc:
        raise SceneError(f"missing camera file {cam_file}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SceneError(f"garbled camera file {cam_file}: {exc}") from exc

    views = []
    for i, e in enumerate(entries):
        try:
            K = np.array(e["intrinsics"], dtype=float)
            Rt = np.array(e["world_to_camera"], dtype=float)
            image = read_png_linear(root / e["image"])
        except (KeyError, ValueError, TypeError) as exc:
            raise SceneError(f"view {i}: bad entry ({exc})") from exc
        except OSError as exc:
            raise SceneError(f"view {i}: cannot read image ({exc})") from exc
        if K.shape != (3, 3) or Rt.shape != (3, 4):
            raise SceneError(f"view {i}: intrinsics must be 3x3 and world_to_camera 3x4")
        h, w = image.shape[:2]
        mask_path = root / e["mask"] if e.get("mask") else None
        mask = read_mask(mask_path) if mask_path and mask_path.exists() else np.ones((h, w))
        depth_path = root / e["depth"] if e.get("depth") else None
        if depth_path is not None and depth_path.exists():
            depth = read_pfm(depth_path).astype(float)
            valid_path = root / e["valid"] if e.get("valid") else None
            if valid_path is not None and valid_path.exists():
                valid = read_mask(valid_path)
            else:
                valid = (depth > 0).astype(float)
        else:
            depth, valid = np.zeros((h, w)), np.zeros((h, w))
        view = CameraView(K, Rt, w, h, image, mask, depth, valid, int(e.get("env_index", i)))
        views.append(view)

    box = meta.get("domain_box")
    if box is not None:
        dmin, dmax = np.array(box["min"], dtype=float), np.array(box["max"], dtype=float)
    else:
        dmin, dmax = np.zeros(3), np.ones(3)
    scene = Scene(views, dmin, dmax, meta={k: v for k, v in meta.items() if k != "views"})
    if len(views) < 2:
        raise SceneError("at least 2 views required")
    for v in views:
        v.validate()
    if box is None and compute_domain:
        from .visualhull import estimate_domain_box

        scene.domain_min, scene.domain_max = estimate_domain_box(scene)
        log.info("domain box estimated from visual hull: %s .. %s", scene.domain_min, scene.domain_max)
    scene.validate()
    return scene


def save_scene(scene: Scene, dataset_dir, write_depth: bool = True) -> Path:
    """Write ``scene`` in the dataset layout read by ``load_scene``."""
    root = Path(dataset_dir)
    for sub in ("images", "masks", "depths"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, v in enumerate(scene.views):
        e = {
            "intrinsics": v.intrinsics.tolist(),
            "world_to_camera": v.world_to_camera.tolist(),
            "image": f"images/{i:03d}.png",
            "env_index": int(v.env_index),
        }
        write_png_linear(root / e["image"], v.image if v.image is not None else np.zeros((v.height, v.width, 3)))
        if v.mask is not None:
            e["mask"] = f"masks/{i:03d}.png"
            write_mask(root / e["mask"], v.mask)
        if write_depth and v.depth is not None and v.valid is not None and np.any(v.valid > 0):
            e["depth"] = f"depths/{i:03d}.pfm"
            e["valid"] = f"depths/{i:03d}_valid.png"
            write_pfm(root / e["depth"], v.depth)
            write_mask(root / e["valid"], v.valid)
        entries.append(e)
    meta = dict(scene.meta)
    meta["views"] = entries
    meta["domain_box"] = {"min": scene.domain_min.tolist(), "max": scene.domain_max.tolist()}
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))
    return root


# --------------------------------------------------------------------------
# meshes

ATLAS_SIZE = 1024


def _atlas_layout(n_faces: int, size: int = ATLAS_SIZE):
    """Per-face square charts; each triangle fills the lower-left half of its cell."""
    per_row = int(np.ceil(np.sqrt(max(n_faces, 1))))
    cell = size / per_row
    f = np.arange(n_faces)
    ox, oy = (f % per_row) * cell, (f // per_row) * cell
    pad = min(0.5, 0.25 * cell)
    lo, hi = pad, cell - 2 * pad
    # corner texel-space positions (x right, y down) for the three vertices
    corners = np.stack(
        [
            np.stack([ox + lo, oy + lo], 1),
            np.stack([ox + lo + hi, oy + lo], 1),
            np.stack([ox + lo, oy + lo + hi], 1),
        ],
        axis=1,
    )
    return corners, per_row, cell


def _bake_atlas(faces, values, size: int = ATLAS_SIZE):
    """Rasterize per-vertex ``values (n, C)`` into the per-face atlas."""
    n_faces = len(faces)
    C = values.shape[1]
    corners, per_row, cell = _atlas_layout(n_faces, size)
    img = np.zeros((size, size, C))
    ys, xs = np.mgrid[0:size, 0:size]
    px, py = xs + 0.5, ys + 0.5
    col = np.minimum((px // cell).astype(np.int64), per_row - 1)
    row = np.minimum((py // cell).astype(np.int64), per_row - 1)
    fid = row * per_row + col
    ok = fid < n_faces
    fid = np.where(ok, fid, 0)
    c = corners[fid]  # (S, S, 3, 2)
    e1, e2 = c[..., 1, :] - c[..., 0, :], c[..., 2, :] - c[..., 0, :]
    dx, dy = px - c[..., 0, 0], py - c[..., 0, 1]
    b1 = np.clip(dx / e1[..., 0], 0.0, 1.0)
    b2 = np.clip(dy / e2[..., 1], 0.0, 1.0)
    s = np.maximum(b1 + b2, 1.0)
    b1, b2 = b1 / s, b2 / s
    b0 = 1.0 - b1 - b2
    tri = values[faces[fid]]  # (S, S, 3, C)
    img = b0[..., None] * tri[..., 0, :] + b1[..., None] * tri[..., 1, :] + b2[..., None] * tri[..., 2, :]
    img[~ok] = 0.0
    uv = corners.reshape(-1, 2) / size
    uv[:, 1] = 1.0 - uv[:, 1]
    return img, uv


def export_mesh(mesh, per_vertex_params, out_dir, name: str = "mesh", atlas_size: int = ATLAS_SIZE) -> Path:
    """Write ``<name>.obj`` + ``.mtl`` + diffuse/specular/roughness atlas PNGs.

    Diffuse colour is also written as OBJ vertex colours (``v x y z r g b``).
    """
    verts = np.asarray(mesh.vertices, dtype=float)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    if len(verts) == 0 or len(faces) == 0:
        raise ValueError("cannot export an empty mesh")
    params = np.asarray(per_vertex_params, dtype=float)
    if params.shape != (len(verts), 7):
        raise ValueError("per_vertex_params must be (n_vertices, 7)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    diffuse_img, uv = _bake_atlas(faces, params[:, 0:3], atlas_size)
    spec_img, _ = _bake_atlas(faces, params[:, 3:6], atlas_size)
    rough_img, _ = _bake_atlas(faces, params[:, 6:7], atlas_size)
    write_png_linear(out / f"{name}_diffuse.png", diffuse_img)
    write_png_linear(out / f"{name}_specular.png", spec_img)
    Image.fromarray(np.round(np.clip(rough_img[..., 0], 0, 1) * 255).astype(np.uint8)).save(
        out / f"{name}_roughness.png"
    )

    (out / f"{name}.mtl").write_text(
        "newmtl material0\n"
        "Ka 0 0 0\nKd 1 1 1\nKs 1 1 1\nillum 2\n"
        f"map_Kd {name}_diffuse.png\n"
        f"map_Ks {name}_specular.png\n"
        f"map_Pr {name}_roughness.png\n"
    )

    normals = mesh.vertex_normals
    if normals is None:
        normals = _area_weighted_normals(verts, faces)
    colors = linear_to_srgb(params[:, 0:3])
    lines = [f"mtllib {name}.mtl", "o mesh", "usemtl material0"]
    lines += [
        f"v {x!r} {y!r} {z!r} {r:.6f} {g:.6f} {b:.6f}"
        for (x, y, z), (r, g, b) in zip(verts.tolist(), colors.tolist())
    ]
    lines += [f"vn {x:.6f} {y:.6f} {z:.6f}" for x, y, z in np.asarray(normals).tolist()]
    lines += [f"vt {u:.6f} {v:.6f}" for u, v in uv.tolist()]
    f1 = faces + 1
    t1 = np.arange(1, 3 * len(faces) + 1).reshape(-1, 3)
    lines += [
        f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}"
        for (a, b, c), (ta, tb, tc) in zip(f1.tolist(), t1.tolist())
    ]
    path = out / f"{name}.obj"
    path.write_text("\n".join(lines) + "\n")
    return path


def _area_weighted_normals(verts, faces):
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)


def load_obj(path):
    """Parse vertices and triangular faces from an OBJ file.

    Returns ``(vertices (n,3), faces (f,3))``; polygon faces are fanned.
    """
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                verts.append([float(x) for x in line.split()[1:4]])
            elif line.startswith("f "):
                idx = [int(tok.split("/")[0]) for tok in line.split()[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_obj_geometry(path, vertices, faces) -> None:
    """Plain OBJ with positions and faces only (used for ground-truth meshes)."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=float).tolist()]
    lines += [f"f {a} {b} {c}" for a, b, c in (np.asarray(faces) + 1).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


if sys.byteorder != "little":  # pragma: no cover
    log.warning("big-endian host: PFM and texture files are still written little-endian")
