"""Analytic emissive-density scenes, the dense-quadrature reference renderer,
dataset generation, and on-disk formats (scene JSON, PNG images, and the
standard synthetic-dataset transforms manifest).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels
from .geometry import (
    CameraPose,
    Intrinsics,
    PoseBounds,
    pixel_cones,
    pose_from_sphere,
    sample_unseen_pose,
)

SCENE_FORMAT_VERSION = 1


@dataclass
class Primitive:
    shape: str  # "sphere" (size = radius) or "box" (size = half extents)
    center: np.ndarray
    size: np.ndarray
    density: float
    albedo: np.ndarray
    falloff: float = None  # edge softness band width; default 5% of size

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        if self.shape == "box" and self.size.size == 1:
            self.size = np.repeat(self.size, 3)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.density < 0.0 or np.any(self.albedo < 0.0) or np.any(self.albedo > 1.0):
            raise ValueError("need density >= 0 and albedo in [0,1]^3")
        if self.falloff is None:
            self.falloff = 0.05 * float(self.size.max())


@dataclass
class AnalyticScene:
    primitives: list
    background: np.ndarray = field(default_factory=lambda: np.ones(3))
    near: float = 2.0
    far: float = 6.0

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        self._pack()

    def _pack(self):
        n = len(self.primitives)
        self._kinds = np.array(
            [0 if p.shape == "sphere" else 1 for p in self.primitives], dtype=np.int64
        )
        self._centers = np.array([p.center for p in self.primitives]).reshape(n, 3)
        self._sizes = np.zeros((n, 3))
        for i, p in enumerate(self.primitives):
            self._sizes[i, : p.size.size] = p.size
        self._dens = np.array([p.density for p in self.primitives], dtype=np.float64)
        self._albedo = np.array([p.albedo for p in self.primitives]).reshape(n, 3)
        self._falloff = np.array([p.falloff for p in self.primitives], dtype=np.float64)

    def density_at(self, pts):
        """Density and blended albedo at points (N, 3)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return kernels.scene_density_batch(
            pts,
            self._kinds,
            self._centers,
            self._sizes,
            self._dens,
            self._albedo,
            self._falloff,
        )


def scene_density(scene: AnalyticScene, x):
    """Density and albedo at a single point."""
    sigma, rgb = scene.density_at(np.asarray(x, dtype=np.float64).reshape(1, 3))
    return float(sigma[0]), rgb[0]


def oracle_render(scene: AnalyticScene, cam: CameraPose, samples_per_ray=4096, chunk=2048):
    """Reference image by dense uniform quadrature along every pixel ray."""
    h, w = cam.height, cam.width
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    img = np.zeros((h * w, 3))
    edges = np.linspace(cam.near, cam.far, samples_per_ray + 1)
    t_mid = 0.5 * (edges[:-1] + edges[1:])
    delta = np.diff(edges)
    for lo in range(0, h * w, chunk):
        hi = min(lo + chunk, h * w)
        cones = pixel_cones(cam, rows[lo:hi], cols[lo:hi])
        pts = (
            cones.origins[:, None, :] + cones.directions[:, None, :] * t_mid[None, :, None]
        )
        sigma, rgb = scene.density_at(pts.reshape(-1, 3))
        n = hi - lo
        sigma = sigma.reshape(n, samples_per_ray)
        rgb = rgb.reshape(n, samples_per_ray, 3)
        color, _ = kernels.raymarch(
            sigma,
            np.broadcast_to(delta, sigma.shape),
            rgb,
            np.broadcast_to(t_mid, sigma.shape),
            cam.far,
            scene.background,
        )
        img[lo:hi] = color
    return img.reshape(h, w, 3)


@dataclass
class DatasetView:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    camera: CameraPose
    split: str  # "train" | "test"

    def __post_init__(self):
        if self.image.shape[:2] != (self.camera.height, self.camera.width):
            raise ValueError("image dimensions do not match camera intrinsics")


def make_dataset(
    scene: AnalyticScene,
    n_train,
    n_test,
    resolution,
    rng,
    focal=None,
    radius=4.0,
    samples_per_ray=2048,
    train_octant=True,
):
    """Seed-deterministic synthetic dataset rendered by the oracle.

    Train poses are confined to one azimuth octant by default so the sparse
    setting has genuinely non-adjacent held-out views.
    """
    focal = focal if focal is not None else 1.2 * resolution
    intr = Intrinsics(
        focal=focal, width=resolution, height=resolution, near=scene.near, far=scene.far
    )
    train_bounds = PoseBounds(
        radius=radius,
        azimuth_range=(0.0, np.pi / 4) if train_octant else (0.0, 2 * np.pi),
        polar_range=(0.6, 1.3),
    )
    test_bounds = PoseBounds(
        radius=radius, azimuth_range=(0.0, 2 * np.pi), polar_range=(0.4, 1.4)
    )
    views = []
    for split, count, bounds in (
        ("train", n_train, train_bounds),
        ("test", n_test, test_bounds),
    ):
        for _ in range(count):
            cam = pose_from_sphere(sample_unseen_pose(bounds, rng), intr)
            img = oracle_render(scene, cam, samples_per_ray=samples_per_ray)
            views.append(DatasetView(image=img, camera=cam, split=split))
    return views


# ------------------------------------------------------------ scene file I/O


def save_scene(path, scene: AnalyticScene):
    doc = {
        "format": "nerflab-scene",
        "version": SCENE_FORMAT_VERSION,
        "background": scene.background.tolist(),
        "near": scene.near,
        "far": scene.far,
        "primitives": [
            {
                "shape": p.shape,
                "center": p.center.tolist(),
                "size": p.size.tolist(),
                "density": p.density,
                "albedo": p.albedo.tolist(),
                "falloff": p.falloff,
            }
            for p in scene.primitives
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_scene(path) -> AnalyticScene:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "nerflab-scene":
        raise ValueError(f"{path}: not a scene file")
    prims = [
        Primitive(
            shape=p["shape"],
            center=p["center"],
            size=p["size"],
            density=p["density"],
            albedo=p["albedo"],
            falloff=p.get("falloff"),
        )
        for p in doc["primitives"]
    ]
    return AnalyticScene(
        primitives=prims,
        background=doc["background"],
        near=doc["near"],
        far=doc["far"],
    )


def two_sphere_scene() -> AnalyticScene:
    """The fixed two-primitive scene used by the desk-scale experiments."""
    return AnalyticScene(
        primitives=[
            Primitive(
                shape="sphere",
                center=(0.0, 0.0, 0.0),
                size=0.9,
                density=18.0,
                albedo=(0.85, 0.3, 0.25),
            ),
            Primitive(
                shape="box",
                center=(0.7, -0.5, 0.55),
                size=(0.35, 0.35, 0.35),
                density=22.0,
                albedo=(0.2, 0.45, 0.9),
            ),
        ]
    )


def one_sphere_scene() -> AnalyticScene:
    return AnalyticScene(
        primitives=[
            Primitive(
                shape="sphere",
                center=(0.0, 0.0, 0.0),
                size=1.0,
                density=20.0,
                albedo=(0.8, 0.35, 0.3),
            )
        ]
    )


# -------------------------------------------------------------------- images


def save_png(path, image):
    """8-bit PNG; values mapped linearly from [0,1], no gamma."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def load_png(path):
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return arr


# --------------------------------------------------- transforms manifest I/O


def load_blender_format(directory, near=2.0, far=6.0, splits=("train", "test")):
    """Load the standard synthetic-dataset layout (transforms_*.json + images).

    RGBA images are composited onto white; focal length comes from
    camera_angle_x via the pinhole relation.
    """
    views = []
    for split in splits:
        manifest = os.path.join(directory, f"transforms_{split}.json")
        if not os.path.exists(manifest):
            continue
        with open(manifest) as fh:
            doc = json.load(fh)
        if "camera_angle_x" not in doc:
            raise ValueError(f"{manifest}: missing camera_angle_x")
        for k, frame in enumerate(doc.get("frames", [])):
            img_path = os.path.join(directory, frame["file_path"])
            if not os.path.splitext(img_path)[1]:
                img_path += ".png"
            raw = np.asarray(Image.open(img_path), dtype=np.float64) / 255.0
            if raw.ndim == 3 and raw.shape[2] == 4:
                alpha = raw[..., 3:4]
                raw = raw[..., :3] * alpha + (1.0 - alpha)
            elif raw.ndim == 2:
                raw = np.repeat(raw[..., None], 3, axis=2)
            h, w = raw.shape[:2]
            focal = 0.5 * w / np.tan(0.5 * doc["camera_angle_x"])
            m = np.asarray(frame["transform_matrix"], dtype=np.float64)
            if m.shape != (4, 4):
                raise ValueError(f"{manifest}: frame {k}: malformed transform matrix")
            cam = CameraPose(
                position=m[:3, 3],
                rotation=m[:3, :3],
                focal=focal,
                width=w,
                height=h,
                near=near,
                far=far,
            )
            views.append(DatasetView(image=raw[..., :3], camera=cam, split=split))
    if not views:
        raise ValueError(f"{directory}: no transforms manifest found")
    return views


def save_blender_format(directory, views, camera_angle_x=None):
    """Write views in the standard layout (used for round-trip tests and
    dataset export)."""
    os.makedirs(directory, exist_ok=True)
    by_split = {}
    for v in views:
        by_split.setdefault(v.split, []).append(v)
    for split, items in by_split.items():
        frames = []
        for i, v in enumerate(items):
            angle = (
                camera_angle_x
                if camera_angle_x is not None
                else 2.0 * np.arctan(0.5 * v.camera.width / v.camera.focal)
            )
            name = f"{split}_{i:03d}"
            save_png(os.path.join(directory, name + ".png"), v.image)
            m = np.eye(4)
            m[:3, :3] = v.camera.rotation
            m[:3, 3] = v.camera.position
            frames.append({"file_path": name, "transform_matrix": m.tolist()})
        with open(os.path.join(directory, f"transforms_{split}.json"), "w") as fh:
            json.dump({"camera_angle_x": angle, "frames": frames}, fh, indent=2)
