"""Cameras on a viewing sphere, pinhole cone generation, pose perturbation.

Conventions: world up is +z; the polar angle is measured from +z; cameras use
the OpenGL/NeRF frame (camera looks along its local -z, +x right, +y up).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SphericalPose:
    """Camera position on a sphere around a look-at target."""

    radius: float
    azimuth: float
    polar: float
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 < self.polar < np.pi:
            raise ValueError(f"polar angle must lie in (0, pi), got {self.polar}")
        object.__setattr__(self, "azimuth", float(self.azimuth) % TWO_PI)
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))

    def position(self):
        sg, cg = np.sin(self.polar), np.cos(self.polar)
        return self.target + self.radius * np.array(
            [sg * np.cos(self.azimuth), sg * np.sin(self.azimuth), cg]
        )


@dataclass(frozen=True)
class CameraPose:
    """Extrinsics + pinhole intrinsics for one camera."""

    position: np.ndarray
    rotation: np.ndarray  # 3x3 world-from-camera
    focal: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        r = np.asarray(self.rotation, dtype=np.float64)
        object.__setattr__(self, "rotation", r)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation is not right-handed")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got ({self.near}, {self.far})")

    @property
    def forward(self):
        """World-space viewing direction (camera -z)."""
        return -self.rotation[:, 2]


@dataclass(frozen=True)
class ConeRay:
    """Per-pixel viewing cone: unit direction plus radius growth per unit depth."""

    origin: np.ndarray
    direction: np.ndarray
    base_radius: float
    pixel: tuple
    near: float
    far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        d = np.asarray(self.direction, dtype=np.float64)
        object.__setattr__(self, "direction", d)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("direction must be unit length")
        if self.base_radius <= 0.0:
            raise ValueError("base_radius must be positive")


@dataclass(frozen=True)
class ConeBatch:
    """Vectorized bundle of cones (one row per pixel)."""

    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3) unit
    base_radii: np.ndarray  # (N,)
    near: float
    far: float


@dataclass(frozen=True)
class PosePair:
    """An unseen pose plus its perturbed copies and the draws that made them."""

    unseen: SphericalPose
    perturbed: list
    taus: list  # (tau_radius, tau_azimuth, tau_polar) per perturbed pose

    def __post_init__(self):
        if len(self.perturbed) < 1 or len(self.perturbed) != len(self.taus):
            raise ValueError("need one tau triple per perturbed pose")


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    width: int
    height: int
    near: float
    far: float


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)):
    """World-from-camera rotation with camera -z pointing at target."""
    backward = np.asarray(position, float) - np.asarray(target, float)
    nb = np.linalg.norm(backward)
    if nb == 0.0:
        raise ValueError("camera position coincides with target")
    backward = backward / nb
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, backward)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / nr
    true_up = np.cross(backward, right)
    return np.stack([right, true_up, backward], axis=1)


def pose_from_sphere(s: SphericalPose, intr: Intrinsics) -> CameraPose:
    """Place a camera at the spherical coordinate, aimed at the target."""
    pos = s.position()
    rot = look_at_rotation(pos, s.target)
    return CameraPose(
        position=pos,
        rotation=rot,
        focal=intr.focal,
        width=intr.width,
        height=intr.height,
        near=intr.near,
        far=intr.far,
    )


def spherical_from_position(position, target=(0.0, 0.0, 0.0)):
    """Inverse of SphericalPose.position (for round-trip checks)."""
    d = np.asarray(position, float) - np.asarray(target, float)
    radius = np.linalg.norm(d)
    polar = np.arccos(np.clip(d[2] / radius, -1.0, 1.0))
    azimuth = np.arctan2(d[1], d[0]) % TWO_PI
    return SphericalPose(radius=radius, azimuth=azimuth, polar=polar, target=target)


@dataclass(frozen=True)
class TauRanges:
    """Symmetric uniform ranges for the three perturbation components."""

    radius: float = 0.005  # fraction of the sphere radius
    azimuth: float = np.deg2rad(0.5)
    polar: float = np.deg2rad(0.5)
    polar_min: float = 0.05
    polar_max: float = np.pi - 0.05

    def validate_for(self, s: SphericalPose):
        if s.radius * (1.0 - self.radius) <= 0.0:
            raise ValueError("radius perturbation range allows a non-positive radius")


def perturb_pose(s: SphericalPose, ranges: TauRanges, rng, count=1) -> PosePair:
    """Draw `count` perturbed poses by adding uniform taus to (F, phi, Gamma)."""
    ranges.validate_for(s)
    perturbed, taus = [], []
    for _ in range(count):
        tau_f = rng.uniform(-ranges.radius, ranges.radius) * s.radius
        tau_a = rng.uniform(-ranges.azimuth, ranges.azimuth)
        tau_p = rng.uniform(-ranges.polar, ranges.polar)
        polar = float(np.clip(s.polar + tau_p, ranges.polar_min, ranges.polar_max))
        perturbed.append(
            SphericalPose(
                radius=s.radius + tau_f,
                azimuth=s.azimuth + tau_a,
                polar=polar,
                target=s.target,
            )
        )
        taus.append((tau_f, tau_a, tau_p))
    return PosePair(unseen=s, perturbed=perturbed, taus=taus)


@dataclass(frozen=True)
class PoseBounds:
    """Sampling region for unseen poses: fixed radius, ranges for the angles."""

    radius: float
    azimuth_range: tuple = (0.0, TWO_PI)
    polar_range: tuple = (0.2, np.pi / 2)

    def __post_init__(self):
        if self.azimuth_range[1] < self.azimuth_range[0]:
            raise ValueError("empty azimuth range")
        if self.polar_range[1] < self.polar_range[0]:
            raise ValueError("empty polar range")


def sample_unseen_pose(bounds: PoseBounds, rng, target=(0.0, 0.0, 0.0)) -> SphericalPose:
    az = rng.uniform(*bounds.azimuth_range)
    po = rng.uniform(*bounds.polar_range)
    return SphericalPose(radius=bounds.radius, azimuth=az, polar=po, target=target)


# base cone radius per unit depth: pixel footprint width scaled as in mip-NeRF
_RADIUS_SCALE = 2.0 / np.sqrt(12.0)


def pixel_cone(cam: CameraPose, row: int, col: int) -> ConeRay:
    """Cone through the center of one pixel."""
    if not (0 <= row < cam.height and 0 <= col < cam.width):
        raise ValueError(f"pixel ({row}, {col}) outside {cam.height}x{cam.width} image")
    batch = pixel_cones(cam, np.array([row]), np.array([col]))
    return ConeRay(
        origin=batch.origins[0],
        direction=batch.directions[0],
        base_radius=float(batch.base_radii[0]),
        pixel=(row, col),
        near=cam.near,
        far=cam.far,
    )


def pixel_cones(cam: CameraPose, rows, cols) -> ConeBatch:
    """Cones through many pixel centers at once."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    x = (cols + 0.5 - 0.5 * cam.width) / cam.focal
    y = -(rows + 0.5 - 0.5 * cam.height) / cam.focal
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d_world = d_cam @ cam.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    n = rows.size
    radius = _RADIUS_SCALE / cam.focal
    return ConeBatch(
        origins=np.broadcast_to(cam.position, (n, 3)).copy(),
        directions=d_world,
        base_radii=np.full(n, radius),
        near=cam.near,
        far=cam.far,
    )


def patch_pixel_grid(row0: int, col0: int, patch_size: int):
    """Row/col index arrays of a PS x PS patch, flattened row-major."""
    rr, cc = np.meshgrid(
        np.arange(row0, row0 + patch_size),
        np.arange(col0, col0 + patch_size),
        indexing="ij",
    )
    return rr.ravel(), cc.ravel()
