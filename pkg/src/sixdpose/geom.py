"""Rigid-body math: rotations, SE(3) poses and view-sphere sampling.

Conventions used throughout the package:

* Rotation matrices are 3x3, right-handed, ``R.T @ R = I``, ``det(R) = +1``.
* A pose maps model-frame points to camera-frame points,
  ``x_cam = R @ x_model + t``, with translations in millimeters.
* Rotation distance is the geodesic angle in degrees, in [0, 180].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Rotation3:
    """A validated 3x3 rotation matrix."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {m.shape}")
        resid = np.abs(m.T @ m - np.eye(3)).max()
        if resid > ORTHONORMALITY_TOL:
            raise ValueError(f"matrix is not orthonormal (residual {resid:.2e})")
        det = np.linalg.det(m)
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"matrix has det {det:.12f}, expected +1")
        object.__setattr__(self, "m", _freeze(m))

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def transpose(self) -> "Rotation3":
        return Rotation3(self.m.T.copy())

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Rotate one point or an (n, 3) stack of points."""
        return np.asarray(x, dtype=np.float64) @ self.m.T


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: rotation plus translation in millimeters."""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation components must be finite")
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(Rotation3.identity(), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous pose matrix must be 4x4, got {m.shape}")
        return PoseSE3(Rotation3(m[:3, :3]), m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m


def transform_point(pose: PoseSE3, x: np.ndarray) -> np.ndarray:
    """Map a model-frame point (or (n, 3) stack) into the camera frame."""
    return pose.rotation.apply(x) + pose.translation


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Pose composition: ``transform(compose(a, b), x) == transform(a, transform(b, x))``."""
    return PoseSE3(a.rotation @ b.rotation, a.rotation.apply(b.translation) + a.translation)


def invert(p: PoseSE3) -> PoseSE3:
    rt = p.rotation.transpose()
    return PoseSE3(rt, -rt.apply(p.translation))


def geodesic_angle_deg(a: Rotation3, b: Rotation3) -> float:
    """Geodesic distance between two rotations, in degrees in [0, 180]."""
    c = (np.trace(a.m.T @ b.m) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> Rotation3:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return Rotation3.identity()
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    m = np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)
    return Rotation3(_reorthonormalize(m))


def rot_x(angle_rad: float) -> Rotation3:
    return rotation_about_axis(np.array([1.0, 0.0, 0.0]), angle_rad)


def rot_y(angle_rad: float) -> Rotation3:
    return rotation_about_axis(np.array([0.0, 1.0, 0.0]), angle_rad)


def rot_z(angle_rad: float) -> Rotation3:
    return rotation_about_axis(np.array([0.0, 0.0, 1.0]), angle_rad)


def _reorthonormalize(m: np.ndarray) -> np.ndarray:
    # Projection to the nearest rotation; keeps constructions valid at 1e-9.
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rotation(seed: int) -> Rotation3:
    """Deterministic uniform random rotation (random unit quaternion)."""
    rng = np.random.default_rng(seed)
    return random_rotation_from(rng)


def random_rotation_from(rng: np.random.Generator) -> Rotation3:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Rotation3(_reorthonormalize(quat_to_matrix(q)))


def random_pose(seed: int, t_scale_mm: float = 1000.0) -> PoseSE3:
    """Deterministic random pose; translation uniform in a cube of the given scale."""
    rng = np.random.default_rng(seed)
    r = random_rotation_from(rng)
    t = rng.uniform(-t_scale_mm, t_scale_mm, size=3)
    return PoseSE3(r, t)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit directions via the Fibonacci spiral. Deterministic."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = GOLDEN_ANGLE * i
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def look_at_rotation(direction: np.ndarray) -> Rotation3:
    """Rotation whose third row is the given unit view direction.

    With the object placed on the camera's optical axis and rotated by the
    result, the camera sees the object from ``direction`` (expressed in the
    object frame).
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(d @ up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    r1 = np.cross(up, d)
    r1 /= np.linalg.norm(r1)
    r2 = np.cross(d, r1)
    return Rotation3(_reorthonormalize(np.stack([r1, r2, d])))


@dataclass(frozen=True)
class ViewpointGrid:
    """Deterministic rotation grid: sphere directions crossed with in-plane rolls."""

    directions: np.ndarray
    inplane_steps: int
    rotations: list[Rotation3] = field(repr=False)

    def __post_init__(self):
        dirs = np.asarray(self.directions, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise ValueError("directions must be (n, 3)")
        norms = np.linalg.norm(dirs, axis=1)
        if np.abs(norms - 1.0).max() > ORTHONORMALITY_TOL:
            raise ValueError("directions must be unit vectors")
        if len(self.rotations) != dirs.shape[0] * self.inplane_steps:
            raise ValueError("rotation count must be |directions| * inplane_steps")
        object.__setattr__(self, "directions", _freeze(dirs))

    def __len__(self) -> int:
        return len(self.rotations)


def sample_view_rotations(n_views: int, inplane_steps: int) -> ViewpointGrid:
    """Discretize the rotation space: Fibonacci directions x equally spaced rolls.

    Rolls are about the camera optical axis, over [0, 360) degrees. The
    construction uses no RNG; identical inputs give identical grids.
    """
    if n_views < 4:
        raise ValueError(f"n_views must be >= 4, got {n_views}")
    if inplane_steps < 1:
        raise ValueError(f"inplane_steps must be >= 1, got {inplane_steps}")
    directions = fibonacci_sphere(n_views)
    rotations = []
    for d in directions:
        base = look_at_rotation(d)
        for k in range(inplane_steps):
            roll = rot_z(2.0 * math.pi * k / inplane_steps)
            rotations.append(roll @ base)
    return ViewpointGrid(directions=directions, inplane_steps=inplane_steps, rotations=rotations)


def grid_resolution_deg(grid: ViewpointGrid) -> float:
    """Covering resolution: max over grid rotations of the nearest-neighbor angle."""
    mats = np.stack([r.m for r in grid.rotations])
    n = len(mats)
    worst = 0.0
    for i in range(n):
        traces = np.einsum("ij,nij->n", mats[i], mats)
        c = np.clip((traces - 1.0) / 2.0, -1.0, 1.0)
        ang = np.degrees(np.arccos(c))
        ang[i] = np.inf
        worst = max(worst, float(ang.min()))
    return worst


def pose_to_json(pose: PoseSE3) -> dict:
    """Pose as a JSON object: row-major R (9 floats) and t (3 floats, mm)."""
    return {
        "R": [float(v) for v in pose.rotation.m.reshape(-1)],
        "t": [float(v) for v in pose.translation],
    }


def pose_from_json(obj: dict) -> PoseSE3:
    r = np.asarray(obj["R"], dtype=np.float64).reshape(3, 3)
    t = np.asarray(obj["t"], dtype=np.float64)
    return PoseSE3(Rotation3(_reorthonormalize(r)), t)
