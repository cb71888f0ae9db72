"""SE(3) camera model, pinhole projection and the epipolar residual of moving points.

Conventions: a :class:`CameraPose` maps points from its own coordinate frame
into the parent frame via ``x' = R x + t``. Trajectories store camera-to-world
poses. Homogeneous pixel coordinates carry a third coordinate fixed at 1 and
are expressed in raw pixel units; the epipolar bilinear form therefore takes
the fundamental matrix when fed raw pixels, or the essential matrix when fed
intrinsics-normalized coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonPositiveTargetDepth

ORTHONORMALITY_TOL = 1e-9
MIN_TARGET_DEPTH = 1e-9


def _orthonormality_drift(rotation: np.ndarray) -> float:
    return float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via polar decomposition."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


@dataclass
class CameraPose:
    """Rigid transform ``x -> R x + t`` with an integer frame index."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        drift = _orthonormality_drift(self.rotation)
        if drift > ORTHONORMALITY_TOL:
            if drift > 1e-3:
                raise ValueError(f"rotation too far from SO(3): drift {drift:.3g}")
            self.rotation = orthonormalize(self.rotation)
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have determinant +1")

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) or (3,) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    @classmethod
    def identity(cls, frame_id: int = 0) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3), frame_id)

    @classmethod
    def from_matrix(cls, m: np.ndarray, frame_id: int = 0) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3], frame_id)


def se3_compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Rigid transform applying ``b`` first, then ``a``."""
    rotation = a.rotation @ b.rotation
    if _orthonormality_drift(rotation) > ORTHONORMALITY_TOL:
        rotation = orthonormalize(rotation)
    translation = a.rotation @ b.translation + a.translation
    return CameraPose(rotation, translation, a.frame_id)


def se3_inverse(pose: CameraPose) -> CameraPose:
    return CameraPose(pose.rotation.T, -pose.rotation.T @ pose.translation,
                      pose.frame_id)


def relative_pose(target: CameraPose, reference: CameraPose) -> CameraPose:
    """Transform taking reference-camera coordinates to target-camera coordinates.

    Both inputs are camera-to-world poses; the result carries the target's
    frame id.
    """
    rel = se3_compose(se3_inverse(target), reference)
    rel.frame_id = target.frame_id
    return rel


@dataclass
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Perspective-project (N, 3) camera-frame points to (N, 2) pixels."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        z = pts[:, 2]
        uv = np.empty((len(pts), 2))
        uv[:, 0] = self.fx * pts[:, 0] / z + self.cx
        uv[:, 1] = self.fy * pts[:, 1] / z + self.cy
        return uv[0] if single else uv

    def backproject(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Lift (N, 2) pixels at (N,) depths to (N, 3) camera-frame points."""
        px = np.asarray(pixels, dtype=np.float64)
        single = px.ndim == 1
        px = np.atleast_2d(px)
        d = np.atleast_1d(np.asarray(depths, dtype=np.float64))
        pts = np.empty((len(px), 3))
        pts[:, 0] = (px[:, 0] - self.cx) / self.fx * d
        pts[:, 1] = (px[:, 1] - self.cy) / self.fy * d
        pts[:, 2] = d
        return pts[0] if single else pts


@dataclass
class PixelCorrespondence:
    """Reference/target pixel pair with reference depth and 3D displacement."""

    x_r: np.ndarray
    x_t: np.ndarray | None
    depth_r: float
    displacement: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.x_r = np.asarray(self.x_r, dtype=np.float64).reshape(2)
        if self.x_t is not None:
            self.x_t = np.asarray(self.x_t, dtype=np.float64).reshape(2)
        self.displacement = np.asarray(self.displacement, dtype=np.float64).reshape(3)
        if self.depth_r <= 0:
            raise ValueError("reference depth must be positive")


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix ``[v]_x``."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass
class EssentialMatrix:
    """``[t]_x R`` of a relative pose, with a zero-translation degeneracy flag."""

    matrix: np.ndarray
    degenerate: bool


def essential_matrix(relative: CameraPose) -> EssentialMatrix:
    t = relative.translation
    degenerate = bool(np.allclose(t, 0.0))
    return EssentialMatrix(skew(t) @ relative.rotation, degenerate)


def fundamental_matrix(relative: CameraPose, k: Intrinsics) -> np.ndarray:
    """``K^-T [t]_x R K^-1``: the epipolar bilinear form on raw pixels."""
    k_inv = k.inverse_matrix()
    return k_inv.T @ essential_matrix(relative).matrix @ k_inv


def homogeneous(pixel: np.ndarray) -> np.ndarray:
    px = np.asarray(pixel, dtype=np.float64).reshape(2)
    return np.array([px[0], px[1], 1.0])


def warp_point(corr: PixelCorrespondence, relative: CameraPose,
               k: Intrinsics) -> tuple[np.ndarray, float]:
    """Warp the reference pixel into the target frame; also return target depth.

    Implements ``x_t = K [R D_r K^-1 x_r + t + dX]`` with perspective division.
    """
    ray = k.inverse_matrix() @ homogeneous(corr.x_r)
    point_t = relative.rotation @ (corr.depth_r * ray) + relative.translation \
        + corr.displacement
    if point_t[2] <= MIN_TARGET_DEPTH:
        raise NonPositiveTargetDepth(
            f"warped point has non-positive target depth {point_t[2]:.3g}")
    return k.project(point_t), float(point_t[2])


def warp(corr: PixelCorrespondence, relative: CameraPose, k: Intrinsics) -> np.ndarray:
    """Target pixel of a (possibly moving) reference pixel."""
    return warp_point(corr, relative, k)[0]


def epipolar_residual(x_r: np.ndarray, x_t: np.ndarray, e: np.ndarray) -> float:
    """Signed bilinear form ``x_t^T E x_r`` on homogeneous pixel coordinates."""
    return float(homogeneous(x_t) @ np.asarray(e, dtype=np.float64) @ homogeneous(x_r))


def epipolar_line(e: np.ndarray, x_r: np.ndarray) -> np.ndarray:
    """Coefficient 3-vector of the epipolar line of ``x_r`` in the target image."""
    return np.asarray(e, dtype=np.float64) @ homogeneous(x_r)


def epipolar_residual_approx(x_r: np.ndarray, depth_r: float,
                             displacement: np.ndarray, e: np.ndarray) -> float:
    """First-order epipolar residual of an independently moving point.

    The residual is ``(1/Z_r) n^T dX_perp`` where ``n`` is the unit normal of
    the epipolar plane (whose image trace is the epipolar line) and ``dX_perp``
    the displacement component along that normal. The line-coefficient norm is
    carried through so the result is directly comparable with the bilinear form
    of :func:`epipolar_residual` at the same matrix scale. The displacement
    lives in 3D camera coordinates, so this form expects the essential matrix
    together with intrinsics-normalized image coordinates.
    """
    line = epipolar_line(e, x_r)
    scale = np.linalg.norm(line)
    if scale == 0.0:
        return 0.0
    n = line / scale
    perp = n * float(n @ np.asarray(displacement, dtype=np.float64))
    return float(scale / depth_r * (n @ perp))


def rotation_angle_deg(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    cos = (np.trace(rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


# --- trajectory text format -------------------------------------------------
# One line per frame: `frame_id tx ty tz qx qy qz qw`, quaternion in
# (x, y, z, w) order; '#' starts a comment line.

def save_trajectory(path, poses: list[CameraPose]) -> None:
    lines = ["# frame_id tx ty tz qx qy qz qw"]
    for pose in poses:
        q = Rotation.from_matrix(pose.rotation).as_quat()  # (x, y, z, w)
        t = pose.translation
        fields = [f"{v:.17g}" for v in (*t, *q)]
        lines.append(f"{pose.frame_id} " + " ".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory(path) -> list[CameraPose]:
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"bad trajectory line: {line!r}")
            frame_id = int(parts[0])
            tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts[1:])
            rot = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
            poses.append(CameraPose(rot, [tx, ty, tz], frame_id))
    return poses
