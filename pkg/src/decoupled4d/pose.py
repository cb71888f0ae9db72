"""Mask-guided pose estimation by weighted rigid registration.

The static-region objective is discretized as a weighted sum of squared 3D
residuals over identity-matched correspondences; its SE(3) minimizer has the
closed Kabsch/Umeyama form (no scale). Down-weighting pixels flagged dynamic
realizes the pose/geometry decoupling: the trajectory leans on static content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, LengthMismatch, StageError, ZeroWeightMass
from .geometry import CameraPose, se3_compose, se3_inverse
from .maps import DenseMap
from .synthscene import SceneTruth

# Second principal axis must carry at least this share of the spread,
# otherwise the support is (near-)collinear and rotation is ambiguous.
_COLLINEARITY_RATIO = 1e-9


@dataclass
class WeightedCorrespondenceSet:
    """Matched 3D point pairs with per-pair weights in [0, 1]."""

    points_r: np.ndarray  # (N, 3) reference-camera points
    points_t: np.ndarray  # (N, 3) target-frame observations of the same points
    weights: np.ndarray   # (N,) 1 - M_dyn at the source pixel

    def __post_init__(self):
        self.points_r = np.asarray(self.points_r, dtype=np.float64)
        self.points_t = np.asarray(self.points_t, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = len(self.points_r)
        if self.points_t.shape != (n, 3) or self.points_r.shape != (n, 3):
            raise ValueError("points_r and points_t must both be (N, 3)")
        if self.weights.shape != (n,):
            raise ValueError("weights must be (N,)")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")


@dataclass
class Trajectory:
    """Ordered camera-to-world poses; the first pose anchors the frame at identity."""

    poses: list[CameraPose]

    def __post_init__(self):
        ids = [p.frame_id for p in self.poses]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("frame_ids must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i) -> CameraPose:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


def geometric_loss(pose: CameraPose, corr: WeightedCorrespondenceSet) -> float:
    """Weighted sum of squared residuals ``sum w_i ||T p_r,i - p_t,i||^2``."""
    residuals = corr.points_r @ pose.rotation.T + pose.translation - corr.points_t
    return float(np.sum(corr.weights * np.sum(residuals ** 2, axis=1)))


def weighted_pose_solve(corr: WeightedCorrespondenceSet) -> CameraPose:
    """Global minimizer of :func:`geometric_loss` over SE(3) (weighted Kabsch)."""
    w = corr.weights
    total = w.sum()
    if total <= 0:
        raise ZeroWeightMass("all correspondence weights are zero")
    effective = np.count_nonzero(w > 0)
    if effective < 3:
        raise DegenerateConfiguration(
            f"need >= 3 positively weighted correspondences, got {effective}")

    wn = w / total
    centroid_r = wn @ corr.points_r
    centroid_t = wn @ corr.points_t
    pr = corr.points_r - centroid_r
    pt = corr.points_t - centroid_t

    cov = (pr * wn[:, None]).T @ pt
    spread = np.linalg.svd((pr * np.sqrt(wn)[:, None]), compute_uv=False)
    if spread[1] <= _COLLINEARITY_RATIO * spread[0]:
        raise DegenerateConfiguration("correspondence support is collinear")

    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    s = np.diag([1.0, 1.0, d])
    rotation = vt.T @ s @ u.T
    translation = centroid_t - rotation @ centroid_r
    return CameraPose(rotation, translation)


def _pair_correspondences(truth: SceneTruth, frame_r: int, frame_t: int,
                          mask_r: DenseMap | None, pixel_noise: float,
                          rng: np.random.Generator) -> WeightedCorrespondenceSet:
    """Identity-matched camera-frame points between two rendered frames."""
    obs_r = truth.observations[frame_r]
    obs_t = truth.observations[frame_t]
    common, ir, it = np.intersect1d(obs_r.ids, obs_t.ids, return_indices=True)

    k = truth.config.intrinsics

    def observed_points(obs, sel):
        pixels = obs.pixels[sel]
        depths = obs.depths[sel]
        if pixel_noise > 0:
            pixels = pixels + rng.normal(0.0, pixel_noise, size=pixels.shape)
        return k.backproject(pixels, depths)

    points_r = observed_points(obs_r, ir)
    points_t = observed_points(obs_t, it)

    if mask_r is None:
        weights = np.ones(len(common))
    else:
        cols = np.clip(np.round(obs_r.pixels[ir, 0]).astype(int), 0, k.width - 1)
        rows = np.clip(np.round(obs_r.pixels[ir, 1]).astype(int), 0, k.height - 1)
        mask_vals = mask_r.values[rows, cols]
        mask_vals = np.where(mask_vals == mask_r.sentinel, 0.0, mask_vals)
        weights = np.clip(1.0 - mask_vals, 0.0, 1.0)
    return WeightedCorrespondenceSet(points_r, points_t, weights)


def estimate_trajectory(truth: SceneTruth, mask_per_frame: list[DenseMap] | None,
                        use_mask: bool, pixel_noise: float = 0.0,
                        seed: int = 0) -> Trajectory:
    """Chain per-pair weighted rigid solves into a trajectory anchored at frame 0.

    With ``use_mask`` false every weight is 1 (the unmasked baseline objective);
    with ``use_mask`` true the weights are ``1 - M_dyn`` at the source pixel.
    """
    if truth.num_frames < 2:
        raise LengthMismatch("need at least two frames")
    if use_mask and mask_per_frame is None:
        raise ValueError("use_mask requires mask_per_frame")

    rng = np.random.default_rng([seed, 0x9E5E])
    poses = [CameraPose.identity(0)]
    for r in range(truth.num_frames - 1):
        t = r + 1
        mask_r = mask_per_frame[r] if use_mask else None
        try:
            corr = _pair_correspondences(truth, r, t, mask_r, pixel_noise, rng)
            rel = weighted_pose_solve(corr)  # reference-cam -> target-cam
        except (DegenerateConfiguration, ZeroWeightMass) as exc:
            raise StageError("pose", str(exc), frame_id=t) from exc
        nxt = se3_compose(poses[-1], se3_inverse(rel))
        nxt.frame_id = t
        poses.append(nxt)
    return Trajectory(poses)
