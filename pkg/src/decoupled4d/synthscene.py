"""Deterministic synthetic dynamic-scene generator.

Provides ground truth for every quantity the pipeline estimates: camera
trajectory, per-frame depth maps, dynamic masks, point identities for building
correspondences, and two noisy prediction "passes" with controlled
heteroscedastic error.

Rendering is point splatting with z-buffering at a 1-pixel footprint.
Undefined pixels carry the depth sentinel 0 and are excluded from all metrics
and fusion. A pixel is dynamic by object membership: whichever surface rendered
it, regardless of instantaneous velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidNoiseProfile
from .geometry import CameraPose, Intrinsics
from .maps import DenseMap

CAMERA_PATHS = ("orbit", "linear", "random_walk")
OBJECT_PATHS = ("circular", "linear")

# Variance floor applied before inverting into a confidence, so zero-noise
# passes still get a finite calibrated confidence.
SIGMA_FLOOR = 1e-4

# Distinct RNG stream tags under the scene seed.
_STREAM_STATIC = 0
_STREAM_DYNAMIC = 1
_STREAM_CAMERA = 2


@dataclass
class SceneConfig:
    num_frames: int = 20
    num_static_points: int = 2000
    num_dynamic_points: int = 200
    width: int = 56
    height: int = 40
    intrinsics: Intrinsics | None = None
    camera_path: str = "orbit"
    path_amplitude: float = 0.6
    camera_distance: float = 5.0
    scene_extent: tuple[float, float, float] = (2.0, 1.5, 1.5)
    object_radius: float = 0.35
    # One row per dynamic object; scene units per frame (initial velocity).
    dynamic_velocities: np.ndarray = field(
        default_factory=lambda: np.array([[0.25, 0.15, 0.12]]))
    # "circular" keeps the per-frame displacement at |v| while the object
    # loops once over the sequence and stays inside the view frustum;
    # "linear" is constant-velocity drift.
    object_path: str = "circular"
    pixel_noise_sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.dynamic_velocities = np.atleast_2d(
            np.asarray(self.dynamic_velocities, dtype=np.float64))
        if self.intrinsics is None:
            self.intrinsics = Intrinsics(
                fx=1.1 * self.width, fy=1.1 * self.width,
                cx=self.width / 2.0, cy=self.height / 2.0,
                width=self.width, height=self.height)
        self.validate()

    def validate(self) -> None:
        if self.num_frames < 2:
            raise InvalidConfig("num_frames must be >= 2")
        if self.num_static_points <= 0 or self.num_dynamic_points < 0:
            raise InvalidConfig("point counts must be positive")
        if self.pixel_noise_sigma < 0:
            raise InvalidConfig("pixel_noise_sigma must be >= 0")
        if self.camera_path not in CAMERA_PATHS:
            raise InvalidConfig(f"camera_path must be one of {CAMERA_PATHS}")
        if self.object_path not in OBJECT_PATHS:
            raise InvalidConfig(f"object_path must be one of {OBJECT_PATHS}")
        if self.dynamic_velocities.shape[1] != 3:
            raise InvalidConfig("dynamic_velocities must be (n_objects, 3)")
        if self.num_dynamic_points > 0 and len(self.dynamic_velocities) == 0:
            raise InvalidConfig("dynamic points require at least one velocity")


@dataclass
class FrameObservation:
    """Exact projections of the z-buffer-winning scene points in one frame."""

    frame_id: int
    ids: np.ndarray          # (K,) global point ids
    pixels: np.ndarray       # (K, 2) exact sub-pixel projections
    depths: np.ndarray       # (K,) camera-frame z
    cam_points: np.ndarray   # (K, 3) camera-frame positions


@dataclass
class SceneTruth:
    config: SceneConfig
    trajectory: list[CameraPose]          # camera-to-world, one per frame
    static_points: np.ndarray             # (Ns, 3) world frame
    dynamic_points: np.ndarray            # (F, Nd, 3) world frame per frame
    depth_maps: list[DenseMap]
    masks: list[DenseMap]                 # 1.0 dynamic, 0.0 static, -1 undefined
    id_maps: list[np.ndarray]             # (H, W) int32, -1 undefined
    observations: list[FrameObservation]
    surface_points: list[np.ndarray]      # (K, 3) pixel-center unprojections

    @property
    def num_frames(self) -> int:
        return self.config.num_frames

    def is_dynamic_id(self, ids: np.ndarray) -> np.ndarray:
        return np.asarray(ids) >= self.config.num_static_points


@dataclass
class NoiseProfile:
    """Per-region depth noise and confidence calibration of one pass."""

    sigma_static: float
    sigma_dynamic: float
    calibration_gain: float = 1.0
    miscalibration_fraction: float = 0.0
    miscalibration_multiplier: float = 1.0

    def __post_init__(self):
        if self.sigma_static < 0 or self.sigma_dynamic < 0:
            raise InvalidNoiseProfile("sigmas must be >= 0")
        if not 0.0 <= self.miscalibration_fraction <= 1.0:
            raise InvalidNoiseProfile("miscalibration_fraction must be in [0, 1]")


# The narrative the passes encode: the unmodified first pass is reliable on
# dynamic content, the mask-aware second pass is reliable on static content.
DEFAULT_PASS1_PROFILE = NoiseProfile(sigma_static=0.05, sigma_dynamic=0.01)
DEFAULT_PASS2_PROFILE = NoiseProfile(sigma_static=0.01, sigma_dynamic=0.10)


@dataclass
class PassPrediction:
    depth: DenseMap
    confidence: DenseMap
    pass_id: str  # "first" | "mask_aware"


def _look_at(center: np.ndarray, target: np.ndarray, frame_id: int) -> CameraPose:
    """Camera-to-world pose for x-right / y-down / z-forward convention."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.column_stack([right, down, forward])
    return CameraPose(rot, center, frame_id)


def _camera_centers(config: SceneConfig) -> np.ndarray:
    f = config.num_frames
    r = config.camera_distance
    if config.camera_path == "orbit":
        theta = np.linspace(-config.path_amplitude / 2.0,
                            config.path_amplitude / 2.0, f)
        return np.column_stack([r * np.sin(theta),
                                np.zeros(f),
                                -r * np.cos(theta)])
    if config.camera_path == "linear":
        x = np.linspace(-config.path_amplitude / 2.0,
                        config.path_amplitude / 2.0, f)
        return np.column_stack([x, np.zeros(f), np.full(f, -r)])
    # random_walk
    rng = np.random.default_rng([config.seed, _STREAM_CAMERA])
    steps = rng.normal(0.0, config.path_amplitude / max(f - 1, 1), size=(f - 1, 3))
    centers = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    centers[:, 2] -= r
    return centers


def _render_frame(points: np.ndarray, is_dynamic: np.ndarray, pose: CameraPose,
                  k: Intrinsics, frame_id: int):
    """Z-buffered 1-pixel splatting; returns maps plus exact observations."""
    h, w = k.height, k.width
    cam = (points - pose.translation) @ pose.rotation  # world -> camera
    z = cam[:, 2]
    front = z > 1e-6
    uv = np.full((len(points), 2), -1.0)
    uv[front] = k.project(cam[front])
    cols = np.round(uv[:, 0]).astype(np.int64)
    rows = np.round(uv[:, 1]).astype(np.int64)
    valid = front & (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)

    idx = np.flatnonzero(valid)
    ids = idx
    # Write farthest first so the last write per pixel is the nearest point;
    # ties resolve to the smallest point id.
    order = np.lexsort((-ids, -z[idx]))
    idx = idx[order]
    flat = rows[idx] * w + cols[idx]

    depth = np.zeros(h * w, dtype=np.float32)
    mask = np.full(h * w, -1.0, dtype=np.float32)
    id_map = np.full(h * w, -1, dtype=np.int32)
    depth[flat] = z[idx].astype(np.float32)
    mask[flat] = is_dynamic[idx].astype(np.float32)
    id_map[flat] = idx.astype(np.int32)

    winners = np.unique(id_map[id_map >= 0])
    obs = FrameObservation(
        frame_id=frame_id,
        ids=winners.astype(np.int64),
        pixels=uv[winners],
        depths=z[winners].copy(),
        cam_points=cam[winners].copy(),
    )

    # Pixel-center surface samples in world frame, via explicit homogeneous
    # matrix math (independent of the metrics unprojection path).
    win_flat = np.flatnonzero(id_map >= 0)
    rr, cc = win_flat // w, win_flat % w
    zz = depth[win_flat].astype(np.float64)
    rays = np.column_stack([(cc - k.cx) / k.fx, (rr - k.cy) / k.fy, np.ones(len(cc))])
    cam_h = np.column_stack([rays * zz[:, None], np.ones(len(cc))])
    surface = (pose.matrix() @ cam_h.T).T[:, :3]

    return (DenseMap(depth.reshape(h, w), "depth"),
            DenseMap(mask.reshape(h, w), "mask"),
            id_map.reshape(h, w), obs, surface)


def generate_scene(config: SceneConfig) -> SceneTruth:
    """Build a fully deterministic dynamic scene from a config and its seed."""
    config.validate()
    k = config.intrinsics
    ex, ey, ez = config.scene_extent

    rng_static = np.random.default_rng([config.seed, _STREAM_STATIC])
    static = rng_static.uniform([-ex, -ey, -ez], [ex, ey, ez],
                                size=(config.num_static_points, 3))

    rng_dyn = np.random.default_rng([config.seed, _STREAM_DYNAMIC])
    n_obj = len(config.dynamic_velocities)
    mid = (config.num_frames - 1) / 2.0
    per_obj = np.array_split(np.arange(config.num_dynamic_points), n_obj)
    steps = np.arange(config.num_frames, dtype=np.float64)
    dynamic_points = np.zeros((config.num_frames, config.num_dynamic_points, 3))
    for o, members in enumerate(per_obj):
        v = config.dynamic_velocities[o]
        speed = float(np.linalg.norm(v))
        # Center each object's path on a point near the scene middle so it
        # stays in view for the whole sequence.
        offset = rng_dyn.uniform(-0.3, 0.3, size=3)
        if config.object_path == "circular" and speed > 0:
            # One loop over the sequence: per-frame displacement stays at
            # ~|v| while the path never strays more than |v| * F / (2 pi)
            # from its center.
            u1 = v / speed
            # Second circle axis orthogonal to the viewing direction keeps
            # the loop roughly fronto-parallel: depth (and thus the object's
            # pixel footprint) stays near-constant over the sequence.
            raw = np.cross([0.0, 0.0, 1.0], u1)
            if np.linalg.norm(raw) < 1e-9:
                raw = np.cross([1.0, 0.0, 0.0], u1)
            u2 = raw / np.linalg.norm(raw)
            omega = 2.0 * np.pi / config.num_frames
            rho = speed / omega
            center = offset + rho * (np.sin(omega * steps)[:, None] * u1
                                     - np.cos(omega * steps)[:, None] * u2)
        else:
            center = (offset - mid * v) + steps[:, None] * v
        direction = rng_dyn.normal(size=(len(members), 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radii = config.object_radius * rng_dyn.uniform(0, 1, len(members)) ** (1 / 3)
        local = direction * radii[:, None]
        dynamic_points[:, members, :] = center[:, None, :] + local[None, :, :]

    centers = _camera_centers(config)
    trajectory = [_look_at(centers[t], np.zeros(3), t)
                  for t in range(config.num_frames)]

    is_dynamic = np.concatenate([
        np.zeros(config.num_static_points, dtype=bool),
        np.ones(config.num_dynamic_points, dtype=bool)])

    depth_maps, masks, id_maps, observations, surfaces = [], [], [], [], []
    for t in range(config.num_frames):
        pts = np.vstack([static, dynamic_points[t]])
        d, m, ids, obs, surf = _render_frame(pts, is_dynamic, trajectory[t], k, t)
        depth_maps.append(d)
        masks.append(m)
        id_maps.append(ids)
        observations.append(obs)
        surfaces.append(surf)

    return SceneTruth(config=config, trajectory=trajectory, static_points=static,
                      dynamic_points=dynamic_points, depth_maps=depth_maps,
                      masks=masks, id_maps=id_maps, observations=observations,
                      surface_points=surfaces)


def corrupt_pass(truth: SceneTruth, pass_id: str, profile: NoiseProfile,
                 seed: int) -> list[PassPrediction]:
    """Synthesize one noisy prediction pass over all frames.

    depth(p) = truth(p) + N(0, sigma(p)^2) with sigma chosen by the pixel's
    ground-truth region; confidence(p) = calibration_gain / max(sigma, floor)^2,
    optionally miscalibrated on a seeded random pixel subset.
    """
    if pass_id not in ("first", "mask_aware"):
        raise InvalidNoiseProfile(f"unknown pass_id {pass_id!r}")
    predictions = []
    for t in range(truth.num_frames):
        rng = np.random.default_rng([seed, t])
        gt_depth = truth.depth_maps[t].values
        gt_mask = truth.masks[t].values
        defined = truth.depth_maps[t].defined

        sigma = np.where(gt_mask == 1.0, profile.sigma_dynamic,
                         profile.sigma_static).astype(np.float64)
        noise = rng.normal(0.0, 1.0, size=gt_depth.shape) * sigma
        depth = np.where(defined, gt_depth + noise.astype(np.float32), 0.0)

        sigma_eff = np.maximum(sigma, SIGMA_FLOOR)
        conf = (profile.calibration_gain / sigma_eff ** 2).astype(np.float32)
        if profile.miscalibration_fraction > 0.0:
            flat_defined = np.flatnonzero(defined.ravel())
            n_bad = int(round(profile.miscalibration_fraction * len(flat_defined)))
            bad = rng.choice(flat_defined, size=n_bad, replace=False)
            conf_flat = conf.ravel()
            conf_flat[bad] *= profile.miscalibration_multiplier
            conf = conf_flat.reshape(conf.shape)
        conf = np.where(defined, conf, -1.0).astype(np.float32)

        predictions.append(PassPrediction(
            depth=DenseMap(depth.astype(np.float32), "depth"),
            confidence=DenseMap(conf, "confidence"),
            pass_id=pass_id))
    return predictions
