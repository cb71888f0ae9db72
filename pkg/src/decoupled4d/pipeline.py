"""Two-pass orchestration: simulate, mine cues, re-pose, fuse, evaluate.

Stages communicate exclusively through files in the output directory, so any
stage can be rerun in isolation from persisted artifacts, and externally
produced passes (the ``input_dir`` contract: ``pass1/``, ``pass2/``,
``traj_pass2.txt``, ``mask/``) flow through fusion and metrics on the same
code path as simulator output.

Note on scoping: in simulation the pass-2 depth error profile is a declared
noise model, not a consequence of the toy attention stack; key suppression
affects cue quality and the attention-mass diagnostic only.
"""

from __future__ import annotations

import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import configio
from .cues import (CueConfig, aggregate_saliency, attention_forward, binarize,
                   encode_tokens, feature_stats, frame_features, otsu_threshold,
                   reprojection_residuals, token_grid_shape, token_mask)
from .dtm import read_dense_map, write_dense_map
from .errors import ConfigError, ReconstructionError, StageError
from .fusion import (DEFAULT_EPSILON, FusedDepth, fuse_confidence, fusion_report_line,
                     hard_replace, partition_regions)
from .geometry import CameraPose, load_trajectory, save_trajectory, se3_compose
from .maps import DenseMap
from .metrics import (MetricReport, PointCloud, ate, chamfer, roc_auc, rpe,
                      unproject_cloud, write_ply)
from .pose import Trajectory, estimate_trajectory
from .synthscene import (DEFAULT_PASS1_PROFILE, DEFAULT_PASS2_PROFILE,
                         NoiseProfile, SceneConfig, SceneTruth, corrupt_pass,
                         generate_scene)

VERSION = "0.1.0"

FUSION_MODES = ("pass1_only", "pass2_only", "hard_replace", "confidence_fused")
POSE_MODES = ("masked", "unmasked")
TAU_MODES = ("otsu", "fixed")

# Ablation rows: each adds one component on top of the previous row.
ABLATION_ROWS = (
    ("Baseline", "pass1_only", "unmasked"),
    ("+Pose Decoupling", "pass2_only", "masked"),
    ("+Hard Replacement", "hard_replace", "masked"),
    ("+Conf. Fusion", "confidence_fused", "masked"),
)

# Seed offsets separating the pipeline's random consumers.
_SEED_POSE1 = 101
_SEED_POSE2 = 102
_SEED_RESID = 103
_SEED_PASS1 = 104
_SEED_PASS2 = 105


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    cue: CueConfig = field(default_factory=CueConfig)
    tau_mode: str = "otsu"
    tau_value: float = 0.5
    fusion_mode: str = "confidence_fused"
    pose_mode: str = "masked"
    epsilon: float = DEFAULT_EPSILON
    eval_stride: int = 2
    chamfer_method: str = "auto"
    rpe_delta: int = 1
    seed: int = 0
    use_gt_mask: bool = False
    input_dir: str | None = None
    pass1_profile: NoiseProfile = field(
        default_factory=lambda: DEFAULT_PASS1_PROFILE)
    pass2_profile: NoiseProfile = field(
        default_factory=lambda: DEFAULT_PASS2_PROFILE)

    def __post_init__(self):
        if self.tau_mode not in TAU_MODES:
            raise ConfigError(f"tau_mode must be one of {TAU_MODES}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.pose_mode not in POSE_MODES:
            raise ConfigError(f"pose_mode must be one of {POSE_MODES}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.eval_stride < 1:
            raise ConfigError("eval_stride must be >= 1")
        if self.rpe_delta < 1:
            raise ConfigError("rpe_delta must be >= 1")


def pipeline_config_from(entries: dict[str, str]) -> PipelineConfig:
    """Build a PipelineConfig from parsed key=value entries."""
    scene = configio.scene_config_from(entries)
    cue = configio.cue_config_from(entries)
    p1 = configio.noise_profile_from(entries, "pass1", DEFAULT_PASS1_PROFILE)
    p2 = configio.noise_profile_from(entries, "pass2", DEFAULT_PASS2_PROFILE)
    kwargs = {}
    defaults = PipelineConfig()
    for key, value in entries.items():
        if "." in key:
            continue
        if not hasattr(defaults, key) or key in ("scene", "cue",
                                                 "pass1_profile", "pass2_profile"):
            raise ConfigError(f"unknown pipeline key {key!r}")
        kwargs[key] = configio._coerce(value, getattr(defaults, key))
    return PipelineConfig(scene=scene, cue=cue, pass1_profile=p1,
                          pass2_profile=p2, **kwargs)


def format_pipeline_config(cfg: PipelineConfig) -> str:
    """Echo the full configuration as a parseable key=value manifest."""
    lines = [configio.format_scene_config(cfg.scene)]
    c = cfg.cue
    cue_fields = {
        "patch_size": c.patch_size, "num_layers": c.num_layers,
        "feature_dim": c.feature_dim, "neighbor_radius": c.neighbor_radius,
        "l_mask": c.l_mask, "bins": c.bins, "projection_seed": c.projection_seed,
        "pos_frequencies": c.pos_frequencies,
        "pos_lengthscale": f"{c.pos_lengthscale:.17g}",
        "pos_weight": f"{c.pos_weight:.17g}",
        "depth_weight": f"{c.depth_weight:.17g}",
        "grad_weight": f"{c.grad_weight:.17g}",
        "resid_weight": f"{c.resid_weight:.17g}",
        "content_clip": f"{c.content_clip:.17g}",
    }
    if c.layer_set is not None:
        cue_fields["layer_set"] = ",".join(str(v) for v in c.layer_set)
    lines += [f"cue.{k}={v}" for k, v in cue_fields.items()]
    for name, prof in (("pass1", cfg.pass1_profile), ("pass2", cfg.pass2_profile)):
        lines += [
            f"{name}.sigma_static={prof.sigma_static:.17g}",
            f"{name}.sigma_dynamic={prof.sigma_dynamic:.17g}",
            f"{name}.calibration_gain={prof.calibration_gain:.17g}",
            f"{name}.miscalibration_fraction={prof.miscalibration_fraction:.17g}",
            f"{name}.miscalibration_multiplier={prof.miscalibration_multiplier:.17g}",
        ]
    lines += [
        f"tau_mode={cfg.tau_mode}",
        f"tau_value={cfg.tau_value:.17g}",
        f"fusion_mode={cfg.fusion_mode}",
        f"pose_mode={cfg.pose_mode}",
        f"epsilon={cfg.epsilon:.17g}",
        f"eval_stride={cfg.eval_stride}",
        f"chamfer_method={cfg.chamfer_method}",
        f"rpe_delta={cfg.rpe_delta}",
        f"seed={cfg.seed}",
        f"use_gt_mask={'true' if cfg.use_gt_mask else 'false'}",
    ]
    if cfg.input_dir is not None:
        lines.append(f"input_dir={cfg.input_dir}")
    return "\n".join(lines) + "\n"


@dataclass
class MiningSummary:
    tau: float
    saliency_auc: float
    dyn_mass_unsuppressed: float
    dyn_mass_suppressed: float


@dataclass
class RunReport:
    variant: str
    pose_mode: str
    tau: float
    saliency_auc: float
    dyn_mass_unsuppressed: float
    dyn_mass_suppressed: float
    metrics: MetricReport
    version: str = VERSION
    timings_ms: dict[str, float] = field(default_factory=dict)

    def text(self) -> str:
        """Deterministic report body (timings are deliberately excluded)."""
        return "\n".join([
            "# run report",
            f"# version {self.version}",
            "# pass-2 depth quality is a declared noise model; key suppression"
            " affects cue quality and the attention diagnostic",
            f"variant={self.variant}",
            f"pose_mode={self.pose_mode}",
            f"tau={self.tau:.17g}",
            f"saliency_auc={self.saliency_auc:.9g}",
            f"dyn_mass_unsuppressed={self.dyn_mass_unsuppressed:.9g}",
            f"dyn_mass_suppressed={self.dyn_mass_suppressed:.9g}",
            MetricReport.tsv_header(),
            self.metrics.tsv_line(),
            self.metrics.key_value_block(),
        ]) + "\n"


def _frame_path(folder: Path, kind: str, t: int) -> Path:
    return folder / f"{kind}_{t:03d}.dtm"


def _copy_tree(src: Path, dst: Path) -> None:
    if not src.is_dir():
        raise StageError("input", f"missing external directory {src}")
    if dst.exists():
        shutil.rmtree(dst)
    shutil.copytree(src, dst)


def _write_frames(folder: Path, kind: str, maps: list[DenseMap]) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(maps):
        write_dense_map(_frame_path(folder, kind, t), m)


def _read_frames(folder: Path, kind: str, role: str, n: int) -> list[DenseMap]:
    try:
        return [read_dense_map(_frame_path(folder, kind, t), role)
                for t in range(n)]
    except (OSError, ValueError) as exc:
        raise StageError("read", f"cannot load {kind} frames from {folder}: "
                                 f"{exc}") from exc


def _gt_trajectory(truth: SceneTruth) -> Trajectory:
    return Trajectory([CameraPose(p.rotation, p.translation, p.frame_id)
                       for p in truth.trajectory])


def _anchor(truth: SceneTruth, traj: Trajectory) -> list[CameraPose]:
    """Fix the gauge: move the identity-anchored estimate into world frame.

    Estimated trajectories start at the identity; composing the ground-truth
    frame-0 pose on the left makes the unprojected cloud directly comparable
    to the world-frame ground truth (ATE/RPE are invariant to this).
    """
    anchored = []
    for pose in traj:
        moved = se3_compose(truth.trajectory[0], pose)
        moved.frame_id = pose.frame_id
        anchored.append(moved)
    return anchored


# --- stages -------------------------------------------------------------------

def stage_simulate(cfg: PipelineConfig, out: Path) -> SceneTruth:
    """Stage 1: scene ground truth and the first (unmodified) pass."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.cfg").write_text(format_pipeline_config(cfg), encoding="utf-8")
    truth = generate_scene(cfg.scene)

    gt = out / "gt"
    _write_frames(gt, "depth", truth.depth_maps)
    _write_frames(gt, "mask", truth.masks)
    save_trajectory(gt / "traj_gt.txt", truth.trajectory)
    write_ply(gt / "cloud_gt.ply", PointCloud(np.vstack(truth.surface_points)))

    if cfg.input_dir is not None:
        _copy_tree(Path(cfg.input_dir) / "pass1", out / "pass1")
    else:
        pass1 = corrupt_pass(truth, "first", cfg.pass1_profile,
                             cfg.seed + _SEED_PASS1)
        _write_frames(out / "pass1", "depth", [p.depth for p in pass1])
        _write_frames(out / "pass1", "conf", [p.confidence for p in pass1])
    return truth


def stage_mine(cfg: PipelineConfig, out: Path, truth: SceneTruth) -> MiningSummary:
    """Stage 2: pass-1 pose, token saliency, tau, and the dynamic mask."""
    noise = cfg.scene.pixel_noise_sigma
    traj1 = estimate_trajectory(truth, None, use_mask=False, pixel_noise=noise,
                                seed=cfg.seed + _SEED_POSE1)
    save_trajectory(out / "traj_pass1.txt", _anchor(truth, traj1))

    if cfg.input_dir is not None:
        _copy_tree(Path(cfg.input_dir) / "mask", out / "mask")
        tau = float((out / "mask" / "tau.txt").read_text().split("=")[1])
        saliency = _read_frames(out / "mask", "saliency", "saliency",
                                truth.num_frames)
        auc = _saliency_auc(saliency, truth)
        return MiningSummary(tau, auc, float("nan"), float("nan"))

    resid = reprojection_residuals(truth, traj1, pixel_noise=noise,
                                   seed=cfg.seed + _SEED_RESID)
    stats = feature_stats(truth.depth_maps, resid, cfg.cue)
    shape = (cfg.scene.height, cfg.scene.width)
    th, tw = token_grid_shape(*shape, cfg.cue.patch_size)
    grids = [encode_tokens(frame_features(truth.depth_maps[t], resid[t], stats,
                                          cfg.cue), t, cfg.cue, th, tw)
             for t in range(truth.num_frames)]
    sal = [aggregate_saliency(grids, t, cfg.cue, shape)
           for t in range(truth.num_frames)]

    if cfg.tau_mode == "otsu":
        tau = otsu_threshold(np.concatenate([s.values.ravel() for s in sal]),
                             cfg.cue.bins)
    else:
        tau = cfg.tau_value

    mask_dir = out / "mask"
    _write_frames(mask_dir, "saliency", [s.upsampled for s in sal])
    _write_frames(mask_dir, "mask", [binarize(s, tau) for s in sal])
    (mask_dir / "tau.txt").write_text(f"tau={tau:.17g}\n", encoding="utf-8")

    auc = _saliency_auc([s.upsampled for s in sal], truth)
    flags = [token_mask(s, tau) for s in sal]
    _, mass_un = attention_forward(grids, flags, cfg.cue, suppressed=False)
    _, mass_sup = attention_forward(grids, flags, cfg.cue, suppressed=True, tau=0.5)
    return MiningSummary(tau, auc,
                         float(np.mean(list(mass_un.values()))),
                         float(np.mean(list(mass_sup.values()))))


def _saliency_auc(saliency: list[DenseMap], truth: SceneTruth) -> float:
    scores, labels = [], []
    for s, gt in zip(saliency, truth.masks):
        ok = s.defined & gt.defined
        scores.append(s.values[ok])
        labels.append(gt.values[ok])
    labels = np.concatenate(labels)
    if not (labels == 1.0).any() or not (labels == 0.0).any():
        return float("nan")
    return roc_auc(np.concatenate(scores), labels)


def stage_pass2(cfg: PipelineConfig, out: Path, truth: SceneTruth) -> None:
    """Stage 3: mask-weighted pose and the mask-aware depth pass."""
    if cfg.input_dir is not None:
        src = Path(cfg.input_dir)
        _copy_tree(src / "pass2", out / "pass2")
        shutil.copyfile(src / "traj_pass2.txt", out / "traj_pass2.txt")
        return
    masks = _pose_masks(cfg, out, truth.num_frames)
    traj2 = estimate_trajectory(truth, masks,
                                use_mask=(cfg.pose_mode == "masked"),
                                pixel_noise=cfg.scene.pixel_noise_sigma,
                                seed=cfg.seed + _SEED_POSE2)
    save_trajectory(out / "traj_pass2.txt", _anchor(truth, traj2))
    pass2 = corrupt_pass(truth, "mask_aware", cfg.pass2_profile,
                         cfg.seed + _SEED_PASS2)
    _write_frames(out / "pass2", "depth", [p.depth for p in pass2])
    _write_frames(out / "pass2", "conf", [p.confidence for p in pass2])


def _pose_masks(cfg: PipelineConfig, out: Path, n: int) -> list[DenseMap] | None:
    if cfg.pose_mode != "masked":
        return None
    folder = out / ("gt" if cfg.use_gt_mask else "mask")
    return _read_frames(folder, "mask", "mask", n)


def stage_fuse(cfg: PipelineConfig, out: Path, num_frames: int) -> None:
    """Stage 4: region-aware composition, from persisted stage outputs only."""
    d1 = _read_frames(out / "pass1", "depth", "depth", num_frames)
    c1 = _read_frames(out / "pass1", "conf", "confidence", num_frames)
    d2 = _read_frames(out / "pass2", "depth", "depth", num_frames)
    c2 = _read_frames(out / "pass2", "conf", "confidence", num_frames)
    mask_dir = out / ("gt" if cfg.use_gt_mask else "mask")
    masks = _read_frames(mask_dir, "mask", "mask", num_frames)

    fused_dir = out / "fused"
    lines = []
    depths, weights, precisions = [], [], []
    for t in range(num_frames):
        # The partition only covers pixels both passes define; the mask itself
        # (token upsampling or ground truth) may extend beyond them.
        covered = d1[t].defined & d2[t].defined
        values = np.where(covered, masks[t].values, -1.0).astype(np.float32)
        part = partition_regions(DenseMap(values, "mask"), 0.5)
        try:
            if cfg.fusion_mode == "pass1_only":
                fused = _single_pass(d1[t], part, "pass1_only")
            elif cfg.fusion_mode == "pass2_only":
                fused = _single_pass(d2[t], part, "pass2_only")
            elif cfg.fusion_mode == "hard_replace":
                fused = hard_replace(d1[t], d2[t], part)
            else:
                fused = fuse_confidence(d1[t], d2[t], c1[t], c2[t], part,
                                        cfg.epsilon)
        except ReconstructionError as exc:
            raise StageError("fuse", str(exc), frame_id=t) from exc
        depths.append(fused.depth)
        weights.append(fused.weight_map)
        precisions.append(fused.fused_precision)
        lines.append(fusion_report_line(t, fused, part))
    _write_frames(fused_dir, "depth", depths)
    _write_frames(fused_dir, "weight", weights)
    _write_frames(fused_dir, "precision", precisions)
    (fused_dir / "fusion_report.txt").write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")


def _single_pass(depth: DenseMap, part, mode: str) -> FusedDepth:
    undefined = DenseMap.full_undefined(depth.shape, "weight")
    return FusedDepth(depth.with_values(depth.values.copy()), undefined,
                      undefined.with_values(undefined.values, "precision"), mode)


def stage_eval(cfg: PipelineConfig, out: Path, truth: SceneTruth) -> MetricReport:
    """Stage 5: unproject the fused depth with the pass-2 poses and score it."""
    n = truth.num_frames
    fused = _read_frames(out / "fused", "depth", "depth", n)
    poses = load_trajectory(out / "traj_pass2.txt")
    traj = Trajectory(poses)
    gt_traj = _gt_trajectory(truth)

    k = cfg.scene.intrinsics
    pred_cloud = unproject_cloud(fused, traj, k, stride=cfg.eval_stride)
    gt_cloud = unproject_cloud(truth.depth_maps, gt_traj, k,
                               stride=cfg.eval_stride)
    c = chamfer(pred_cloud, gt_cloud, method=cfg.chamfer_method)
    rte, rre = rpe(traj, gt_traj, delta=cfg.rpe_delta)
    return MetricReport(acc_mean=c.acc_mean, acc_median=c.acc_median,
                        comp_mean=c.comp_mean, comp_median=c.comp_median,
                        dist_mean=c.dist_mean, dist_median=c.dist_median,
                        ate=ate(traj, gt_traj), rte=rte, rre=rre)


def run_pipeline(cfg: PipelineConfig, out) -> RunReport:
    """Run all five stages into ``out`` and write the deterministic report."""
    out = Path(out)
    timings: dict[str, float] = {}

    def timed(name, fn, *args):
        start = time.perf_counter()
        try:
            result = fn(*args)
        except StageError:
            raise
        except ReconstructionError as exc:
            raise StageError(name, str(exc)) from exc
        timings[name] = (time.perf_counter() - start) * 1e3
        return result

    truth = timed("simulate", stage_simulate, cfg, out)
    mining = timed("mine", stage_mine, cfg, out, truth)
    timed("pass2", stage_pass2, cfg, out, truth)
    timed("fuse", stage_fuse, cfg, out, truth.num_frames)
    metrics = timed("eval", stage_eval, cfg, out, truth)

    report = RunReport(variant=cfg.fusion_mode, pose_mode=cfg.pose_mode,
                       tau=mining.tau, saliency_auc=mining.saliency_auc,
                       dyn_mass_unsuppressed=mining.dyn_mass_unsuppressed,
                       dyn_mass_suppressed=mining.dyn_mass_suppressed,
                       metrics=metrics, timings_ms=timings)
    (out / "report.txt").write_text(report.text(), encoding="utf-8")
    (out / "metrics.tsv").write_text(
        MetricReport.tsv_header() + "\n" + metrics.tsv_line() + "\n",
        encoding="utf-8")
    return report


# --- ablation -----------------------------------------------------------------

@dataclass
class AblationRow:
    label: str
    fusion_mode: str
    pose_mode: str
    seeds_ok: int
    seeds_failed: int
    median: dict[str, float]
    iqr: dict[str, float]
    per_seed: dict[str, list[float]]


@dataclass
class AblationReport:
    rows: list[AblationRow]
    seeds: list[int]

    def table(self, sep: str = "\t") -> str:
        names = ("dist_mean", "dist_median", "acc_mean", "comp_mean", "ate",
                 "rte", "rre")
        header = sep.join(["variant"]
                          + [f"{n}_med" for n in names]
                          + [f"{n}_iqr" for n in names]
                          + ["seeds_ok"])
        lines = [header]
        for row in self.rows:
            cells = [row.label]
            cells += [f"{row.median.get(n, float('nan')):.9g}" for n in names]
            cells += [f"{row.iqr.get(n, float('nan')):.9g}" for n in names]
            cells.append(str(row.seeds_ok))
            lines.append(sep.join(cells))
        return "\n".join(lines) + "\n"


def ablation_sweep(cfg: PipelineConfig, seeds: list[int], out) -> AblationReport:
    """Run every ablation variant per seed; aggregate medians and IQRs."""
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    out = Path(out)
    names = tuple(MetricReport.tsv_header().split("\t"))
    rows = []
    for label, fusion_mode, pose_mode in ABLATION_ROWS:
        collected: dict[str, list[float]] = {n: [] for n in names}
        failed = 0
        for seed in seeds:
            scene = SceneConfig(**{**_scene_kwargs(cfg.scene), "seed": seed})
            variant_cfg = PipelineConfig(
                scene=scene, cue=cfg.cue, tau_mode=cfg.tau_mode,
                tau_value=cfg.tau_value, fusion_mode=fusion_mode,
                pose_mode=pose_mode, epsilon=cfg.epsilon,
                eval_stride=cfg.eval_stride, chamfer_method=cfg.chamfer_method,
                rpe_delta=cfg.rpe_delta, seed=seed,
                use_gt_mask=cfg.use_gt_mask, input_dir=None,
                pass1_profile=cfg.pass1_profile, pass2_profile=cfg.pass2_profile)
            run_dir = out / f"seed_{seed:03d}" / fusion_mode
            try:
                report = run_pipeline(variant_cfg, run_dir)
            except ReconstructionError:
                failed += 1
                continue
            for n in names:
                collected[n].append(getattr(report.metrics, n))
        ok = len(seeds) - failed
        median = {n: float(np.median(v)) if v else float("nan")
                  for n, v in collected.items()}
        iqr = {n: float(np.percentile(v, 75) - np.percentile(v, 25)) if v
               else float("nan") for n, v in collected.items()}
        rows.append(AblationRow(label, fusion_mode, pose_mode, ok, failed,
                                median, iqr, collected))
    report = AblationReport(rows, list(seeds))
    (out / "ablation.tsv").write_text(report.table("\t"), encoding="utf-8")
    return report


def _scene_kwargs(scene: SceneConfig) -> dict:
    return dict(num_frames=scene.num_frames,
                num_static_points=scene.num_static_points,
                num_dynamic_points=scene.num_dynamic_points,
                width=scene.width, height=scene.height,
                camera_path=scene.camera_path,
                path_amplitude=scene.path_amplitude,
                camera_distance=scene.camera_distance,
                scene_extent=scene.scene_extent,
                object_radius=scene.object_radius,
                object_path=scene.object_path,
                dynamic_velocities=scene.dynamic_velocities.copy(),
                pixel_noise_sigma=scene.pixel_noise_sigma,
                seed=scene.seed)
