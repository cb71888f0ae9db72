"""Two-pass pose/geometry decoupling for dynamic scenes, desk scale.

The package mines motion cues from token-similarity statistics, stabilizes
camera pose by down-weighting dynamic content, and composes depth from two
prediction passes region-by-region — validated end to end against a
synthetic dynamic-scene oracle.
"""

from .cues import (CueConfig, SaliencyMap, TokenGrid, aggregate_saliency,
                   attention_forward, binarize, encode_tokens, feature_stats,
                   frame_features, gram_similarity, otsu_threshold,
                   suppress_keys, token_mask)
from .dtm import read_dense_map, read_dtm, write_dense_map, write_dtm
from .errors import ConfigError, ReconstructionError, StageError
from .fusion import (DEFAULT_EPSILON, FusedDepth, RegionPartition,
                     fuse_confidence, fused_precision, fusion_weight,
                     hard_replace, partition_regions)
from .geometry import (CameraPose, EssentialMatrix, Intrinsics,
                       PixelCorrespondence, epipolar_residual,
                       epipolar_residual_approx, essential_matrix,
                       load_trajectory, relative_pose, save_trajectory,
                       se3_compose, se3_inverse, warp)
from .maps import DenseMap
from .metrics import (ChamferStats, MetricReport, PointCloud, ate, chamfer,
                      lower_median, read_ply, roc_auc, rpe, unproject_cloud,
                      write_ply)
from .pipeline import (ABLATION_ROWS, FUSION_MODES, VERSION, AblationReport,
                       PipelineConfig, RunReport, ablation_sweep,
                       pipeline_config_from, run_pipeline)
from .pose import (Trajectory, WeightedCorrespondenceSet, estimate_trajectory,
                   geometric_loss, weighted_pose_solve)
from .synthscene import (DEFAULT_PASS1_PROFILE, DEFAULT_PASS2_PROFILE,
                         NoiseProfile, SceneConfig, SceneTruth, corrupt_pass,
                         generate_scene)

__version__ = VERSION

__all__ = [name for name in dir() if not name.startswith("_")]
