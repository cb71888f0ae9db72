"""Evaluation suite: chamfer-style cloud metrics and trajectory errors.

Accuracy is the directed distance from prediction to ground truth,
completeness the reverse, and distance the statistics of the union of both
directed multisets. Medians are lower medians. Nearest-neighbor queries run
on a spatial hash grid whose results are exactly equal to the quadratic scan
(the grid only prunes candidates; distances are computed with the same
formula), with a brute-force fallback for small clouds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, InvalidDelta, LengthMismatch
from .geometry import CameraPose, Intrinsics, rotation_angle_deg, se3_compose, se3_inverse
from .maps import DenseMap
from .pose import Trajectory

# Below this size the quadratic scan beats building the hash grid.
_BRUTE_FORCE_LIMIT = 1000


@dataclass
class PointCloud:
    """N x 3 positions in scene units, optionally tagged with source frames."""

    points: np.ndarray
    frame_ids: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.frame_ids is not None:
            self.frame_ids = np.asarray(self.frame_ids, dtype=np.int64)
            if self.frame_ids.shape != (len(self.points),):
                raise ValueError("frame_ids must be (N,)")

    def __len__(self) -> int:
        return len(self.points)


_METRIC_FIELDS = ("acc_mean", "acc_median", "comp_mean", "comp_median",
                  "dist_mean", "dist_median", "ate", "rte", "rre")


@dataclass
class MetricReport:
    """The nine reported numbers; cloud metrics in scene units, rre in degrees."""

    acc_mean: float = 0.0
    acc_median: float = 0.0
    comp_mean: float = 0.0
    comp_median: float = 0.0
    dist_mean: float = 0.0
    dist_median: float = 0.0
    ate: float = 0.0
    rte: float = 0.0
    rre: float = 0.0

    def __post_init__(self):
        for name in _METRIC_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def tsv_line(self) -> str:
        return "\t".join(f"{getattr(self, n):.9g}" for n in _METRIC_FIELDS)

    @staticmethod
    def tsv_header() -> str:
        return "\t".join(_METRIC_FIELDS)

    def key_value_block(self) -> str:
        return "\n".join(f"{n}={getattr(self, n):.9g}" for n in _METRIC_FIELDS)


@dataclass
class ChamferStats:
    acc_mean: float
    acc_median: float
    comp_mean: float
    comp_median: float
    dist_mean: float
    dist_median: float


def unproject_cloud(depths: list[DenseMap], traj: Trajectory, k: Intrinsics,
                    stride: int = 1) -> PointCloud:
    """Lift defined depth pixels (subsampled by ``stride``) into world space."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(depths) != len(traj):
        raise LengthMismatch(
            f"{len(depths)} depth maps vs {len(traj)} poses")
    chunks, tags = [], []
    for depth, pose in zip(depths, traj):
        sub = depth.values[::stride, ::stride]
        defined = sub != depth.sentinel
        if not defined.any():
            continue
        rows, cols = np.nonzero(defined)
        pixels = np.column_stack([cols * stride, rows * stride]).astype(np.float64)
        cam = k.backproject(pixels, sub[rows, cols].astype(np.float64))
        chunks.append(pose.apply(cam))
        tags.append(np.full(len(cam), pose.frame_id, dtype=np.int64))
    if not chunks:
        raise EmptyCloud("no defined depth at the sampled pixels")
    return PointCloud(np.vstack(chunks), np.concatenate(tags))


# --- nearest neighbor ---------------------------------------------------------

def _nn_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Distance from each query point to its nearest reference point."""
    out = np.empty(len(query))
    # Chunked to bound the (n_query x n_ref) temporary.
    step = max(1, int(4e6) // max(len(ref), 1))
    for i in range(0, len(query), step):
        q = query[i:i + step]
        d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        out[i:i + step] = np.sqrt(d2.min(axis=1))
    return out


def _nn_grid(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Grid-hash nearest neighbor, exactly equal to :func:`_nn_brute`.

    The grid is only a candidate filter: queries sharing a cell are processed
    together, scanning rings of cells outward until every unscanned cell
    provably lies farther than the current best (with a one-cell slack
    absorbing floating-point cell assignment). Candidate distances use the
    same arithmetic as the brute-force scan, and ``sqrt`` is monotonic, so the
    minima agree bitwise.
    """
    lo = ref.min(axis=0)
    span = float((ref.max(axis=0) - lo).max())
    if span == 0.0:
        return _nn_brute(query, ref)
    # A handful of reference points per cell balances ring-scan overhead
    # against the size of the per-group distance blocks.
    h = span / max(int(round(len(ref) ** (1 / 3))), 1)

    table: dict[tuple[int, int, int], np.ndarray] = {}
    ref_cell = np.floor((ref - lo) / h).astype(np.int64)
    for i, c in enumerate(map(tuple, ref_cell)):
        table.setdefault(c, []).append(i)  # type: ignore[union-attr]
    table = {c: np.array(ix) for c, ix in table.items()}

    query_cell = np.floor((query - lo) / h).astype(np.int64)
    groups: dict[tuple[int, int, int], list[int]] = {}
    for i, c in enumerate(map(tuple, query_cell)):
        groups.setdefault(c, []).append(i)
    max_ring = int((np.maximum(ref_cell.max(0), query_cell.max(0))
                    - np.minimum(ref_cell.min(0), query_cell.min(0))).max()) + 1

    out = np.empty(len(query))
    for cell, qix in groups.items():
        q = query[qix]
        best = np.full(len(qix), np.inf)
        ring = 0
        while ring <= max_ring:
            hit = [table[c] for c in _ring_cells(cell, ring) if c in table]
            if hit:
                cand = ref[np.concatenate(hit)]
                d2 = ((q[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2)
                best = np.minimum(best, np.sqrt(d2.min(axis=1)))
            # Cells on ring r+1 or beyond are at least (r - 1) * h away.
            if np.all(best <= (ring - 1) * h):
                break
            ring += 1
        out[qix] = best
    return out


def _ring_cells(center: tuple[int, int, int], ring: int):
    """Integer cells at Chebyshev distance exactly ``ring`` from ``center``."""
    cx, cy, cz = center
    if ring == 0:
        yield center
        return
    for dx in range(-ring, ring + 1):
        for dy in range(-ring, ring + 1):
            if max(abs(dx), abs(dy)) == ring:
                for dz in range(-ring, ring + 1):
                    yield (cx + dx, cy + dy, cz + dz)
            else:
                yield (cx + dx, cy + dy, cz - ring)
                yield (cx + dx, cy + dy, cz + ring)


def nearest_neighbor_distances(query: np.ndarray, ref: np.ndarray,
                               method: str = "auto") -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if len(query) == 0 or len(ref) == 0:
        raise EmptyCloud("nearest-neighbor query on an empty cloud")
    if method == "auto":
        method = "brute" if max(len(query), len(ref)) < _BRUTE_FORCE_LIMIT \
            else "grid"
    if method == "brute":
        return _nn_brute(query, ref)
    if method == "grid":
        return _nn_grid(query, ref)
    raise ValueError(f"unknown nearest-neighbor method {method!r}")


def lower_median(values: np.ndarray) -> float:
    """Element at index floor((n-1)/2) of the sorted multiset."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise ValueError("median of an empty multiset")
    return float(values[(values.size - 1) // 2])


def chamfer(pred: PointCloud, gt: PointCloud, method: str = "auto") -> ChamferStats:
    """Accuracy (pred->gt), completeness (gt->pred), and their union statistics."""
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloud("chamfer requires nonempty clouds")
    acc = nearest_neighbor_distances(pred.points, gt.points, method)
    comp = nearest_neighbor_distances(gt.points, pred.points, method)
    both = np.concatenate([acc, comp])
    # Sum the two directed multisets separately so dist_mean is exactly
    # invariant to swapping pred and gt (scalar addition commutes).
    dist_mean = (float(acc.sum()) + float(comp.sum())) / len(both)
    return ChamferStats(
        acc_mean=float(acc.mean()), acc_median=lower_median(acc),
        comp_mean=float(comp.mean()), comp_median=lower_median(comp),
        dist_mean=dist_mean, dist_median=lower_median(both),
    )


# --- trajectory metrics -------------------------------------------------------

def _umeyama_rigid(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation minimizing sum ||R s + t - d||^2 (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cov = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, mu_d - rot @ mu_s


def ate(pred: Trajectory, gt: Trajectory) -> float:
    """RMSE of positions after rigid SE(3) alignment of pred onto gt."""
    if len(pred) != len(gt) or len(pred) < 2:
        raise LengthMismatch(
            f"trajectories must match and have >= 2 poses "
            f"(got {len(pred)} and {len(gt)})")
    p = pred.positions()
    g = gt.positions()
    rot, trans = _umeyama_rigid(p, g)
    resid = p @ rot.T + trans - g
    return float(np.sqrt((resid ** 2).sum(axis=1).mean()))


def rpe(pred: Trajectory, gt: Trajectory, delta: int = 1) -> tuple[float, float]:
    """Relative-pose error (rte in scene units, rre in degrees) at step delta."""
    if delta < 1:
        raise InvalidDelta(f"delta must be >= 1, got {delta}")
    if len(pred) != len(gt):
        raise LengthMismatch(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) <= delta:
        raise LengthMismatch(f"need more than delta={delta} poses, got {len(pred)}")
    t_err, r_err = [], []
    for i in range(len(pred) - delta):
        rel_gt = se3_compose(se3_inverse(gt[i]), gt[i + delta])
        rel_pr = se3_compose(se3_inverse(pred[i]), pred[i + delta])
        err = se3_compose(se3_inverse(rel_gt), rel_pr)
        t_err.append(np.linalg.norm(err.translation))
        r_err.append(rotation_angle_deg(err.rotation))
    rte = float(np.sqrt(np.mean(np.square(t_err))))
    rre = float(np.sqrt(np.mean(np.square(r_err))))
    return rte, rre


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based (Mann-Whitney) AUC of scores against binary labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    from scipy.stats import rankdata
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --- ASCII PLY ----------------------------------------------------------------

def write_ply(path, cloud: PointCloud) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n"
                f"element vertex {len(cloud)}\n"
                "property float x\nproperty float y\nproperty float z\n"
                "end_header\n")
        for x, y, z in cloud.points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as f:
        if f.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: missing end_header")
            token = line.strip()
            if token.startswith("element vertex"):
                count = int(token.split()[-1])
            elif token == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: missing vertex element")
        points = np.loadtxt(f, dtype=np.float64, max_rows=count, ndmin=2)
    if points.shape != (count, 3):
        raise ValueError(f"{path}: expected {count} xyz rows, got {points.shape}")
    return PointCloud(points)
