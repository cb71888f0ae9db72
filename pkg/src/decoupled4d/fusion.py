"""Region-aware depth composition and inverse-variance confidence fusion.

Dynamic-region depth always comes from the first pass. Static-region depth is
either hard-replaced by the mask-aware pass or blended as the inverse-variance
weighted maximum-likelihood combination of the two passes, treating each
confidence map as a precision. The fused precision is the sum of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveEpsilon, UndefinedDepthInRegion
from .maps import DenseMap, require_same_shape

DEFAULT_EPSILON = 1e-6


@dataclass
class RegionPartition:
    """Complementary static/dynamic pixel sets at a threshold tau."""

    static_mask: DenseMap
    dynamic_mask: DenseMap
    tau: float

    def __post_init__(self):
        require_same_shape(self.static_mask, self.dynamic_mask)
        s, d = self.static_mask, self.dynamic_mask
        both = s.defined & d.defined
        if np.any(s.values[both] == d.values[both]):
            raise ValueError("static and dynamic sets must be complementary")

    @property
    def static(self) -> np.ndarray:
        return self.static_mask.values == 1.0

    @property
    def dynamic(self) -> np.ndarray:
        return self.dynamic_mask.values == 1.0

    @property
    def defined(self) -> np.ndarray:
        return self.static_mask.defined


@dataclass
class FusedDepth:
    depth: DenseMap
    weight_map: DenseMap      # defined only on the static set
    fused_precision: DenseMap
    mode: str                 # "hard_replace" | "confidence_fused"


def partition_regions(mask: DenseMap, tau: float) -> RegionPartition:
    """Split defined pixels into static (value < tau) and dynamic (value >= tau)."""
    defined = mask.defined
    static = np.where(defined, (mask.values < tau).astype(np.float32), -1.0)
    dynamic = np.where(defined, (mask.values >= tau).astype(np.float32), -1.0)
    return RegionPartition(DenseMap(static, "mask"), DenseMap(dynamic, "mask"), tau)


def _require_covering(depth: DenseMap, region: np.ndarray, label: str) -> None:
    if np.any(region & ~depth.defined):
        raise UndefinedDepthInRegion(f"{label} depth undefined inside the partition")


def hard_replace(d1: DenseMap, d2: DenseMap, part: RegionPartition) -> FusedDepth:
    """First-pass depth on the dynamic set, second-pass depth on the static set."""
    require_same_shape(d1, d2, part.static_mask)
    _require_covering(d1, part.dynamic, "first-pass")
    _require_covering(d2, part.static, "second-pass")

    out = np.zeros(d1.shape, dtype=np.float32)
    out[part.dynamic] = d1.values[part.dynamic]
    out[part.static] = d2.values[part.static]
    weight = np.where(part.static, 1.0, -1.0).astype(np.float32)
    precision = np.full(d1.shape, -1.0, dtype=np.float32)
    return FusedDepth(DenseMap(out, "depth"), DenseMap(weight, "weight"),
                      DenseMap(precision, "precision"), "hard_replace")


def fusion_weight(c1: DenseMap, c2: DenseMap, eps: float = DEFAULT_EPSILON) -> DenseMap:
    """Second-pass blend weight ``W = c2 / (c1 + c2 + eps)`` on jointly defined pixels."""
    if eps <= 0:
        raise NonPositiveEpsilon("fusion epsilon must be > 0")
    require_same_shape(c1, c2)
    defined = c1.defined & c2.defined
    with np.errstate(invalid="ignore"):
        w = c2.values / (c1.values + c2.values + np.float32(eps))
    return DenseMap(np.where(defined, w, -1.0).astype(np.float32), "weight")


def fused_precision(c1: DenseMap, c2: DenseMap) -> DenseMap:
    """Pointwise sum of precisions where both passes are defined."""
    require_same_shape(c1, c2)
    defined = c1.defined & c2.defined
    total = np.where(defined, c1.values + c2.values, -1.0)
    return DenseMap(total.astype(np.float32), "precision")


def fuse_confidence(d1: DenseMap, d2: DenseMap, c1: DenseMap, c2: DenseMap,
                    part: RegionPartition,
                    eps: float = DEFAULT_EPSILON) -> FusedDepth:
    """Confidence-aware fusion on the static set, first-pass depth elsewhere.

    Pixels a pass leaves undefined fall back to the other pass; the weight map
    and fused precision are reported only where both passes contribute.
    """
    require_same_shape(d1, d2, c1, c2, part.static_mask)

    weight = fusion_weight(c1, c2, eps)
    both = d1.defined & d2.defined
    static = part.static

    out = np.zeros(d1.shape, dtype=np.float32)
    # Dynamic region: first pass, falling back to the second where undefined.
    dyn = part.dynamic
    out[dyn] = np.where(d1.defined[dyn], d1.values[dyn], d2.values[dyn])
    # Static region: convex combination where both passes exist.
    blend = (1.0 - weight.values) * d1.values + weight.values * d2.values
    sb = static & both
    out[sb] = blend[sb]
    only1 = static & d1.defined & ~d2.defined
    only2 = static & d2.defined & ~d1.defined
    out[only1] = d1.values[only1]
    out[only2] = d2.values[only2]

    w_map = np.where(sb, weight.values, -1.0).astype(np.float32)
    precision = fused_precision(c1, c2)
    prec = np.where(sb, precision.values, -1.0).astype(np.float32)
    return FusedDepth(DenseMap(out, "depth"), DenseMap(w_map, "weight"),
                      DenseMap(prec, "precision"), "confidence_fused")


def fusion_report_line(frame_id: int, fused: FusedDepth, part: RegionPartition) -> str:
    """Per-frame report record: `frame_id mode static_px dynamic_px mean_W`."""
    w = fused.weight_map
    mean_w = float(w.values[w.defined].mean()) if w.defined.any() else float("nan")
    return (f"{frame_id} {fused.mode} {int(part.static.sum())} "
            f"{int(part.dynamic.sum())} {mean_w:.6f}")
