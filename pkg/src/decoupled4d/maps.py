"""Dense per-pixel scalar fields with role-dependent undefined-value sentinels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

# Sentinel marking undefined pixels, per role. Depth uses 0 (depths are
# strictly positive); everything else uses -1 (valid values live in [0, 1]
# for masks/saliency and are >= 0 for confidence).
ROLE_SENTINELS = {
    "depth": 0.0,
    "confidence": -1.0,
    "saliency": -1.0,
    "mask": -1.0,
    "weight": -1.0,
    "precision": -1.0,
    "residual": -1.0,
}


@dataclass
class DenseMap:
    """H x W scalar field tagged with its role ("depth", "mask", ...)."""

    values: np.ndarray
    role: str = "depth"

    def __post_init__(self):
        if self.role not in ROLE_SENTINELS:
            raise ValueError(f"unknown DenseMap role: {self.role!r}")
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DimensionMismatch(
                f"DenseMap expects a 2-D array, got shape {self.values.shape}")
        if np.isnan(self.values).any():
            raise ValueError("NaN is forbidden in dense maps")

    @property
    def sentinel(self) -> float:
        return ROLE_SENTINELS[self.role]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def defined(self) -> np.ndarray:
        """Boolean mask of pixels carrying a real value."""
        return self.values != self.sentinel

    def with_values(self, values: np.ndarray, role: str | None = None) -> "DenseMap":
        return DenseMap(values, self.role if role is None else role)

    @classmethod
    def full_undefined(cls, shape: tuple[int, int], role: str) -> "DenseMap":
        return cls(np.full(shape, ROLE_SENTINELS[role], dtype=np.float32), role)


def require_same_shape(*dense_maps: DenseMap) -> tuple[int, int]:
    shapes = {m.shape for m in dense_maps}
    if len(shapes) != 1:
        raise DimensionMismatch(f"maps disagree on shape: {sorted(shapes)}")
    return dense_maps[0].shape
