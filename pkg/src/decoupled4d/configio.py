"""Plain-text configuration files: UTF-8 ``key=value`` lines with dotted keys.

``#`` starts a comment (full-line or trailing); whitespace around keys and
values is ignored. Keys are grouped by their first dotted component
(``scene.num_frames=20`` configures the scene generator).
"""

from __future__ import annotations

import numpy as np

from .cues import CueConfig
from .errors import ConfigError
from .synthscene import NoiseProfile, SceneConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def parse_config_file(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _take(entries: dict[str, str], prefix: str) -> dict[str, str]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in entries.items()
            if k.startswith(prefix + ".")}


def _coerce(value: str, like) -> object:
    """Parse ``value`` to the type of the default ``like``."""
    try:
        if isinstance(like, bool):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(float(v) for v in value.split(","))
        if isinstance(like, np.ndarray):
            return np.array([[float(v) for v in row.split(",")]
                             for row in value.split(";")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r}: {exc}") from exc
    return value


def _build(cls, entries: dict[str, str], defaults) -> object:
    kwargs = {}
    for key, value in entries.items():
        if not hasattr(defaults, key):
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        kwargs[key] = _coerce(value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def scene_config_from(entries: dict[str, str]) -> SceneConfig:
    sub = _take(entries, "scene")
    sub.pop("intrinsics", None)
    return _build(SceneConfig, sub, SceneConfig())


def cue_config_from(entries: dict[str, str]) -> CueConfig:
    sub = _take(entries, "cue")
    if "layer_set" in sub:
        sub_layers = tuple(int(v) for v in sub.pop("layer_set").split(","))
    else:
        sub_layers = None
    cfg = _build(CueConfig, sub, CueConfig())
    if sub_layers is not None:
        cfg.layer_set = sub_layers
    return cfg


def noise_profile_from(entries: dict[str, str], group: str,
                       default: NoiseProfile) -> NoiseProfile:
    sub = _take(entries, group)
    if not sub:
        return default
    return _build(NoiseProfile, sub, default)


def format_scene_config(cfg: SceneConfig, prefix: str = "scene") -> str:
    velocities = ";".join(",".join(f"{v:.17g}" for v in row)
                          for row in cfg.dynamic_velocities)
    extent = ",".join(f"{v:.17g}" for v in cfg.scene_extent)
    fields = {
        "num_frames": cfg.num_frames,
        "num_static_points": cfg.num_static_points,
        "num_dynamic_points": cfg.num_dynamic_points,
        "width": cfg.width,
        "height": cfg.height,
        "camera_path": cfg.camera_path,
        "path_amplitude": f"{cfg.path_amplitude:.17g}",
        "camera_distance": f"{cfg.camera_distance:.17g}",
        "scene_extent": extent,
        "object_radius": f"{cfg.object_radius:.17g}",
        "object_path": cfg.object_path,
        "dynamic_velocities": velocities,
        "pixel_noise_sigma": f"{cfg.pixel_noise_sigma:.17g}",
        "seed": cfg.seed,
    }
    return "\n".join(f"{prefix}.{k}={v}" for k, v in fields.items())
