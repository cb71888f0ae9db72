"""Motion-cue mining on a toy global-attention token stack.

Each frame is divided into patches whose geometric statistics (mean depth,
depth gradient, rigid-reprojection residual) plus a random-Fourier positional
code form the token features. Seeded fixed linear maps per layer produce
query/key matrices; cross-frame Gram similarities of the keys yield a dynamic
saliency map, thresholded by Otsu's method. Key vectors of tokens flagged
dynamic are zeroed in the early layers, which starves moving content of
global-attention mass in the second pass.

Tokens of patches with no defined depth are all-zero; they produce zero Gram
similarity and are treated as static (no motion evidence).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (DimensionMismatch, EmptyFrame, NoNeighbors,
                     ResolutionMismatch)
from .geometry import relative_pose
from .maps import DenseMap

# Numerical floor for robust feature scales; keeps zero-noise scenes from
# amplifying float dust into full-scale features.
_SCALE_FLOOR = 0.05


@dataclass
class CueConfig:
    patch_size: int = 8
    num_layers: int = 6
    feature_dim: int = 32
    layer_set: tuple[int, ...] | None = None   # 1-based layer indices; None = all
    neighbor_radius: int = 2
    l_mask: int = 5
    bins: int = 256
    projection_seed: int = 0
    # Feature engineering for the toy tokenizer. The reprojection residual is
    # the only ego-motion-invariant channel, so it carries most of the weight;
    # depth and gradient channels are kept but damped (image content shifts
    # under camera motion, decorrelating them for static tokens too).
    pos_frequencies: int = 16
    pos_lengthscale: float = 4.0   # pixels; positional-code correlation length
    pos_weight: float = 6.0
    depth_weight: float = 0.1
    grad_weight: float = 0.1
    resid_weight: float = 1.5
    content_clip: float = 5.0

    def __post_init__(self):
        if self.l_mask > self.num_layers:
            raise ValueError("l_mask must not exceed num_layers")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")

    def selected_layers(self) -> tuple[int, ...]:
        return self.layer_set or tuple(range(1, self.num_layers + 1))


@dataclass
class TokenGrid:
    """Per-layer query/key matrices over the patch tokens of one frame."""

    frame_id: int
    tokens_h: int
    tokens_w: int
    queries: list[np.ndarray]  # num_layers arrays of shape (N_tok, d)
    keys: list[np.ndarray]

    def __post_init__(self):
        n = self.tokens_h * self.tokens_w
        shapes = {a.shape for a in self.queries} | {a.shape for a in self.keys}
        if len(shapes) != 1 or next(iter(shapes))[0] != n:
            raise DimensionMismatch(f"inconsistent token matrices: {shapes}")

    @property
    def num_tokens(self) -> int:
        return self.tokens_h * self.tokens_w

    @property
    def num_layers(self) -> int:
        return len(self.queries)


@dataclass
class SaliencyMap:
    """Token-resolution dynamic saliency in [0, 1] plus its pixel upsampling."""

    values: np.ndarray       # (tokens_h, tokens_w)
    upsampled: DenseMap      # pixel resolution, role "saliency"


@dataclass
class FeatureStats:
    """Robust normalization constants shared by all frames of a run."""

    depth_center: float
    depth_scale: float
    grad_scale: float
    resid_scale: float


def _patch_reduce(values: np.ndarray, defined: np.ndarray, th: int, tw: int,
                  patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of defined pixels per patch; returns (means, counts) flattened."""
    means = np.zeros(th * tw)
    counts = np.zeros(th * tw)
    for i in range(th):
        for j in range(tw):
            block_d = defined[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch]
            block_v = values[i * patch:(i + 1) * patch, j * patch:(j + 1) * patch]
            c = int(block_d.sum())
            counts[i * tw + j] = c
            if c:
                means[i * tw + j] = float(block_v[block_d].sum()) / c
    return means, counts


def token_grid_shape(height: int, width: int, patch: int) -> tuple[int, int]:
    return height // patch, width // patch


def _gradient_magnitude(depth: DenseMap) -> tuple[np.ndarray, np.ndarray]:
    """|d/dx| + |d/dy| of depth over pairs of defined neighbors."""
    v, d = depth.values.astype(np.float64), depth.defined
    gx = np.abs(np.diff(v, axis=1))
    gx_ok = d[:, 1:] & d[:, :-1]
    gy = np.abs(np.diff(v, axis=0))
    gy_ok = d[1:, :] & d[:-1, :]
    grad = np.zeros_like(v)
    norm = np.zeros_like(v)
    grad[:, 1:] += np.where(gx_ok, gx, 0.0)
    norm[:, 1:] += gx_ok
    grad[1:, :] += np.where(gy_ok, gy, 0.0)
    norm[1:, :] += gy_ok
    with np.errstate(invalid="ignore"):
        out = np.where(norm > 0, grad / np.maximum(norm, 1), 0.0)
    return out, d


def _position_features(th: int, tw: int, config: CueConfig) -> np.ndarray:
    """Random Fourier positional code; nearby tokens correlate, distant ones do not."""
    rng = np.random.default_rng([config.projection_seed, 0xF0])
    freqs = rng.normal(0.0, 1.0 / config.pos_lengthscale,
                       size=(config.pos_frequencies, 2))
    ys, xs = np.meshgrid(np.arange(th), np.arange(tw), indexing="ij")
    centers = np.column_stack([
        (xs.ravel() + 0.5) * config.patch_size,
        (ys.ravel() + 0.5) * config.patch_size])
    phase = centers @ freqs.T
    scale = config.pos_weight / np.sqrt(config.pos_frequencies)
    return np.hstack([np.cos(phase), np.sin(phase)]) * scale


def feature_stats(depth_maps: list[DenseMap],
                  resid_maps: list[DenseMap],
                  config: CueConfig) -> FeatureStats:
    depths, grads, resids = [], [], []
    for depth, resid in zip(depth_maps, resid_maps):
        depths.append(depth.values[depth.defined])
        g, gd = _gradient_magnitude(depth)
        grads.append(g[gd])
        resids.append(resid.values[resid.defined])
    depths = np.concatenate(depths) if depths else np.zeros(1)
    grads = np.concatenate(grads) if grads else np.zeros(1)
    resids = np.concatenate(resids) if resids else np.zeros(1)
    mad = np.median(np.abs(depths - np.median(depths)))
    return FeatureStats(
        depth_center=float(np.median(depths)),
        depth_scale=max(1.4826 * float(mad), _SCALE_FLOOR),
        grad_scale=max(float(np.median(grads[grads > 0])) if (grads > 0).any()
                       else 0.0, _SCALE_FLOOR),
        resid_scale=max(float(np.median(resids)), _SCALE_FLOOR),
    )


def frame_features(depth: DenseMap, resid: DenseMap, stats: FeatureStats,
                   config: CueConfig) -> np.ndarray:
    """Per-token geometric features plus positional code, (N_tok, n_feat).

    Patches with no defined depth get all-zero feature rows.
    """
    h, w = depth.shape
    th, tw = token_grid_shape(h, w, config.patch_size)
    if th == 0 or tw == 0:
        raise DimensionMismatch("image smaller than one patch")

    mean_depth, counts = _patch_reduce(depth.values.astype(np.float64),
                                       depth.defined, th, tw, config.patch_size)
    if not counts.any():
        raise EmptyFrame("no patch has any defined depth")
    grad_img, grad_def = _gradient_magnitude(depth)
    mean_grad, _ = _patch_reduce(grad_img, grad_def & depth.defined, th, tw,
                                 config.patch_size)
    mean_resid, _ = _patch_reduce(resid.values.astype(np.float64), resid.defined,
                                  th, tw, config.patch_size)

    clip = config.content_clip
    content = np.column_stack([
        config.depth_weight * np.clip(
            (mean_depth - stats.depth_center) / stats.depth_scale, -clip, clip),
        config.grad_weight * np.clip(mean_grad / stats.grad_scale, -clip, clip),
        config.resid_weight * np.clip(mean_resid / stats.resid_scale, -clip, clip),
    ])
    features = np.hstack([content, _position_features(th, tw, config)])
    features[counts == 0] = 0.0
    return features


# Query/key projections share a dominant component so that q . k tracks
# feature similarity (fully independent maps would make the attention logits
# zero-mean noise); the role-specific part keeps the two maps distinct.
_ROLE_MIX = 0.3


def _projection(config: CueConfig, layer: int, role: int, n_feat: int) -> np.ndarray:
    shape = (n_feat, config.feature_dim)
    shared = np.random.default_rng(
        [config.projection_seed, layer, 0xBA5E]).normal(size=shape)
    own = np.random.default_rng(
        [config.projection_seed, layer, role]).normal(size=shape)
    mixed = np.sqrt(1.0 - _ROLE_MIX ** 2) * shared + _ROLE_MIX * own
    return mixed / np.sqrt(n_feat)


def encode_tokens(features: np.ndarray, frame_id: int, config: CueConfig,
                  tokens_h: int, tokens_w: int) -> TokenGrid:
    """Project token features to per-layer Q/K with seeded fixed linear maps."""
    features = np.asarray(features, dtype=np.float64)
    queries, keys = [], []
    for layer in range(1, config.num_layers + 1):
        queries.append(features @ _projection(config, layer, 0, features.shape[1]))
        keys.append(features @ _projection(config, layer, 1, features.shape[1]))
    return TokenGrid(frame_id, tokens_h, tokens_w, queries, keys)


def gram_similarity(a_r: np.ndarray, a_s: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity matrix; zero rows yield zero similarity."""
    a_r = np.asarray(a_r, dtype=np.float64)
    a_s = np.asarray(a_s, dtype=np.float64)
    if a_r.ndim != 2 or a_s.ndim != 2 or a_r.shape[1] != a_s.shape[1]:
        raise DimensionMismatch(
            f"incompatible token matrices {a_r.shape} and {a_s.shape}")
    nr = np.linalg.norm(a_r, axis=1)
    ns = np.linalg.norm(a_s, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (a_r / np.where(nr == 0, 1.0, nr)[:, None]) @ \
            (a_s / np.where(ns == 0, 1.0, ns)[:, None]).T
    g[nr == 0, :] = 0.0
    g[:, ns == 0] = 0.0
    return g


def aggregate_saliency(grids: list[TokenGrid], r: int,
                       config: CueConfig,
                       image_shape: tuple[int, int]) -> SaliencyMap:
    """Dynamic saliency of frame ``r``: mean miss of the best key match.

    saliency(i) = mean over selected layers and temporal neighbors of
    ``1 - max_j G_KK[i, j]``, clamped to [0, 1]. All-zero tokens score 0.
    """
    grid_r = grids[r]
    neighbors = [s for s in range(len(grids))
                 if s != r and abs(s - r) <= config.neighbor_radius]
    if not neighbors:
        raise NoNeighbors(f"frame {r} has no neighbors within radius "
                          f"{config.neighbor_radius}")
    layers = config.selected_layers()
    acc = np.zeros(grid_r.num_tokens)
    for layer in layers:
        k_r = grid_r.keys[layer - 1]
        for s in neighbors:
            g = gram_similarity(k_r, grids[s].keys[layer - 1])
            acc += 1.0 - g.max(axis=1)
    sal = np.clip(acc / (len(layers) * len(neighbors)), 0.0, 1.0)

    zero_rows = np.all(grid_r.keys[layers[0] - 1] == 0.0, axis=1)
    sal[zero_rows] = 0.0

    token_map = sal.reshape(grid_r.tokens_h, grid_r.tokens_w)
    up = np.repeat(np.repeat(token_map, config.patch_size, axis=0),
                   config.patch_size, axis=1)
    h, w = image_shape
    full = np.full((h, w), -1.0, dtype=np.float32)
    full[:up.shape[0], :up.shape[1]] = up[:h, :w]
    return SaliencyMap(token_map, DenseMap(full, "saliency"))


def otsu_threshold(saliency, bins: int = 256) -> float:
    """Bin-edge threshold maximizing between-class variance, exactly.

    The argmax is evaluated in exact rational arithmetic over the integer
    histogram, so the result is a deterministic function of the binning alone.
    Ties break toward the smaller threshold; constant input returns
    ``max + 2**-20`` (everything classified static).
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if isinstance(saliency, SaliencyMap):
        values = saliency.values.ravel()
    elif isinstance(saliency, DenseMap):
        values = saliency.values[saliency.defined].ravel()
    else:
        values = np.asarray(saliency, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("no defined values to threshold")
    vmin, vmax = float(values.min()), float(values.max())
    if vmin == vmax:
        return vmax + 2.0 ** -20

    idx = np.minimum(((values - vmin) / (vmax - vmin) * bins).astype(np.int64),
                     bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)

    total = int(counts.sum())
    weighted = [int(c) * (2 * k + 1) for k, c in enumerate(counts)]
    s_total = sum(weighted)

    best_k, best_num, best_den = 0, 0, 1
    n0 = 0
    s0 = 0
    for k in range(bins):
        # candidate threshold at the left edge of bin k; class 0 = bins [0, k)
        if 0 < n0 < total:
            num = (s0 * total - n0 * s_total) ** 2
            den = n0 * (total - n0)
            # exact comparison: num/den > best_num/best_den
            if num * best_den > best_num * den:
                best_k, best_num, best_den = k, num, den
        n0 += int(counts[k])
        s0 += weighted[k]
    return vmin + best_k * (vmax - vmin) / bins


def otsu_threshold_bruteforce(saliency, bins: int = 256) -> float:
    """Independent exhaustive scan over the same bin edges, via Fractions."""
    if isinstance(saliency, SaliencyMap):
        values = saliency.values.ravel()
    elif isinstance(saliency, DenseMap):
        values = saliency.values[saliency.defined].ravel()
    else:
        values = np.asarray(saliency, dtype=np.float64).ravel()
    vmin, vmax = float(values.min()), float(values.max())
    if vmin == vmax:
        return vmax + 2.0 ** -20
    idx = np.minimum(((values - vmin) / (vmax - vmin) * bins).astype(np.int64),
                     bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    total = int(counts.sum())

    def variance(k: int) -> Fraction:
        c0 = counts[:k]
        c1 = counts[k:]
        n0, n1 = int(c0.sum()), int(c1.sum())
        if n0 == 0 or n1 == 0:
            return Fraction(0)
        mu0 = Fraction(sum(int(c) * (2 * i + 1) for i, c in enumerate(c0)), n0)
        mu1 = Fraction(sum(int(c) * (2 * (k + i) + 1) for i, c in enumerate(c1)), n1)
        return Fraction(n0 * n1, total * total) * (mu0 - mu1) ** 2

    best_k, best_v = 0, Fraction(0)
    for k in range(bins):
        v = variance(k)
        if v > best_v:
            best_k, best_v = k, v
    return vmin + best_k * (vmax - vmin) / bins


def binarize(saliency, tau: float) -> DenseMap:
    """Dynamic iff value >= tau (strict inequality keeps a pixel static)."""
    if isinstance(saliency, SaliencyMap):
        dense = saliency.upsampled
    elif isinstance(saliency, DenseMap):
        dense = saliency
    else:
        dense = DenseMap(np.asarray(saliency, dtype=np.float32), "saliency")
    out = np.where(dense.defined, (dense.values >= tau).astype(np.float32), -1.0)
    return DenseMap(out, "mask")


def token_mask(saliency: SaliencyMap, tau: float) -> np.ndarray:
    """Boolean dynamic flags at token resolution."""
    return saliency.values >= tau


def suppress_keys(grid: TokenGrid, mask: np.ndarray, tau: float,
                  l_mask: int) -> TokenGrid:
    """Zero the key vectors of flagged tokens in layers 1..l_mask.

    ``mask`` is a token-resolution saliency or boolean array; tokens with
    value >= tau are suppressed. Queries and the remaining layers are copied
    bit-identically.
    """
    mask = np.asarray(mask)
    if mask.shape not in ((grid.tokens_h, grid.tokens_w), (grid.num_tokens,)):
        raise ResolutionMismatch(
            f"mask shape {mask.shape} does not match token grid "
            f"({grid.tokens_h}, {grid.tokens_w})")
    flagged = (mask.astype(np.float64) >= tau).ravel()
    keys = []
    for layer in range(1, grid.num_layers + 1):
        k = grid.keys[layer - 1].copy()
        if layer <= l_mask:
            k[flagged] = 0.0
        keys.append(k)
    return TokenGrid(grid.frame_id, grid.tokens_h, grid.tokens_w,
                     [q.copy() for q in grid.queries], keys)


def attention_forward(grids: list[TokenGrid], dynamic_flags: list[np.ndarray],
                      config: CueConfig, suppressed: bool = False,
                      tau: float = 0.5):
    """Single-head cross-frame softmax attention with a dynamic-mass diagnostic.

    For every ordered frame pair (r, s) and layer, queries of r attend over the
    (possibly suppressed) keys of s; values are the unsuppressed keys. Returns
    per-frame context features and a dict mapping (r, s) to the attention mass
    received by s's dynamic tokens, averaged over queries and layers.
    """
    if len(grids) < 2:
        raise ValueError("attention_forward needs at least 2 frames")
    att_grids = grids
    if suppressed:
        att_grids = [suppress_keys(g, f, tau, config.l_mask)
                     for g, f in zip(grids, dynamic_flags)]

    d = config.feature_dim
    contexts = [np.zeros_like(g.keys[0]) for g in grids]
    masses: dict[tuple[int, int], float] = {}
    n_frames = len(grids)
    for r in range(n_frames):
        pair_count = 0
        for s in range(n_frames):
            if s == r:
                continue
            dyn = np.asarray(dynamic_flags[s]).ravel().astype(bool)
            mass = 0.0
            for layer in range(1, config.num_layers + 1):
                q = grids[r].queries[layer - 1]
                k = att_grids[s].keys[layer - 1]
                v = grids[s].keys[layer - 1]
                logits = q @ k.T / np.sqrt(d)
                logits -= logits.max(axis=1, keepdims=True)
                weights = np.exp(logits)
                weights /= weights.sum(axis=1, keepdims=True)
                contexts[r] += weights @ v
                mass += float(weights[:, dyn].sum(axis=1).mean())
            masses[(r, s)] = mass / config.num_layers
            pair_count += 1
        contexts[r] /= pair_count * config.num_layers
    return contexts, masses


# --- rigid-reprojection residual feature -------------------------------------

def reprojection_residuals(truth, trajectory, pixel_noise: float = 0.0,
                           seed: int = 0) -> list[DenseMap]:
    """Per-pixel distance between observed and rigidly predicted flow.

    For each frame the previous frame serves as reference (frame 0 uses the
    next frame); identity-matched points are warped with the supplied
    trajectory's relative pose and compared against their observed pixels.
    Pixels without a match carry the sentinel.
    """
    k = truth.config.intrinsics
    rng = np.random.default_rng([seed, 0x4E51D])
    maps = []
    for r in range(truth.num_frames):
        s = r - 1 if r > 0 else r + 1
        obs_r, obs_s = truth.observations[r], truth.observations[s]
        common, ir, i_s = np.intersect1d(obs_r.ids, obs_s.ids,
                                         return_indices=True)
        px_r = obs_r.pixels[ir]
        px_s = obs_s.pixels[i_s]
        if pixel_noise > 0:
            px_r = px_r + rng.normal(0.0, pixel_noise, px_r.shape)
            px_s = px_s + rng.normal(0.0, pixel_noise, px_s.shape)
        rel = relative_pose(trajectory[r], trajectory[s])  # cam_s -> cam_r
        cam_s = k.backproject(px_s, obs_s.depths[i_s])
        cam_r = rel.apply(cam_s)
        front = cam_r[:, 2] > 1e-6
        predicted = np.full_like(px_r, np.nan)
        predicted[front] = k.project(cam_r[front])
        resid = np.linalg.norm(px_r - predicted, axis=1)
        resid[~front] = 0.0

        out = np.full((k.height, k.width), -1.0, dtype=np.float32)
        cols = np.clip(np.round(obs_r.pixels[ir, 0]).astype(int), 0, k.width - 1)
        rows = np.clip(np.round(obs_r.pixels[ir, 1]).astype(int), 0, k.height - 1)
        out[rows, cols] = resid.astype(np.float32)
        maps.append(DenseMap(out, "residual"))
    return maps
