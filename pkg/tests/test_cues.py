import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decoupled4d.cues import (CueConfig, TokenGrid, aggregate_saliency,
                              attention_forward, binarize, encode_tokens,
                              feature_stats, frame_features, gram_similarity,
                              otsu_threshold, otsu_threshold_bruteforce,
                              reprojection_residuals, suppress_keys,
                              token_grid_shape, token_mask)
from decoupled4d.errors import (DimensionMismatch, EmptyFrame,
                                ResolutionMismatch)
from decoupled4d.maps import DenseMap
from decoupled4d.pose import Trajectory
from decoupled4d.synthscene import SceneConfig, generate_scene


def mining_pipeline(truth, cfg=None, trajectory=None, noise=0.0):
    """The stage-2 computation: residuals, tokens, per-frame saliency."""
    cfg = cfg or CueConfig()
    if trajectory is None:
        trajectory = Trajectory(list(truth.trajectory))
    resid = reprojection_residuals(truth, trajectory, pixel_noise=noise, seed=9)
    stats = feature_stats(truth.depth_maps, resid, cfg)
    shape = truth.depth_maps[0].shape
    th, tw = token_grid_shape(*shape, cfg.patch_size)
    grids = [encode_tokens(frame_features(truth.depth_maps[t], resid[t],
                                          stats, cfg), t, cfg, th, tw)
             for t in range(truth.num_frames)]
    sal = [aggregate_saliency(grids, t, cfg, shape)
           for t in range(truth.num_frames)]
    return grids, sal


class TestGramSimilarity:
    def test_self_similarity_diagonal(self, rng):
        a = rng.normal(size=(5, 4))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        g = gram_similarity(a, a)
        np.testing.assert_allclose(np.diag(g), 1.0, atol=1e-12)

    def test_orthogonal_rows(self):
        a = np.eye(3)
        g = gram_similarity(a, a)
        np.testing.assert_allclose(g, np.eye(3), atol=1e-15)

    def test_matches_entrywise_oracle(self, rng):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        g = gram_similarity(a, b)
        for i in range(4):
            for j in range(4):
                expected = a[i] @ b[j] / (np.linalg.norm(a[i])
                                          * np.linalg.norm(b[j]))
                assert g[i, j] == pytest.approx(expected, abs=1e-12)

    def test_zero_rows_give_zero(self):
        a = np.zeros((2, 3))
        b = np.ones((2, 3))
        assert (gram_similarity(a, b) == 0.0).all()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            gram_similarity(np.ones((2, 3)), np.ones((2, 4)))

    @settings(max_examples=50, deadline=None)
    @given(a=arrays(np.float64, (6, 4),
                    elements=st.floats(-10, 10, allow_nan=False)),
           b=arrays(np.float64, (5, 4),
                    elements=st.floats(-10, 10, allow_nan=False)))
    def test_range_and_transpose_symmetry(self, a, b):
        g = gram_similarity(a, b)
        assert (g >= -1.0 - 1e-12).all() and (g <= 1.0 + 1e-12).all()
        np.testing.assert_array_equal(g, gram_similarity(b, a).T)


class TestEncodeTokens:
    def _features(self, rng, n_tok=12, n_feat=7):
        return rng.normal(size=(n_tok, n_feat))

    def test_zero_features_zero_tokens(self):
        cfg = CueConfig()
        grid = encode_tokens(np.zeros((12, 7)), 0, cfg, 3, 4)
        for q, k in zip(grid.queries, grid.keys):
            assert (q == 0.0).all() and (k == 0.0).all()

    def test_deterministic(self, rng):
        cfg = CueConfig()
        feats = self._features(rng)
        a = encode_tokens(feats, 0, cfg, 3, 4)
        b = encode_tokens(feats, 0, cfg, 3, 4)
        for qa, qb in zip(a.queries, b.queries):
            np.testing.assert_array_equal(qa, qb)

    def test_linearity(self, rng):
        cfg = CueConfig()
        feats = self._features(rng)
        one = encode_tokens(feats, 0, cfg, 3, 4)
        two = encode_tokens(2.0 * feats, 0, cfg, 3, 4)
        for q1, q2 in zip(one.queries, two.queries):
            np.testing.assert_allclose(q2, 2.0 * q1, atol=1e-12)

    def test_queries_and_keys_distinct(self, rng):
        cfg = CueConfig()
        grid = encode_tokens(self._features(rng), 0, cfg, 3, 4)
        assert not np.array_equal(grid.queries[0], grid.keys[0])

    def test_empty_frame_raises(self):
        cfg = CueConfig()
        depth = DenseMap(np.zeros((16, 16), dtype=np.float32), "depth")
        resid = DenseMap(np.full((16, 16), -1.0, dtype=np.float32), "residual")
        stats = feature_stats([], [], cfg)
        with pytest.raises(EmptyFrame):
            frame_features(depth, resid, stats, cfg)


class TestAggregateSaliency:
    def test_hand_built_two_token_case(self):
        # Single layer, single neighbor; best-match cosines 1.0 and 0.3
        # must yield saliencies 0.0 and 0.7.
        cfg = CueConfig(num_layers=1, l_mask=1, feature_dim=2)
        keys_r = np.array([[1.0, 0.0], [0.0, 1.0]])
        keys_s = np.array([[1.0, 0.0], [np.sqrt(1 - 0.09), 0.3]])
        grid_r = TokenGrid(0, 1, 2, [keys_r.copy()], [keys_r])
        grid_s = TokenGrid(1, 1, 2, [keys_s.copy()], [keys_s])
        sal = aggregate_saliency([grid_r, grid_s], 0, cfg, (8, 16))
        np.testing.assert_allclose(sal.values.ravel(), [0.0, 0.7], atol=1e-12)

    def test_static_scene_zero_noise_near_zero(self):
        truth = generate_scene(SceneConfig(num_frames=6, num_static_points=800,
                                           num_dynamic_points=0,
                                           pixel_noise_sigma=0.0, seed=2))
        _, sal = mining_pipeline(truth)
        for s in sal:
            assert s.values.max() < 0.05

    def test_moving_object_scores_high(self, default_truth):
        _, sal = mining_pipeline(default_truth)
        for t in (5, 10, 15):
            mask = default_truth.masks[t]
            up = sal[t].upsampled
            dyn = mask.values == 1.0
            stat = mask.defined & ~dyn
            assert up.values[dyn].mean() > 3 * up.values[stat].mean()
            # The most salient token overlaps the moving object (saliency is
            # token-resolution, so check the 8x8 block, not the pixel).
            pr, pc = np.unravel_index(np.argmax(up.values), up.values.shape)
            patch = CueConfig().patch_size
            r0, c0 = (pr // patch) * patch, (pc // patch) * patch
            assert dyn[r0:r0 + patch, c0:c0 + patch].any()

    def test_values_in_unit_interval(self, default_truth):
        _, sal = mining_pipeline(default_truth, noise=0.25)
        for s in sal:
            assert (s.values >= 0.0).all() and (s.values <= 1.0).all()


class TestOtsu:
    def test_constant_input(self):
        tau = otsu_threshold(np.full(100, 0.5))
        assert tau > 0.5
        assert tau == pytest.approx(0.5 + 2.0 ** -20)

    def test_bimodal_exact_separation(self):
        values = np.concatenate([np.full(100, 0.1), np.full(100, 0.9)])
        tau = otsu_threshold(values)
        assert 0.1 < tau <= 0.9
        assert ((values >= tau) == (values == 0.9)).all()

    def test_gaussian_mixture(self, rng):
        values = np.concatenate([rng.normal(0.2, 0.05, 5000),
                                 rng.normal(0.8, 0.05, 5000)])
        tau = otsu_threshold(values)
        # Thresholds inside the empty inter-mode gap tie exactly, and ties
        # break toward the smaller edge, so tau sits at the lower end of the
        # gap rather than its center.
        assert 0.3 < tau < 0.7
        assert tau == otsu_threshold_bruteforce(values)
        binarized = values >= tau
        assert (binarized == (values > 0.5)).mean() > 0.999

    def test_matches_bruteforce_oracle_random(self, rng):
        for _ in range(50):
            n = rng.integers(2, 400)
            values = rng.uniform(0, 1, n)
            assert otsu_threshold(values) == otsu_threshold_bruteforce(values)

    @settings(max_examples=40, deadline=None)
    @given(values=arrays(np.float64, st.integers(2, 60),
                         elements=st.floats(0, 1, allow_nan=False)),
           bins=st.sampled_from([2, 16, 256]))
    def test_matches_bruteforce_oracle_property(self, values, bins):
        assert otsu_threshold(values, bins) == \
            otsu_threshold_bruteforce(values, bins)


class TestBinarize:
    def test_boundaries(self):
        sal = DenseMap(np.array([[0.2, 0.5, 0.8]], dtype=np.float32),
                       "saliency")
        everything = binarize(sal, 0.0)
        assert (everything.values == 1.0).all()
        nothing = binarize(sal, 0.8 + 1e-6)
        assert (nothing.values == 0.0).all()

    def test_strict_inequality_rule(self):
        sal = DenseMap(np.array([[0.2, 0.5, 0.8]], dtype=np.float32),
                       "saliency")
        out = binarize(sal, 0.5)
        np.testing.assert_array_equal(out.values, [[0.0, 1.0, 1.0]])


class TestSuppressKeys:
    def _grid(self, rng, th=3, tw=4, cfg=None):
        cfg = cfg or CueConfig()
        feats = rng.normal(size=(th * tw, 7))
        return encode_tokens(feats, 0, cfg, th, tw), cfg

    def test_full_suppression(self, rng):
        grid, cfg = self._grid(rng)
        out = suppress_keys(grid, np.ones((3, 4)), tau=0.0, l_mask=cfg.l_mask)
        for layer in range(cfg.num_layers):
            if layer < cfg.l_mask:
                assert (out.keys[layer] == 0.0).all()
            else:
                np.testing.assert_array_equal(out.keys[layer],
                                              grid.keys[layer])
            np.testing.assert_array_equal(out.queries[layer],
                                          grid.queries[layer])

    def test_zero_depth_is_noop(self, rng):
        grid, cfg = self._grid(rng)
        out = suppress_keys(grid, np.ones((3, 4)), tau=0.5, l_mask=0)
        for layer in range(cfg.num_layers):
            np.testing.assert_array_equal(out.keys[layer], grid.keys[layer])

    def test_checkerboard_indices(self, rng):
        grid, cfg = self._grid(rng)
        mask = np.indices((3, 4)).sum(axis=0) % 2 == 0
        out = suppress_keys(grid, mask, tau=0.5, l_mask=1)
        flagged = mask.ravel()
        for i in range(grid.num_tokens):
            if flagged[i]:
                assert (out.keys[0][i] == 0.0).all()
            else:
                np.testing.assert_array_equal(out.keys[0][i], grid.keys[0][i])

    def test_idempotent_bitwise(self, rng):
        grid, cfg = self._grid(rng)
        mask = rng.uniform(0, 1, (3, 4))
        once = suppress_keys(grid, mask, tau=0.5, l_mask=cfg.l_mask)
        twice = suppress_keys(once, mask, tau=0.5, l_mask=cfg.l_mask)
        for a, b in zip(once.keys, twice.keys):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(once.queries, twice.queries):
            np.testing.assert_array_equal(a, b)

    def test_resolution_mismatch(self, rng):
        grid, cfg = self._grid(rng)
        with pytest.raises(ResolutionMismatch):
            suppress_keys(grid, np.ones((2, 2)), tau=0.5, l_mask=1)


class TestAttentionForward:
    def test_empty_dynamic_set_zero_mass(self, rng):
        cfg = CueConfig()
        grids = [encode_tokens(rng.normal(size=(12, 7)), t, cfg, 3, 4)
                 for t in range(2)]
        flags = [np.zeros((3, 4), dtype=bool)] * 2
        _, masses = attention_forward(grids, flags, cfg, suppressed=False)
        assert all(m == 0.0 for m in masses.values())

    def test_full_suppression_closed_form(self, rng):
        # All keys zeroed in every layer: logits are identically zero, so
        # attention is uniform and the dynamic mass is |D| / N_tok.
        cfg = CueConfig(num_layers=3, l_mask=3)
        grids = [encode_tokens(rng.normal(size=(12, 7)), t, cfg, 3, 4)
                 for t in range(2)]
        flags = [np.ones((3, 4), dtype=bool)] * 2
        _, masses = attention_forward(grids, flags, cfg, suppressed=True,
                                      tau=0.5)
        for m in masses.values():
            assert m == pytest.approx(1.0, abs=1e-12)
        # Partial flags: uniform weights put mass |D|/N_tok on dynamic keys.
        part = np.zeros((3, 4), dtype=bool)
        part.ravel()[:5] = True
        full = [np.ones((3, 4), dtype=bool)] * 2
        suppressed_grids = [encode_tokens(rng.normal(size=(12, 7)), t, cfg,
                                          3, 4) for t in range(2)]
        from decoupled4d.cues import suppress_keys
        zeroed = [suppress_keys(g, np.ones((3, 4)), 0.0, cfg.l_mask)
                  for g in suppressed_grids]
        _, masses = attention_forward(zeroed, [part, part], cfg,
                                      suppressed=False)
        for m in masses.values():
            assert m == pytest.approx(5.0 / 12.0, abs=1e-12)

    def test_default_scene_suppression_reduces_mass(self, default_run):
        _, _, report = default_run
        assert report.dyn_mass_suppressed < report.dyn_mass_unsuppressed


class TestSaliencyQuality:
    def test_default_scene_auc(self, default_run):
        _, _, report = default_run
        assert report.saliency_auc >= 0.90

    def test_token_mask_consistent_with_binarize(self, default_truth):
        _, sal = mining_pipeline(default_truth)
        tau = otsu_threshold(np.concatenate([s.values.ravel() for s in sal]))
        flags = token_mask(sal[0], tau)
        assert flags.shape == sal[0].values.shape
        np.testing.assert_array_equal(flags, sal[0].values >= tau)
