import numpy as np
import pytest

from decoupled4d.configio import (format_scene_config, parse_config_file,
                                  parse_config_text, scene_config_from)
from decoupled4d.errors import ConfigError
from decoupled4d.pipeline import (PipelineConfig, format_pipeline_config,
                                  pipeline_config_from)


class TestParsing:
    def test_basic_entries(self):
        text = "scene.num_frames=10\nfusion_mode = hard_replace\n"
        assert parse_config_text(text) == {"scene.num_frames": "10",
                                           "fusion_mode": "hard_replace"}

    def test_comments_and_blank_lines(self):
        text = "# full-line comment\n\nseed=3  # trailing comment\n"
        assert parse_config_text(text) == {"seed": "3"}

    def test_missing_equals_reports_line_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("a=1\nnot a pair\n")

    def test_empty_key_rejected(self):
        with pytest.raises(ConfigError, match="empty key"):
            parse_config_text("=5\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config_file(tmp_path / "nope.cfg")


class TestSceneConfig:
    def test_dotted_keys_routed(self):
        cfg = scene_config_from({"scene.num_frames": "8",
                                 "scene.pixel_noise_sigma": "0.5",
                                 "cue.bins": "128"})
        assert cfg.num_frames == 8
        assert cfg.pixel_noise_sigma == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            scene_config_from({"scene.num_framez": "8"})

    def test_velocity_matrix_syntax(self):
        cfg = scene_config_from(
            {"scene.dynamic_velocities": "0.1,0.2,0.3;0.0,0.1,0.0"})
        np.testing.assert_allclose(cfg.dynamic_velocities,
                                   [[0.1, 0.2, 0.3], [0.0, 0.1, 0.0]])

    def test_format_round_trip(self):
        from decoupled4d.synthscene import SceneConfig
        cfg = SceneConfig(num_frames=7, pixel_noise_sigma=0.125,
                          object_path="linear", seed=11)
        echoed = scene_config_from(parse_config_text(format_scene_config(cfg)))
        assert echoed.num_frames == 7
        assert echoed.pixel_noise_sigma == 0.125
        assert echoed.object_path == "linear"
        assert echoed.seed == 11


class TestPipelineConfig:
    def test_full_echo_round_trip(self):
        cfg = PipelineConfig(fusion_mode="hard_replace", seed=5,
                             use_gt_mask=True, eval_stride=3)
        echoed = pipeline_config_from(
            parse_config_text(format_pipeline_config(cfg)))
        assert echoed.fusion_mode == "hard_replace"
        assert echoed.seed == 5
        assert echoed.use_gt_mask is True
        assert echoed.eval_stride == 3
        # The echo of the echo must be byte-identical (fixed-point).
        assert format_pipeline_config(echoed) == format_pipeline_config(cfg)

    def test_bool_coercion(self):
        for text, expected in [("true", True), ("no", False), ("1", True)]:
            cfg = pipeline_config_from({"use_gt_mask": text})
            assert cfg.use_gt_mask is expected
        with pytest.raises(ConfigError):
            pipeline_config_from({"use_gt_mask": "maybe"})

    def test_invalid_mode_rejected(self):
        with pytest.raises(ConfigError):
            pipeline_config_from({"fusion_mode": "average"})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            pipeline_config_from({"fuzion_mode": "hard_replace"})

    def test_noise_profile_override(self):
        cfg = pipeline_config_from({"pass1.sigma_static": "0.2",
                                    "pass1.sigma_dynamic": "0.02"})
        assert cfg.pass1_profile.sigma_static == 0.2
        assert cfg.pass1_profile.sigma_dynamic == 0.02
        # Untouched profile keeps its default.
        assert cfg.pass2_profile.sigma_static == 0.01
