import numpy as np
import pytest

from decoupled4d.geometry import Intrinsics
from decoupled4d.pipeline import PipelineConfig, run_pipeline
from decoupled4d.synthscene import SceneConfig, generate_scene


# One human-readable verdict line per acceptance criterion; printed in the
# terminal summary so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_truth():
    return generate_scene(SceneConfig())


@pytest.fixture(scope="session")
def small_truth():
    """A cheaper scene for tests that only need plausible geometry."""
    return generate_scene(SceneConfig(num_frames=6, num_static_points=600,
                                      num_dynamic_points=80, seed=7))


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full default pipeline run, shared by pipeline-level tests."""
    out = tmp_path_factory.mktemp("default_run")
    cfg = PipelineConfig()
    report = run_pipeline(cfg, out)
    return cfg, out, report


@pytest.fixture()
def unit_intrinsics():
    """Identity-like intrinsics so pixels are normalized image coordinates."""
    return Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
