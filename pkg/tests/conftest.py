import numpy as np
import pytest

from laneforge.scene import SceneConfig, generate_scene

_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and assert it."""
    def record(num, ok, detail):
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append((num, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_scene():
    return generate_scene(SceneConfig(seed=3, noise_sigma=0.02))


@pytest.fixture(scope="session")
def small_scene_config():
    """Compact scene for oracle comparisons (a few thousand points)."""
    return SceneConfig(seed=7, roi=(-12.0, 12.0, -8.0, 8.0), lane_count=3,
                       annotation_spacing=3.0)


@pytest.fixture(scope="session")
def small_scene(small_scene_config):
    return generate_scene(small_scene_config)
