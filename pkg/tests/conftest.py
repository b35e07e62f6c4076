import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tokenpose.config import ModelConfig

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Two layers, 4x4 grid of 4x4 patches, 3 keypoints."""
    return ModelConfig(input_h=16, input_w=16, channels=1, patch_h=4, patch_w=4,
                       embed_dim=8, num_layers=2, num_heads=2, num_keypoints=3,
                       heatmap_h=4, heatmap_w=4, mlp_ratio=2.0, pe_mode="sine2d")


# ----------------------------------------------------------- acceptance log

CRITERIA = [f"A{i}" for i in range(1, 11)]
_RESULTS = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; fails the test on a miss."""
    def record(key: str, ok: bool, detail: str) -> None:
        _RESULTS[key] = (bool(ok), detail)
        assert ok, f"{key}: {detail}"
    return record


def pytest_runtest_logreport(report):
    # a criterion whose test crashed before recording still gets a line
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.failed and name.startswith("test_a") and "test_acceptance" in report.nodeid:
        key = "A" + str(int(name[6:8]))
        _RESULTS.setdefault(key, (False, f"error in {report.when}: {report.longrepr.reprcrash.message if hasattr(report.longrepr, 'reprcrash') else report.longrepr}"))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in CRITERIA:
        if key in _RESULTS:
            ok, detail = _RESULTS[key]
            terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
        else:
            terminalreporter.write_line(f"{key} NOT RUN")
