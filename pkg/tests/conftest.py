import sys
from pathlib import Path

import pytest
from hypothesis import settings

from wavlm_si.config import ModelConfig
from wavlm_si.model import build_model, random_clip

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("thorough", deadline=None, max_examples=3000)
settings.load_profile("default")

# 0.25 s of audio keeps unit-test forwards in the millisecond range.
TINY = ModelConfig(
    conv_channels=32, hidden=48, num_layers=3, heads=2, has_positional_conv=True,
    pos_conv_kernel=8, pos_conv_groups=4, clip_seconds=0.25,
)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(TINY, seed=7)


@pytest.fixture(scope="session")
def tiny_clip():
    return random_clip(3, TINY.num_samples)


_criteria: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = ""
    if report.failed:
        detail = str(getattr(report.longrepr, "reprcrash", None) and report.longrepr.reprcrash.message or "")
        detail = " ".join(detail.split())[:160]
    _criteria.setdefault(marker.args[0], []).append((item.name, report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        ok = all(passed for _, passed, _ in results)
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} ({sum(p for _, p, _ in results)}/{len(results)} checks)"
        terminalreporter.write_line(line)
        for name, passed, detail in results:
            if not passed:
                terminalreporter.write_line(f"    failed {name}: {detail}")
