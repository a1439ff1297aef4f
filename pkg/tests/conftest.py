import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_truth():
    from rdcfold.synth import synthesize_dataset

    return synthesize_dataset(6, 10.0, media=2, noise=0.0, seed=3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
