import functools
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from siftem.harness import ExperimentConfig, build_scenario, signal_seeds  # noqa: E402


@functools.lru_cache(maxsize=None)
def default_scenario(index: int, seed: int = 2024):
    """Default-setting scenario for signal ``index`` of a batch seeded ``seed``."""
    cfg = ExperimentConfig(num_signals=index + 1, seed=seed)
    return build_scenario(cfg, index, signal_seeds(seed, index + 1)[index])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
