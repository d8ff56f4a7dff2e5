"""Shared fixtures: a small fast corpus and the default full-size corpus."""

from __future__ import annotations

import numpy as np
import pytest

from lipfield import synthdata


@pytest.fixture(scope="session")
def small_cfg() -> synthdata.SceneConfig:
    return synthdata.SceneConfig(height=64, width=64, n_frames=60)


@pytest.fixture(scope="session")
def small_corpus(small_cfg) -> synthdata.Corpus:
    return synthdata.build_corpus(small_cfg, seed=3)


@pytest.fixture(scope="session")
def default_corpus() -> synthdata.Corpus:
    return synthdata.build_corpus(synthdata.SceneConfig(), seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------------
def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")
    config._acceptance = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the line is echoed and repeated in the terminal summary."""

    def record(number: int, ok: bool, detail: str):
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
