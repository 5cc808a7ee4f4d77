import os
import time
from dataclasses import dataclass, replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from patchnet.aggregation import ModelParams
from patchnet.correlation import CorrelationConfig
from patchnet.experiments import VARIANTS
from patchnet.training import TrainConfig, train

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Trained models take minutes each on one core, so a test session trains each
# variant at most once (default TrainConfig) and shares it between unit and
# acceptance tests.


@dataclass
class TrainedModel:
    params: ModelParams
    rows: list
    seconds: float


_models: dict[str, TrainedModel] = {}


def trained_variant(name: str) -> TrainedModel:
    if name not in _models:
        variant = next(v for v in VARIANTS if v.name == name)
        t = time.perf_counter()
        tc = replace(TrainConfig(), train_fourier=variant.train_fourier, use_bbox=variant.use_bbox)
        params, rows = train(CorrelationConfig(), tc)
        _models[name] = TrainedModel(params, rows, time.perf_counter() - t)
    return _models[name]


@pytest.fixture(scope="session")
def trained():
    return trained_variant


@pytest.fixture(scope="session")
def full_model():
    return trained_variant("full").params


# Acceptance tests register one verdict line each; they are repeated at the
# end of the run so the summary survives output capture.
_acceptance: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        _acceptance[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_acceptance):
            terminalreporter.write_line(_acceptance[n])
