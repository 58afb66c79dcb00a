import os
import sys
from pathlib import Path
from typing import List

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.harness.dataset import RocSample, gen_dataset  # noqa: E402
from app.models.toy_decoder import ModelConfig, ToyDecoder  # noqa: E402


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: default-scale experiments, run with RUN_SLOW=1")


def pytest_collection_modifyitems(config: pytest.Config, items: List[pytest.Item]) -> None:
    if os.getenv("RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set RUN_SLOW=1 to run default-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_CONFIG = ModelConfig(d_model=16, n_layers=2, n_heads=2, grid=4, max_seq=40, seed=3, init_std=0.2)


@pytest.fixture
def tiny_model() -> ToyDecoder:
    return ToyDecoder.initialize(TINY_CONFIG, version="tiny")


@pytest.fixture
def tiny_dataset() -> List[RocSample]:
    return gen_dataset(8, seed=1, g=TINY_CONFIG.grid)


@pytest.fixture
def tiny_sample(tiny_dataset: List[RocSample]) -> RocSample:
    return tiny_dataset[0]
