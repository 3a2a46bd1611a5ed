from pathlib import Path

import numpy as np
import pytest

from pricelab.agent import AgentHyperParams
from pricelab.config import RunConfig, SessionSettings
from pricelab.market import Benchmarks, MarketParams, compute_benchmarks

TEST_DATA = Path(__file__).parent.parent / "test_data"


@pytest.fixture(scope="session")
def duopoly() -> MarketParams:
    return MarketParams.symmetric(n=2)


@pytest.fixture(scope="session")
def duopoly_benchmarks(duopoly: MarketParams) -> Benchmarks:
    return compute_benchmarks(duopoly)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([1234, 0])))


@pytest.fixture
def tiny_hyper() -> AgentHyperParams:
    return AgentHyperParams(hidden_critic=8, hidden_actor=8, batch_size=16, buffer_size=200)


@pytest.fixture
def tiny_config(tiny_hyper: AgentHyperParams) -> RunConfig:
    return RunConfig(
        market=MarketParams.symmetric(n=2),
        hyper=tiny_hyper,
        session=SessionSettings(
            steps=60, checkpoint_steps=(30, 60), metrics_window=10, diagnostics_every=10
        ),
    )


@pytest.fixture(scope="session")
def test_data() -> Path:
    return TEST_DATA
