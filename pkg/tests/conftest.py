import hashlib

import pytest

from chaffmill.config import default_traffic_model
from chaffmill.pipeline import AgentConfig, agent_emit, collect
from chaffmill.tagging import SecretKey, generate_key
from chaffmill.weblog import TrafficModel, generate_chaff_content, generate_wheat


@pytest.fixture(scope="session")
def shared_key() -> SecretKey:
    return generate_key(seed=4242)


@pytest.fixture(scope="session")
def fake_key() -> SecretKey:
    return generate_key(seed=2424)


@pytest.fixture(scope="session")
def model() -> TrafficModel:
    return default_traffic_model()


@pytest.fixture(scope="session")
def small_model() -> TrafficModel:
    return TrafficModel(
        page_catalog=(("/a", 5.0), ("/b", 3.0), ("/search", 2.0)),
        search_terms=(("shoes", 2.0), ("hats", 1.0)),
        ip_pool_size=20,
        time_span=(1_000_000_000, 1_000_086_400),
    )


def subseed(seed: int, *labels) -> int:
    """Stable sub-seed: a function of (seed, labels) only, not of call order."""
    text = ":".join([str(seed), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def build_stream(
    shared: SecretKey,
    model: TrafficModel,
    wheat_per_agent: list[int],
    chaff_per_agent: list[int],
    seed: int = 0,
    epoch: int = 1,
):
    """Assemble a stream with the given per-agent record counts.

    Returns (stream, kinds) where kinds is the consumer-side truth. Each
    wheat agent's identity and content depend only on (seed, its index), so
    the wheat half of a chaffed build is byte-identical to a chaff-free build
    with the same seed; the winnowing-theorem tests rely on that.
    """
    batches = []
    kinds = {}
    for i, n in enumerate(wheat_per_agent):
        agent_id = f"src-{i:02d}"
        kinds[agent_id] = "real"
        cfg = AgentConfig(agent_id=agent_id, key=shared, kind="real", content_seed=0)
        batches.append(
            agent_emit(cfg, generate_wheat(model, n, subseed(seed, "wheat", i)), epoch)
        )
    for j, n in enumerate(chaff_per_agent):
        agent_id = f"src-{len(wheat_per_agent) + j:02d}"
        kinds[agent_id] = "fake"
        key = generate_key(seed=subseed(seed, "fakekey", j))
        cfg = AgentConfig(agent_id=agent_id, key=key, kind="fake", content_seed=0)
        batches.append(
            agent_emit(cfg, generate_chaff_content(model, n, subseed(seed, "chaff", j)), epoch)
        )
    return collect(batches, shuffle_seed=subseed(seed, "shuffle", len(batches))), kinds
