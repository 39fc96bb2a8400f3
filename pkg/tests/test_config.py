import pytest

from chaffmill.config import (
    AgentEntry,
    PipelineConfig,
    default_traffic_model,
    derive_fake_key,
    dumps_config,
    example_config,
    load_config,
    loads_config,
)
from chaffmill.engine import JobSpec
from chaffmill.errors import ConfigError
from chaffmill.tagging import generate_key


class TestRoundTrip:
    def test_example_round_trips(self):
        config = example_config()
        assert loads_config(dumps_config(config)) == config

    def test_pinned_fake_key_round_trips(self):
        config = example_config()
        pinned = AgentEntry(
            agent_id="agent-e", kind="fake", content_seed=9, records=10,
            key=generate_key(seed=55),
        )
        config = PipelineConfig(
            epoch=config.epoch,
            shared_key=config.shared_key,
            shuffle_seed=config.shuffle_seed,
            model=config.model,
            agents=config.agents + (pinned,),
            jobs=config.jobs,
        )
        assert loads_config(dumps_config(config)) == config

    def test_keyfile_resolved_relative_to_config(self, tmp_path):
        key = generate_key(seed=77)
        (tmp_path / "key.hex").write_text(key.hex() + "\n")
        text = dumps_config(example_config()).replace(
            f"shared_key = {example_config().shared_key.hex()}",
            "shared_keyfile = key.hex",
        )
        path = tmp_path / "pipeline.cfg"
        path.write_text(text)
        assert load_config(path).shared_key == key


class TestValidation:
    def _mutate(self, old: str, new: str) -> str:
        text = dumps_config(example_config())
        assert old in text
        return text.replace(old, new)

    def test_no_real_agent_rejected(self):
        text = self._mutate("kind = real", "kind = fake")
        with pytest.raises(ConfigError, match="at least one real agent"):
            loads_config(text)

    def test_duplicate_agent_section_rejected(self):
        text = dumps_config(example_config())
        text += "\n[agent.agent-a]\nkind = real\ncontent_seed = 1\nrecords = 1\n"
        with pytest.raises(ConfigError, match="syntax"):
            loads_config(text)

    def test_unknown_key_rejected(self):
        text = dumps_config(example_config()).replace(
            "shuffle_seed = 7", "shuffle_seed = 7\ncolor = red"
        )
        with pytest.raises(ConfigError, match="unknown key"):
            loads_config(text)

    def test_fake_key_equal_to_shared_rejected(self):
        config = example_config()
        text = dumps_config(config).replace(
            "kind = fake\ncontent_seed = 103",
            f"kind = fake\nkey = {config.shared_key.hex()}\ncontent_seed = 103",
        )
        with pytest.raises(ConfigError, match="differ from the shared key"):
            loads_config(text)

    def test_real_agent_with_key_rejected(self):
        config = example_config()
        text = dumps_config(config).replace(
            "kind = real\ncontent_seed = 101",
            f"kind = real\nkey = {generate_key(seed=5).hex()}\ncontent_seed = 101",
        )
        with pytest.raises(ConfigError, match="real agents must not pin"):
            loads_config(text)

    def test_missing_shared_key_rejected(self):
        text = self._mutate("shared_key = ", "; shared_key = ")
        with pytest.raises(ConfigError, match="shared_key"):
            loads_config(text)

    def test_bad_weight_rejected(self):
        text = self._mutate("pages = ", "pages = /a:heavy, ")
        with pytest.raises(ConfigError, match="weight"):
            loads_config(text)

    def test_unknown_job_rejected(self):
        text = self._mutate("run = page_hits", "run = page_hats")
        with pytest.raises(ConfigError, match="unknown job"):
            loads_config(text)

    def test_field_named_in_error(self):
        text = self._mutate("epoch = 1", "epoch = soon")
        with pytest.raises(ConfigError, match="epoch"):
            loads_config(text)


class TestDerivedKeys:
    def test_distinct_per_agent_and_from_shared(self):
        shared = generate_key(seed=8)
        k1 = derive_fake_key(shared, "agent-x")
        k2 = derive_fake_key(shared, "agent-y")
        assert k1 != k2
        assert shared not in (k1, k2)
        assert derive_fake_key(shared, "agent-x") == k1

    def test_agent_key_resolution(self):
        config = example_config()
        for agent in config.agents:
            key = config.agent_key(agent)
            if agent.kind == "real":
                assert key == config.shared_key
            else:
                assert key != config.shared_key


class TestExample:
    def test_example_is_valid_and_mixed(self):
        config = example_config()
        kinds = {a.kind for a in config.agents}
        assert kinds == {"real", "fake"}
        assert {j.name for j in config.jobs} == {
            "page_hits", "session_stats", "trending_terms",
        }

    def test_ids_share_a_namespace(self):
        # nothing in the id should hint at the kind
        config = example_config()
        for agent in config.agents:
            assert "real" not in agent.agent_id and "fake" not in agent.agent_id
            assert agent.agent_id.startswith("agent-")

    def test_wheat_only_strips_fakes(self):
        config = example_config()
        wheat = config.wheat_only()
        assert all(a.kind == "real" for a in wheat.agents)
        assert wheat.shared_key == config.shared_key

    def test_job_params_carried(self):
        config = example_config()
        trending = next(j for j in config.jobs if j.name == "trending_terms")
        assert trending == JobSpec("trending_terms", top_k=10)

    def test_default_model_has_search(self):
        model = default_traffic_model()
        assert any(p == "/search" for p, _ in model.page_catalog)
        assert model.search_terms
