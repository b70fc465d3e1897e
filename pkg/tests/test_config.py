import json

import pytest

from trrg.config import ConfigError, ModelConfig, echo_resolved


class TestDefaults:
    def test_documented_defaults(self):
        config = ModelConfig()
        assert config.d == 64
        assert config.m == 14
        assert config.k == 3
        assert config.query_len == 16
        assert config.interaction_layers == 1
        assert config.tau == 0.07
        assert config.lr == 1e-4
        assert config.batch_size == 8
        assert config.n_patches == 64

    def test_paper_scale_dims_accepted(self):
        config = ModelConfig(d=1024, d_llm=1024, heads=8, vocab_size=100)
        config.validate()


class TestValidation:
    def test_k_bounded_by_m(self):
        with pytest.raises(ConfigError, match="k"):
            ModelConfig(k=15).validate()

    def test_heads_must_divide_dims(self):
        with pytest.raises(ConfigError, match="heads"):
            ModelConfig(d=64, d_llm=60, heads=8).validate()

    def test_positive_fields(self):
        with pytest.raises(ConfigError, match="query_len"):
            ModelConfig(query_len=0).validate()

    def test_unknown_field_named(self):
        with pytest.raises(ConfigError, match="warmup"):
            ModelConfig.from_dict({"warmup": 10})

    def test_bad_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            ModelConfig(variant="everything").validate()


class TestJsonIO:
    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        original = ModelConfig(d=32, d_llm=32, heads=4, seed=5)
        path.write_text(json.dumps(original.to_dict()))
        assert ModelConfig.from_json(path) == original

    def test_flags_override_file_values(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(ModelConfig(seed=5).to_dict()))
        loaded = ModelConfig.from_json(path).replace(seed=9, epochs=3)
        assert loaded.seed == 9 and loaded.epochs == 3

    def test_echo_resolved(self, tmp_path):
        config = ModelConfig(seed=3)
        path = echo_resolved(config, tmp_path)
        assert path.name == "config.resolved.json"
        data = json.loads(path.read_text())
        assert data["seed"] == 3
        assert data["tau"] == 0.07
        # unset fields appear with their documented defaults
        assert data["k"] == 3

    def test_replace_revalidates(self):
        with pytest.raises(ConfigError):
            ModelConfig().replace(k=99)
