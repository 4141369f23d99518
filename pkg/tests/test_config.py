from pathlib import Path

import pytest

from conftest import TEST_KEY_ENV
from geolocsft.core.config import RunConfig, load_config
from geolocsft.core.errors import ConfigError
from geolocsft.core.schemas import GREEDY, SAMPLE

EXAMPLE = Path(__file__).parent.parent / "resources" / "run.example.toml"


def test_defaults():
    config = load_config()
    assert config.sampling == SAMPLE
    assert config.thresholds.radii_km == [1, 25, 200, 750, 2500]
    assert config.curation.population_cap == 5000
    assert config.aggregation.link_radius_km == 100.0
    assert config.captions.gate_km == 1.0
    assert config.paths.manifest is None


def test_example_config_loads():
    config = load_config(EXAMPLE)
    assert config.endpoint.base_url == "http://localhost:8000/v1"
    assert config.endpoint.max_concurrent_requests == 8
    assert config.sampling.k == 10
    assert config.sampling.temperature == 1.0
    assert config.sampling.top_p == 0.95
    assert config.curation.seed == 20250101
    assert config.paths.manifest == Path("runs/mr/manifest.jsonl")
    assert config.run_metadata["lora_rank"] == "16"


def test_preset_with_explicit_values(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[sampling]\npreset = "greedy"\nmax_tokens = 512\n')
    config = load_config(path)
    assert config.sampling == GREEDY.model_copy(update={"max_tokens": 512})


def test_thresholds_as_list(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("thresholds = [5, 50]\n")
    assert load_config(path).thresholds.radii_km == [5, 50]


def test_overrides():
    config = RunConfig().with_overrides(**{
        "sampling": GREEDY.model_dump(),
        "sampling.k": 3,
        "curation.seed": None,
        "paths.manifest": Path("m.jsonl"),
    })
    assert config.sampling.k == 3
    assert config.sampling.temperature == 0.0
    assert config.curation.seed == 0
    assert config.paths.manifest == Path("m.jsonl")


def test_invalid_override():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**{"sampling.k": 0})


@pytest.mark.parametrize("text", [
    "[sampling]\npreset = \"beam\"\n",
    "[thresholds]\nradii_km = [25, 1]\n",
    "[endpoint]\nbase_url = \"http://x\"\n",
    "[unknown]\nx = 1\n",
    "this is = not toml [",
])
def test_invalid_files(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_redacted_never_shows_secrets(monkeypatch):
    monkeypatch.setenv("MAPILLARY_TOKEN", "MLY|secret")
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    data = RunConfig().redacted()
    assert data["env"] == {"OPENAI_API_KEY": "<unset>", "MAPILLARY_TOKEN": "<set>"}
    assert "MLY|secret" not in str(data)

    config = RunConfig().with_overrides(**{"endpoint.api_key_env_var_name": TEST_KEY_ENV})
    assert config.redacted()["env"][TEST_KEY_ENV] == "<set>"
    assert "sk-test" not in str(config.redacted())


def test_caption_decoding_is_greedy_by_default():
    config = load_config()
    assert config.sampling == SAMPLE
    assert config.captions.decoding() == GREEDY.model_copy(update={"max_tokens": 20000})

    tuned = config.with_overrides(**{"captions.temperature": 0.4})
    assert tuned.captions.decoding().temperature == 0.4
    assert tuned.sampling == SAMPLE
