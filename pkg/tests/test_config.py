import json

import pytest

from stormforge.config import ConfigError, load_run_config, snapshot
from stormforge.fixtures import build_synthetic_dataset, write_dataset


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    write_dataset(build_synthetic_dataset(n_images=2), path)
    return path


def write_config(tmp_path, dataset_dir, **extra):
    body = {"dataset": str(dataset_dir), "output": str(tmp_path / "out")}
    body.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(body))
    return path


def test_minimal_config_defaults(tmp_path, dataset_dir):
    config = load_run_config(write_config(tmp_path, dataset_dir))
    assert config.workers == 1
    assert config.seed == 0
    assert config.scorer.kind == "toy"
    assert config.stage2.population == 15
    assert config.stage1.bounds == (0.02, 0.7)


def test_missing_file_and_bad_json(tmp_path, dataset_dir):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        load_run_config(bad)


def test_unknown_field_is_field_precise(tmp_path, dataset_dir):
    path = write_config(tmp_path, dataset_dir, stage2={"populatino": 10})
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert "populatino" in str(info.value)
    assert "config.stage2" in str(info.value)


def test_invalid_value_names_the_field(tmp_path, dataset_dir):
    path = write_config(tmp_path, dataset_dir, stage1={"budget": 2})
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert "config.stage1" in str(info.value)


def test_missing_dataset_directory(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"dataset": str(tmp_path / "missing"), "output": "out"}))
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert "dataset" in str(info.value)


def test_remote_scorer_requires_endpoint(tmp_path, dataset_dir):
    path = write_config(tmp_path, dataset_dir, scorer={"type": "remote"})
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert "endpoint" in str(info.value)


def test_overrides_and_env_seed(tmp_path, dataset_dir, monkeypatch):
    path = write_config(tmp_path, dataset_dir, seed=1, workers=2)
    config = load_run_config(path, {"workers": 4, "seed": 5})
    assert config.workers == 4 and config.seed == 5
    monkeypatch.setenv("STORMFORGE_SEED", "99")
    config = load_run_config(path, {"seed": 5})
    assert config.seed == 99
    monkeypatch.setenv("STORMFORGE_SEED", "nope")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_job_seed_is_stable(tmp_path, dataset_dir):
    config = load_run_config(write_config(tmp_path, dataset_dir, seed=3))
    assert config.job_seed("img1") == config.job_seed("img1")
    assert config.job_seed("img1") != config.job_seed("img2")


def test_snapshot_round_trips_through_json(tmp_path, dataset_dir):
    config = load_run_config(write_config(
        tmp_path, dataset_dir,
        stage1={"budget": 20, "rain": {"density": 900.0}},
        stage2={"generations": 5, "rain_bounds": {"density": [0, 800]}},
    ))
    snap = snapshot(config)
    assert json.loads(json.dumps(snap)) == snap
    assert snap["stage1"]["budget"] == 20
    assert snap["stage1"]["rain"]["density"] == 900.0
    assert snap["stage2"]["rain_bounds"]["density"] == [0.0, 800.0]
