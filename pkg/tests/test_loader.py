import pytest
import yaml
from animguard.configuration.loader import (
    DEFAULTS,
    RunManifest,
    config_hash,
    env_overrides,
    load_config,
    parse_budget,
    resolve_config,
)
from animguard.exceptions import ConfigurationError
from animguard.protector import protection_config


def write_yaml(path, values):
    path.write_text(yaml.safe_dump(values))
    return str(path)


def test_defaults_are_materialized():

    config = load_config(environ={})
    protect = config["protect"]

    assert protect["eta"] == pytest.approx(16 / 255)
    assert protect["gamma"] == pytest.approx(2 / 255)
    assert (protect["iterations"], protect["decay"], protect["zeta"], protect["frames"]) == (200, 0.5, 0.1, 5)
    assert (protect["lambda1"], protect["lambda_clip"], protect["lambda_ref"], protect["lambda3"], protect["lambda4"]) == (10, 10, 100, 1, 10)
    assert config["schedule"] == {"kind": "scaled_linear", "train_steps": 1000, "inference_steps": 25, "window": 10, "window_end": "low_noise"}
    assert set(config) == set(DEFAULTS)


@pytest.mark.parametrize("text, value", [("16/255", 16 / 255), ("32/255", 32 / 255), ("0.05", 0.05), (0.1, 0.1), (8, 8.0)])
def test_parse_budget(text, value):
    assert parse_budget(text) == pytest.approx(value)


@pytest.mark.parametrize("text", ["sixteen", "1/0", True])
def test_parse_budget_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_budget(text)


def test_precedence_flags_over_env_over_file(tmp_path):

    path = write_yaml(tmp_path / "config.yaml", {"protect": {"iterations": 10, "frames": 3, "decay": 0.9}})
    environ = {"ANIMGUARD_PROTECT_ITERATIONS": "20", "ANIMGUARD_PROTECT_FRAMES": "4"}

    config = load_config(path, overrides={"protect": {"iterations": 30}}, environ=environ)

    assert config["protect"]["iterations"] == 30
    assert config["protect"]["frames"] == 4
    assert config["protect"]["decay"] == 0.9
    assert config["protect"]["seed"] == 0


def test_env_values_are_yaml_scalars():

    overrides = env_overrides({"ANIMGUARD_EOT_ENABLED": "false", "ANIMGUARD_PROTECT_ETA": "8/255", "HOME": "/root"})

    assert overrides == {"eot": {"enabled": False}, "protect": {"eta": "8/255"}}
    assert resolve_config(overrides)["protect"]["eta"] == pytest.approx(8 / 255)


def test_unknown_keys_are_errors(tmp_path):

    with pytest.raises(ConfigurationError):
        load_config(write_yaml(tmp_path / "a.yaml", {"protect": {"iteratons": 10}}), environ={})

    with pytest.raises(ConfigurationError):
        load_config(write_yaml(tmp_path / "b.yaml", {"attack": {}}), environ={})

    with pytest.raises(ConfigurationError):
        load_config(environ={"ANIMGUARD_PROTECT_BUDGET": "1"})

    with pytest.raises(ConfigurationError):
        load_config(environ={"ANIMGUARD_TRAIN_STEPS": "1"})


def test_missing_config_file():
    with pytest.raises(FileNotFoundError):
        load_config("does/not/exist.yaml", environ={})


def test_extractor_section_replaces_the_preset(tmp_path):

    descriptor = {"encoder": "toy", "semantic": "toy", "references": ["toy"], "noise_predictor": "toy", "pose": "toy", "perceptual": "toy"}
    config = load_config(write_yaml(tmp_path / "c.yaml", {"extractors": descriptor}), environ={})
    assert config["extractors"] == {"seed": 0, **descriptor}

    assert resolve_config({"extractors": "toy-default"})["extractors"] == {"preset": "toy-default", "seed": 0}


def test_extractor_seed_from_the_environment_keeps_the_preset(tmp_path):

    from animguard.blocks import resolve_bundle

    config = load_config(environ={"ANIMGUARD_EXTRACTORS_SEED": "3"})

    assert config["extractors"] == {"preset": "toy-default", "seed": 3}
    assert resolve_bundle(config["extractors"]).record == {"preset": "toy-default", "seed": 3}

    descriptor = {"encoder": "toy", "semantic": "toy", "references": ["toy"], "noise_predictor": "toy", "pose": "toy", "perceptual": "toy"}
    path = write_yaml(tmp_path / "d.yaml", {"extractors": descriptor})
    config = load_config(path, environ={"ANIMGUARD_EXTRACTORS_SEED": "5"})

    assert config["extractors"] == {"seed": 5, **descriptor}

    config = load_config(path, environ={"ANIMGUARD_EXTRACTORS_PRESET": "toy-default"})
    assert config["extractors"] == {"preset": "toy-default", "seed": 0}


def test_hash_is_deterministic_and_sensitive():

    a = resolve_config()
    b = resolve_config()
    c = resolve_config({"protect": {"seed": 1}})

    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


def test_protection_config_with_ablation():

    config = resolve_config({"protect": {"ablate": ["frame"], "eta": "32/255"}, "eot": {"enabled": False}})
    cfg = protection_config(config)

    assert cfg.weights.lambda3 == 0.0
    assert cfg.weights.lambda_ref == 100.0
    assert cfg.eta == pytest.approx(32 / 255)
    assert cfg.eot.enabled is False
    assert cfg.window == 10


def test_manifest_round_trip(tmp_path):

    config = resolve_config({"protect": {"iterations": 7}})
    manifest = RunManifest.create(config, {"preset": "toy-default", "seed": 0}, ["a.png"])
    path = manifest.save(tmp_path / "manifest.yaml")

    loaded = RunManifest.load(path)

    assert loaded.config == config
    assert loaded.config_hash == config_hash(config)
    assert loaded.seed == 0
    assert loaded.inputs == ["a.png"]


def test_tampered_manifest_is_rejected(tmp_path):

    manifest = RunManifest.create(resolve_config())
    path = manifest.save(tmp_path / "manifest.yaml")

    values = yaml.safe_load(open(path))
    values["config"]["protect"]["iterations"] = 1
    write_yaml(tmp_path / "manifest.yaml", values)

    with pytest.raises(ConfigurationError):
        RunManifest.load(path)

    with pytest.raises(ConfigurationError):
        RunManifest.load(write_yaml(tmp_path / "other.yaml", {"protect": {}}))
