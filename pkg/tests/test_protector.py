import pytest
import torch
import yaml
from animguard import protector, configuration
from animguard.exceptions import ConfigurationError, ResolutionError


@pytest.fixture
def config_file(tmp_path):

    path = tmp_path / "protect.yaml"
    path.write_text(yaml.safe_dump({
        "protect": {"iterations": 3, "frames": 2, "dtype": "float64", "seed": 2},
        "eot": {"kinds": ["identity", "gaussian_blur"]},
        "extractors": "toy-default",
    }))
    return str(path)


def test_init_from_yaml(config_file, image):

    guard = protector.init_from_yaml(config_file)

    assert configuration.dtype == torch.float64
    assert guard.cfg.iterations == 3
    assert guard.cfg.eot.kinds == ("identity", "gaussian_blur")
    assert guard.bundle.K == 3
    assert guard.seed == 2

    x_p, trace = guard(image)

    assert x_p.shape == image.shape
    assert len(trace) == 3
    assert trace.metadata["config_hash"] == guard.hash
    assert {r["transform"] for r in trace.records} <= {"identity", "gaussian_blur"}


def test_keyword_overrides_take_precedence(config_file):

    guard = protector.init_from_yaml(config_file, protect={"iterations": 5})

    assert guard.cfg.iterations == 5
    assert guard.cfg.frames == 2


def test_seed_offset_changes_the_result(config_file, image):

    guard = protector.init_from_yaml(config_file)

    a, _ = guard(image)
    b, _ = guard(image, seed_offset=1)
    c, _ = guard(image)

    assert torch.equal(a, c)
    assert not torch.equal(a, b)


def test_reset_config_keeps_the_extractors(config_file):

    guard = protector.init_from_yaml(config_file)
    bundle, old_hash = guard.bundle, guard.hash

    guard.reset_config(iterations=7, eta="8/255")

    assert guard.bundle is bundle
    assert guard.cfg.iterations == 7
    assert guard.cfg.eta == pytest.approx(8 / 255)
    assert guard.hash != old_hash


def test_protect_file(config_file, tmp_path, make_image):

    from animguard.blocks.metrics import psnr
    from animguard.util import read_image, write_image

    guard = protector.init_from_yaml(config_file)
    source = write_image(make_image(0, 16), tmp_path / "person.png")

    result = guard.protect_file(source, tmp_path / "out")

    assert result["image"].endswith("person_protected.png")
    assert (tmp_path / "out" / "person_trace.jsonl").exists()
    assert result["similarity"]["psnr"] > 20

    # measured on the 8-bit file that was written
    written, original = read_image(result["image"]), read_image(source)
    assert result["similarity"]["psnr"] == pytest.approx(psnr(written, original), abs=1e-9)


def test_bad_settings():

    with pytest.raises(ConfigurationError):
        protector(protect_kwargs={"eta": "a lot"})

    with pytest.raises(ResolutionError):
        protector(extractors_kwargs="missing")

    with pytest.raises(ValueError):
        protector(protect_kwargs={"ablate": ["style"]})

    with pytest.raises(ValueError):
        protector(protect_kwargs={"dtype": "float16"})
