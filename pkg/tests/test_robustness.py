import csv
import pytest
import torch
from animguard.blocks.robustness import (
    DEFAULT_AXES,
    SweepAxis,
    parse_axis,
    apply_countermeasure,
    sweep,
    interpolate_average_purify,
)
from animguard.blocks.metrics import psnr
from animguard.util import uint8_to_image


def test_parse_axis_and_aliases():

    axis = parse_axis("jpeg:50,75,95")
    assert axis.kind == "jpeg"
    assert axis.params == [50, 75, 95]

    assert parse_axis("blur:1,2").kind == "gaussian_blur"
    assert parse_axis("median:3,9").params == [3, 9]

    with pytest.raises(ValueError):
        parse_axis("jpeg")
    with pytest.raises(ValueError):
        parse_axis("sharpen:1")


@pytest.mark.parametrize("kind, param", [
    ("jpeg", 0),
    ("jpeg", 101),
    ("gaussian_blur", 0.0),
    ("gaussian_noise", -0.1),
    ("median_blur", 4),
    ("median_blur", 1),
    ("bit_squeeze", 9),
    ("bit_squeeze", 0),
])
def test_invalid_parameters(make_image, kind, param):
    with pytest.raises(ValueError):
        apply_countermeasure(kind, param, make_image(0))


def test_default_axes_cover_every_countermeasure():

    kinds = [axis.kind for axis in DEFAULT_AXES]
    assert kinds == ["jpeg", "gaussian_blur", "gaussian_noise", "median_blur", "bit_squeeze"]

    params = {axis.kind: axis.params for axis in DEFAULT_AXES}
    assert 75 in params["jpeg"]
    assert 3.0 in params["gaussian_blur"]
    assert 0.05 in params["gaussian_noise"]
    assert 9 in params["median_blur"]
    assert 3 in params["bit_squeeze"]


@pytest.mark.parametrize("axis", DEFAULT_AXES, ids=lambda a: a.kind)
def test_countermeasures_keep_shape_and_range(make_image, axis):

    img = make_image(1, 16)

    for param in axis.params:
        out = apply_countermeasure(axis.kind, param, img, seed=3)
        assert out.shape == img.shape
        assert out.dtype == img.dtype
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_eight_bit_squeeze_is_exact_on_eight_bit_images():

    generator = torch.Generator().manual_seed(0)
    array = torch.randint(0, 256, (16, 16, 3), generator=generator).numpy().astype("uint8")
    img = uint8_to_image(array)

    assert torch.equal(apply_countermeasure("bit_squeeze", 8, img), img)


def test_one_bit_squeeze_binarizes(make_image):
    out = apply_countermeasure("bit_squeeze", 1, make_image(2))
    assert set(out.unique().tolist()) <= {0.0, 1.0}


def test_median_blur_removes_an_isolated_spike():

    img = torch.full((3, 9, 9), 0.5, dtype=torch.float64)
    img[:, 4, 4] = 1.0

    assert torch.allclose(apply_countermeasure("median_blur", 3, img), torch.full_like(img, 0.5))


def test_noise_is_seeded(make_image):

    img = make_image(3)
    a = apply_countermeasure("gaussian_noise", 0.05, img, seed=1)
    b = apply_countermeasure("gaussian_noise", 0.05, img, seed=1)

    assert torch.equal(a, b)
    assert not torch.equal(a, img)


def test_stronger_jpeg_degrades_more(make_image):

    img = make_image(4, 32)
    assert psnr(apply_countermeasure("jpeg", 95, img), img) > psnr(apply_countermeasure("jpeg", 10, img), img)


def test_sweep_table_rows(make_image, tmp_path):

    protected, clean = make_image(5, 16), make_image(6, 16)
    downstream = lambda img: {"psnr": psnr(img, clean)}

    table = sweep(protected, parse_axis("jpeg:50,75,95"), downstream)

    assert len(table.rows) == 3
    assert [r["param"] for r in table.series("protected")] == [50, 75, 95]
    assert set(table.untransformed) == {"protected"}

    with_baseline = sweep(protected, parse_axis("bit:4,3"), downstream, clean=clean)
    assert len(with_baseline.series("clean")) == 2
    assert with_baseline.untransformed["clean"]["psnr"] == 100.0

    path = tmp_path / "sweep.csv"
    with_baseline.to_csv(path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))

    assert len(rows) == 6
    assert rows[0]["kind"] == "none" and rows[0]["param"] == ""
    assert set(rows[0]) == {"series", "kind", "param", "psnr"}


def test_sweep_rejects_mismatched_baseline(make_image):
    with pytest.raises(ValueError):
        sweep(make_image(0, 16), parse_axis("jpeg:90"), lambda img: {}, clean=make_image(1, 8))


def test_purifier_weighted_sum():

    generator = torch.Generator().manual_seed(0)
    weights = [1 / 8, 2 / 8, 2 / 8, 2 / 8, 1 / 8]

    for _ in range(100):
        images = [torch.rand((3, 8, 8), generator=generator, dtype=torch.float64) for _ in range(5)]
        expected = sum(w * img for w, img in zip(weights, images))
        assert torch.allclose(interpolate_average_purify(images), expected, atol=1e-9)


def test_purifier_fixed_point_is_exact(make_image):

    img = make_image(7)
    assert torch.equal(interpolate_average_purify([img.clone() for _ in range(5)]), img)


def test_purifier_needs_five_images_of_one_shape(make_image):

    with pytest.raises(ValueError):
        interpolate_average_purify([make_image(i) for i in range(4)])

    with pytest.raises(ValueError):
        interpolate_average_purify([make_image(i) for i in range(4)] + [make_image(9, 16)])


def test_axis_needs_parameters():
    with pytest.raises(ValueError):
        SweepAxis("jpeg", [])
