"""
robustness evaluates how well a protection survives real-world countermeasures: bit-exact image
transformations swept over their parameters (applied to both the protected and the clean
image), and the interpolation-averaging purifier an attacker holding several protected images
of the same person can build.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import csv
from dataclasses import dataclass, field
from io import BytesIO
from typing import Callable, Optional
import numpy as np
import torch
from PIL import Image
from scipy import ndimage
from animguard import configuration
from animguard.blocks.tensor_core import check_image, check_same_shape, clamp_valid
from animguard.util import image_to_uint8, time_it

COUNTERMEASURES = ("jpeg", "gaussian_blur", "gaussian_noise", "median_blur", "bit_squeeze")

ALIASES = {
    "jpeg": "jpeg",
    "blur": "gaussian_blur",
    "gaussian_blur": "gaussian_blur",
    "noise": "gaussian_noise",
    "gaussian_noise": "gaussian_noise",
    "median": "median_blur",
    "median_blur": "median_blur",
    "bit": "bit_squeeze",
    "bit_squeeze": "bit_squeeze",
}


def validate_param(kind: str, param) -> float:

    if kind == "jpeg":
        if int(param) != param or not 1 <= param <= 100:
            raise ValueError(f"jpeg quality must be an integer in [1, 100], got {param}")
        return int(param)

    if kind == "gaussian_blur":
        if not param > 0:
            raise ValueError(f"blur sigma must be positive, got {param}")
        return float(param)

    if kind == "gaussian_noise":
        if param < 0:
            raise ValueError(f"noise scale must be >= 0, got {param}")
        return float(param)

    if kind == "median_blur":
        if int(param) != param or param < 3 or param % 2 == 0:
            raise ValueError(f"median kernel must be an odd integer >= 3, got {param}")
        return int(param)

    if kind == "bit_squeeze":
        if int(param) != param or not 1 <= param <= 8:
            raise ValueError(f"bit depth must be an integer in [1, 8], got {param}")
        return int(param)

    raise ValueError(f"unknown countermeasure '{kind}', choose from {COUNTERMEASURES}")


@dataclass
class SweepAxis:

    """
    Args:
        kind: countermeasure name (or a short alias: blur, noise, median, bit).
        params: ordered parameter values.
    """

    kind: str
    params: list

    def __post_init__(self):

        if self.kind not in ALIASES:
            raise ValueError(f"unknown countermeasure '{self.kind}', choose from {COUNTERMEASURES}")

        self.kind = ALIASES[self.kind]

        if len(self.params) == 0:
            raise ValueError(f"sweep axis {self.kind} needs at least one parameter")

        self.params = [validate_param(self.kind, p) for p in self.params]


DEFAULT_AXES = (
    SweepAxis("jpeg", [95, 85, 75, 65, 55]),
    SweepAxis("gaussian_blur", [1.0, 2.0, 3.0]),
    SweepAxis("gaussian_noise", [0.01, 0.03, 0.05]),
    SweepAxis("median_blur", [3, 5, 7, 9]),
    SweepAxis("bit_squeeze", [7, 6, 5, 4, 3]),
)


def parse_axis(text: str) -> SweepAxis:

    '''
    "jpeg:50,75,95" -> SweepAxis("jpeg", [50, 75, 95])
    '''

    if ":" not in text:
        raise ValueError(f"sweep axis must look like kind:p1,p2,..., got '{text}'")

    kind, values = text.split(":", 1)
    params = [float(v) for v in values.split(",") if v.strip()]
    return SweepAxis(kind.strip(), params)


def apply_countermeasure(kind: str, param, img: torch.Tensor, seed: int = 0) -> torch.Tensor:

    '''
    Apply an evaluation-time transformation to a (3, H, W) image. JPEG is a real codec round
    trip; the other kinds work per channel in float64. The result keeps the shape and lies in [0, 1].
    '''

    kind = ALIASES.get(kind, kind)
    param = validate_param(kind, param)
    check_image(img)

    if kind == "jpeg":
        buffer = BytesIO()
        Image.fromarray(image_to_uint8(img)).save(buffer, format="JPEG", quality=param)
        buffer.seek(0)
        with Image.open(buffer) as decoded:
            array = np.asarray(decoded.convert("RGB"), dtype=np.float64) / 255.0
        return to_image(array.transpose(2, 0, 1), img)

    array = configuration.tensor_to_np(img).astype(np.float64)

    if kind == "gaussian_blur":
        out = np.stack([ndimage.gaussian_filter(c, sigma=param, mode="reflect") for c in array])

    elif kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        out = array + param * rng.standard_normal(array.shape)

    elif kind == "median_blur":
        out = np.stack([ndimage.median_filter(c, size=param, mode="reflect") for c in array])

    else:
        levels = 2 ** param - 1
        out = np.round(array * levels) / levels

    return to_image(np.clip(out, 0.0, 1.0), img)


def to_image(array: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array)).to(dtype=like.dtype, device=like.device)


@dataclass
class SweepTable:

    """
    Metric-vs-parameter rows for the protected image and, when given, the clean baseline.
    `untransformed` holds each series' metrics without any countermeasure.
    """

    kind: str
    rows: list = field(default_factory=list)
    untransformed: dict = field(default_factory=dict)

    def series(self, name: str) -> list[dict]:
        return [r for r in self.rows if r["series"] == name]

    def metric_names(self) -> list[str]:
        names = []
        for row in self.rows + [dict(v) for v in self.untransformed.values()]:
            for key in row:
                if key not in ("series", "kind", "param") and key not in names:
                    names.append(key)
        return names

    def to_csv(self, path):

        '''
        untransformed rows are written with an empty param
        '''

        columns = ["series", "kind", "param"] + self.metric_names()

        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for name, values in self.untransformed.items():
                writer.writerow({"series": name, "kind": "none", "param": "", **values})
            for row in self.rows:
                writer.writerow(row)


@time_it("sweep")
def sweep(
    protected: torch.Tensor,
    axis: SweepAxis,
    downstream: Callable[[torch.Tensor], dict],
    clean: Optional[torch.Tensor] = None,
    seed: int = 0,
) -> SweepTable:

    '''
    Apply every parameter of the axis and tabulate downstream(image) for the protected image and,
    when given, the clean image as a separate baseline series.

    downstream maps an image to {metric: value}, e.g. animate-then-evaluate.
    '''

    inputs = {"protected": check_image(protected, "protected image")}
    if clean is not None:
        check_same_shape(protected, clean, "protected and clean image")
        inputs["clean"] = clean

    table = SweepTable(kind=axis.kind)

    for name, image in inputs.items():

        table.untransformed[name] = dict(downstream(image))

        for param in axis.params:
            transformed = apply_countermeasure(axis.kind, param, image, seed)
            row = {"series": name, "kind": axis.kind, "param": param}
            row.update(downstream(transformed))
            table.rows.append(row)

    return table


def interpolate_average_purify(images: list[torch.Tensor], clamp: bool = True) -> torch.Tensor:

    '''
    Midpoints of the four adjacent pairs of five protected images, averaged:
    (1/8, 2/8, 2/8, 2/8, 1/8) weighting of the inputs.
    '''

    if len(images) != 5:
        raise ValueError(f"purification needs exactly 5 images, got {len(images)}")

    for img in images[1:]:
        check_same_shape(images[0], img, "purification inputs")

    midpoints = [(images[i] + images[i + 1]) / 2 for i in range(4)]
    out = ((midpoints[0] + midpoints[1]) + (midpoints[2] + midpoints[3])) / 4

    return clamp_valid(out) if clamp else out
