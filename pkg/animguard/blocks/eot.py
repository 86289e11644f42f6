"""
eot draws one random image transformation per PGD iteration and applies it, differentiably, to
the protected image before the loss is evaluated, so the perturbation survives blur, JPEG,
noise and resizing.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache
import numpy as np
import torch
import torch.nn.functional as F
from scipy.fft import dct

TRANSFORM_KINDS = ("gaussian_blur", "jpeg_compress", "gaussian_noise", "random_resize", "identity")

# luminance and chrominance quantization tables of the JPEG standard (quality 50)
Y_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
C_TABLE = np.full((8, 8), 99.0)
C_TABLE[:4, :4] = np.array([[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]])

RGB_TO_YCBCR = np.array([[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]])
YCBCR_SHIFT = np.array([0.0, 128.0, 128.0])


@dataclass
class EotSettings:

    """
    Args:
        enabled: bool, when False every iteration uses the identity transform.
        kinds: transformation kinds drawn from, uniformly.
        blur_sigma: (low, high) Gaussian blur sigma in pixels.
        jpeg_quality: (low, high) inclusive JPEG quality.
        noise_std: (low, high) additive Gaussian noise std.
        resize_scale: (low, high) intermediate resize factor.
    """

    enabled: bool = True
    kinds: tuple = TRANSFORM_KINDS
    blur_sigma: tuple = (0.5, 2.0)
    jpeg_quality: tuple = (50, 95)
    noise_std: tuple = (0.01, 0.05)
    resize_scale: tuple = (0.5, 1.5)

    def __post_init__(self):

        self.kinds = tuple(self.kinds)
        unknown = [k for k in self.kinds if k not in TRANSFORM_KINDS]
        if unknown or len(self.kinds) == 0:
            raise ValueError(f"eot kinds must be a non-empty subset of {TRANSFORM_KINDS}, got {self.kinds}")

        for name in ("blur_sigma", "jpeg_quality", "noise_std", "resize_scale"):
            low, high = getattr(self, name)
            if low > high or low < 0:
                raise ValueError(f"eot range {name} must satisfy 0 <= low <= high, got ({low}, {high})")
            setattr(self, name, (low, high))

        if self.jpeg_quality[0] < 1 or self.jpeg_quality[1] > 100:
            raise ValueError("jpeg quality range must lie in [1, 100]")

        if self.resize_scale[0] <= 0:
            raise ValueError("resize scale must be positive")

    def to_dict(self) -> dict:
        values = asdict(self)
        values["kinds"] = list(self.kinds)
        for name in ("blur_sigma", "jpeg_quality", "noise_std", "resize_scale"):
            values[name] = list(values[name])
        return values


@dataclass(frozen=True)
class TransformSpec:

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}


IDENTITY = TransformSpec("identity")


def uniform(rng: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand((), generator=rng, dtype=torch.float64))


def sample_transform(rng: torch.Generator, settings: EotSettings = None) -> TransformSpec:

    '''
    Draw the kind uniformly from the configured kinds, then its parameters uniformly from their ranges.
    '''

    settings = settings or EotSettings()

    if not settings.enabled:
        return IDENTITY

    kind = settings.kinds[int(torch.randint(0, len(settings.kinds), (1,), generator=rng))]

    if kind == "gaussian_blur":
        return TransformSpec(kind, {"sigma": uniform(rng, *settings.blur_sigma)})

    if kind == "jpeg_compress":
        low, high = settings.jpeg_quality
        return TransformSpec(kind, {"quality": int(torch.randint(int(low), int(high) + 1, (1,), generator=rng))})

    if kind == "gaussian_noise":
        std = uniform(rng, *settings.noise_std)
        seed = int(torch.randint(0, 2 ** 31 - 1, (1,), generator=rng))
        return TransformSpec(kind, {"std": std}, seed)

    if kind == "random_resize":
        return TransformSpec(kind, {"scale": uniform(rng, *settings.resize_scale)})

    return IDENTITY


def apply_transform(spec: TransformSpec, img: torch.Tensor) -> torch.Tensor:

    '''
    Apply the transform to a (3, H, W) image. The output keeps the input shape and lies in [0, 1]
    (identity returns its input untouched); every kind has a gradient path to the input.
    '''

    if spec.kind == "identity":
        return img

    if spec.kind == "gaussian_blur":
        return torch.clamp(gaussian_blur(img, spec.params["sigma"]), 0.0, 1.0)

    if spec.kind == "jpeg_compress":
        return torch.clamp(differentiable_jpeg(img, spec.params["quality"]), 0.0, 1.0)

    if spec.kind == "gaussian_noise":
        generator = torch.Generator(device="cpu")
        generator.manual_seed(spec.seed)
        noise = torch.randn(img.shape, generator=generator, dtype=torch.float64)
        return torch.clamp(img + spec.params["std"] * noise.to(dtype=img.dtype, device=img.device), 0.0, 1.0)

    if spec.kind == "random_resize":
        return torch.clamp(resize_round_trip(img, spec.params["scale"]), 0.0, 1.0)

    raise ValueError(f"unsupported transform kind '{spec.kind}', choose from {TRANSFORM_KINDS}")


def gaussian_kernel_1d(sigma: float) -> torch.Tensor:

    radius = max(1, int(math.ceil(3 * sigma)))
    coords = torch.arange(-radius, radius + 1, dtype=torch.float64)
    kernel = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_blur(img: torch.Tensor, sigma: float) -> torch.Tensor:

    '''
    separable Gaussian blur with reflected borders (replicated when the image is too small to reflect)
    '''

    if sigma <= 0:
        raise ValueError(f"blur sigma must be positive, got {sigma}")

    kernel = gaussian_kernel_1d(sigma).to(dtype=img.dtype, device=img.device)
    radius = kernel.numel() // 2
    channels = img.shape[0]

    mode = "reflect" if radius < min(img.shape[-2:]) else "replicate"
    x = F.pad(img.unsqueeze(0), (radius, radius, radius, radius), mode=mode)

    horizontal = kernel.view(1, 1, 1, -1).expand(channels, 1, 1, kernel.numel())
    vertical = kernel.view(1, 1, -1, 1).expand(channels, 1, kernel.numel(), 1)

    x = F.conv2d(x, horizontal, groups=channels)
    x = F.conv2d(x, vertical, groups=channels)
    return x.squeeze(0)


def resize_round_trip(img: torch.Tensor, scale: float) -> torch.Tensor:

    height, width = img.shape[-2:]
    size = (max(1, int(round(height * scale))), max(1, int(round(width * scale))))

    x = F.interpolate(img.unsqueeze(0), size=size, mode="bilinear", align_corners=False)
    x = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=False)
    return x.squeeze(0)


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:

    '''
    orthonormal 8-point DCT-II basis; block coefficients are D @ B @ D.T
    '''

    return dct(np.eye(8), type=2, norm="ortho", axis=0)


def quality_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:

    '''
    standard quality scaling of the base tables
    '''

    if not 1 <= quality <= 100:
        raise ValueError(f"jpeg quality must lie in [1, 100], got {quality}")

    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    y = np.clip(np.floor((Y_TABLE * scale + 50.0) / 100.0), 1, None)
    c = np.clip(np.floor((C_TABLE * scale + 50.0) / 100.0), 1, None)
    return y, c


def straight_through_round(x: torch.Tensor) -> torch.Tensor:
    return x + (torch.round(x) - x).detach()


def differentiable_jpeg(img: torch.Tensor, quality: int) -> torch.Tensor:

    '''
    JPEG surrogate: YCbCr, 8x8 DCT, quantize with straight-through rounding, dequantize, inverse
    DCT, RGB. No chroma subsampling. The image is edge-padded to a multiple of 8 and cropped back.
    '''

    y_table, c_table = quality_tables(quality)
    as_tensor = lambda a: torch.as_tensor(a, dtype=img.dtype, device=img.device)

    height, width = img.shape[-2:]
    pad_h, pad_w = (-height) % 8, (-width) % 8
    x = F.pad(img.unsqueeze(0), (0, pad_w, 0, pad_h), mode="replicate").squeeze(0) if pad_h or pad_w else img

    to_ycbcr = as_tensor(RGB_TO_YCBCR)
    shift = as_tensor(YCBCR_SHIFT)[:, None, None]
    ycbcr = torch.einsum("ij,jhw->ihw", to_ycbcr, 255.0 * x) + shift - 128.0

    ph, pw = ycbcr.shape[-2:]
    blocks = ycbcr.reshape(3, ph // 8, 8, pw // 8, 8).permute(0, 1, 3, 2, 4)

    d = as_tensor(dct_matrix())
    coefficients = d @ blocks @ d.T

    tables = torch.stack([as_tensor(y_table), as_tensor(c_table), as_tensor(c_table)])[:, None, None]
    coefficients = straight_through_round(coefficients / tables) * tables

    blocks = d.T @ coefficients @ d
    ycbcr = blocks.permute(0, 1, 3, 2, 4).reshape(3, ph, pw) + 128.0 - shift

    rgb = torch.einsum("ij,jhw->ihw", torch.linalg.inv(to_ycbcr), ycbcr) / 255.0
    return rgb[:, :height, :width]


def eot_settings_from(values: dict) -> EotSettings:

    '''
    build settings from the eot config section, converting yaml lists to tuples
    '''

    values = dict(values or {})
    for name in ("kinds", "blur_sigma", "jpeg_quality", "noise_std", "resize_scale"):
        if name in values and values[name] is not None:
            values[name] = tuple(values[name])
    return EotSettings(**values)
