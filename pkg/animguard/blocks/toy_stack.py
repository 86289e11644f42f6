"""
toy_stack provides small deterministic stand-ins for every pretrained surrogate: seeded linear
maps composed with tanh, so gradients are exact and the whole protect pipeline runs at desk
scale (8x8 images, 4-channel 4x4 latents, 16-dim semantic embeddings). It also carries toy
embedders for the metric suite and a toy animator used as the downstream generator in smoke
checks.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import math
import numpy as np
import torch
import torch.nn.functional as F
from animguard import configuration
from animguard.blocks.extractors import (
    LatentEncoder,
    SemanticEncoder,
    ReferenceFeatureExtractor,
    NoisePredictor,
    PoseConditioner,
    PerceptualDistance,
    FrameConditioning,
    ExtractorBundle,
    register,
    register_preset,
)
from animguard.blocks.metrics import FrameEmbedder, VideoEmbedder, register_embedder


def seeded_weight(generator: torch.Generator, *shape, fan_in: int = None) -> torch.nn.Parameter:

    '''
    standard normal weights scaled by 1/sqrt(fan_in), drawn on cpu so every device gets the same values
    '''

    fan_in = fan_in or shape[-1]
    value = torch.randn(*shape, generator=generator, dtype=torch.float64) / math.sqrt(fan_in)
    return torch.nn.Parameter(value.to(dtype=configuration.dtype, device=configuration.device), requires_grad=False)


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed))
    return generator


class ToyLatentEncoder(LatentEncoder):

    """
    z = tanh(conv_{2x2, stride 2}(2x - 1) + b): 3 x H x W -> C x H/2 x W/2
    """

    def __init__(self, seed: int = 0, latent_channels: int = 4, downsample: int = 2) -> None:
        super(ToyLatentEncoder, self).__init__()

        if latent_channels < 1:
            raise ValueError("latent_channels must be >= 1")

        self.latent_channels = latent_channels
        self.downsample = downsample

        generator = make_generator(seed)
        fan_in = 3 * downsample * downsample
        self.weight = seeded_weight(generator, latent_channels, 3, downsample, downsample, fan_in=fan_in)
        self.bias = seeded_weight(generator, latent_channels, fan_in=4)

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        pre = F.conv2d((2 * img - 1).unsqueeze(0), self.weight, self.bias, stride=self.downsample)
        return torch.tanh(pre).squeeze(0)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:

        '''
        least-squares inverse of encode per patch; exact on the encoder's range up to the rank deficit
        '''

        pre = torch.atanh(latent.clamp(-1 + 1e-6, 1 - 1e-6)) - self.bias[:, None, None]
        w_flat = self.weight.reshape(self.latent_channels, -1)
        w_pinv = torch.linalg.pinv(w_flat)  # (3*d*d, C)
        weight_t = w_pinv.T.reshape(self.latent_channels, 3, self.downsample, self.downsample)
        patches = F.conv_transpose2d(pre.unsqueeze(0), weight_t, stride=self.downsample).squeeze(0)
        return ((patches + 1) / 2).clamp(0, 1)


class IdentityLatentEncoder(LatentEncoder):

    """
    The image itself as latent; used for closed-form checks of the latent loss.
    """

    latent_channels = 3
    downsample = 1

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        return img


class ToySemanticEncoder(SemanticEncoder):

    def __init__(self, seed: int = 0, embedding_dim: int = 16, resolution: int = 16) -> None:
        super(ToySemanticEncoder, self).__init__()

        self.embedding_dim = embedding_dim
        self.resolution = resolution

        generator = make_generator(seed + 1000)
        fan_in = 3 * resolution * resolution
        self.weight = seeded_weight(generator, embedding_dim, fan_in)
        self.bias = seeded_weight(generator, embedding_dim, fan_in=4)

    def embed(self, img: torch.Tensor) -> torch.Tensor:
        flat = (2 * self.resize(img) - 1).reshape(-1)
        return torch.tanh(self.weight @ flat + self.bias)


class ToyReferenceExtractor(ReferenceFeatureExtractor):

    """
    Two feature maps: tanh(conv1x1(z)) and tanh(conv3x3(first)).
    """

    def __init__(self, seed: int = 0, latent_channels: int = 4, hidden: int = 8) -> None:
        super(ToyReferenceExtractor, self).__init__()

        self.latent_channels = latent_channels

        generator = make_generator(seed + 2000)
        self.w1 = seeded_weight(generator, hidden, latent_channels, 1, 1, fan_in=latent_channels)
        self.w2 = seeded_weight(generator, hidden, hidden, 3, 3, fan_in=9 * hidden)

    def extract(self, latent: torch.Tensor) -> list[torch.Tensor]:
        first = torch.tanh(F.conv2d(latent.unsqueeze(0), self.w1))
        second = torch.tanh(F.conv2d(first, self.w2, padding=1))
        return [first.squeeze(0), second.squeeze(0)]


class ToyNoisePredictor(NoisePredictor):

    """
    eps = tanh(A z_t + B z_ref + P pose + s * t / T_train), all 1x1 maps.
    """

    def __init__(self, seed: int = 0, latent_channels: int = 4, pose_channels: int = 1, train_steps: int = 1000) -> None:
        super(ToyNoisePredictor, self).__init__()

        self.latent_channels = latent_channels
        self.train_steps = train_steps

        generator = make_generator(seed + 3000)
        self.a = seeded_weight(generator, latent_channels, latent_channels, 1, 1, fan_in=latent_channels)
        self.b = seeded_weight(generator, latent_channels, latent_channels, 1, 1, fan_in=latent_channels)
        self.p = seeded_weight(generator, latent_channels, pose_channels, 1, 1, fan_in=pose_channels)
        self.s = seeded_weight(generator, latent_channels, fan_in=1)

    def predict(self, z_t: torch.Tensor, cond: FrameConditioning, t: int) -> torch.Tensor:

        pose = cond.pose
        if pose.shape[-2:] != z_t.shape[-2:]:
            pose = F.interpolate(pose, size=z_t.shape[-2:], mode="bilinear", align_corners=False)

        pre = (
            F.conv2d(z_t, self.a)
            + F.conv2d(cond.reference_latent.unsqueeze(0), self.b)
            + F.conv2d(pose, self.p)
            + self.s[None, :, None, None] * (float(t) / self.train_steps)
        )
        return torch.tanh(pre)


class ToyPoseConditioner(PoseConditioner):

    """
    A soft silhouette: grayscale, average pooled, squashed; repeated F times -> (F, 1, h, w).
    """

    def __init__(self, downsample: int = 2) -> None:
        super(ToyPoseConditioner, self).__init__()
        self.downsample = downsample

    def condition_from(self, img: torch.Tensor, repeats: int) -> torch.Tensor:

        if repeats < 1:
            raise ValueError("pose repeats must be >= 1")

        gray = img.mean(dim=0, keepdim=True).unsqueeze(0)
        pooled = F.avg_pool2d(gray, self.downsample) if self.downsample > 1 else gray
        pose = torch.tanh(4 * (pooled - 0.5))
        return pose.expand(repeats, -1, -1, -1)


class ToyPerceptualDistance(PerceptualDistance):

    """
    LPIPS-shaped distance: channel-normalized conv features, squared difference averaged
    over two layers.
    """

    def __init__(self, seed: int = 0, hidden: int = 8) -> None:
        super(ToyPerceptualDistance, self).__init__()

        generator = make_generator(seed + 4000)
        self.w1 = seeded_weight(generator, hidden, 3, 3, 3, fan_in=27)
        self.w2 = seeded_weight(generator, hidden, hidden, 3, 3, fan_in=9 * hidden)

    def features(self, img: torch.Tensor) -> list[torch.Tensor]:
        first = torch.tanh(F.conv2d((2 * img - 1).unsqueeze(0), self.w1, padding=1))
        second = torch.tanh(F.conv2d(first, self.w2, padding=1))
        return [first, second]

    @staticmethod
    def normalize(feature: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
        norm = torch.sqrt(torch.sum(feature ** 2, dim=1, keepdim=True) + eps)
        return feature / norm

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:

        total = 0
        features_a, features_b = self.features(a), self.features(b)

        for fa, fb in zip(features_a, features_b):
            total = total + torch.mean((self.normalize(fa) - self.normalize(fb)) ** 2)

        return total / len(features_a)


def build_toy_stack(seed: int = 0, latent_channels: int = 4, references: int = 3) -> ExtractorBundle:

    '''
    Deterministic toy bundle; the same seed always yields parameter-identical extractors.
    '''

    if latent_channels < 1:
        raise ValueError("latent_channels must be >= 1")

    return ExtractorBundle(
        encoder=ToyLatentEncoder(seed, latent_channels),
        semantic=ToySemanticEncoder(seed),
        references=tuple(ToyReferenceExtractor(seed + k + 1, latent_channels) for k in range(references)),
        noise_predictor=ToyNoisePredictor(seed, latent_channels),
        pose=ToyPoseConditioner(downsample=2),
        perceptual=ToyPerceptualDistance(seed),
        record={"preset": "toy", "seed": seed},
    ).eval()


@register_preset("toy-default")
def toy_default_preset(seed: int) -> ExtractorBundle:
    return build_toy_stack(seed, latent_channels=4)


@register("encoder", "toy")
def _toy_encoder(params, weights, seed):
    return ToyLatentEncoder(params.get("seed", seed), params.get("latent_channels", 4), params.get("downsample", 2))


@register("encoder", "identity")
def _identity_encoder(params, weights, seed):
    return IdentityLatentEncoder()


@register("semantic", "toy")
def _toy_semantic(params, weights, seed):
    return ToySemanticEncoder(params.get("seed", seed), params.get("embedding_dim", 16), params.get("resolution", 16))


@register("reference", "toy")
def _toy_reference(params, weights, seed):
    return ToyReferenceExtractor(params.get("seed", seed), params.get("latent_channels", 4), params.get("hidden", 8))


@register("noise_predictor", "toy")
def _toy_noise_predictor(params, weights, seed):
    return ToyNoisePredictor(params.get("seed", seed), params.get("latent_channels", 4), train_steps=params.get("train_steps", 1000))


@register("pose", "toy")
def _toy_pose(params, weights, seed):
    return ToyPoseConditioner(params.get("downsample", 2))


@register("perceptual", "toy")
def _toy_perceptual(params, weights, seed):
    return ToyPerceptualDistance(params.get("seed", seed))


class ToyAnimator:

    """
    Toy downstream animation: extract the latent of the reference image, drift it by fixed
    per-frame offsets standing in for pose motion, decode every frame back to pixels.

    Args:
        encoder: ToyLatentEncoder, the extractor whose decoder renders frames.
        seed: int, seed of the per-frame offsets.
        motion: float, scale of the per-frame latent drift.
    """

    def __init__(self, encoder: ToyLatentEncoder, seed: int = 0, motion: float = 0.1) -> None:
        self.encoder = encoder
        self.seed = seed
        self.motion = motion

    @torch.no_grad()
    def animate(self, image: torch.Tensor, frames: int = 16) -> list[torch.Tensor]:

        latent = self.encoder.encode(image)
        generator = make_generator(self.seed + 5000)
        offsets = torch.randn((frames, *latent.shape), generator=generator, dtype=torch.float64)
        offsets = offsets.to(dtype=latent.dtype, device=latent.device)

        return [self.encoder.decode(torch.tanh(torch.atanh(latent.clamp(-0.999, 0.999)) + self.motion * offsets[f])) for f in range(frames)]


class ToyFrameEmbedder(FrameEmbedder):

    """
    tanh of a seeded projection of the 8x8 average-pooled frame.
    """

    def __init__(self, seed: int = 0, dim: int = 8, name: str = "toy") -> None:
        self.name = name
        generator = np.random.default_rng(seed + 6000)
        self.weight = generator.standard_normal((dim, 3 * 8 * 8)) / math.sqrt(3 * 8 * 8)

    def embed_frames(self, frames: list[torch.Tensor]) -> np.ndarray:

        pooled = [
            configuration.tensor_to_np(F.adaptive_avg_pool2d(frame.unsqueeze(0), (8, 8))).astype(np.float64).reshape(-1)
            for frame in frames
        ]
        return np.tanh((2 * np.stack(pooled) - 1) @ self.weight.T)


class ToyVideoEmbedder(VideoEmbedder):

    """
    Clip embedding: mean and last-minus-first of the toy frame embeddings.
    """

    def __init__(self, seed: int = 0, dim: int = 8, name: str = "toy-video") -> None:
        self.name = name
        self.frame_embedder = ToyFrameEmbedder(seed, dim)

    def embed_clips(self, clips: list[list[torch.Tensor]]) -> np.ndarray:

        rows = []
        for clip in clips:
            frames = self.frame_embedder.embed_frames(clip)
            rows.append(np.concatenate([frames.mean(axis=0), frames[-1] - frames[0]]))
        return np.stack(rows)


@register_embedder("toy")
def _toy_frame_embedder(params, weights):
    return ToyFrameEmbedder(params.get("seed", 0), params.get("dim", 8), name=params.get("name", "toy"))


@register_embedder("toy-video")
def _toy_video_embedder(params, weights):
    return ToyVideoEmbedder(params.get("seed", 0), params.get("dim", 8), name=params.get("name", "toy-video"))
