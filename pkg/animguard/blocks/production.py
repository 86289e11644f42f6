"""
production registers the pretrained surrogates and embedders behind the extractor and embedder
registries: a diffusers VAE encoder, a CLIP vision encoder, UNet reference feature extractors
and noise predictor, the LPIPS distance, and CLIP / DINO frame embedders. Weights are loaded
from user-supplied local paths only; the heavy packages are imported when a factory runs.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import importlib
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
    register,
)
from animguard.blocks.metrics import FrameEmbedder, register_embedder
from animguard.exceptions import ResolutionError, ConfigurationError

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def require(package: str):

    try:
        return importlib.import_module(package)
    except ImportError as e:
        raise ResolutionError(f"{package} is not installed; install animguard[production] to use pretrained surrogates") from e


def require_weights(weights, role: str) -> str:

    if not weights:
        raise ConfigurationError(f"{role} needs a `weights` path to a local checkpoint directory")

    return weights


def load(module: str, cls: str, weights: str, **kwargs):

    model = getattr(require(module), cls).from_pretrained(weights, local_files_only=True, **kwargs)
    return model.to(device=configuration.device, dtype=configuration.dtype).eval()


def normalize(img: torch.Tensor, mean, std) -> torch.Tensor:
    mean = torch.tensor(mean, dtype=img.dtype, device=img.device)[:, None, None]
    std = torch.tensor(std, dtype=img.dtype, device=img.device)[:, None, None]
    return (img - mean) / std


class VaeLatentEncoder(LatentEncoder):

    """
    Posterior mean of a diffusers AutoencoderKL, scaled by the VAE scaling factor.
    """

    def __init__(self, weights: str, subfolder: str = None) -> None:
        super(VaeLatentEncoder, self).__init__()

        kwargs = {"subfolder": subfolder} if subfolder else {}
        self.vae = load("diffusers", "AutoencoderKL", weights, **kwargs)
        self.latent_channels = self.vae.config.latent_channels
        self.downsample = 2 ** (len(self.vae.config.block_out_channels) - 1)
        self.scaling_factor = getattr(self.vae.config, "scaling_factor", 1.0)

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        posterior = self.vae.encode((2 * img - 1).unsqueeze(0)).latent_dist
        return (posterior.mean * self.scaling_factor).squeeze(0)


class ClipSemanticEncoder(SemanticEncoder):

    """
    Projected image embedding of a transformers CLIPVisionModelWithProjection.
    """

    def __init__(self, weights: str, subfolder: str = None) -> None:
        super(ClipSemanticEncoder, self).__init__()

        kwargs = {"subfolder": subfolder} if subfolder else {}
        self.model = load("transformers", "CLIPVisionModelWithProjection", weights, **kwargs)
        self.resolution = self.model.config.image_size
        self.embedding_dim = self.model.config.projection_dim

    def embed(self, img: torch.Tensor) -> torch.Tensor:
        pixels = normalize(self.resize(img), CLIP_MEAN, CLIP_STD).unsqueeze(0)
        return self.model(pixel_values=pixels).image_embeds.squeeze(0)


def unet_context(unet, batch: int, like: torch.Tensor, tokens: int = 1) -> torch.Tensor:
    return torch.zeros((batch, tokens, unet.config.cross_attention_dim), dtype=like.dtype, device=like.device)


class UNetReferenceExtractor(ReferenceFeatureExtractor):

    """
    Reference-network features: the outputs of every down, mid and up block of a
    UNet2DConditionModel run on the clean latent at timestep 0, collected with forward hooks.
    """

    def __init__(self, weights: str, subfolder: str = None, timestep: int = 0) -> None:
        super(UNetReferenceExtractor, self).__init__()

        kwargs = {"subfolder": subfolder} if subfolder else {}
        self.unet = load("diffusers", "UNet2DConditionModel", weights, **kwargs)
        self.latent_channels = self.unet.config.in_channels
        self.timestep = timestep
        self.captured = []

        blocks = list(self.unet.down_blocks) + [self.unet.mid_block] + list(self.unet.up_blocks)
        for block in blocks:
            block.register_forward_hook(self.capture)

    def capture(self, module, inputs, output):
        self.captured.append(output[0] if isinstance(output, tuple) else output)

    def extract(self, latent: torch.Tensor) -> list[torch.Tensor]:

        self.captured = []
        z = latent.unsqueeze(0)
        self.unet(z, self.timestep, encoder_hidden_states=unet_context(self.unet, 1, z))
        maps, self.captured = self.captured, []
        return maps


class UNetNoisePredictor(NoisePredictor):

    """
    Noise prediction of a UNet2DConditionModel over the F frame latents. When the UNet takes more
    input channels than the latent has, the reference latent and then the pose (resized to the
    latent grid) are concatenated on the channel axis.
    """

    def __init__(self, weights: str, subfolder: str = None, latent_channels: int = 4) -> None:
        super(UNetNoisePredictor, self).__init__()

        kwargs = {"subfolder": subfolder} if subfolder else {}
        self.unet = load("diffusers", "UNet2DConditionModel", weights, **kwargs)
        self.latent_channels = latent_channels
        self.extra_channels = self.unet.config.in_channels - latent_channels

        if self.extra_channels < 0:
            raise ConfigurationError(f"UNet takes {self.unet.config.in_channels} channels, fewer than the latent's {latent_channels}")

    def predict(self, z_t: torch.Tensor, cond: FrameConditioning, t: int) -> torch.Tensor:

        frames = z_t.shape[0]
        inputs = [z_t]
        remaining = self.extra_channels

        if remaining >= self.latent_channels:
            inputs.append(cond.reference_latent.unsqueeze(0).expand(frames, -1, -1, -1))
            remaining -= self.latent_channels

        if remaining > 0:
            pose = F.interpolate(cond.pose, size=z_t.shape[-2:], mode="bilinear", align_corners=False)
            inputs.append(pose[:, :remaining])

        sample = torch.cat(inputs, dim=1)
        timesteps = torch.full((frames,), int(t), device=z_t.device, dtype=torch.long)
        return self.unet(sample, timesteps, encoder_hidden_states=unet_context(self.unet, frames, z_t)).sample


class ImagePoseConditioner(PoseConditioner):

    """
    Uses the image itself, average pooled, as the pose map; a placeholder for a keypoint or
    dense-pose estimator registered under its own name.
    """

    def __init__(self, downsample: int = 8) -> None:
        super(ImagePoseConditioner, self).__init__()
        self.downsample = downsample

    def condition_from(self, img: torch.Tensor, repeats: int) -> torch.Tensor:

        if repeats < 1:
            raise ValueError("pose repeats must be >= 1")

        pooled = F.avg_pool2d(img.unsqueeze(0), self.downsample)
        return pooled.expand(repeats, -1, -1, -1)


class LpipsDistance(PerceptualDistance):

    def __init__(self, net: str = "alex") -> None:
        super(LpipsDistance, self).__init__()
        self.model = require("lpips").LPIPS(net=net, verbose=False).to(device=configuration.device, dtype=configuration.dtype).eval()

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.model((2 * a - 1).unsqueeze(0), (2 * b - 1).unsqueeze(0)).mean()


@register("encoder", "vae")
def _vae_encoder(params, weights, seed):
    return VaeLatentEncoder(require_weights(weights, "vae encoder"), params.get("subfolder"))


@register("semantic", "clip")
def _clip_semantic(params, weights, seed):
    return ClipSemanticEncoder(require_weights(weights, "clip semantic encoder"), params.get("subfolder"))


@register("reference", "unet")
def _unet_reference(params, weights, seed):
    return UNetReferenceExtractor(require_weights(weights, "reference net"), params.get("subfolder"), params.get("timestep", 0))


@register("noise_predictor", "unet")
def _unet_noise_predictor(params, weights, seed):
    return UNetNoisePredictor(require_weights(weights, "denoising unet"), params.get("subfolder"), params.get("latent_channels", 4))


@register("pose", "image")
def _image_pose(params, weights, seed):
    return ImagePoseConditioner(params.get("downsample", 8))


@register("perceptual", "lpips")
def _lpips(params, weights, seed):
    return LpipsDistance(params.get("net", "alex"))


class ClipFrameEmbedder(FrameEmbedder):

    def __init__(self, weights: str) -> None:
        self.name = f"clip:{weights}"
        self.model = load("transformers", "CLIPVisionModelWithProjection", weights)
        self.resolution = self.model.config.image_size

    @torch.no_grad()
    def embed_frames(self, frames: list[torch.Tensor]) -> np.ndarray:
        pixels = torch.stack([normalize(resize_square(f, self.resolution), CLIP_MEAN, CLIP_STD) for f in frames])
        return configuration.tensor_to_np(self.model(pixel_values=pixels).image_embeds).astype(np.float64)


class DinoFrameEmbedder(FrameEmbedder):

    """
    CLS token of a transformers DINO / DINOv2 backbone.
    """

    def __init__(self, weights: str, resolution: int = 224) -> None:
        self.name = f"dino:{weights}"
        self.model = load("transformers", "AutoModel", weights)
        self.resolution = resolution

    @torch.no_grad()
    def embed_frames(self, frames: list[torch.Tensor]) -> np.ndarray:
        pixels = torch.stack([normalize(resize_square(f, self.resolution), IMAGENET_MEAN, IMAGENET_STD) for f in frames])
        return configuration.tensor_to_np(self.model(pixel_values=pixels).last_hidden_state[:, 0]).astype(np.float64)


def resize_square(img: torch.Tensor, size: int) -> torch.Tensor:
    return F.interpolate(img.unsqueeze(0), size=(size, size), mode="bicubic", align_corners=False).squeeze(0).clamp(0, 1)


@register_embedder("clip")
def _clip_embedder(params, weights):
    return ClipFrameEmbedder(require_weights(weights, "clip embedder"))


@register_embedder("dino")
def _dino_embedder(params, weights):
    return DinoFrameEmbedder(require_weights(weights, "dino embedder"), params.get("resolution", 224))
