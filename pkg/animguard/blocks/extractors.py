"""
extractors defines the contracts of every pretrained surrogate the protective optimization
differentiates through (latent encoder, semantic encoder, reference feature extractors, noise
predictor, pose conditioner, perceptual distance), the registry that maps configured names to
implementations, and the ExtractorBundle handed to the losses.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

from dataclasses import dataclass, field, replace
from typing import Callable
import torch
import torch.nn.functional as F
from animguard.exceptions import ResolutionError, ConfigurationError

ROLES = ("encoder", "semantic", "reference", "noise_predictor", "pose", "perceptual")


class Extractor(torch.nn.Module):

    """
    Base of all surrogate contracts. Implementations are deterministic at inference.
    """

    def input_gradient(self, scalar_fn: Callable[[object], torch.Tensor], inp: torch.Tensor) -> torch.Tensor:

        '''
        gradient of scalar_fn(self(inp)) with respect to inp
        '''

        inp = inp.detach().clone().requires_grad_(True)
        value = scalar_fn(self(inp))
        return torch.autograd.grad(value, inp)[0]


class LatentEncoder(Extractor):

    """
    Maps an image (3, H, W) in [0, 1] to a latent (C, H / downsample, W / downsample).
    """

    latent_channels: int = 4
    downsample: int = 8

    def latent_shape(self, image_shape) -> tuple[int, int, int]:
        _, height, width = image_shape
        return (self.latent_channels, height // self.downsample, width // self.downsample)

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.encode(img)


class SemanticEncoder(Extractor):

    """
    Maps an image to an embedding vector. The resize to the working resolution is part of the
    contract and is differentiable (bilinear).
    """

    resolution: int = 224
    embedding_dim: int = 768

    def resize(self, img: torch.Tensor) -> torch.Tensor:

        if img.shape[-2:] == (self.resolution, self.resolution):
            return img

        return F.interpolate(
            img.unsqueeze(0), size=(self.resolution, self.resolution), mode="bilinear", align_corners=False
        ).squeeze(0)

    def embed(self, img: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.embed(img)


class ReferenceFeatureExtractor(Extractor):

    """
    Maps a latent to the list of every feature map the implementation exposes.
    """

    latent_channels: int = 4

    def extract(self, latent: torch.Tensor) -> list[torch.Tensor]:
        raise NotImplementedError

    def forward(self, latent: torch.Tensor) -> list[torch.Tensor]:
        return self.extract(latent)


@dataclass
class FrameConditioning:

    """
    Conditioning for the noise predictor, all derived from the protected image.

    image: (3, H, W) protected image
    reference_latent: (C, h, w) latent of the protected image
    pose: (F, ...) pose sequence, the image's own pose repeated F times
    """

    image: torch.Tensor
    reference_latent: torch.Tensor
    pose: torch.Tensor

    @property
    def frames(self) -> int:
        return self.pose.shape[0]


class NoisePredictor(Extractor):

    """
    Predicts the noise of F noisy frame latents (F, C, h, w) at a training timestep.
    """

    latent_channels: int = 4

    def predict(self, z_t: torch.Tensor, cond: FrameConditioning, t: int) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, z_t: torch.Tensor, cond: FrameConditioning, t: int) -> torch.Tensor:
        return self.predict(z_t, cond, t)


class PoseConditioner(Extractor):

    """
    Extracts the pose of an image and repeats it F times.
    """

    def condition_from(self, img: torch.Tensor, repeats: int) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, img: torch.Tensor, repeats: int) -> torch.Tensor:
        return self.condition_from(img, repeats)


class PerceptualDistance(Extractor):

    """
    Non-negative symmetric distance between two images with distance(a, a) = 0.
    """

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.distance(a, b)


@dataclass(frozen=True)
class ExtractorBundle:

    """
    The surrogate set a protect run differentiates through. Immutable after resolution.
    """

    encoder: LatentEncoder
    semantic: SemanticEncoder
    references: tuple
    noise_predictor: NoisePredictor
    pose: PoseConditioner
    perceptual: PerceptualDistance
    record: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.references)

    def modules(self):
        return [self.encoder, self.semantic, *self.references, self.noise_predictor, self.pose, self.perceptual]

    def eval(self):
        for module in self.modules():
            module.eval()
            for p in module.parameters():
                p.requires_grad_(False)
        return self


# role -> name -> factory(params: dict, weights: Optional[str], seed: int) -> Extractor
REGISTRY: dict[str, dict[str, Callable]] = {role: {} for role in ROLES}
PRESETS: dict[str, Callable] = {}


def register(role: str, name: str):

    if role not in REGISTRY:
        raise ValueError(f"unknown extractor role {role}, choose from {ROLES}")

    def decorator(factory):
        REGISTRY[role][name] = factory
        return factory

    return decorator


def register_preset(name: str):

    def decorator(factory):
        PRESETS[name] = factory
        return factory

    return decorator


def resolve_extractor(role: str, entry, seed: int = 0) -> Extractor:

    '''
    entry: str name, or dict {name, params, weights}
    '''

    if isinstance(entry, str):
        entry = {"name": entry}

    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigurationError(f"extractor entry for {role} must name an implementation, got {entry!r}")

    unknown = set(entry) - {"name", "params", "weights"}
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} in extractor entry for {role}")

    name = entry["name"]
    if name not in REGISTRY[role]:
        raise ResolutionError(f"no {role} implementation named '{name}', known: {sorted(REGISTRY[role])}")

    return REGISTRY[role][name](dict(entry.get("params") or {}), entry.get("weights"), seed)


def resolve_bundle(spec) -> ExtractorBundle:

    '''
    Bind the descriptor to concrete implementations.

    spec: a preset name (e.g. "toy-default"), or a mapping with optional `preset` and `seed`
        plus one entry per role; `references` is a non-empty list of entries.

    Every role is resolved before anything is returned, so failures never leave a partial bundle.
    '''

    if isinstance(spec, str):
        spec = {"preset": spec}

    spec = dict(spec or {})
    seed = int(spec.pop("seed", 0) or 0)
    preset = spec.pop("preset", None)

    if preset is not None:
        if preset not in PRESETS:
            raise ResolutionError(f"no extractor preset named '{preset}', known: {sorted(PRESETS)}")
        if any(spec.get(key) is not None for key in spec):
            raise ConfigurationError("an extractor preset cannot be combined with per-role entries")
        bundle = PRESETS[preset](seed)
        return replace(bundle, record={"preset": preset, "seed": seed}).eval()

    unknown = set(spec) - {"encoder", "semantic", "references", "noise_predictor", "pose", "perceptual"}
    if unknown:
        raise ConfigurationError(f"unknown extractor roles {sorted(unknown)}")

    missing = [role for role in ("encoder", "semantic", "references", "noise_predictor", "pose", "perceptual") if not spec.get(role)]
    if missing:
        raise ConfigurationError(f"extractor descriptor is missing roles {missing}")

    references = spec["references"]
    if not isinstance(references, (list, tuple)) or len(references) < 1:
        raise ConfigurationError("at least one reference feature extractor is required (K >= 1)")

    built = {
        "encoder": resolve_extractor("encoder", spec["encoder"], seed),
        "semantic": resolve_extractor("semantic", spec["semantic"], seed),
        "references": tuple(resolve_extractor("reference", entry, seed + k + 1) for k, entry in enumerate(references)),
        "noise_predictor": resolve_extractor("noise_predictor", spec["noise_predictor"], seed),
        "pose": resolve_extractor("pose", spec["pose"], seed),
        "perceptual": resolve_extractor("perceptual", spec["perceptual"], seed),
    }

    check_shape_contract(built)

    record = {"seed": seed}
    for role in ("encoder", "semantic", "noise_predictor", "pose", "perceptual"):
        entry = spec[role]
        record[role] = entry if isinstance(entry, str) else entry["name"]
    record["references"] = [e if isinstance(e, str) else e["name"] for e in references]

    return ExtractorBundle(**built, record=record).eval()


def check_shape_contract(built: dict):

    channels = built["encoder"].latent_channels

    for k, ref in enumerate(built["references"]):
        if getattr(ref, "latent_channels", channels) != channels:
            raise ConfigurationError(
                f"reference extractor {k} expects {ref.latent_channels} latent channels, encoder produces {channels}"
            )

    predictor = built["noise_predictor"]
    if getattr(predictor, "latent_channels", channels) != channels:
        raise ConfigurationError(
            f"noise predictor expects {predictor.latent_channels} latent channels, encoder produces {channels}"
        )
