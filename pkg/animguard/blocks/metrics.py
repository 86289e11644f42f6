"""
metrics is the evaluation suite for generated animations: frame-wise PSNR, SSIM and perceptual
distance, Frechet distances over image-, clip- and video-level embeddings (FID, FID-VID, FVD),
and mean pairwise cosine similarity (CLIP-I, DINO).

Embedding networks are plugins registered by name; the suite never bundles weights.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional
import numpy as np
import torch
import torch.nn.functional as F
import yaml
from scipy.linalg import eigh
from sklearn.metrics.pairwise import cosine_similarity
from animguard.blocks.tensor_core import check_image, check_same_shape, check_frames
from animguard.exceptions import ResolutionError, ConfigurationError, InsufficientDataError
from animguard.util import time_it

PSNR_CAP = 100.0
CLIP_LENGTH = 16

# metric -> (embedder role it needs, direction in which a stronger protection moves it)
METRICS = {
    "psnr": (None, "↓"),
    "ssim": (None, "↓"),
    "lpips": (None, "↑"),
    "fid": ("image", "↑"),
    "fid_vid": ("video_fid", "↑"),
    "fvd": ("video_fvd", "↑"),
    "clip_i": ("clip", "↓"),
    "dino": ("dino", "↓"),
}


class FrameEmbedder:

    """
    Maps a list of frames to an (n, d) embedding matrix. `name` identifies the network so
    embeddings of different networks are never compared.
    """

    name: str = "frame"

    def embed_frames(self, frames: list[torch.Tensor]) -> np.ndarray:
        raise NotImplementedError


class VideoEmbedder:

    """
    Maps a list of clips (each a list of CLIP_LENGTH frames) to an (n_clips, d) matrix.
    """

    name: str = "video"

    def embed_clips(self, clips: list[list[torch.Tensor]]) -> np.ndarray:
        raise NotImplementedError


# name -> factory(params: dict, weights: Optional[str]) -> FrameEmbedder | VideoEmbedder
EMBEDDERS: dict[str, Callable] = {}


def register_embedder(name: str):

    def decorator(factory):
        EMBEDDERS[name] = factory
        return factory

    return decorator


def resolve_embedder(entry):

    if isinstance(entry, str):
        entry = {"name": entry}

    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigurationError(f"embedder entry must name an implementation, got {entry!r}")

    unknown = set(entry) - {"name", "params", "weights"}
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} in embedder entry '{entry['name']}'")

    name = entry["name"]
    if name not in EMBEDDERS:
        raise ResolutionError(f"no embedder named '{name}', known: {sorted(EMBEDDERS)}")

    return EMBEDDERS[name](dict(entry.get("params") or {}), entry.get("weights"))


@dataclass
class EmbeddingSet:

    """
    Args:
        matrix: (n, d) embeddings, one row per image or clip.
        embedder: name of the producing network.
    """

    matrix: np.ndarray
    embedder: str

    def __post_init__(self):

        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))

        if self.matrix.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {self.matrix.shape}")

        if not np.all(np.isfinite(self.matrix)):
            raise ValueError(f"embeddings from {self.embedder} contain non-finite values")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def gaussian(self):

        '''
        mean and unbiased (n - 1) covariance
        '''

        if self.n < 2:
            raise InsufficientDataError(f"at least 2 embeddings are needed to fit a Gaussian, got {self.n}")

        mu = self.matrix.mean(axis=0)
        cov = np.atleast_2d(np.cov(self.matrix, rowvar=False, ddof=1))
        return mu, cov


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:

    check_same_shape(a, b, "psnr operands")

    err = float(torch.mean((a.double() - b.double()) ** 2))

    if err == 0:
        return PSNR_CAP

    return min(-10.0 * math.log10(err), PSNR_CAP)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:

    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:

    '''
    Mean local SSIM (data range 1) over all valid window positions and channels.
    '''

    check_same_shape(a, b, "ssim operands")

    if a.shape[-1] < window or a.shape[-2] < window:
        raise InsufficientDataError(f"image {tuple(a.shape[-2:])} is smaller than the {window}x{window} SSIM window")

    c1, c2 = k1 ** 2, k2 ** 2
    channels = a.shape[0]
    kernel = gaussian_window(window, sigma).to(a.device).expand(channels, 1, window, window)

    def blur(img):
        return F.conv2d(img.unsqueeze(0), kernel, groups=channels).squeeze(0)

    x, y = a.detach().double(), b.detach().double()

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov_xy = blur(x * y) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)

    return float(torch.mean(numerator / denominator))


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:

    values, vectors = eigh((matrix + matrix.T) / 2)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:

    '''
    ||mu1 - mu2||^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))

    The trace of the product root is taken as Tr((s1 cov2 s1)^(1/2)) with s1 = cov1^(1/2), which
    keeps both roots symmetric; negative eigenvalues are clipped at 0.
    '''

    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, dtype=np.float64)), np.atleast_2d(np.asarray(cov2, dtype=np.float64))

    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape != (mu1.size, mu1.size):
        raise ValueError(f"Gaussian dimensions differ: {mu1.shape}, {cov1.shape} vs {mu2.shape}, {cov2.shape}")

    s1 = psd_sqrt(cov1)
    middle = s1 @ cov2 @ s1
    eigenvalues = np.clip(eigh((middle + middle.T) / 2, eigvals_only=True), 0.0, None)
    trace_root = float(np.sum(np.sqrt(eigenvalues)))

    diff = mu1 - mu2
    value = float(diff @ diff) + float(np.trace(cov1) + np.trace(cov2)) - 2.0 * trace_root

    return max(value, 0.0)


def fid_family(ref: EmbeddingSet, gen: EmbeddingSet) -> float:

    '''
    Frechet distance between Gaussian fits of two embedding sets of the same network. Serves
    FID on frame embeddings and FID-VID / FVD on clip embeddings.
    '''

    if ref.embedder != gen.embedder:
        raise ValueError(f"cannot compare embeddings of {ref.embedder} with {gen.embedder}")

    mu1, cov1 = ref.gaussian()
    mu2, cov2 = gen.gaussian()
    return frechet_distance(mu1, cov1, mu2, cov2)


def chunk_frames(frames: list, size: int = CLIP_LENGTH) -> list[list]:

    '''
    consecutive non-overlapping clips of `size` frames; trailing frames that do not fill a clip are dropped
    '''

    if size < 1:
        raise ValueError("clip size must be >= 1")

    count = len(frames) // size
    return [list(frames[i * size:(i + 1) * size]) for i in range(count)]


def cosine_similarity_mean(ref: EmbeddingSet, gen: EmbeddingSet) -> float:

    for s in (ref, gen):
        if np.any(np.linalg.norm(s.matrix, axis=1) == 0):
            raise ValueError(f"zero embedding vector in set from {s.embedder}")

    return float(np.mean(cosine_similarity(ref.matrix, gen.matrix)))


@dataclass
class MetricReport:

    """
    Args:
        values: metric -> aggregate value.
        per_frame: metric -> per-frame values for the frame-wise metrics.
        skipped: metric -> reason the metric could not be computed.
        directions: metric -> direction a stronger protection moves the metric.
    """

    values: dict = field(default_factory=dict)
    per_frame: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    directions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "values": {k: float(v) for k, v in self.values.items()},
            "per_frame": {k: [float(x) for x in v] for k, v in self.per_frame.items()},
            "skipped": dict(self.skipped),
            "directions": dict(self.directions),
        }

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True, allow_unicode=True)

    def __getitem__(self, metric):
        return self.values[metric]

    def __contains__(self, metric):
        return metric in self.values


def align_reference(reference, generated: list[torch.Tensor]) -> list[torch.Tensor]:

    if isinstance(reference, torch.Tensor):
        reference = [check_image(reference, "reference")]

    check_frames(reference, "reference")

    if tuple(reference[0].shape) != tuple(generated[0].shape):
        raise ValueError(f"reference frames are {tuple(reference[0].shape)}, generated frames are {tuple(generated[0].shape)}")

    if len(reference) == 1:
        return [reference[0]] * len(generated)

    if len(reference) != len(generated):
        raise ValueError(f"reference has {len(reference)} frames, generated has {len(generated)}")

    return list(reference)


def embed_frame_set(embedder: FrameEmbedder, frames) -> EmbeddingSet:
    return EmbeddingSet(embedder.embed_frames(frames), embedder.name)


def embed_clip_set(embedder: VideoEmbedder, frames) -> EmbeddingSet:

    clips = chunk_frames(frames)
    if len(clips) < 2:
        raise InsufficientDataError(f"{len(frames)} frames give {len(clips)} clips of {CLIP_LENGTH}, at least 2 are needed")

    return EmbeddingSet(embedder.embed_clips(clips), embedder.name)


@time_it("evaluate")
def evaluate(
    reference,
    generated: list[torch.Tensor],
    embedders: Optional[dict] = None,
    pd=None,
    requested: Optional[list[str]] = None,
) -> MetricReport:

    '''
    Compute the requested metrics of generated frames against a reference image or frame sequence.

    Args:
        reference: (3, H, W) image or list of frames aligned with `generated`.
        generated: non-empty list of frames.
        embedders: role -> embedder, roles: image, clip, dino (FrameEmbedder), video_fid, video_fvd (VideoEmbedder).
        pd: PerceptualDistance for the lpips metric.
        requested: metric names, default all of METRICS.

    A metric whose embedder is missing or whose input is too small is reported as skipped with
    the reason; the other metrics are still computed.
    Frames of a different size than the reference raise ValueError.
    '''

    embedders = embedders or {}
    requested = list(requested or METRICS)

    unknown = [m for m in requested if m not in METRICS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}, choose from {list(METRICS)}")

    generated = check_frames(list(generated), "generated")
    aligned = align_reference(reference, generated)
    reference_frames = [reference] if isinstance(reference, torch.Tensor) else list(reference)

    report = MetricReport()

    for metric in requested:

        role, direction = METRICS[metric]
        report.directions[metric] = direction

        try:
            if metric in ("psnr", "ssim", "lpips"):

                if metric == "lpips":
                    if pd is None:
                        report.skipped[metric] = "no perceptual distance configured"
                        continue
                    with torch.no_grad():
                        values = [float(pd.distance(g, r)) for g, r in zip(generated, aligned)]
                else:
                    fn = psnr if metric == "psnr" else ssim
                    values = [fn(g, r) for g, r in zip(generated, aligned)]

                report.per_frame[metric] = values
                report.values[metric] = float(np.mean(values))
                continue

            if role not in embedders or embedders[role] is None:
                report.skipped[metric] = f"no {role} embedder configured"
                continue

            embedder = embedders[role]

            with torch.no_grad():
                if metric in ("fid", "clip_i", "dino"):
                    ref_set = embed_frame_set(embedder, reference_frames)
                    gen_set = embed_frame_set(embedder, generated)
                else:
                    ref_set = embed_clip_set(embedder, reference_frames)
                    gen_set = embed_clip_set(embedder, generated)

            if metric in ("clip_i", "dino"):
                report.values[metric] = cosine_similarity_mean(ref_set, gen_set)
            else:
                report.values[metric] = fid_family(ref_set, gen_set)

        except InsufficientDataError as e:
            report.skipped[metric] = str(e)

    return report


def image_similarity(x: torch.Tensor, x_p: torch.Tensor, pd=None) -> dict:

    '''
    invisibility of a protection: psnr, ssim and perceptual distance of the protected image against its original
    '''

    check_same_shape(x, x_p, "original and protected image")

    result = {"psnr": psnr(x_p, x)}

    if min(x.shape[-2:]) >= 11:
        result["ssim"] = ssim(x_p, x)

    if pd is not None:
        with torch.no_grad():
            result["lpips"] = float(pd.distance(x_p, x))

    return result
