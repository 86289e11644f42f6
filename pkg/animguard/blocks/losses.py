"""
losses implements the protective objective: latent-space deviation, semantic and reference
feature misextraction, frame incoherence through the one-shot denoising estimate, and the
perceptual hinge penalty, composed with their weights.

Every squared distance uses a per-element mean so the default weights do not depend on the
image resolution.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

from dataclasses import dataclass, asdict, fields
from typing import Optional
import torch
from animguard.blocks.extractors import (
    ExtractorBundle,
    LatentEncoder,
    SemanticEncoder,
    NoisePredictor,
    PoseConditioner,
    PerceptualDistance,
    FrameConditioning,
)
from animguard.blocks.schedule import DiffusionSchedule, estimate_z0
from animguard.blocks.tensor_core import check_same_shape, mse

LOSS_TERMS = ("vae", "clip", "reference", "frame", "lpips")


@dataclass(frozen=True)
class LossWeights:

    """
    Args:
        lambda1: weight of the latent (VAE) term.
        lambda_clip: weight of the semantic embedding term.
        lambda_ref: weight of the reference-feature term.
        lambda3: weight of the frame incoherence term.
        lambda4: weight of the perceptual penalty (subtracted).
        zeta: perceptual budget of the hinge.
    """

    lambda1: float = 10.0
    lambda_clip: float = 10.0
    lambda_ref: float = 100.0
    lambda3: float = 1.0
    lambda4: float = 10.0
    zeta: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0, got {getattr(self, f.name)}")

    def ablate(self, terms) -> "LossWeights":

        '''
        copy with the named terms switched off
        '''

        names = {"vae": "lambda1", "clip": "lambda_clip", "reference": "lambda_ref", "frame": "lambda3", "lpips": "lambda4"}
        unknown = set(terms) - set(names)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}, choose from {LOSS_TERMS}")

        values = asdict(self)
        for term in terms:
            values[names[term]] = 0.0
        return LossWeights(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:

    vae: float = 0.0
    clip: float = 0.0
    reference: float = 0.0
    frame: float = 0.0
    lpips_penalty: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def loss_vae(x: torch.Tensor, delta: torch.Tensor, enc: LatentEncoder) -> torch.Tensor:

    check_same_shape(x, delta, "image and perturbation")
    return mse(enc.encode(x + delta), enc.encode(x))


def loss_feature(x, delta, sem: SemanticEncoder, refs, enc: LatentEncoder):

    '''
    return (clip_term, ref_term): semantic embedding distance, and the sum over the reference
    ensemble of the mean squared distance of all exposed feature maps
    '''

    check_same_shape(x, delta, "image and perturbation")

    if len(refs) == 0:
        raise ValueError("at least one reference feature extractor is required")

    protected = x + delta
    clip_term = mse(sem.embed(protected), sem.embed(x))

    latent_p, latent = enc.encode(protected), enc.encode(x)
    ref_term = 0

    for ref in refs:
        maps_p, maps = ref.extract(latent_p), ref.extract(latent)
        ref_term = ref_term + mse(flatten_maps(maps_p), flatten_maps(maps))

    return clip_term, ref_term


def flatten_maps(maps: list[torch.Tensor]) -> torch.Tensor:
    return torch.cat([m.reshape(-1) for m in maps])


def loss_frame(
    x: torch.Tensor,
    delta: torch.Tensor,
    enc: LatentEncoder,
    pred: NoisePredictor,
    cond: PoseConditioner,
    sched: DiffusionSchedule,
    frames: int,
    t: int,
    noise_frames: list[torch.Tensor],
) -> torch.Tensor:

    '''
    Frame incoherence. Noise is predicted for the F noisy latents conditioned on the protected
    image and its pose repeated F times, each frame's clean latent is estimated in one shot, and

        (1/F) sum_f mse(z0_f, E(x)) + 2/(F(F-1)) sum_{f<f'} mse(z0_f, z0_f')

    is returned; the pairwise term is 0 for F = 1.
    '''

    if frames < 1:
        raise ValueError("frames must be >= 1")

    if len(noise_frames) != frames:
        raise ValueError(f"expected {frames} noise latents, got {len(noise_frames)}")

    protected = x + delta
    latent_clean = enc.encode(x)
    latent_protected = enc.encode(protected)

    for noise in noise_frames:
        check_same_shape(noise, latent_clean, "noise latent and image latent")

    conditioning = FrameConditioning(
        image=protected,
        reference_latent=latent_protected,
        pose=cond.condition_from(protected, frames),
    )

    z_t = torch.stack(noise_frames)
    eps = pred.predict(z_t, conditioning, t)
    z0 = estimate_z0(z_t, eps, t, sched)

    alignment = sum(mse(z0[f], latent_clean) for f in range(frames)) / frames

    if frames == 1:
        return alignment

    pairwise = sum(mse(z0[f], z0[g]) for f in range(frames) for g in range(f + 1, frames))

    return alignment + 2.0 / (frames * (frames - 1)) * pairwise


def loss_lpips_penalty(x: torch.Tensor, delta: torch.Tensor, pd: PerceptualDistance, zeta: float) -> torch.Tensor:

    if zeta < 0:
        raise ValueError(f"zeta must be >= 0, got {zeta}")

    return torch.clamp(pd.distance(x + delta, x) - zeta, min=0.0)


def loss_dormant(
    x: torch.Tensor,
    delta: torch.Tensor,
    bundle: ExtractorBundle,
    w: LossWeights,
    frames: int,
    t: int,
    noise_frames: list[torch.Tensor],
    sched: DiffusionSchedule,
    visible_delta: Optional[torch.Tensor] = None,
    record_ablated: bool = False,
):

    '''
    The complete objective

        lambda1 * vae + lambda_clip * clip + lambda_ref * reference + lambda3 * frame - lambda4 * lpips

    Args:
        delta: perturbation the attack terms see; under EoT this is T(x + delta) - x.
        visible_delta: perturbation the perceptual penalty measures, the untransformed one.
            Defaults to delta.
        record_ablated: evaluate terms whose weight is 0 without gradient so the breakdown
            still reports them; otherwise they are skipped and report 0.

    return (total tensor, LossBreakdown)
    '''

    visible_delta = delta if visible_delta is None else visible_delta

    def term(active: bool, compute):
        if active:
            return compute()
        if record_ablated:
            with torch.no_grad():
                return compute()
        return None

    vae = term(w.lambda1 > 0, lambda: loss_vae(x, delta, bundle.encoder))

    features = term(
        w.lambda_clip > 0 or w.lambda_ref > 0,
        lambda: loss_feature(x, delta, bundle.semantic, bundle.references, bundle.encoder),
    )
    clip, reference = features if features is not None else (None, None)

    frame = term(
        w.lambda3 > 0,
        lambda: loss_frame(x, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, sched, frames, t, noise_frames),
    )

    penalty = term(w.lambda4 > 0, lambda: loss_lpips_penalty(x, visible_delta, bundle.perceptual, w.zeta))

    total = x.new_zeros(())
    for weight, value in ((w.lambda1, vae), (w.lambda_clip, clip), (w.lambda_ref, reference), (w.lambda3, frame)):
        if weight > 0:
            total = total + weight * value
    if w.lambda4 > 0:
        total = total - w.lambda4 * penalty

    def value_of(v):
        return 0.0 if v is None else float(v.detach())

    breakdown = LossBreakdown(
        vae=value_of(vae),
        clip=value_of(clip),
        reference=value_of(reference),
        frame=value_of(frame),
        lpips_penalty=value_of(penalty),
        total=float(total.detach()),
    )

    return total, breakdown
