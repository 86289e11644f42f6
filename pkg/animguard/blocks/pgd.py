"""
PGD runs the protective optimization: momentum sign ascent of the composed objective under an
L-infinity budget. Each iteration samples one transformation, one low-noise timestep and F
frame latents, evaluates the loss on the transformed protected image, accumulates the
normalized gradient with decay and takes a projected sign step.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional
import torch
from rich.progress import Progress
from animguard import configuration
from animguard.blocks.tensor_core import check_image, clamp_valid, linf_project, linf_norm
from animguard.blocks.extractors import ExtractorBundle
from animguard.blocks.losses import LossWeights, LossBreakdown, loss_dormant
from animguard.blocks.schedule import make_schedule, sample_timestep, sample_latent_frames, timestep_window, WINDOW_ENDS
from animguard.blocks.eot import EotSettings, TransformSpec, sample_transform, apply_transform
from animguard.exceptions import AnimGuardError, OptimizationError
from animguard.util import console, split_seed, time_it


@dataclass
class ProtectionConfig:

    """
    Args:
        eta: float, L-infinity budget of the perturbation.
        gamma: float, sign step size.
        iterations: int, number of PGD iterations N.
        decay: float, momentum decay factor mu.
        weights: LossWeights, loss weights and perceptual budget zeta.
        frames: int, number of frame latents F in the frame incoherence term.
        seed: int, root seed split into init, eot, timestep and latent streams.
        eot: EotSettings, in-loop transformation sampling.
        schedule_kind: str, beta schedule of the diffusion backbone.
        train_steps: int, training timesteps of the backbone.
        inference_steps: int, denoising steps mapped onto training timesteps.
        window: int, number of lowest (or highest) noise steps the timestep is drawn from.
        window_end: str, low_noise or high_noise.
        record_deltas: bool, keep a copy of the perturbation after every iteration in the trace.
        record_ablated: bool, report terms whose weight is 0 in the trace breakdown.
        progress: bool, show a progress bar.
    """

    eta: float = 16 / 255
    gamma: float = 2 / 255
    iterations: int = 200
    decay: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    frames: int = 5
    seed: int = 0
    eot: EotSettings = field(default_factory=EotSettings)
    schedule_kind: str = "scaled_linear"
    train_steps: int = 1000
    inference_steps: int = 25
    window: int = 10
    window_end: str = "low_noise"
    record_deltas: bool = False
    record_ablated: bool = False
    progress: bool = False

    def __post_init__(self):

        if not self.eta > 0:
            raise ValueError(f"budget eta must be positive, got {self.eta}")
        if not self.gamma > 0:
            raise ValueError(f"step size gamma must be positive, got {self.gamma}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.window_end not in WINDOW_ENDS:
            raise ValueError(f"window_end must be one of {WINDOW_ENDS}, got {self.window_end}")

    def to_dict(self) -> dict:
        values = asdict(self)
        values["weights"] = self.weights.to_dict()
        values["eot"] = self.eot.to_dict()
        return values


@dataclass
class OptimizationTrace:

    """
    One record per iteration: the loss breakdown at the perturbation the step started from, the
    L-infinity norm after the step, the sampled transform and timestep.
    """

    records: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def append(self, iteration: int, breakdown: LossBreakdown, norm: float, spec: TransformSpec, timestep: int):
        self.records.append(
            {
                "iteration": iteration,
                "loss": breakdown.to_dict(),
                "linf": norm,
                "transform": spec.kind,
                "transform_params": dict(spec.params),
                "timestep": timestep,
            }
        )

    @property
    def totals(self) -> list[float]:
        return [r["loss"]["total"] for r in self.records]

    def best_total(self) -> float:
        return max(self.totals)

    def write_jsonl(self, path):

        '''
        one JSON object per line, the metadata record last
        '''

        with open(path, "w") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
            f.write(json.dumps({"metadata": self.metadata}, sort_keys=True) + "\n")


def init_perturbation(eta: float, shape, rng: torch.Generator) -> torch.Tensor:

    '''
    uniform on [-eta, eta], drawn in float64 on cpu
    '''

    if eta < 0:
        raise ValueError(f"budget eta must be non-negative, got {eta}")

    u = torch.rand(tuple(shape), generator=rng, dtype=torch.float64)
    delta = (2.0 * u - 1.0) * eta
    return delta.to(dtype=configuration.dtype, device=configuration.device)


def momentum_step(g_prev: torch.Tensor, grad: torch.Tensor, mu: float) -> torch.Tensor:

    '''
    g = mu * g_prev + grad / mean(|grad|); the normalized term is zero when the gradient vanishes
    '''

    if g_prev.shape != grad.shape:
        raise ValueError(f"momentum and gradient differ in shape: {tuple(g_prev.shape)} vs {tuple(grad.shape)}")

    scale = torch.mean(torch.abs(grad))

    if scale == 0:
        return mu * g_prev

    return mu * g_prev + grad / scale


def pgd_update(delta: torch.Tensor, g: torch.Tensor, gamma: float, eta: float) -> torch.Tensor:

    if not gamma > 0:
        raise ValueError(f"step size gamma must be positive, got {gamma}")

    return linf_project(delta + gamma * torch.sign(g), eta)


class PGD(torch.nn.Module):

    """
    Args:
        bundle: ExtractorBundle, the surrogates the objective differentiates through.
        cfg: ProtectionConfig.
    """

    def __init__(self, bundle: ExtractorBundle, cfg: ProtectionConfig) -> None:
        super(PGD, self).__init__()

        self.bundle = bundle
        self.cfg = cfg
        self.schedule = make_schedule(cfg.schedule_kind, cfg.train_steps, cfg.inference_steps)

        # fail before the first iteration rather than inside it
        timestep_window(self.schedule, cfg.window, cfg.window_end)

    def forward(self, x: torch.Tensor, metadata: Optional[dict] = None):

        '''
        return (protected image clamped to [0, 1], OptimizationTrace)
        '''

        cfg = self.cfg
        check_image(x, "input image")
        x = x.detach()

        streams = split_seed(cfg.seed)

        with torch.no_grad():
            latent_shape = tuple(self.bundle.encoder.encode(x).shape)

        delta = init_perturbation(cfg.eta, x.shape, streams["init"]).to(dtype=x.dtype, device=x.device)
        g = torch.zeros_like(delta)

        trace = OptimizationTrace(metadata=self.metadata(metadata))
        if cfg.record_deltas:
            trace.deltas.append(delta.clone())

        with Progress(console=console, transient=True, disable=not cfg.progress) as progress:

            task = progress.add_task("[cyan]Protecting...", total=cfg.iterations)

            for i in range(1, cfg.iterations + 1):

                spec = sample_transform(streams["eot"], cfg.eot)
                t = sample_timestep(self.schedule, cfg.window, streams["timestep"], cfg.window_end)
                noise = sample_latent_frames(cfg.frames, latent_shape, streams["latents"])
                noise = [n.to(dtype=x.dtype, device=x.device) for n in noise]

                grad, breakdown = self.gradient(x, delta, spec, t, noise, i)

                g = momentum_step(g, grad, cfg.decay)
                delta = pgd_update(delta, g, cfg.gamma, cfg.eta)

                trace.append(i, breakdown, linf_norm(delta), spec, t)
                if cfg.record_deltas:
                    trace.deltas.append(delta.clone())

                progress.update(task, advance=1)

        return clamp_valid(x + delta), trace

    def gradient(self, x, delta, spec: TransformSpec, t: int, noise, iteration: int):

        '''
        Gradient of the objective with respect to delta through the sampled transform. The attack
        terms see the transformed perturbation T(x + delta) - x, the perceptual penalty sees delta.
        '''

        delta = delta.detach().requires_grad_(True)
        breakdown = None

        try:
            if spec.kind == "identity":
                effective = delta
            else:
                effective = apply_transform(spec, x + delta) - x

            total, breakdown = loss_dormant(
                x, effective, self.bundle, self.cfg.weights, self.cfg.frames, t, noise, self.schedule,
                visible_delta=delta, record_ablated=self.cfg.record_ablated,
            )

            if not math.isfinite(breakdown.total):
                raise OptimizationError("non-finite loss", iteration=iteration, breakdown=breakdown)

            if total.requires_grad:
                grad = torch.autograd.grad(total, delta)[0]
            else:
                grad = torch.zeros_like(delta)

        except OptimizationError:
            raise
        except (AnimGuardError, RuntimeError, ValueError) as e:
            raise OptimizationError(f"extractor failure: {e}", iteration=iteration, breakdown=breakdown) from e

        if not torch.all(torch.isfinite(grad)):
            raise OptimizationError("non-finite gradient", iteration=iteration, breakdown=breakdown)

        return grad.detach(), breakdown

    def metadata(self, extra: Optional[dict] = None) -> dict:

        values = {
            "eta": self.cfg.eta,
            "gamma": self.cfg.gamma,
            "iterations": self.cfg.iterations,
            "decay": self.cfg.decay,
            "frames": self.cfg.frames,
            "seed": self.cfg.seed,
            "weights": self.cfg.weights.to_dict(),
            "schedule": self.schedule.to_dict(),
            "window": self.cfg.window,
            "window_end": self.cfg.window_end,
            "eot": self.cfg.eot.to_dict(),
            "extractors": dict(self.bundle.record),
        }
        values.update(extra or {})
        return values


@time_it("protect")
def protect(x: torch.Tensor, cfg: ProtectionConfig, bundle: ExtractorBundle, metadata: Optional[dict] = None):

    '''
    Protect one image; deterministic given cfg.seed.

    return (x_p, trace)
    '''

    return PGD(bundle, cfg)(x, metadata)
