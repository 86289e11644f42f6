"""
schedule holds the diffusion variance schedule, the timestep window sampled in every PGD
iteration, Gaussian frame-latent sampling and the one-shot reparameterized estimate of the clean
latent from a noisy one.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence
import numpy as np
import torch
from animguard import configuration
from animguard.exceptions import ScheduleError

SCHEDULE_KINDS = ("linear", "scaled_linear", "squaredcos_cap_v2")
WINDOW_ENDS = ("low_noise", "high_noise")


@dataclass(frozen=True)
class DiffusionSchedule:

    """
    Args:
        kind: str, the beta schedule name.
        train_steps: int, T_train.
        beta: tuple of float in (0, 1), one per training timestep.
        alpha_bar: tuple of float, cumulative product of (1 - beta), strictly decreasing.
        inference_steps: int, number of denoising steps.
        inference_index_map: tuple of int, inference step -> training timestep, strictly increasing.
    """

    kind: str
    train_steps: int
    beta: tuple
    alpha_bar: tuple
    inference_steps: int
    inference_index_map: tuple

    def alpha_bar_at(self, t: int) -> float:

        if not 0 <= t < self.train_steps:
            raise ScheduleError(f"timestep {t} outside [0, {self.train_steps})")

        return self.alpha_bar[t]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "train_steps": self.train_steps, "inference_steps": self.inference_steps}


def betas_for_kind(kind: str, train_steps: int, beta_start: float = 0.00085, beta_end: float = 0.012) -> np.ndarray:

    if kind == "linear":
        return np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)

    if kind == "scaled_linear":
        return np.linspace(beta_start ** 0.5, beta_end ** 0.5, train_steps, dtype=np.float64) ** 2

    if kind == "squaredcos_cap_v2":

        def alpha_bar_fn(time):
            return math.cos((time + 0.008) / 1.008 * math.pi / 2) ** 2

        betas = [
            min(1 - alpha_bar_fn((i + 1) / train_steps) / alpha_bar_fn(i / train_steps), 0.999)
            for i in range(train_steps)
        ]
        return np.array(betas, dtype=np.float64)

    raise ScheduleError(f"unknown schedule kind '{kind}', choose from {SCHEDULE_KINDS}")


def make_schedule(
    kind: str = "scaled_linear",
    train_steps: int = 1000,
    inference_steps: int = 25,
    betas: Optional[Sequence[float]] = None,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
) -> DiffusionSchedule:

    '''
    Build beta per kind (or take injected betas), derive alpha_bar and a uniformly spaced
    inference map i -> i * (train_steps // inference_steps).
    '''

    if not train_steps >= inference_steps >= 1:
        raise ScheduleError(f"need train_steps >= inference_steps >= 1, got {train_steps}, {inference_steps}")

    if betas is None:
        beta = betas_for_kind(kind, train_steps, beta_start, beta_end)
    else:
        if kind not in SCHEDULE_KINDS:
            raise ScheduleError(f"unknown schedule kind '{kind}', choose from {SCHEDULE_KINDS}")
        beta = np.asarray(betas, dtype=np.float64)
        if beta.shape != (train_steps,):
            raise ScheduleError(f"expected {train_steps} betas, got {beta.shape}")

    if np.any(beta <= 0) or np.any(beta >= 1):
        raise ScheduleError("every beta must lie in (0, 1)")

    alpha_bar = np.cumprod(1.0 - beta)
    step_ratio = train_steps // inference_steps
    index_map = tuple(int(i * step_ratio) for i in range(inference_steps))

    return DiffusionSchedule(
        kind=kind,
        train_steps=train_steps,
        beta=tuple(float(b) for b in beta),
        alpha_bar=tuple(float(a) for a in alpha_bar),
        inference_steps=inference_steps,
        inference_index_map=index_map,
    )


def timestep_window(sched: DiffusionSchedule, window: int, window_end: str = "low_noise") -> tuple:

    '''
    The candidate training timesteps: the last `window` steps of the denoising trajectory
    (lowest noise) or, with window_end="high_noise", its first `window` steps.
    '''

    if window < 1 or window > sched.inference_steps:
        raise ScheduleError(f"window {window} must lie in [1, {sched.inference_steps}]")

    if window_end == "low_noise":
        return sched.inference_index_map[:window]

    if window_end == "high_noise":
        return sched.inference_index_map[-window:]

    raise ScheduleError(f"unknown window end '{window_end}', choose from {WINDOW_ENDS}")


def sample_timestep(sched: DiffusionSchedule, window: int, rng: torch.Generator, window_end: str = "low_noise") -> int:

    candidates = timestep_window(sched, window, window_end)
    index = int(torch.randint(0, len(candidates), (1,), generator=rng))
    return candidates[index]


def sample_latent_frames(frames: int, shape, rng: torch.Generator) -> list[torch.Tensor]:

    '''
    F independent standard normal latents; drawn on cpu in float64 for device-independent determinism
    '''

    if frames < 1:
        raise ValueError("frames must be >= 1")

    noise = torch.randn((frames, *shape), generator=rng, dtype=torch.float64)
    noise = noise.to(dtype=configuration.dtype, device=configuration.device)
    return [noise[f] for f in range(frames)]


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int, sched: DiffusionSchedule) -> torch.Tensor:

    '''
    forward process: z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
    '''

    alpha_bar = sched.alpha_bar_at(t)
    return math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps


def estimate_z0_from_alpha_bar(z_t: torch.Tensor, eps: torch.Tensor, alpha_bar: float) -> torch.Tensor:

    if alpha_bar <= 0:
        raise ScheduleError(f"alpha_bar must be positive to estimate z0, got {alpha_bar}")

    return (z_t - math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(alpha_bar)


def estimate_z0(z_t: torch.Tensor, eps: torch.Tensor, t: int, sched: DiffusionSchedule) -> torch.Tensor:

    '''
    z0 = (z_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)
    '''

    return estimate_z0_from_alpha_bar(z_t, eps, sched.alpha_bar_at(t))
