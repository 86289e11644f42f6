"""
tensor_core holds the canonical value model shared by every block: images are (3, H, W) tensors
in [0, 1], perturbations share the image shape and live in an L-infinity ball, latents are
whatever the producing encoder declares.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import torch

MIN_SIDE = 8


def check_image(img: torch.Tensor, name: str = "image") -> torch.Tensor:

    '''
    validate the ImageTensor shape contract: (3, H, W) with H, W >= 8
    '''

    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {tuple(img.shape)}")

    if img.shape[1] < MIN_SIDE or img.shape[2] < MIN_SIDE:
        raise ValueError(f"{name} is {img.shape[1]}x{img.shape[2]}, minimum working size is {MIN_SIDE}x{MIN_SIDE}")

    return img


def check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str = "tensors"):

    if a.shape != b.shape:
        raise ValueError(f"{what} differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")


def check_frames(frames: list[torch.Tensor], name: str = "frames") -> list[torch.Tensor]:

    '''
    validate a FrameSequence: non-empty, uniform shape
    '''

    if len(frames) == 0:
        raise ValueError(f"{name} must contain at least one frame")

    for frame in frames:
        check_image(frame, name)
        check_same_shape(frames[0], frame, name)

    return frames


def clamp_valid(img: torch.Tensor) -> torch.Tensor:
    return torch.clamp(img, 0.0, 1.0)


def linf_project(delta: torch.Tensor, eta: float) -> torch.Tensor:

    '''
    project delta onto the L-infinity ball of radius eta; elements inside are untouched
    '''

    if eta < 0:
        raise ValueError(f"budget eta must be non-negative, got {eta}")

    return torch.clamp(delta, -eta, eta)


def linf_norm(delta: torch.Tensor) -> float:

    if delta.numel() == 0:
        return 0.0

    return float(delta.detach().abs().max())


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:

    '''
    per-element mean squared difference, the reduction used by every distance term
    '''

    check_same_shape(a, b, "mse operands")
    return torch.mean((a - b) ** 2)
