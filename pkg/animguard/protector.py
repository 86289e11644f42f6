'''
protector file is the main class of animguard. It resolves the extractor bundle and the protect
configuration once and protects images against pose-driven animation with it.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
'''

import os
from dataclasses import replace
from pathlib import Path
import torch
from animguard import configuration
from animguard.blocks import PGD, ProtectionConfig, LossWeights, resolve_bundle, image_similarity
from animguard.blocks.eot import eot_settings_from
from animguard.configuration.loader import resolve_config, load_config, config_hash
from animguard.util import time_it, read_image, write_image, image_to_uint8, uint8_to_image


class protector(torch.nn.Module):

    """
    Args:
        protect_kwargs: dict, budget, step size, iterations, decay, frames, seed, loss weights,
            ablated terms and the process globals (device, dtype, time_print, progress).
        schedule_kwargs: dict, diffusion schedule of the surrogate backbone and the timestep window.
        eot_kwargs: dict, in-loop transformation sampling.
        extractors_kwargs: dict or str, extractor registry descriptor or preset name.
        evaluate_kwargs: dict, metric selection and embedders for evaluation runs.
        robustness_kwargs: dict, countermeasure sweep settings.
    """

    def __init__(
        self,
        protect_kwargs: dict = None,
        schedule_kwargs: dict = None,
        eot_kwargs: dict = None,
        extractors_kwargs=None,
        evaluate_kwargs: dict = None,
        robustness_kwargs: dict = None,
        **kwargs,
    ) -> None:
        super(protector, self).__init__()

        self.config = resolve_config(
            {
                "protect": protect_kwargs,
                "schedule": schedule_kwargs,
                "eot": eot_kwargs,
                "extractors": extractors_kwargs,
                "evaluate": evaluate_kwargs,
                "robustness": robustness_kwargs,
            }
        )

        protect = self.config["protect"]
        configuration.device = torch.device(protect["device"])
        configuration.set_dtype(protect["dtype"])
        configuration.time_print = protect["time_print"]

        self.cfg = protection_config(self.config)
        self.bundle = resolve_bundle(self.config["extractors"])
        self.hash = config_hash(self.config)

    @classmethod
    def init_from_yaml(cls, yaml_file, **kwargs):

        '''
        kwargs: section overrides, e.g. protect={"iterations": 50}
        '''

        config = load_config(yaml_file, overrides=kwargs)
        return cls.from_config(config)

    @classmethod
    def from_config(cls, config: dict):
        return cls(**{f"{section}_kwargs": values for section, values in config.items()})

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def forward(self, x: torch.Tensor, seed_offset: int = 0):

        '''
        x: (3, H, W) image in [0, 1]

        return (protected image, OptimizationTrace)
        '''

        return self.protect(x, seed_offset)

    @time_it("protector")
    def protect(self, x: torch.Tensor, seed_offset: int = 0):

        cfg = replace(self.cfg, seed=self.cfg.seed + seed_offset) if seed_offset else self.cfg
        x = x.to(dtype=configuration.dtype, device=configuration.device)

        return PGD(self.bundle, cfg)(x, {"config_hash": self.hash, "seed": cfg.seed})

    def protect_file(self, input_path, output_dir, seed_offset: int = 0) -> dict:
        return self.protect_and_save(read_image(input_path), Path(input_path).stem, output_dir, seed_offset)

    def protect_and_save(self, x: torch.Tensor, stem: str, output_dir, seed_offset: int = 0) -> dict:

        '''
        Protect x into output_dir as <stem>_protected.png plus <stem>_trace.jsonl.

        return {"image", "trace", "similarity"}, similarity measured on the written 8-bit image
        '''

        x = x.to(dtype=configuration.dtype, device=configuration.device)
        x_p, trace = self.protect(x, seed_offset)

        image_path = write_image(x_p, os.path.join(output_dir, f"{stem}_protected.png"))
        trace_path = os.path.join(output_dir, f"{stem}_trace.jsonl")
        trace.write_jsonl(trace_path)

        with torch.no_grad():
            written = uint8_to_image(image_to_uint8(x_p)).to(dtype=x.dtype, device=x.device)
            similarity = image_similarity(x, written, self.bundle.perceptual)

        return {"image": image_path, "trace": trace_path, "similarity": similarity}

    def reset_config(self, **protect_kwargs):

        '''
        update protect settings (e.g. iterations, eta) without re-resolving the extractors
        '''

        self.config = resolve_config(self.config, {"protect": protect_kwargs})
        self.cfg = protection_config(self.config)
        self.hash = config_hash(self.config)


def protection_config(config: dict) -> ProtectionConfig:

    '''
    ProtectionConfig from the protect, schedule and eot sections of a resolved configuration
    '''

    protect, schedule = config["protect"], config["schedule"]

    weights = LossWeights(
        lambda1=protect["lambda1"],
        lambda_clip=protect["lambda_clip"],
        lambda_ref=protect["lambda_ref"],
        lambda3=protect["lambda3"],
        lambda4=protect["lambda4"],
        zeta=protect["zeta"],
    ).ablate(protect["ablate"])

    return ProtectionConfig(
        eta=protect["eta"],
        gamma=protect["gamma"],
        iterations=protect["iterations"],
        decay=protect["decay"],
        weights=weights,
        frames=protect["frames"],
        seed=protect["seed"],
        eot=eot_settings_from(config["eot"]),
        schedule_kind=schedule["kind"],
        train_steps=schedule["train_steps"],
        inference_steps=schedule["inference_steps"],
        window=schedule["window"],
        window_end=schedule["window_end"],
        record_deltas=protect["record_deltas"],
        record_ablated=protect["record_ablated"],
        progress=protect["progress"],
    )
