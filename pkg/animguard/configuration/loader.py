"""
loader resolves the run configuration: materialized defaults, a YAML file, ANIMGUARD_<SECTION>_<KEY>
environment overrides and command-line flags, in increasing precedence. The resolved document
is hashed into the run manifest so every run can be replayed.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Optional
import yaml
import animguard
from animguard.exceptions import ConfigurationError
from animguard.util import file_check

ENV_PREFIX = "ANIMGUARD_"

DEFAULTS = {
    "protect": {
        "eta": "16/255",
        "gamma": "2/255",
        "iterations": 200,
        "decay": 0.5,
        "frames": 5,
        "seed": 0,
        "lambda1": 10.0,
        "lambda_clip": 10.0,
        "lambda_ref": 100.0,
        "lambda3": 1.0,
        "lambda4": 10.0,
        "zeta": 0.1,
        "ablate": [],
        "device": "cpu",
        "dtype": "float32",
        "time_print": False,
        "progress": False,
        "record_deltas": False,
        "record_ablated": False,
    },
    "schedule": {
        "kind": "scaled_linear",
        "train_steps": 1000,
        "inference_steps": 25,
        "window": 10,
        "window_end": "low_noise",
    },
    "eot": {
        "enabled": True,
        "kinds": ["gaussian_blur", "jpeg_compress", "gaussian_noise", "random_resize", "identity"],
        "blur_sigma": [0.5, 2.0],
        "jpeg_quality": [50, 95],
        "noise_std": [0.01, 0.05],
        "resize_scale": [0.5, 1.5],
    },
    "extractors": {
        "preset": "toy-default",
        "seed": 0,
    },
    "evaluate": {
        "metrics": ["psnr", "ssim", "lpips", "fid", "fid_vid", "fvd", "clip_i", "dino"],
        "embedders": {},
        "perceptual": "toy",
    },
    "robustness": {
        "axes": ["jpeg:95,85,75,65,55", "blur:1,2,3", "noise:0.01,0.03,0.05", "median:3,5,7,9", "bit:7,6,5,4,3"],
        "downstream": "image",
        "metrics": ["psnr", "ssim", "lpips"],
        "frames": 16,
        "motion": 0.1,
        "seed": 0,
    },
}

SECTIONS = tuple(DEFAULTS)

# sections whose keys are free-form registry descriptors rather than a fixed schema
FREE_FORM = ("extractors",)

BUDGET_KEYS = ("eta", "gamma")


def parse_budget(value) -> float:

    '''
    "16/255" -> 0.0627..., "0.05" or 0.05 -> 0.05
    '''

    if isinstance(value, bool):
        raise ConfigurationError(f"budget must be a number or a fraction string, got {value!r}")

    if isinstance(value, (int, float)):
        return float(value)

    try:
        return float(Fraction(str(value).strip()))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigurationError(f"cannot read budget {value!r}; use a decimal or a fraction like 16/255") from e


def check_keys(config: dict, origin: str):

    if not isinstance(config, dict):
        raise ConfigurationError(f"{origin}: configuration must be a mapping of sections")

    for section, values in config.items():

        if section not in DEFAULTS:
            raise ConfigurationError(f"{origin}: unknown section '{section}', known sections: {list(SECTIONS)}")

        if section in FREE_FORM:
            if not isinstance(values, (dict, str)):
                raise ConfigurationError(f"{origin}: section '{section}' must be a preset name or a mapping")
            continue

        if not isinstance(values, dict):
            raise ConfigurationError(f"{origin}: section '{section}' must be a mapping")

        unknown = set(values) - set(DEFAULTS[section])
        if unknown:
            raise ConfigurationError(f"{origin}: unknown keys {sorted(unknown)} in section '{section}'")


def merge_extractors(base: dict, values) -> dict:

    '''
    A preset name, or a mapping naming a preset or replacing a preset with roles, replaces the
    section and keeps its seed; any other mapping (e.g. {"seed": 3}) updates it key by key.
    '''

    values = copy.deepcopy({"preset": values} if isinstance(values, str) else values)

    if "preset" in values or ("preset" in base and set(values) - {"seed"}):
        kept = {"seed": base["seed"]} if "seed" in base else {}
        return {**kept, **values}

    return {**copy.deepcopy(base), **values}


def merge(base: dict, override: dict) -> dict:

    '''
    section-wise update
    '''

    result = copy.deepcopy(base)

    for section, values in override.items():
        if section in FREE_FORM:
            result[section] = merge_extractors(result[section], values)
        else:
            result[section].update(copy.deepcopy(values))

    return result


def env_overrides(environ) -> dict:

    '''
    ANIMGUARD_PROTECT_ITERATIONS=50 -> {"protect": {"iterations": 50}}; values are parsed as YAML scalars
    '''

    overrides = {}

    for name, raw in environ.items():

        if not name.startswith(ENV_PREFIX):
            continue

        rest = name[len(ENV_PREFIX):].lower()
        section = next((s for s in SECTIONS if rest.startswith(s + "_")), None)

        if section is None:
            raise ConfigurationError(f"environment variable {name} does not name a configuration section")

        key = rest[len(section) + 1:]
        overrides.setdefault(section, {})[key] = yaml.safe_load(raw)

    return overrides


def normalize(config: dict) -> dict:

    protect = config["protect"]

    for key in BUDGET_KEYS:
        protect[key] = parse_budget(protect[key])

    for key in ("iterations", "frames", "seed"):
        protect[key] = int(protect[key])

    protect["ablate"] = list(protect["ablate"] or [])

    for key in ("train_steps", "inference_steps", "window"):
        config["schedule"][key] = int(config["schedule"][key])

    if isinstance(config["evaluate"]["metrics"], str):
        config["evaluate"]["metrics"] = [m.strip() for m in config["evaluate"]["metrics"].split(",") if m.strip()]

    return config


def resolve_config(*layers: dict) -> dict:

    '''
    Merge configuration layers over the defaults, lowest precedence first, and materialize every value.
    '''

    config = copy.deepcopy(DEFAULTS)

    for layer in layers:
        if layer:
            layer = {k: v for k, v in layer.items() if v is not None}
            check_keys(layer, "configuration")
            config = merge(config, layer)

    return normalize(config)


def load_config(path=None, overrides: Optional[dict] = None, environ=None) -> dict:

    '''
    defaults < file < environment < overrides (command-line flags)
    '''

    file_layer = {}

    if path is not None:
        abs_path = file_check(path)
        with open(abs_path, "r") as f:
            file_layer = yaml.safe_load(f) or {}
        check_keys(file_layer, abs_path)

    env_layer = env_overrides(os.environ if environ is None else environ)
    check_keys(env_layer, "environment")

    return resolve_config(file_layer, env_layer, overrides or {})


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class RunManifest:

    """
    Everything needed to replay a run.

    Args:
        config: fully resolved configuration.
        seed: root seed of the run.
        config_hash: sha256 of the resolved configuration.
        version: animguard version.
        extractors: registry resolution record of the extractor bundle.
        inputs: input image paths.
        outputs: produced artifacts.
        similarity: per-input invisibility metrics of the protected image.
    """

    config: dict
    seed: int
    config_hash: str
    version: str
    extractors: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    similarity: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: dict, extractors: dict = None, inputs=None) -> "RunManifest":
        return cls(
            config=copy.deepcopy(config),
            seed=config["protect"]["seed"],
            config_hash=config_hash(config),
            version=animguard.__version__,
            extractors=dict(extractors or {}),
            inputs=[str(p) for p in (inputs or [])],
        )

    def save(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)
        return str(path)

    @classmethod
    def load(cls, path) -> "RunManifest":

        with open(file_check(path), "r") as f:
            values = yaml.safe_load(f)

        missing = {"config", "seed", "config_hash", "version"} - set(values or {})
        if missing:
            raise ConfigurationError(f"{path} is not a run manifest, missing {sorted(missing)}")

        manifest = cls(**values)
        if config_hash(manifest.config) != manifest.config_hash:
            raise ConfigurationError(f"{path}: configuration does not match its recorded hash")

        return manifest
