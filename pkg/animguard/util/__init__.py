'''
util file contains the utility functions for animguard: timing, path resolution, image file I/O
and the root-seed splitting that feeds every random consumer of a protect run.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
'''

import time
import os
import sys
from pathlib import Path
import numpy as np
import torch
from PIL import Image
from rich.console import Console
from animguard import configuration
import animguard

console = Console(stderr=True)

LOSSLESS_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}
LOSSY_SUFFIXES = {".jpg", ".jpeg", ".webp"}
IMAGE_SUFFIXES = LOSSLESS_SUFFIXES | LOSSY_SUFFIXES

# order is part of the reproducibility contract; append new consumers at the end only
SEED_CONSUMERS = ("init", "eot", "timestep", "latents")


def time_it(name="Function"):
    """
    Decorator to measure function execution time.

    Args:
        name (str): Function name for logging (default "Function").

    Returns:
        function: Wrapped function with timing.
    """

    def decorator(func):
        def wrapper(*args, **kwargs):
            wrapper.count += 1
            start = time.time()
            result = func(*args, **kwargs)
            end = time.time()
            if configuration.time_print:
                console.print(f"{name} execute time {(end - start):.6f} seconds")
            return result

        wrapper.count = 0
        wrapper.__name__ = func.__name__
        wrapper.__doc__ = func.__doc__
        return wrapper

    return decorator


def file_check(file_name):
    """
    Check whether a file exists and return its absolute path.

    Looks at the given path, then relative to the script directory, the working directory and
    the repository root.

    Raises:
        FileNotFoundError: If the file is not found.
    """

    root_path = os.path.dirname(os.path.dirname(animguard.__file__))

    if file_name is None:
        return None

    candidates = [
        file_name,
        sys.path[0] + "/" + str(file_name),
        os.getcwd() + "/" + str(file_name),
        root_path + "/" + str(file_name),
    ]

    for candidate in candidates:
        if os.path.exists(candidate):
            return os.path.abspath(candidate)

    raise FileNotFoundError("File not found: " + str(file_name))


def repeat_mk_dirs(path, max_num=100):
    """
    Create a directory, appending numbers if it already exists and is not empty.

    Returns:
        str: Path of the created directory.
    """
    if not os.path.exists(path):
        os.makedirs(path)
        return path

    if len(os.listdir(path)) == 0:
        return path

    for i in range(1, max_num):
        new_path = path + "_" + str(i)
        if not os.path.exists(new_path):
            os.makedirs(new_path)
            return new_path

    raise FileExistsError(f"could not create a fresh directory next to {path}")


def split_seed(seed: int) -> dict[str, torch.Generator]:

    '''
    Split one root seed into independent torch generators, one per random consumer of a run
    (perturbation init, EoT sampling, timestep sampling, latent sampling), in SEED_CONSUMERS order.
    '''

    children = np.random.SeedSequence(int(seed)).spawn(len(SEED_CONSUMERS))
    generators = {}

    for name, child in zip(SEED_CONSUMERS, children):
        generator = torch.Generator(device="cpu")
        generator.manual_seed(int(child.generate_state(1, dtype=np.uint64)[0] >> 1))
        generators[name] = generator

    return generators


def read_image(path) -> torch.Tensor:

    '''
    Read an RGB image file as a (3, H, W) tensor in [0, 1].
    Lossy inputs are accepted with a warning since re-encoding would have perturbed any protection.
    '''

    abs_path = file_check(path)

    if Path(abs_path).suffix.lower() in LOSSY_SUFFIXES:
        console.print(f"[yellow]warning[/yellow]: {abs_path} is lossy-compressed; a protective perturbation it carried may be degraded")

    with Image.open(abs_path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0

    return configuration.np_to_tensor(array.transpose(2, 0, 1))


def write_image(image: torch.Tensor, path) -> str:

    '''
    Write a (3, H, W) tensor in [0, 1] to a lossless file; 8-bit quantization happens only here.
    '''

    path = Path(path)

    if path.suffix.lower() not in LOSSLESS_SUFFIXES:
        raise ValueError(f"protected outputs must use a lossless format, got {path.suffix}")

    path.parent.mkdir(parents=True, exist_ok=True)
    array = image_to_uint8(image)
    Image.fromarray(array).save(path)

    return str(path)


def image_to_uint8(image: torch.Tensor) -> np.ndarray:

    array = configuration.tensor_to_np(image.clamp(0, 1)).transpose(1, 2, 0)
    return np.round(array * 255.0).astype(np.uint8)


def uint8_to_image(array: np.ndarray) -> torch.Tensor:
    return configuration.np_to_tensor(array.astype(np.float64).transpose(2, 0, 1) / 255.0)


def list_images(directory) -> list[Path]:

    '''
    Sorted image files of a directory; numbered frames sort numerically.
    '''

    directory = Path(directory)

    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")

    files = [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]

    def sort_key(p):
        digits = "".join(ch for ch in p.stem if ch.isdigit())
        return (int(digits) if digits else -1, p.name)

    return sorted(files, key=sort_key)


def read_frames(directory) -> list[torch.Tensor]:
    return [read_image(p) for p in list_images(directory)]
