"""
Process-wide configuration for animguard: compute device, floating dtype and timing output,
plus the tensor conversion helpers every block uses.

animguard is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import torch
import numpy as np

device = torch.device("cpu")
dtype = torch.float32
time_print = False

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def set_dtype(name):

    global dtype

    if name not in DTYPES:
        raise ValueError(f"unsupported dtype {name}, choose from {list(DTYPES)}")

    dtype = DTYPES[name]


def np_to_tensor(array):

    if np.isscalar(array):
        return torch.tensor(array).type(dtype).to(device)

    return torch.from_numpy(np.ascontiguousarray(array)).type(dtype).to(device)


def tensor_to_np(tensor):

    if tensor is None:
        return None

    tensor = tensor.cpu()
    return tensor.detach().numpy()
