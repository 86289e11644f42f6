import pytest
import torch
from animguard import configuration
from animguard.blocks.toy_stack import build_toy_stack


@pytest.fixture(autouse=True)
def float64():

    # protector instances reset the process dtype from their config
    configuration.set_dtype("float64")
    configuration.device = torch.device("cpu")
    configuration.time_print = False
    yield
    configuration.set_dtype("float64")


@pytest.fixture
def bundle():
    return build_toy_stack(seed=0)


@pytest.fixture
def image():
    generator = torch.Generator().manual_seed(7)
    return torch.rand((3, 8, 8), generator=generator, dtype=torch.float64)


def random_image(seed: int, size: int = 8) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.rand((3, size, size), generator=generator, dtype=torch.float64)


@pytest.fixture
def make_image():
    return random_image
