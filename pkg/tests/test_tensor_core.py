import pytest
import torch
from animguard.blocks.tensor_core import check_image, check_frames, clamp_valid, linf_project, linf_norm, mse


def test_linf_project_clamps_outside_and_keeps_inside():

    delta = torch.tensor([0.1, -0.3, 0.02, -0.05], dtype=torch.float64)
    out = linf_project(delta, 0.06)

    assert torch.equal(out, torch.tensor([0.06, -0.06, 0.02, -0.05], dtype=torch.float64))


def test_linf_project_is_idempotent(make_image):

    delta = make_image(1) - 0.5
    once = linf_project(delta, 0.1)

    assert torch.equal(linf_project(once, 0.1), once)
    assert linf_norm(once) <= 0.1


def test_linf_project_zero_budget_and_negative_budget():

    delta = torch.tensor([0.2, -0.1])
    assert torch.equal(linf_project(delta, 0.0), torch.zeros(2))

    with pytest.raises(ValueError):
        linf_project(delta, -0.1)


def test_clamp_valid():
    img = torch.tensor([-0.5, 0.3, 1.7])
    assert torch.equal(clamp_valid(img), torch.tensor([0.0, 0.3, 1.0]))


def test_linf_norm():
    assert linf_norm(torch.tensor([0.1, -0.4, 0.2])) == pytest.approx(0.4)
    assert linf_norm(torch.zeros(0)) == 0.0


def test_mse_is_a_mean():

    a = torch.zeros(2, 2, dtype=torch.float64)
    b = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)

    assert float(mse(a, b)) == pytest.approx(0.5)

    with pytest.raises(ValueError):
        mse(a, torch.zeros(3))


def test_image_contract():

    check_image(torch.zeros(3, 8, 13))

    with pytest.raises(ValueError):
        check_image(torch.zeros(4, 8, 8))
    with pytest.raises(ValueError):
        check_image(torch.zeros(3, 7, 8))


def test_frame_sequence_contract():

    with pytest.raises(ValueError):
        check_frames([])
    with pytest.raises(ValueError):
        check_frames([torch.zeros(3, 8, 8), torch.zeros(3, 16, 16)])

    assert len(check_frames([torch.zeros(3, 8, 8)] * 2)) == 2
