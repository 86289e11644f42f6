import math
import numpy as np
import pytest
import torch
from animguard.blocks.schedule import (
    make_schedule,
    timestep_window,
    sample_timestep,
    sample_latent_frames,
    add_noise,
    estimate_z0,
    estimate_z0_from_alpha_bar,
)
from animguard.exceptions import ScheduleError


@pytest.mark.parametrize("kind", ["linear", "scaled_linear", "squaredcos_cap_v2"])
def test_schedule_is_well_formed(kind):

    sched = make_schedule(kind, 1000, 25)
    alpha_bar = np.array(sched.alpha_bar)

    assert len(sched.beta) == 1000
    assert all(0 < b < 1 for b in sched.beta)
    assert np.all(np.diff(alpha_bar) < 0)
    assert np.all(np.diff(sched.inference_index_map) > 0)
    assert sched.inference_index_map[0] == 0
    assert sched.inference_index_map[1] == 40


def test_scaled_linear_endpoints():

    sched = make_schedule("scaled_linear", 1000, 25)

    assert sched.beta[0] == pytest.approx(0.00085)
    assert sched.beta[-1] == pytest.approx(0.012)
    assert sched.alpha_bar[0] == pytest.approx(1 - 0.00085)


def test_injected_betas():

    sched = make_schedule("linear", 4, 2, betas=[0.1, 0.2, 0.3, 0.4])
    assert sched.alpha_bar[-1] == pytest.approx(0.9 * 0.8 * 0.7 * 0.6)

    with pytest.raises(ScheduleError):
        make_schedule("linear", 4, 2, betas=[0.1, 0.2, 1.0, 0.4])
    with pytest.raises(ScheduleError):
        make_schedule("linear", 4, 2, betas=[0.1, 0.2])


def test_bad_schedule_arguments():

    with pytest.raises(ScheduleError):
        make_schedule("cosine-ish", 1000, 25)
    with pytest.raises(ScheduleError):
        make_schedule("linear", 10, 20)


def test_timestep_window_ends():

    sched = make_schedule("scaled_linear", 1000, 25)

    assert timestep_window(sched, 10) == tuple(range(0, 400, 40))
    assert timestep_window(sched, 3, "high_noise") == (880, 920, 960)

    with pytest.raises(ScheduleError):
        timestep_window(sched, 0)
    with pytest.raises(ScheduleError):
        timestep_window(sched, 26)
    with pytest.raises(ScheduleError):
        timestep_window(sched, 5, "middle")


def test_sampled_timesteps_are_uniform_over_the_window():

    sched = make_schedule("scaled_linear", 1000, 25)
    window = timestep_window(sched, 10)
    rng = torch.Generator().manual_seed(0)

    draws = 50000
    counts = {t: 0 for t in window}
    for _ in range(draws):
        counts[sample_timestep(sched, 10, rng)] += 1

    p = 1 / 10
    sigma = math.sqrt(draws * p * (1 - p))
    for t in window:
        assert abs(counts[t] - draws * p) <= 3 * sigma


def test_sample_latent_frames_is_seeded():

    a = sample_latent_frames(5, (4, 4, 4), torch.Generator().manual_seed(3))
    b = sample_latent_frames(5, (4, 4, 4), torch.Generator().manual_seed(3))

    assert len(a) == 5
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert not torch.equal(a[0], a[1])

    with pytest.raises(ValueError):
        sample_latent_frames(0, (4, 4, 4), torch.Generator())


def test_estimate_z0_scalar_case():

    z0 = estimate_z0_from_alpha_bar(torch.tensor(1.0, dtype=torch.float64), torch.tensor(0.5, dtype=torch.float64), 0.25)
    assert float(z0) == pytest.approx((1 - math.sqrt(0.75) * 0.5) / 0.5, abs=1e-12)
    assert float(z0) == pytest.approx(1.13397, abs=1e-4)


def test_estimate_z0_inverts_the_forward_process():

    sched = make_schedule("scaled_linear", 1000, 25)
    generator = torch.Generator().manual_seed(1)
    z0 = torch.randn((4, 4, 4), generator=generator, dtype=torch.float64)
    eps = torch.randn((4, 4, 4), generator=generator, dtype=torch.float64)

    for t in range(sched.train_steps):
        if sched.alpha_bar[t] <= 1e-4:
            continue
        z_t = add_noise(z0, eps, t, sched)
        assert torch.allclose(estimate_z0(z_t, eps, t, sched), z0, atol=1e-5)


def test_singular_alpha_bar_is_rejected():

    with pytest.raises(ScheduleError):
        estimate_z0_from_alpha_bar(torch.ones(1), torch.ones(1), 0.0)

    sched = make_schedule("linear", 10, 5)
    with pytest.raises(ScheduleError):
        sched.alpha_bar_at(10)
