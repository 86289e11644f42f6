import math
import pytest
import torch
from animguard.blocks.losses import (
    LossWeights,
    loss_vae,
    loss_feature,
    loss_frame,
    loss_lpips_penalty,
    loss_dormant,
)
from animguard.blocks.schedule import make_schedule, sample_latent_frames
from animguard.blocks.extractors import NoisePredictor
from animguard.blocks.toy_stack import IdentityLatentEncoder, ToyPerceptualDistance


@pytest.fixture
def schedule():
    return make_schedule("scaled_linear", 1000, 25)


def frame_noise(frames, seed=0):
    return sample_latent_frames(frames, (4, 4, 4), torch.Generator().manual_seed(seed))


def test_default_weights():

    w = LossWeights()

    assert (w.lambda1, w.lambda_clip, w.lambda_ref, w.lambda3, w.lambda4, w.zeta) == (10, 10, 100, 1, 10, 0.1)

    with pytest.raises(ValueError):
        LossWeights(lambda3=-1)


def test_ablation_zeroes_named_terms():

    w = LossWeights().ablate(["frame", "lpips"])

    assert w.lambda3 == 0 and w.lambda4 == 0
    assert w.lambda1 == 10

    with pytest.raises(ValueError):
        LossWeights().ablate(["style"])


def test_every_term_is_zero_without_perturbation(bundle, image, schedule):

    zero = torch.zeros_like(image)

    assert float(loss_vae(image, zero, bundle.encoder)) == 0.0

    clip_term, ref_term = loss_feature(image, zero, bundle.semantic, bundle.references, bundle.encoder)
    assert float(clip_term) == 0.0
    assert float(ref_term) == 0.0

    assert float(loss_lpips_penalty(image, zero, bundle.perceptual, 0.1)) == 0.0


def test_identity_encoder_latent_loss_is_the_pixel_mse(image):

    delta = torch.full_like(image, 0.05)

    assert float(loss_vae(image, delta, IdentityLatentEncoder())) == pytest.approx(0.05 ** 2)


def test_reference_term_sums_over_the_ensemble(bundle, image):

    delta = 0.03 * torch.sign(torch.randn(image.shape, generator=torch.Generator().manual_seed(0), dtype=torch.float64))

    _, total = loss_feature(image, delta, bundle.semantic, bundle.references, bundle.encoder)
    parts = [loss_feature(image, delta, bundle.semantic, (ref,), bundle.encoder)[1] for ref in bundle.references]

    assert float(total) == pytest.approx(float(sum(parts)))

    with pytest.raises(ValueError):
        loss_feature(image, delta, bundle.semantic, (), bundle.encoder)


def test_frame_term_with_one_frame_is_only_the_alignment(bundle, image, schedule):

    delta = torch.zeros_like(image)
    value = loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 1, 0, frame_noise(1))

    assert float(value) >= 0.0


def test_frame_term_pairwise_average(bundle, image, schedule):

    delta = torch.zeros_like(image)
    noise = frame_noise(3)

    full = loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 3, 40, noise)
    alignments = [
        loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 1, 40, [n]) for n in noise
    ]

    # the pairwise part is non-negative, so the full term is at least the mean alignment
    assert float(full) >= float(sum(alignments) / 3) - 1e-12


class ZeroNoisePredictor(NoisePredictor):

    def predict(self, z_t, cond, t):
        return torch.zeros_like(z_t)


def test_frame_term_hand_computation(bundle, schedule):

    x = torch.full((3, 8, 8), 0.5, dtype=torch.float64)
    t = schedule.inference_index_map[0]
    scale = math.sqrt(schedule.alpha_bar_at(t))

    # with zero predicted noise the one-shot estimates are z_t / sqrt(alpha_bar): 0.9 and 0.3
    noise = [torch.full_like(x, 0.9 * scale), torch.full_like(x, 0.3 * scale)]
    value = loss_frame(x, torch.zeros_like(x), IdentityLatentEncoder(), ZeroNoisePredictor(), bundle.pose, schedule, 2, t, noise)

    alignment = (0.4 ** 2 + 0.2 ** 2) / 2
    pairwise = 0.6 ** 2

    assert float(value) == pytest.approx(alignment + pairwise, abs=1e-12)


def test_frame_term_argument_checks(bundle, image, schedule):

    delta = torch.zeros_like(image)

    with pytest.raises(ValueError):
        loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 3, 0, frame_noise(2))
    with pytest.raises(ValueError):
        loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 0, 0, [])


def test_frame_term_depends_on_the_perturbation_through_conditioning(bundle, image, schedule):

    delta = torch.zeros_like(image, requires_grad=True)
    value = loss_frame(image, delta, bundle.encoder, bundle.noise_predictor, bundle.pose, schedule, 5, 0, frame_noise(5))
    grad = torch.autograd.grad(value, delta)[0]

    assert torch.any(grad != 0)


class ConstantDistance(ToyPerceptualDistance):

    def __init__(self, value):
        super(ConstantDistance, self).__init__()
        self.value = value

    def distance(self, a, b):
        return torch.tensor(self.value, dtype=torch.float64)


@pytest.mark.parametrize("distance, zeta, expected", [(0.05, 0.1, 0.0), (0.1, 0.1, 0.0), (0.25, 0.1, 0.15), (0.3, 0.0, 0.3)])
def test_lpips_hinge(image, distance, zeta, expected):

    value = loss_lpips_penalty(image, torch.zeros_like(image), ConstantDistance(distance), zeta)
    assert float(value) == pytest.approx(expected, abs=1e-15)


def test_lpips_hinge_rejects_negative_budget(bundle, image):
    with pytest.raises(ValueError):
        loss_lpips_penalty(image, torch.zeros_like(image), bundle.perceptual, -0.1)


def test_composed_objective_matches_its_breakdown(bundle, image, schedule):

    delta = 0.05 * torch.sign(torch.randn(image.shape, generator=torch.Generator().manual_seed(2), dtype=torch.float64))
    w = LossWeights(zeta=0.0)

    total, b = loss_dormant(image, delta, bundle, w, 5, 40, frame_noise(5), schedule)
    expected = 10 * b.vae + 10 * b.clip + 100 * b.reference + 1 * b.frame - 10 * b.lpips_penalty

    assert float(total) == pytest.approx(expected, rel=1e-12)
    assert b.total == pytest.approx(expected, rel=1e-12)
    assert b.lpips_penalty > 0


def test_zero_weight_terms_are_skipped(bundle, image, schedule):

    delta = torch.full_like(image, 0.02)
    w = LossWeights(lambda_clip=0, lambda_ref=0, lambda3=0, lambda4=0)

    total, b = loss_dormant(image, delta, bundle, w, 5, 0, frame_noise(5), schedule)

    assert (b.clip, b.reference, b.frame, b.lpips_penalty) == (0.0, 0.0, 0.0, 0.0)
    assert b.total == pytest.approx(10 * b.vae)


def test_ablated_terms_can_be_recorded_without_moving_the_objective(bundle, image, schedule):

    w = LossWeights(lambda_clip=0, lambda_ref=0, lambda3=0, lambda4=0, zeta=0.0)
    noise = frame_noise(5)

    def run(record):
        delta = torch.full_like(image, 0.02).requires_grad_(True)
        total, b = loss_dormant(image, delta, bundle, w, 5, 40, noise, schedule, record_ablated=record)
        return torch.autograd.grad(total, delta)[0], b

    grad, skipped = run(False)
    recorded_grad, recorded = run(True)

    assert torch.equal(grad, recorded_grad)
    assert recorded.total == skipped.total
    assert recorded.vae == skipped.vae
    assert recorded.frame > 0
    assert recorded.lpips_penalty > 0
    assert skipped.frame == 0.0


def test_penalty_measures_the_untransformed_perturbation(bundle, image, schedule):

    from animguard.blocks.eot import gaussian_blur

    only_lpips = LossWeights(lambda1=0, lambda_clip=0, lambda_ref=0, lambda3=0, lambda4=10, zeta=0.0)
    transformed = torch.clamp(gaussian_blur(image, 2.0), 0, 1) - image
    zero = torch.zeros_like(image)

    _, seen = loss_dormant(image, transformed, bundle, only_lpips, 5, 0, frame_noise(5), schedule)
    _, visible = loss_dormant(image, transformed, bundle, only_lpips, 5, 0, frame_noise(5), schedule, visible_delta=zero)

    assert seen.lpips_penalty > 0
    assert visible.lpips_penalty == 0.0
    assert visible.total == 0.0


def test_lpips_term_has_no_gradient_at_zero_perturbation(bundle, image, schedule):

    only_lpips = LossWeights(lambda1=0, lambda_clip=0, lambda_ref=0, lambda3=0, lambda4=10, zeta=0.1)
    delta = torch.zeros_like(image, requires_grad=True)

    total, _ = loss_dormant(image, delta, bundle, only_lpips, 5, 0, frame_noise(5), schedule)
    grad = torch.autograd.grad(total, delta)[0]

    assert torch.all(grad == 0)


def test_objective_gradient_matches_finite_differences(bundle, schedule):

    w = LossWeights(zeta=0.0)
    noise = frame_noise(5, seed=3)

    for trial in range(10):

        generator = torch.Generator().manual_seed(100 + trial)
        x = torch.rand((3, 8, 8), generator=generator, dtype=torch.float64) * 0.8 + 0.1
        delta = (torch.rand((3, 8, 8), generator=generator, dtype=torch.float64) * 2 - 1) * 0.05
        direction = torch.randn((3, 8, 8), generator=generator, dtype=torch.float64)

        d = delta.clone().requires_grad_(True)
        total, _ = loss_dormant(x, d, bundle, w, 5, 40, noise, schedule)
        grad = torch.autograd.grad(total, d)[0]

        h = 1e-4
        plus, _ = loss_dormant(x, delta + h * direction, bundle, w, 5, 40, noise, schedule)
        minus, _ = loss_dormant(x, delta - h * direction, bundle, w, 5, 40, noise, schedule)

        numeric = float(plus - minus) / (2 * h)
        analytic = float(torch.sum(grad * direction))

        assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-8)
