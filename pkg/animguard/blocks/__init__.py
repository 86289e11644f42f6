from animguard.blocks.tensor_core import clamp_valid, linf_project, linf_norm
from animguard.blocks.extractors import ExtractorBundle, resolve_bundle
from animguard.blocks.schedule import DiffusionSchedule, make_schedule
from animguard.blocks.losses import LossWeights, LossBreakdown, loss_dormant
from animguard.blocks.eot import EotSettings, TransformSpec
from animguard.blocks.metrics import MetricReport, evaluate, image_similarity
from animguard.blocks.toy_stack import build_toy_stack, ToyAnimator
from animguard.blocks.pgd import PGD, ProtectionConfig, OptimizationTrace, protect
from animguard.blocks.robustness import SweepAxis, SweepTable, sweep, interpolate_average_purify
from animguard.blocks import production

__all__ = [
    'clamp_valid', 'linf_project', 'linf_norm', 'ExtractorBundle', 'resolve_bundle', 'DiffusionSchedule',
    'make_schedule', 'LossWeights', 'LossBreakdown', 'loss_dormant', 'EotSettings', 'TransformSpec',
    'MetricReport', 'evaluate', 'image_similarity', 'build_toy_stack', 'ToyAnimator', 'PGD',
    'ProtectionConfig', 'OptimizationTrace', 'protect', 'SweepAxis', 'SweepTable', 'sweep',
    'interpolate_average_purify', 'production',
]
