"""Segmentation-conditioned x4 super-resolution with spatial feature transform layers."""

from .autodiff import Tensor, finite_diff_check, grad
from .models import ConditioningMode, Discriminator, FeatureNet, Generator, ModelConfig, build_generator

__all__ = [
    "ConditioningMode", "Discriminator", "FeatureNet", "Generator", "ModelConfig", "Tensor",
    "build_generator", "finite_diff_check", "grad",
]
