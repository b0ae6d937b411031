"""Generator variants, discriminator and the frozen feature network."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import LEAKY_SLOPE, ConditionNetwork, Conv2d, Module, ResBlock, ResBlockSFT, SFTLayer


class ConditioningMode(str, enum.Enum):
    SFT = "sft"
    INPUT_CONCAT = "input_concat"
    FILM = "film"
    COMPOSITIONAL = "compositional"
    NONE = "none"


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 2          # K, excluding background
    width: int = 32
    blocks: int = 8
    cond_channels: int = 32
    scale: int = 4
    seed: int = 0

    @property
    def prob_channels(self) -> int:
        return self.num_classes + 1


def _lrelu(x: Tensor) -> Tensor:
    return ad.leaky_relu(x, LEAKY_SLOPE)


def _check_inputs(x: Tensor, probs: Tensor | None, prob_channels: int) -> None:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"generator expects a Nx3xHxW image, got {x.shape}")
    if probs is None:
        return
    if probs.shape[0] != x.shape[0] or probs.shape[2:] != x.shape[2:]:
        raise ShapeError(f"probability maps {probs.shape} do not match image {x.shape}")
    if probs.shape[1] != prob_channels:
        raise ShapeError(f"expected {prob_channels} probability channels, got {probs.shape[1]}")
    p = probs.data
    if p.min() < 0 or p.max() > 1 or np.abs(p.sum(axis=1) - 1).max() > 1e-5:
        raise ValueError("probability maps must lie in [0, 1] and sum to 1 per pixel")


class Generator(Module):
    """Super-resolution network: entry conv, residual trunk, long skip, two x2 upsampling stages.

    The trunk and its inputs depend on ``mode``; everything after the long
    skip is shared by all variants.
    """

    def __init__(self, cfg: ModelConfig, mode: ConditioningMode | str = ConditioningMode.SFT):
        self.cfg = cfg
        self.mode = ConditioningMode(mode)
        if cfg.scale != 4:
            raise ValueError("only x4 generators are supported")
        rng = np.random.default_rng([cfg.seed, 0x6E])
        c, k1 = cfg.width, cfg.prob_channels
        in_ch = 3 + k1 if self.mode is ConditioningMode.INPUT_CONCAT else 3
        self.entry = Conv2d(in_ch, c, 3, rng)
        if self.mode in (ConditioningMode.SFT, ConditioningMode.FILM):
            self.condition = ConditionNetwork(k1, rng, out_ch=cfg.cond_channels)
            film = self.mode is ConditioningMode.FILM
            self.blocks = [ResBlockSFT(c, cfg.cond_channels, rng, film=film) for _ in range(cfg.blocks)]
        elif self.mode is ConditioningMode.COMPOSITIONAL:
            n_trunk = cfg.blocks // 2
            self.blocks = [ResBlock(c, rng) for _ in range(n_trunk)]
            self.branches = [[ResBlock(c, rng) for _ in range(cfg.blocks - n_trunk)] for _ in range(k1)]
        else:
            self.blocks = [ResBlock(c, rng) for _ in range(cfg.blocks)]
        self.post = Conv2d(c, c, 3, rng)
        self.up = [Conv2d(c, c, 3, rng), Conv2d(c, c, 3, rng)]
        self.exit0 = Conv2d(c, c, 3, rng)
        self.exit1 = Conv2d(c, 3, 3, rng)

    @property
    def conditioned(self) -> bool:
        return self.mode is not ConditioningMode.NONE

    def modulators(self) -> list[SFTLayer]:
        """All SFT (or FiLM) layers, in forward order."""
        if self.mode not in (ConditioningMode.SFT, ConditioningMode.FILM):
            return []
        return [m for b in self.blocks for m in b.modulators()]

    def shared_condition(self, probs: Tensor) -> Tensor:
        return self.condition(probs)

    def modulation_maps(self, probs: Tensor) -> list[tuple[Tensor, Tensor]]:
        """(gamma, beta) for every SFT layer; depends on the probability maps only."""
        shared = self.shared_condition(probs)
        return [m.modulation(shared) for m in self.modulators()]

    def _tail(self, trunk: Tensor, entry: Tensor) -> Tensor:
        h = self.post(trunk) + entry
        for conv in self.up:
            h = _lrelu(conv(ad.nearest_upsample(h, 2)))
        return self.exit1(_lrelu(self.exit0(h)))

    def forward(self, x: Tensor, probs: Tensor | None = None) -> Tensor:
        _check_inputs(x, probs if self.conditioned else None, self.cfg.prob_channels)
        if self.conditioned and probs is None:
            raise ValueError(f"mode {self.mode.value} needs probability maps")
        mode = self.mode
        if mode is ConditioningMode.INPUT_CONCAT:
            entry = _lrelu(self.entry(ad.concat([x, probs], axis=1)))
        else:
            entry = _lrelu(self.entry(x))
        h = entry
        if mode in (ConditioningMode.SFT, ConditioningMode.FILM):
            shared = self.shared_condition(probs)
            for block in self.blocks:
                h = block(h, shared)
        else:
            for block in self.blocks:
                h = block(h)
        if mode is ConditioningMode.COMPOSITIONAL:
            blended = None
            for k, branch in enumerate(self.branches):
                hk = h
                for block in branch:
                    hk = block(hk)
                term = hk * ad.take_channels(probs, k, k + 1)
                blended = term if blended is None else blended + term
            h = blended
        return self._tail(h, entry)

    def branch_forward(self, x: Tensor, k: int) -> Tensor:
        """Compositional variant evaluated through category ``k``'s branch alone."""
        if self.mode is not ConditioningMode.COMPOSITIONAL:
            raise ValueError("branch_forward is only defined for the compositional mode")
        entry = _lrelu(self.entry(x))
        h = entry
        for block in self.blocks:
            h = block(h)
        for block in self.branches[k]:
            h = block(h)
        return self._tail(h, entry)


def build_generator(cfg: ModelConfig, mode: ConditioningMode | str) -> Generator:
    try:
        mode = ConditioningMode(mode)
    except ValueError:
        raise ValueError(f"unknown conditioning mode {mode!r}") from None
    return Generator(cfg, mode)


def film_modulation(shared: Tensor, layer: SFTLayer) -> tuple[Tensor, Tensor]:
    """Per-channel (gamma, beta) from the spatial mean of the shared condition."""
    return SFTLayer.modulation(layer, ad.global_avg_pool(shared))


class Discriminator(Module):
    """Strided conv stack with a real/fake head and a category head on pooled features."""

    PLAN = ((32, 1), (32, 2), (64, 2), (64, 2), (128, 2))

    def __init__(self, num_classes: int, hr_size: int, seed: int = 0):
        rng = np.random.default_rng([seed, 0xD1])
        self.hr_size = hr_size
        self.num_classes = num_classes
        convs, cin = [], 3
        for cout, stride in self.PLAN:
            convs.append(Conv2d(cin, cout, 3, rng, stride=stride, pad=1))
            cin = cout
        self.convs = convs
        self.real_head = Conv2d(cin, 1, 1, rng)
        self.class_head = Conv2d(cin, num_classes + 1, 1, rng)

    def logits(self, img: Tensor) -> tuple[Tensor, Tensor]:
        if img.data.ndim != 4 or img.shape[1:] != (3, self.hr_size, self.hr_size):
            raise ShapeError(f"discriminator configured for Nx3x{self.hr_size}x{self.hr_size}, got {img.shape}")
        h = img
        for conv in self.convs:
            h = _lrelu(conv(h))
        pooled = ad.global_avg_pool(h)
        return self.real_head(pooled), self.class_head(pooled)

    def forward(self, img: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (probability real, Nx1x1x1) and (class log-probabilities, Nx(K+1)x1x1)."""
        real, cls = self.logits(img)
        return ad.sigmoid(real), ad.log_softmax(cls, axis=1)


class FeatureNet(Module):
    """Frozen random conv stack used as the perceptual feature space.

    Channels 3->16->32->64->64; the last three stages stride by 2, so the
    output is at 1/8 resolution.
    """

    def __init__(self, seed: int = 1234):
        rng = np.random.default_rng([seed, 0xFE])
        plan = ((3, 16, 1), (16, 32, 2), (32, 64, 2), (64, 64, 2))
        self.convs = [Conv2d(a, b, 3, rng, stride=s, pad=1, trainable=False) for a, b, s in plan]
        for conv in self.convs:
            # Random nonzero biases keep the leaky units in both regimes.
            conv.bias.data[:] = rng.uniform(-0.1, 0.1, conv.bias.shape)

    def forward(self, img: Tensor) -> Tensor:
        if img.shape[2] % 8 or img.shape[3] % 8:
            raise ShapeError(f"feature network needs H and W divisible by 8, got {img.shape}")
        h = img
        for conv in self.convs:
            h = _lrelu(conv(h))
        return h

    def checksum(self) -> str:
        return ad.parameters_checksum(self.named_parameters(include_frozen=True).values())
