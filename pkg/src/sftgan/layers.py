"""Spatial feature transform layers, the shared condition network and residual blocks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

LEAKY_SLOPE = 0.2


class Module:
    """Parameter container. Parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "", include_frozen: bool = False) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            _collect(value, f"{prefix}{name}", include_frozen, out)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _collect(value, key: str, include_frozen: bool, out: dict[str, Tensor]) -> None:
    if isinstance(value, Tensor):
        if value.requires_grad or include_frozen:
            out[key] = value
    elif isinstance(value, Module):
        out.update(value.named_parameters(key + ".", include_frozen))
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _collect(item, f"{key}.{i}", include_frozen, out)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 pad: int | None = None, gain: float = 1.0, trainable: bool = True):
        # He-uniform for the leaky slope, optionally shrunk by ``gain``.
        bound = gain * np.sqrt(6.0 / ((1 + LEAKY_SLOPE**2) * cin * k * k))
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=trainable)
        self.bias = Tensor(np.zeros(cout), requires_grad=trainable)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.pad)


def sft_apply(feat: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """gamma * feat + beta, elementwise over identically shaped tensors."""
    if not (feat.shape == gamma.shape == beta.shape):
        raise ShapeError(f"SFT needs equal shapes, got F{feat.shape} gamma{gamma.shape} beta{beta.shape}")
    return gamma * feat + beta


class ConditionNetwork(Module):
    """Four 1x1 convolutions mapping probability maps to shared conditions."""

    def __init__(self, in_ch: int, rng: np.random.Generator, hidden: int = 64, out_ch: int = 32):
        plan = [in_ch, hidden, hidden, hidden, out_ch]
        self.in_ch = in_ch
        self.convs = [Conv2d(a, b, 1, rng) for a, b in zip(plan[:-1], plan[1:])]

    def forward(self, probs: Tensor) -> Tensor:
        if probs.shape[1] != self.in_ch:
            raise ShapeError(f"condition network expects {self.in_ch} probability channels, got {probs.shape[1]}")
        h = probs
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h


class _Head(Module):
    def __init__(self, cond_ch: int, out_ch: int, rng: np.random.Generator, out_bias: float):
        self.hidden = Conv2d(cond_ch, cond_ch, 1, rng)
        self.out = Conv2d(cond_ch, out_ch, 1, rng, gain=0.005)
        self.out.bias.data[:] = out_bias

    def forward(self, shared: Tensor) -> Tensor:
        return self.out(ad.leaky_relu(self.hidden(shared), LEAKY_SLOPE))


class SFTLayer(Module):
    """Predicts per-pixel (gamma, beta) from the shared condition and modulates features.

    The output biases start at gamma=1, beta=0 with tiny output weights, so a
    fresh layer is close to the identity.
    """

    def __init__(self, cond_ch: int, feat_ch: int, rng: np.random.Generator):
        self.gamma_head = _Head(cond_ch, feat_ch, rng, out_bias=1.0)
        self.beta_head = _Head(cond_ch, feat_ch, rng, out_bias=0.0)

    def modulation(self, shared: Tensor) -> tuple[Tensor, Tensor]:
        return self.gamma_head(shared), self.beta_head(shared)

    def forward(self, feat: Tensor, shared: Tensor) -> Tensor:
        if feat.shape[2:] != shared.shape[2:]:
            raise ShapeError(f"features {feat.shape} and shared condition {shared.shape} differ spatially")
        gamma, beta = self.modulation(shared)
        return sft_apply(feat, gamma, beta)


class FiLMLayer(SFTLayer):
    """Same heads as SFTLayer, fed the spatial mean of the condition: one (gamma, beta) per map."""

    def modulation(self, shared: Tensor) -> tuple[Tensor, Tensor]:
        return super().modulation(ad.global_avg_pool(shared))

    def forward(self, feat: Tensor, shared: Tensor) -> Tensor:
        gamma, beta = self.modulation(shared)
        return feat * gamma + beta


class ResBlockSFT(Module):
    """SFT -> conv3x3 -> leaky -> SFT -> conv3x3, plus identity skip."""

    def __init__(self, width: int, cond_ch: int, rng: np.random.Generator, film: bool = False):
        layer, tag = (FiLMLayer, "film") if film else (SFTLayer, "sft")
        self.width = width
        # Parameter names carry the layer kind, so checkpoints of the two modes never mix.
        self._mods = (f"{tag}0", f"{tag}1")
        setattr(self, self._mods[0], layer(cond_ch, width, rng))
        self.conv0 = Conv2d(width, width, 3, rng)
        setattr(self, self._mods[1], layer(cond_ch, width, rng))
        self.conv1 = Conv2d(width, width, 3, rng, gain=0.005)

    def modulators(self) -> list[SFTLayer]:
        return [getattr(self, name) for name in self._mods]

    def forward(self, feat: Tensor, shared: Tensor) -> Tensor:
        if feat.shape[1] != self.width:
            raise ShapeError(f"block width {self.width} does not match {feat.shape[1]} input channels")
        m0, m1 = self.modulators()
        h = ad.leaky_relu(self.conv0(m0(feat, shared)), LEAKY_SLOPE)
        h = self.conv1(m1(h, shared))
        return feat + h


class ResBlock(Module):
    """Unconditioned conv3x3 -> leaky -> conv3x3 block with identity skip."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.width = width
        self.conv0 = Conv2d(width, width, 3, rng)
        self.conv1 = Conv2d(width, width, 3, rng, gain=0.005)

    def forward(self, feat: Tensor) -> Tensor:
        if feat.shape[1] != self.width:
            raise ShapeError(f"block width {self.width} does not match {feat.shape[1]} input channels")
        return feat + self.conv1(ad.leaky_relu(self.conv0(feat), LEAKY_SLOPE))
