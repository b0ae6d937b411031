"""Finite-difference checks over ops, layers and the full generator-plus-losses graph."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor
from .layers import ConditionNetwork, FiLMLayer, ResBlock, ResBlockSFT, SFTLayer, sft_apply
from .losses import LossWeights, aux_class_loss, discriminator_loss, generator_total_loss, perceptual_loss
from .models import Discriminator, FeatureNet, ModelConfig, build_generator

SCOPES = ("ops", "layers", "end2end")
DEFAULT_TOL = 1e-3


def _leaf(rng: np.random.Generator, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _weighted_sum(out: Tensor, seed: int = 99) -> Tensor:
    # A fixed random projection makes every output coordinate matter.
    w = np.random.default_rng(seed).uniform(-1, 1, out.shape)
    return ad.sum_all(out * Tensor(w))


def _probs(rng: np.random.Generator, n: int, k1: int, h: int, w: int) -> np.ndarray:
    p = rng.uniform(0.1, 1.0, (n, k1, h, w))
    return p / p.sum(axis=1, keepdims=True)


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 2, 3, 4, 4)
    chan = _leaf(rng, 2, 3, 1, 1)
    x = _leaf(rng, 1, 2, 5, 5)
    wt, bias = _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    w1 = _leaf(rng, 4, 2, 1, 1)
    pos = _leaf(rng, 2, 3, 4, 4, lo=0.2, hi=2.0)
    logits = _leaf(rng, 3, 8, 1, 1, lo=-3, hi=3)
    return {
        "add": (lambda: _weighted_sum(ad.add(a, b)), [a, b]),
        "mul": (lambda: _weighted_sum(ad.mul(a, b)), [a, b]),
        "mul_broadcast": (lambda: _weighted_sum(ad.mul(a, chan)), [a, chan]),
        "conv2d_s1p1": (lambda: _weighted_sum(ad.conv2d(x, wt, bias, 1, 1)), [x, wt, bias]),
        "conv2d_s2p1": (lambda: _weighted_sum(ad.conv2d(x, wt, bias, 2, 1)), [x, wt, bias]),
        "conv2d_1x1": (lambda: _weighted_sum(ad.conv2d(x, w1, None)), [x, w1]),
        "leaky_relu": (lambda: _weighted_sum(ad.leaky_relu(a, 0.2)), [a]),
        "nearest_upsample": (lambda: _weighted_sum(ad.nearest_upsample(x, 2)), [x]),
        "sum": (lambda: ad.sum_all(a * a), [a]),
        "mean": (lambda: ad.mean(a * a), [a]),
        "global_avg_pool": (lambda: _weighted_sum(ad.global_avg_pool(a)), [a]),
        "sigmoid": (lambda: _weighted_sum(ad.sigmoid(a * 3.0)), [a]),
        "log_softmax": (lambda: _weighted_sum(ad.log_softmax(logits, 1)), [logits]),
        "log": (lambda: _weighted_sum(ad.log(pos)), [pos]),
        "concat": (lambda: _weighted_sum(ad.concat([a, b], 1)), [a, b]),
        "take_channels": (lambda: _weighted_sum(ad.take_channels(a, 1, 3)), [a]),
        "conv_leaky_mean": (lambda: ad.mean(ad.leaky_relu(ad.conv2d(x, wt, bias, 1, 1), 0.2)), [x, wt, bias]),
    }


def layer_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    lrng = np.random.default_rng([seed, 1])
    k1, cc, c = 4, 8, 6
    feat = _leaf(rng, 1, c, 5, 5)
    gamma, beta = _leaf(rng, 1, c, 5, 5), _leaf(rng, 1, c, 5, 5)
    probs = Tensor(_probs(rng, 1, k1, 5, 5), requires_grad=True)
    shared = _leaf(rng, 1, cc, 5, 5)
    cond = ConditionNetwork(k1, lrng, hidden=8, out_ch=cc)
    sft = SFTLayer(cc, c, lrng)
    film = FiLMLayer(cc, c, lrng)
    block = ResBlockSFT(c, cc, lrng)
    plain = ResBlock(c, lrng)
    for layer in (sft, film, block):
        # Move the heads off their near-identity init so every path carries signal.
        for p in layer.parameters():
            if p.data.ndim == 4 and p.shape[2] == 1:
                p.data = lrng.uniform(-0.5, 0.5, p.shape)
    feats = FeatureNet(seed=3)
    img = _leaf(rng, 1, 3, 8, 8, lo=0.0, hi=1.0)
    return {
        "sft_apply": (lambda: _weighted_sum(sft_apply(feat, gamma, beta)), [feat, gamma, beta]),
        "condition_network": (lambda: _weighted_sum(cond(probs)), [probs] + cond.parameters()),
        "sft_layer": (lambda: _weighted_sum(sft(feat, shared)), [feat, shared] + sft.parameters()),
        "film_layer": (lambda: _weighted_sum(film(feat, shared)), [feat, shared] + film.parameters()),
        "resblock_sft": (lambda: _weighted_sum(block(feat, shared)), [feat, shared] + block.parameters()),
        "resblock": (lambda: _weighted_sum(plain(feat)), [feat] + plain.parameters()),
        "condition_to_sft": (lambda: _weighted_sum(sft(feat, cond(probs))), [probs]),
        "feature_net": (lambda: _weighted_sum(feats(img)), [img]),
    }


def end2end_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(num_classes=2, width=8, blocks=2, cond_channels=8, seed=seed)
    G = build_generator(cfg, "sft")
    for m in G.modulators():
        for head in (m.gamma_head, m.beta_head):
            head.out.weight.data = rng.uniform(-0.3, 0.3, head.out.weight.shape).astype(np.float32)
    D = Discriminator(2, 32, seed=seed)
    feats = FeatureNet(seed=seed + 1)
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)), requires_grad=True)
    probs = Tensor(_probs(rng, 1, 3, 8, 8))
    hr = Tensor(rng.uniform(0, 1, (1, 3, 32, 32)))
    weights = LossWeights(1.0, 1e-3, 1e-1)
    labels = np.array([1])

    def generator_loss():
        sr = G(x, probs)
        d_fake, cls = D(sr)
        total, _ = generator_total_loss(sr, hr, d_fake, cls, labels, weights, feats)
        return total

    def perceptual_only():
        return perceptual_loss(G(x, probs), hr, feats)

    def disc_loss():
        with ad.no_grad():
            sr = G(x, probs)
        d_real, cls_real = D(hr)
        d_fake, _ = D(sr.detach())
        return discriminator_loss(d_real, d_fake) + aux_class_loss(cls_real, labels)

    g_params = dict(G.named_parameters())
    return {
        "generator_perceptual": (perceptual_only, {"x": x, **g_params}),
        "generator_total": (generator_loss, {"x": x, **g_params}),
        "discriminator_total": (disc_loss, dict(D.named_parameters())),
    }


def run_scope(scope: str, seed: int = 0, tol: float = DEFAULT_TOL, max_coords: int = 6) -> list[tuple[str, GradCheckReport]]:
    if scope not in SCOPES:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    cases = {"ops": op_cases, "layers": layer_cases, "end2end": end2end_cases}[scope](seed)
    return [(name, ad.finite_diff_check(f, params, tol=tol, max_coords=max_coords, seed=seed))
            for name, (f, params) in cases.items()]


def format_table(rows: list[tuple[str, GradCheckReport]]) -> str:
    width = max(len(name) for name, _ in rows)
    lines = [f"{'case':<{width}}  {'max rel err':>12}  {'tol':>8}  result"]
    for name, rep in rows:
        lines.append(f"{name:<{width}}  {rep.max_error:>12.3e}  {rep.tol:>8.1e}  {'PASS' if rep.passed else 'FAIL'}")
    return "\n".join(lines)
