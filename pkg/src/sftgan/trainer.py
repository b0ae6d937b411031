"""Adam, the step learning-rate schedule and the alternating GAN training loop."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig, parse_config
from .datagen import ScenePool, rng_stream
from .fileio import Checkpoint, load_checkpoint, save_checkpoint
from .layers import Module
from .losses import aux_class_loss, discriminator_loss, generator_total_loss
from .models import Discriminator, FeatureNet, Generator, build_generator

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "l_percep", "l_adv_g", "l_d", "l_cls", "lr", "l_g_total")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, mutating ``params`` and ``state`` in place."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAborted(f"non-finite gradient for parameter {name}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    return cfg.base_lr / 2 ** (iteration // cfg.decay_every)


@contextlib.contextmanager
def frozen(module: Module):
    """Stop gradient bookkeeping for a module's weights without touching their values."""
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


@dataclass
class TrainState:
    cfg: TrainConfig
    generator: Generator
    discriminator: Discriminator
    features: FeatureNet
    adam_g: AdamState = field(default_factory=AdamState)
    adam_d: AdamState = field(default_factory=AdamState)
    iteration: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        return cls(cfg=cfg,
                   generator=build_generator(cfg.model_config(), cfg.mode),
                   discriminator=Discriminator(cfg.num_classes, cfg.hr_patch, seed=cfg.seed),
                   features=FeatureNet(cfg.feature_seed))

    def to_checkpoint(self) -> Checkpoint:
        tensors: dict[str, np.ndarray] = {}
        for prefix, module in (("g", self.generator), ("d", self.discriminator)):
            for name, p in module.named_parameters().items():
                tensors[f"{prefix}.{name}"] = p.data.copy()
        for prefix, st in (("adam.g", self.adam_g), ("adam.d", self.adam_d)):
            tensors[f"{prefix}.t"] = np.asarray([st.t], dtype=np.float32)
            for name in st.m:
                tensors[f"{prefix}.m.{name}"] = st.m[name].copy()
                tensors[f"{prefix}.v.{name}"] = st.v[name].copy()
        return Checkpoint(tensors=tensors, iteration=self.iteration,
                          config_hash=self.cfg.config_hash(), meta=self.cfg.items())

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: TrainConfig | None = None) -> "TrainState":
        stored = config_from_meta(ckpt.meta)
        if cfg is None:
            cfg = stored
        elif cfg.config_hash() != ckpt.config_hash:
            warnings.warn("checkpoint was written with a different configuration", stacklevel=2)
        state = cls.fresh(cfg)
        for prefix, module in (("g", state.generator), ("d", state.discriminator)):
            for name, p in module.named_parameters().items():
                key = f"{prefix}.{name}"
                if key not in ckpt.tensors or ckpt.tensors[key].shape != p.shape:
                    raise ValueError(f"checkpoint has no compatible tensor {key}")
                p.data = ckpt.tensors[key].copy()
        for prefix, st in (("adam.g", state.adam_g), ("adam.d", state.adam_d)):
            st.t = int(ckpt.tensors.get(f"{prefix}.t", np.zeros(1))[0])
            for key, arr in ckpt.tensors.items():
                if key.startswith(f"{prefix}.m."):
                    name = key[len(prefix) + 3 :]
                    st.m[name] = arr.copy()
                    st.v[name] = ckpt.tensors[f"{prefix}.v.{name}"].copy()
        state.iteration = ckpt.iteration
        return state


def config_from_meta(meta: dict[str, str]) -> TrainConfig:
    return parse_config("".join(f"{k} = {v}\n" for k, v in meta.items()))


def save_state(path, state: TrainState) -> None:
    save_checkpoint(path, state.to_checkpoint())


def load_state(path, cfg: TrainConfig | None = None) -> TrainState:
    return TrainState.from_checkpoint(load_checkpoint(path), cfg)


def make_pool(cfg: TrainConfig) -> ScenePool:
    return ScenePool(cfg.scene_spec(), cfg.scene_count, cfg.seed)


def train_step(state: TrainState, pool: ScenePool) -> dict[str, float]:
    """One discriminator update followed by one generator update."""
    cfg, G, D = state.cfg, state.generator, state.discriminator
    it = state.iteration
    x, probs, y, labels = pool.sample_batch(rng_stream(cfg.seed, "batch", it), cfg.batch, cfg.hr_patch)
    lr = lr_at(it, cfg)
    X, P, Y = Tensor(x), Tensor(probs), Tensor(y)

    fake = G(X, P)

    d_params = D.named_parameters()
    d_real, cls_real = D(Y)
    d_fake, cls_fake = D(fake.detach())
    l_d = discriminator_loss(d_real, d_fake)
    l_cls = aux_class_loss(cls_real, labels)
    loss_d = l_d + l_cls + aux_class_loss(cls_fake, labels)
    adam_step(d_params, ad.backward(loss_d, d_params), state.adam_d, lr, cfg.beta1, cfg.beta2, cfg.eps_adam)

    g_params = G.named_parameters()
    with frozen(D):
        d_fake_g, cls_fake_g = D(fake)
        total, parts = generator_total_loss(fake, Y, d_fake_g, cls_fake_g, labels, cfg.loss_weights,
                                            state.features, cfg.saturating)
        grads = ad.backward(total, g_params)
    adam_step(g_params, grads, state.adam_g, lr, cfg.beta1, cfg.beta2, cfg.eps_adam)

    state.iteration = it + 1
    row = {"iteration": it, "l_percep": parts["l_percep"], "l_adv_g": parts["l_adv_g"],
           "l_d": l_d.item(), "l_cls": l_cls.item(), "lr": lr, "l_g_total": total.item()}
    for k, v in row.items():
        if not math.isfinite(v):
            raise TrainingAborted(f"non-finite {k} at iteration {it}")
    return row


def train_gan(cfg: TrainConfig, pool: ScenePool | None = None, state: TrainState | None = None,
              log_path=None, checkpoint_path=None) -> TrainState:
    """Train until ``cfg.iters`` total iterations, resuming from ``state`` if given.

    A non-finite loss or gradient raises :class:`TrainingAborted`; checkpoints
    written before that point are left untouched.
    """
    pool = pool or make_pool(cfg)
    state = state or TrainState.fresh(cfg)
    writer = None
    handle = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        resume = state.iteration > 0 and log_path.exists()
        handle = open(log_path, "a" if resume else "w", newline="")
        if not resume:
            for line in cfg.echo().splitlines():
                handle.write(f"# {line}\n")
        writer = csv.DictWriter(handle, fieldnames=LOG_COLUMNS)
        if not resume:
            writer.writeheader()
    try:
        while state.iteration < cfg.iters:
            try:
                row = train_step(state, pool)
            except (ad.NonFiniteError, FloatingPointError) as exc:
                raise TrainingAborted(f"iteration {state.iteration}: {exc}") from exc
            state.history.append(row)
            if writer is not None:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
            if row["iteration"] % 100 == 0:
                log.info("iter %d  g=%.4f  d=%.4f  cls=%.4f", row["iteration"], row["l_g_total"], row["l_d"], row["l_cls"])
            if checkpoint_path and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_state(checkpoint_path, state)
    finally:
        if handle is not None:
            handle.close()
    if checkpoint_path:
        save_state(checkpoint_path, state)
    return state


def aux_accuracy(D: Discriminator, pool: ScenePool, hr_patch: int, n: int, seed: int) -> float:
    """Fraction of real single-category patches whose category the discriminator names correctly."""
    rng = rng_stream(seed, "aux-eval")
    _, _, y, labels = pool.sample_batch(rng, n, hr_patch)
    with ad.no_grad():
        _, cls = D(Tensor(y))
    pred = cls.data.reshape(n, -1).argmax(axis=1)
    return float((pred == labels).mean())
