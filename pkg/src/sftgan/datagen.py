"""Procedural multi-category scenes and MATLAB-style bicubic downsampling.

All texture randomness comes from a counter-based integer hash of
(seed, stream key, lattice coordinates), so a texture is a pure function of
its arguments on every platform.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CATEGORIES = ("sky", "mountain", "plant", "grass", "water", "animal", "building")
BACKGROUND = "background"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, key: int, *coords) -> np.ndarray:
    """Uniform [0, 1) values hashed from integer coordinates."""
    with np.errstate(over="ignore"):
        z = _mix(np.asarray([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN * np.uint64(key & 0xFFFFFFFF))
        for c in coords:
            z = _mix(z + _GOLDEN + np.asarray(c, dtype=np.int64).astype(np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator keyed by (seed, keys...); strings are hashed to ints."""
    entropy = [seed] + [stream_key(k) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(entropy)


def value_noise(h: int, w: int, cell: float, seed: int, key: int) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1) with lattice spacing ``cell`` pixels."""
    ys = (np.arange(h) + 0.5) / cell
    xs = (np.arange(w) + 0.5) / cell
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    fy = fy * fy * (3 - 2 * fy)
    fx = fx * fx * (3 - 2 * fx)
    Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
    FY, FX = np.meshgrid(fy, fx, indexing="ij")
    v00 = hash_uniform(seed, key, Y0, X0)
    v01 = hash_uniform(seed, key, Y0, X0 + 1)
    v10 = hash_uniform(seed, key, Y0 + 1, X0)
    v11 = hash_uniform(seed, key, Y0 + 1, X0 + 1)
    top = v00 + FX * (v01 - v00)
    bot = v10 + FX * (v11 - v10)
    return top + FY * (bot - top)


def fractal_noise(h: int, w: int, cell: float, octaves: int, seed: int, key: int) -> np.ndarray:
    total = np.zeros((h, w))
    norm = 0.0
    for o in range(octaves):
        amp = 0.5**o
        total += amp * value_noise(h, w, max(cell / 2**o, 1.0), seed, key + 7919 * o)
        norm += amp
    return total / norm


def _colorize(base, intensity: np.ndarray, spread) -> np.ndarray:
    base = np.asarray(base, dtype=np.float64)[:, None, None]
    spread = np.asarray(spread, dtype=np.float64)[:, None, None]
    return base + spread * (intensity[None] - 0.5)


def _sky(h, w, seed):
    grad = np.linspace(0.0, 1.0, h)[:, None] * np.ones((1, w))
    clouds = value_noise(h, w, 48.0, seed, 1)
    tone = 0.7 * grad + 0.3 * clouds
    return _colorize((0.55, 0.72, 0.93), tone, (0.16, 0.12, 0.06))


def _grass(h, w, seed):
    fine = value_noise(h, w, 1.5, seed, 2)
    mid = value_noise(h, w, 3.0, seed, 3)
    tone = 0.65 * fine + 0.35 * mid
    return _colorize((0.30, 0.55, 0.20), tone, (0.45, 0.70, 0.35))


def _building(h, w, seed):
    brick_h, brick_w = 6, 12
    yy, xx = np.mgrid[0:h, 0:w]
    row = yy // brick_h
    shifted = xx + (row % 2) * (brick_w // 2)
    col = shifted // brick_w
    mortar = ((yy % brick_h) == 0) | ((shifted % brick_w) == 0)
    shade = hash_uniform(seed, 4, row, col)
    tone = np.where(mortar, 0.05, 0.55 + 0.4 * shade)
    return _colorize((0.60, 0.38, 0.30), tone, (0.9, 0.6, 0.5))


def _water(h, w, seed):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    warp = value_noise(h, w, 16.0, seed, 5)
    bands = 0.5 + 0.5 * np.sin(2 * np.pi * (yy / 7.0 + 0.6 * warp))
    tone = 0.8 * bands + 0.2 * value_noise(h, w, 4.0, seed, 6)
    return _colorize((0.20, 0.42, 0.60), tone, (0.15, 0.25, 0.30))


def _mountain(h, w, seed):
    n = fractal_noise(h, w, 24.0, 4, seed, 7)
    ridges = 1.0 - np.abs(2.0 * n - 1.0)
    return _colorize((0.45, 0.42, 0.40), ridges**2, (0.45, 0.40, 0.38))


def _plant(h, w, seed):
    blobs = value_noise(h, w, 10.0, seed, 8)
    leaves = value_noise(h, w, 3.0, seed, 9)
    mask = np.clip((blobs - 0.35) * 4.0, 0.0, 1.0)
    tone = mask * leaves + (1 - mask) * 0.15
    return _colorize((0.18, 0.35, 0.14), tone, (0.25, 0.45, 0.20))


def _animal(h, w, seed):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = np.pi * hash_uniform(seed, 10, 0)[0]
    proj = np.cos(angle) * xx + np.sin(angle) * yy
    warp = value_noise(h, w, 8.0, seed, 11)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (proj / 5.0 + 0.8 * warp))
    fur = value_noise(h, w, 1.5, seed, 12)
    tone = 0.75 * stripes + 0.25 * fur
    return _colorize((0.55, 0.38, 0.20), tone, (0.6, 0.45, 0.25))


def _background(h, w, seed):
    n = fractal_noise(h, w, 8.0, 3, seed, 13)
    return _colorize((0.5, 0.5, 0.5), n, (0.5, 0.5, 0.5))


_TEXTURES = {
    "sky": _sky, "mountain": _mountain, "plant": _plant, "grass": _grass,
    "water": _water, "animal": _animal, "building": _building, BACKGROUND: _background,
}


def synth_texture(category: str, h: int, w: int, seed: int) -> np.ndarray:
    """3xhxw float32 texture in [0, 1] for a named category."""
    if category not in _TEXTURES:
        raise ValueError(f"unknown category {category!r}")
    if h < 8 or w < 8:
        raise ValueError(f"texture extents must be >= 8, got {h}x{w}")
    img = _TEXTURES[category](h, w, (seed * 1000003 + stream_key(category)) & 0xFFFFFFFF)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# bicubic resampling


def bicubic_kernel(x, a: float = -0.5):
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    out = np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))
    return out if out.ndim else float(out)


def resample_contributions(in_len: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and normalized weights for downsampling one axis by ``s``.

    The kernel is stretched by ``s`` (antialiasing) and out-of-range taps
    reflect symmetrically about the image edge.
    """
    out_len = in_len // s
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x * s + 0.5 * (1 - s)
    width = 4.0 * s
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    ind = left[:, None] + np.arange(taps)[None, :]
    weights = bicubic_kernel((u[:, None] - ind) / s) / s
    weights /= weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    ind = mirror[np.mod(ind.astype(np.int64) - 1, 2 * in_len)]
    keep = np.any(weights != 0, axis=0)
    return ind[:, keep], weights[:, keep]


def bicubic_downsample(img: np.ndarray, s: int) -> np.ndarray:
    """Downsample the last two axes by integer factor ``s``."""
    h, w = img.shape[-2:]
    if s < 1 or h % s or w % s:
        raise ValueError(f"extents {h}x{w} are not divisible by scale {s}")
    if s == 1:
        return img.copy()
    data = np.asarray(img, dtype=np.float64)
    idx, wt = resample_contributions(h, s)
    data = np.einsum("...opw,op->...ow", data[..., idx, :], wt)
    idx, wt = resample_contributions(w, s)
    data = np.einsum("...hop,op->...ho", data[..., idx], wt)
    return data.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def nearest_downsample_maps(maps: np.ndarray, s: int) -> np.ndarray:
    """Pick one HR pixel per sxs block so per-pixel channel sums are preserved exactly."""
    h, w = maps.shape[-2:]
    if h % s or w % s:
        raise ValueError(f"extents {h}x{w} are not divisible by scale {s}")
    return np.ascontiguousarray(maps[..., s // 2 :: s, s // 2 :: s])


# ---------------------------------------------------------------------------
# segmentation maps


def one_hot(labels: np.ndarray, channels: int) -> np.ndarray:
    return (np.arange(channels)[:, None, None] == labels[None]).astype(np.float32)


def soften_segmentation(onehot: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-blur each channel (truncated at 3 sigma) and renormalize per pixel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return onehot.astype(np.float32, copy=True)
    blurred = np.stack([ndimage.gaussian_filter(ch.astype(np.float64), sigma, mode="nearest", truncate=3.0)
                        for ch in onehot])
    blurred = np.clip(blurred, 0.0, None)
    return (blurred / blurred.sum(axis=0, keepdims=True)).astype(np.float32)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 96
    width: int = 96
    categories: tuple[str, ...] = CATEGORIES
    layout: str = "voronoi"       # "halfplane" | "voronoi"
    cells: int = 4
    include_background: bool = True
    sigma: float = 2.0
    scale: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.height % self.scale or self.width % self.scale:
            raise ValueError("scene extents must be divisible by the scale factor")
        if not self.categories:
            raise ValueError("need at least one category")
        for c in self.categories:
            if c not in _TEXTURES or c == BACKGROUND:
                raise ValueError(f"unknown category {c!r}")
        if self.layout not in ("halfplane", "voronoi"):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    def class_name(self, index: int) -> str:
        return self.categories[index] if index < self.num_classes else BACKGROUND


@dataclass
class Scene:
    spec: SceneSpec
    labels: np.ndarray        # HxW int, K = background
    hr: np.ndarray            # 3xHxW
    onehot: np.ndarray        # (K+1)xHxW
    probs: np.ndarray         # (K+1)xHxW, softened
    lr: np.ndarray            # 3x(H/s)x(W/s)
    lr_probs: np.ndarray      # (K+1)x(H/s)x(W/s)
    region_classes: list[int] = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.labels, self.hr, self.probs, self.lr, self.lr_probs):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _layout(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    h, w = spec.height, spec.width
    pool = spec.num_classes + (1 if spec.include_background else 0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.layout == "halfplane":
        classes = [int(c) for c in rng.choice(pool, size=min(2, pool), replace=False)]
        if len(classes) == 1:
            return np.full((h, w), classes[0], dtype=np.int64), classes
        angle = rng.uniform(0, 2 * np.pi)
        cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
        side = (np.cos(angle) * (xx - cx) + np.sin(angle) * (yy - cy)) >= 0
        return np.where(side, classes[0], classes[1]).astype(np.int64), classes
    n = max(1, spec.cells)
    pts = rng.uniform(0, 1, size=(n, 2)) * (h, w)
    classes = [int(c) for c in rng.integers(0, pool, size=n)]
    d = (yy[None] - pts[:, 0, None, None]) ** 2 + (xx[None] - pts[:, 1, None, None]) ** 2
    owner = np.argmin(d, axis=0)
    return np.asarray(classes, dtype=np.int64)[owner], classes


def compose_scene(spec: SceneSpec) -> Scene:
    rng = rng_stream(spec.seed, "layout")
    labels, classes = _layout(spec, rng)
    k1 = spec.num_classes + 1
    hr = np.zeros((3, spec.height, spec.width), dtype=np.float32)
    for c in np.unique(labels):
        tex = synth_texture(spec.class_name(int(c)), spec.height, spec.width, spec.seed)
        hr = np.where(labels[None] == c, tex, hr)
    onehot = one_hot(labels, k1)
    probs = soften_segmentation(onehot, spec.sigma)
    lr = bicubic_downsample(hr, spec.scale).astype(np.float32)
    return Scene(spec=spec, labels=labels, hr=hr, onehot=onehot, probs=probs, lr=lr,
                 lr_probs=nearest_downsample_maps(probs, spec.scale), region_classes=classes)


# ---------------------------------------------------------------------------
# training pairs


@dataclass
class TrainingPair:
    lr: np.ndarray
    probs: np.ndarray
    hr: np.ndarray
    label: int
    top: int      # HR-pixel coordinates of the crop
    left: int


def sample_training_pair(scene: Scene, hr_patch: int, rng: np.random.Generator,
                         single_category: bool = False, max_tries: int = 200) -> TrainingPair:
    s = scene.spec.scale
    if hr_patch % s:
        raise ValueError(f"patch {hr_patch} not divisible by scale {s}")
    H, W = scene.labels.shape
    if hr_patch > H or hr_patch > W:
        raise ValueError(f"patch {hr_patch} larger than scene {H}x{W}")
    p = hr_patch // s
    for _ in range(max_tries if single_category else 1):
        ly = int(rng.integers(0, H // s - p + 1))
        lx = int(rng.integers(0, W // s - p + 1))
        top, left = ly * s, lx * s
        patch_labels = scene.labels[top : top + hr_patch, left : left + hr_patch]
        counts = np.bincount(patch_labels.reshape(-1), minlength=scene.spec.num_classes + 1)
        if single_category and counts.max() != patch_labels.size:
            continue
        return TrainingPair(
            lr=scene.lr[:, ly : ly + p, lx : lx + p],
            probs=scene.lr_probs[:, ly : ly + p, lx : lx + p],
            hr=scene.hr[:, top : top + hr_patch, left : left + hr_patch],
            label=int(np.argmax(counts)),
            top=top,
            left=left,
        )
    raise LookupError("no single-category crop found")


class ScenePool:
    """A fixed set of scenes derived from (base spec, master seed, scene index)."""

    def __init__(self, base: SceneSpec, count: int, seed: int):
        self.scenes = [compose_scene(_respec(base, seed, i)) for i in range(count)]

    def sample_batch(self, rng: np.random.Generator, batch: int, hr_patch: int,
                     single_category: bool = True):
        lrs, probs, hrs, labels = [], [], [], []
        for _ in range(100 * batch):
            if len(lrs) == batch:
                break
            scene = self.scenes[int(rng.integers(len(self.scenes)))]
            try:
                pair = sample_training_pair(scene, hr_patch, rng, single_category, max_tries=20)
            except LookupError:
                continue
            lrs.append(pair.lr)
            probs.append(pair.probs)
            hrs.append(pair.hr)
            labels.append(pair.label)
        if len(lrs) < batch:
            raise LookupError("scene pool yields no single-category crops of this size")
        return np.stack(lrs), np.stack(probs), np.stack(hrs), np.asarray(labels)


def _respec(base: SceneSpec, seed: int, index: int) -> SceneSpec:
    scene_seed = int(rng_stream(seed, "scene", index).integers(0, 2**31 - 1))
    return SceneSpec(**{**base.__dict__, "seed": scene_seed})
