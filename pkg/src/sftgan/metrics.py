"""PSNR, gradient-histogram texture signatures and modulation-map export."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .models import Generator

MAG_BINS = 32
ORI_BINS = 16
PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / err))


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


@dataclass(frozen=True)
class TextureSignature:
    magnitude: np.ndarray   # MAG_BINS, sums to 1
    orientation: np.ndarray  # ORI_BINS, sums to 1


def texture_signature(img: np.ndarray, mask: np.ndarray | None = None) -> TextureSignature:
    """Normalized histograms of luma gradient magnitude (over [0, 1]) and orientation.

    Orientation counts are weighted by magnitude; a region with no gradient
    at all gets a uniform orientation histogram.
    """
    y = luma(img)
    mask = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != y.shape:
        raise ShapeError(f"mask {mask.shape} does not match image {y.shape}")
    if not mask.any():
        raise ValueError("empty mask")
    gy, gx = np.gradient(y)
    mag = np.hypot(gx, gy)[mask]
    ori = np.arctan2(gy, gx)[mask]
    mag_hist = np.bincount(np.minimum((mag * MAG_BINS).astype(np.int64), MAG_BINS - 1), minlength=MAG_BINS)
    mag_hist = mag_hist / mag_hist.sum()
    ori_idx = np.minimum(((ori + np.pi) / (2 * np.pi) * ORI_BINS).astype(np.int64), ORI_BINS - 1)
    ori_hist = np.bincount(ori_idx, weights=mag, minlength=ORI_BINS)
    total = ori_hist.sum()
    ori_hist = ori_hist / total if total > 0 else np.full(ORI_BINS, 1.0 / ORI_BINS)
    return TextureSignature(mag_hist, ori_hist)


def signature_distance(s1: TextureSignature, s2: TextureSignature, eps: float = 1e-12) -> float:
    """Symmetric chi-square distance summed over both histograms."""
    if s1.magnitude.shape != s2.magnitude.shape or s1.orientation.shape != s2.orientation.shape:
        raise ValueError("signatures use different binnings")
    total = 0.0
    for p, q in ((s1.magnitude, s2.magnitude), (s1.orientation, s2.orientation)):
        total += float(np.sum((p - q) ** 2 / (p + q + eps)))
    return total


def mean_gradient(img: np.ndarray) -> float:
    gy, gx = np.gradient(luma(img))
    return float(np.hypot(gx, gy).mean())


# ---------------------------------------------------------------------------
# modulation maps


@dataclass
class ModulationMap:
    layer: int
    kind: str          # "gamma" | "beta"
    channel: int
    values: np.ndarray  # h x w float
    variance: float

    @property
    def name(self) -> str:
        return f"layer{self.layer:02d}_{self.kind}_c{self.channel:03d}"


def heatmap(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to uint8 gray, replicated to HxWx3; constant maps render as 128."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        gray = np.full(values.shape, 128, dtype=np.uint8)
    else:
        gray = np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def _spatial_variance(vals: np.ndarray) -> np.ndarray:
    # Shifted by the first value so a constant channel gives exactly 0.
    flat = vals.reshape(vals.shape[0], -1).astype(np.float64)
    d = flat - flat[:, :1]
    return np.maximum(np.mean(d * d, axis=1) - np.mean(d, axis=1) ** 2, 0.0)


def export_modulation_maps(G: Generator, probs, layers=None, top_k: int = 4, x=None) -> list[ModulationMap]:
    """gamma/beta maps of the requested SFT layers for the first batch item.

    Per layer and kind the ``top_k`` channels with the largest spatial
    variance are kept (ties broken by channel index). ``x`` is accepted for
    call-site symmetry with inference; the maps depend on ``probs`` alone.
    """
    mods = G.modulators()
    if not mods:
        raise ValueError(f"mode {G.mode.value} has no modulation layers")
    layers = list(range(len(mods))) if layers is None else list(layers)
    for layer in layers:
        if not 0 <= layer < len(mods):
            raise IndexError(f"layer {layer} out of range (0..{len(mods) - 1})")
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    h, w = probs.shape[2:]
    with ad.no_grad():
        shared = G.shared_condition(probs)
        out: list[ModulationMap] = []
        for layer in layers:
            for kind, t in zip(("gamma", "beta"), mods[layer].modulation(shared)):
                vals = np.broadcast_to(t.data[0], (t.shape[1], h, w))
                var = _spatial_variance(vals)
                for c in np.argsort(-var, kind="stable")[:top_k]:
                    out.append(ModulationMap(layer, kind, int(c), np.array(vals[c]), float(var[c])))
    return out


def gamma_spatial_variance(G: Generator, probs) -> float:
    """Largest per-channel spatial variance of gamma over all modulation layers (0 if none)."""
    if not G.modulators():
        return 0.0
    maps = export_modulation_maps(G, probs, top_k=1)
    return max(m.variance for m in maps if m.kind == "gamma")


REPORT_COLUMNS = ("image_id", "category", "variant", "psnr", "signature_distance")


def write_report(path_or_file, rows: list[dict]) -> None:
    def emit(handle):
        writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as handle:
            emit(handle)


def compare_images(image_id: str, variant: str, sr: np.ndarray, hr: np.ndarray,
                   labels: np.ndarray | None = None, names: list[str] | None = None) -> list[dict]:
    """Report rows for one SR/HR pair, one per category present in ``labels`` (or one "all" row)."""
    regions = [("all", np.ones(hr.shape[1:], dtype=bool))]
    if labels is not None:
        regions = [(names[c] if names else str(c), labels == c) for c in np.unique(labels)]
    rows = []
    for category, mask in regions:
        rows.append({
            "image_id": image_id,
            "category": category,
            "variant": variant,
            "psnr": round(psnr(sr[:, mask], hr[:, mask]), 4),
            "signature_distance": round(signature_distance(texture_signature(sr, mask),
                                                           texture_signature(hr, mask)), 6),
        })
    return rows
