"""Static exports of removal proportions: PPM overlays for images, JSON for
sequences."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

BUDGET_SLACK = 1e-9


class HeatmapError(ValueError):
    pass


def overlay_pixels(image, pi) -> np.ndarray:
    """(H, W, 3) uint8: grayscale image in red and blue, round(255 * pi) in green."""
    image = np.asarray(image, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if image.ndim != 2 or image.shape != pi.shape:
        raise HeatmapError(f"need matching 2-D image and pi, got {image.shape} and {pi.shape}")
    if pi.min() < 0 or pi.max() > 1:
        raise HeatmapError("pi must lie in [0, 1]")
    gray = np.rint(255 * np.clip(image, 0, 1)).astype(np.uint8)
    over = np.rint(255 * pi).astype(np.uint8)
    return np.stack([gray, over, gray], axis=-1)


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise HeatmapError("PPM needs an (H, W, 3) uint8 array")
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    parts = buf.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise HeatmapError("not a binary 8-bit PPM")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4], dtype=np.uint8)
    if data.size != w * h * 3:
        raise HeatmapError(f"PPM payload has {data.size} bytes, expected {w * h * 3}")
    return data.reshape(h, w, 3)


def _check_budget(pi: np.ndarray, tau: float):
    total = float(pi.sum())
    if total > tau + BUDGET_SLACK:
        raise HeatmapError(f"sum(pi) = {total} exceeds tau = {tau}")


def export_instance(pi, x, tau: float, stem) -> list[Path]:
    """Write the artifacts for one instance; returns the paths written.

    Images produce ``stem.ppm`` and ``stem.json`` (the pi array); sequences
    produce ``stem.json`` holding ``[signal, pi]`` pairs.
    """
    pi = np.asarray(pi, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_budget(pi, tau)
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if x.ndim == 2:
        ppm = stem.with_suffix(".ppm")
        ppm.write_bytes(encode_ppm(overlay_pixels(x, pi)))
        js = stem.with_suffix(".json")
        js.write_text(json.dumps(pi.tolist()) + "\n")
        return [ppm, js]
    if x.ndim == 1:
        js = stem.with_suffix(".json")
        js.write_text(json.dumps([[float(a), float(b)] for a, b in zip(x, pi)]) + "\n")
        return [js]
    raise HeatmapError(f"cannot export an instance of shape {x.shape}")


def export_heatmaps(loc, features, indices, out_dir, prefix: str = "instance") -> list[Path]:
    features = np.asarray(features)
    paths: list[Path] = []
    for i in indices:
        if not 0 <= int(i) < len(features):
            raise IndexError(f"instance index {i} out of range for {len(features)} instances")
    for i in indices:
        x = features[int(i)]
        pi, _, _ = loc.localize(x)
        paths += export_instance(pi, x, loc.tau, Path(out_dir) / f"{prefix}_{int(i)}")
    return paths
