"""Synthetic multi-object scenes and a PNG/PPM directory loader."""

from __future__ import annotations

import os
from typing import List, Sequence, Union

import numpy as np
from PIL import Image

from gtsa.augment import resize_bilinear
from gtsa.geometry import Rect


class Dataset(Sequence):
    """Ordered, read-only list of ``S x S x 3`` uint8 images."""

    def __init__(self, images: List[np.ndarray], names: List[str] = None):
        if not images:
            raise ValueError("dataset is empty")
        self.images = images
        self.names = names or [f"synth_{i:05d}" for i in range(len(images))]

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]


def _value_noise(rng, size: int, cells: int) -> np.ndarray:
    grid = rng.uniform(-1, 1, size=(cells, cells, 3)).astype(np.float32)
    return resize_bilinear(grid, Rect(0, 0, cells, cells), size, size)


def synth_image(seed: int, size: int = 64) -> np.ndarray:
    """A cluttered outdoor-like scene: sky/ground gradient, value noise, 5-12 shapes.

    Light comes from the top and objects cast shadows downward, so the scenes
    have a canonical orientation; crops land on different objects.
    """
    if size < 32:
        raise ValueError("synthetic images need size >= 32")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) + 0.5
    yy /= size
    xx /= size
    horizon = rng.uniform(0.3, 0.6)
    sky_top = np.array([0.45, 0.65, 0.95]) * rng.uniform(0.8, 1.1)
    sky_low = np.array([0.8, 0.88, 0.98])
    ground_top = rng.uniform([0.3, 0.35, 0.1], [0.55, 0.6, 0.3])
    ground_low = ground_top * 0.45
    t_sky = np.clip(yy / horizon, 0, 1)[..., None]
    t_gnd = np.clip((yy - horizon) / (1 - horizon), 0, 1)[..., None]
    sky = sky_top * (1 - t_sky) + sky_low * t_sky
    ground = ground_top * (1 - t_gnd) + ground_low * t_gnd
    img = np.where((yy < horizon)[..., None], sky, ground)
    img = img + 0.08 * _value_noise(rng, size, int(rng.integers(3, 6)))

    n_shapes = int(rng.integers(5, 13))
    for _ in range(n_shapes):
        kind = rng.choice(["rect", "circle", "bar"])
        color = rng.uniform(0.05, 1.0, size=3)
        cx, cy = rng.uniform(0.05, 0.95, size=2)
        r = rng.uniform(0.05, 0.14)
        if kind == "rect":
            w, h = r * rng.uniform(0.6, 1.6), r * rng.uniform(0.6, 1.6)
            mask = (np.abs(xx - cx) < w) & (np.abs(yy - cy) < h)
            shadow = (np.abs(xx - cx) < w) & (yy - cy >= h) & (yy - cy < h + 0.35 * h)
        elif kind == "circle":
            d2 = (xx - cx) ** 2 + (yy - cy) ** 2
            mask = d2 < r * r
            shadow = ((xx - cx) ** 2 / (r * r) + (yy - cy - r) ** 2 / (0.3 * r) ** 2 < 1) & ~mask
        else:
            w = r * 0.35
            top = cy - rng.uniform(0.15, 0.4)
            mask = (np.abs(xx - cx) < w) & (yy > top) & (yy < cy)
            shadow = (np.abs(xx - cx) < 3 * w) & (yy >= cy) & (yy < cy + 0.03)
        img[shadow] *= 0.55
        # top-lit shading: brighter upper half of each object
        shade = 1.15 - 0.4 * np.clip((yy - (cy - r)) / (2 * r), 0, 1)
        img[mask] = (color * shade[..., None])[mask]
    return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def synthetic_dataset(n: int, size: int = 64, seed: int = 0) -> Dataset:
    seeds = [seed * 1_000_003 + i for i in range(n)]
    return Dataset([synth_image(s, size) for s in seeds], [f"synth_{s}" for s in seeds])


def standardize(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize so the short side is ``size``, then centre-crop to square."""
    h, w = img.shape[:2]
    s = size / min(h, w)
    nh, nw = max(size, round(h * s)), max(size, round(w * s))
    out = resize_bilinear(img, Rect(0, 0, w, h), nh, nw)
    y0, x0 = (nh - size) // 2, (nw - size) // 2
    out = out[y0:y0 + size, x0:x0 + size]
    return (np.clip(out, 0, 1) * 255 + 0.5).astype(np.uint8)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:  # PIL raises a zoo of exception types on bad input
        raise ValueError(f"cannot decode image {path}: {e}") from e


def load_dataset(path: Union[str, os.PathLike], size: int = 64) -> Dataset:
    """Load every file in ``path`` (sorted by name); non-image files are errors."""
    if not os.path.isdir(path):
        raise ValueError(f"not a directory: {path}")
    names = sorted(n for n in os.listdir(path) if not n.startswith("."))
    names = [n for n in names if os.path.isfile(os.path.join(path, n))]
    if not names:
        raise ValueError(f"no images in {path}")
    images = [standardize(read_image(os.path.join(path, n)), size) for n in names]
    return Dataset(images, names)


def write_png(path, img: np.ndarray):
    Image.fromarray(img).save(path, format="PNG")
