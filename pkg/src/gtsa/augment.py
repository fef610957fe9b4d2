"""Multi-crop view generation with exact provenance.

Every view is produced by the fixed pipeline crop -> resize -> photometric ->
rotate, so a view's crop is always expressed in unrotated source pixels and
the overlap bookkeeping in :mod:`gtsa.geometry` never depends on photometric
state. All randomness is derived from integer seeds; a ViewSet is a pure
function of ``(image, cfg, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import correlate1d

from gtsa.geometry import Rect, check_rot, interp_matrix, intersect, rotate_map

LUMA = np.array([0.299, 0.587, 0.114])
MAX_LOCAL_TRIES = 20
MIN_LOCAL_OVERLAP = 0.25

SeedLike = Union[int, Sequence[int]]


@dataclass(frozen=True)
class PhotometricParams:
    jitter_strength: float = 0.0
    grayscale: bool = False
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("jitter_strength", "blur_sigma", "noise_sigma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class ViewParams:
    kind: str
    crop: Rect
    out_size: int
    rot_k: int = 0
    photo: PhotometricParams = field(default_factory=PhotometricParams)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("global", "local"):
            raise ValueError(f"unknown view kind {self.kind!r}")
        check_rot(self.rot_k)

    def unrotated(self) -> "ViewParams":
        return ViewParams(self.kind, self.crop, self.out_size, 0, self.photo, self.seed)


@dataclass
class ViewConfig:
    G: int = 2
    L: int = 4
    global_size: int = 64
    local_size: int = 32
    patch: int = 8
    global_scale: Tuple[float, float] = (0.5, 1.0)
    local_scale: Tuple[float, float] = (0.05, 0.4)
    ratio: Tuple[float, float] = (3 / 4, 4 / 3)
    rotate: bool = True
    jitter_strength: float = 1.0
    grayscale_p: float = 0.2
    blur_p_global: float = 0.5
    blur_p_local: float = 0.1
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    noise_p: float = 0.1
    noise_sigma: float = 0.05
    min_size: int = 32

    def __post_init__(self):
        if self.G < 1 or self.L < 0:
            raise ValueError("need G >= 1 and L >= 0")
        for s in (self.global_size, self.local_size):
            if s % self.patch:
                raise ValueError(f"view size {s} not divisible by patch {self.patch}")


@dataclass
class ViewSet:
    views: List[Tuple[np.ndarray, ViewParams]]
    G: int
    L: int
    source: np.ndarray

    @property
    def params(self) -> List[ViewParams]:
        return [p for _, p in self.views]

    @property
    def images(self) -> List[np.ndarray]:
        return [im for im, _ in self.views]


def derive_seed(*parts: int) -> int:
    """Collapse a tuple of non-negative ints into one 63-bit seed."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def _seed_parts(seed: SeedLike) -> List[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def to_float(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return np.asarray(image, dtype=np.float32)


def resize_bilinear(image: np.ndarray, rect: Rect, out_h: int, out_w: int,
                    dtype=np.float32) -> np.ndarray:
    """Sample ``rect`` of an ``H x W x C`` image onto an ``out_h x out_w`` grid."""
    img = image if image.dtype == np.float64 else to_float(image)
    h, w = img.shape[:2]
    ay = interp_matrix(h, rect.y0, rect.y1, out_h)
    ax = interp_matrix(w, rect.x0, rect.x1, out_w)
    rows = np.tensordot(ay, img.astype(np.float64), axes=(1, 0))  # out_h x w x C
    out = np.tensordot(rows, ax, axes=(1, 1))  # out_h x C x out_w
    return out.transpose(0, 2, 1).astype(dtype)


def crop_resize(image: np.ndarray, rect: Rect, out_size: int, dtype=np.float32) -> np.ndarray:
    if rect is None:
        raise ValueError("empty crop rect")
    return resize_bilinear(image, rect, out_size, out_size, dtype)


def rotate_image(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate an ``H x W x C`` image by ``k`` CCW quarter turns (same rule as rotate_map)."""
    chw = np.moveaxis(image, -1, 0)
    return np.ascontiguousarray(np.moveaxis(rotate_map(chw, k), 0, -1))


def jitter_factors(strength: float, seed: int):
    """Brightness, contrast, saturation factors and hue shift drawn for one view."""
    rng = np.random.default_rng(seed)
    b, c, s = rng.uniform(1 - 0.4 * strength, 1 + 0.4 * strength, size=3)
    hue = rng.uniform(-0.1 * strength, 0.1 * strength)
    return float(b), float(c), float(s), float(hue), rng


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = correlate1d(img, k, axis=0, mode="nearest")
    return correlate1d(out, k, axis=1, mode="nearest")


def grayscale(img: np.ndarray) -> np.ndarray:
    return np.repeat((img @ LUMA)[..., None], 3, axis=-1)


def apply_photometric(image: np.ndarray, p: PhotometricParams, seed: int) -> np.ndarray:
    """Colour jitter, grayscale, blur and additive noise; neutral parameters are skipped."""
    img = to_float(image)
    if p.jitter_strength == 0 and not p.grayscale and p.blur_sigma == 0 and p.noise_sigma == 0:
        return img
    x = img.astype(np.float64)
    b, c, s, hue, rng = jitter_factors(p.jitter_strength, seed)
    if p.jitter_strength > 0:
        x = np.clip(x * b, 0, 1)
        mean = (x @ LUMA).mean()
        x = np.clip(mean + (x - mean) * c, 0, 1)
        gray = (x @ LUMA)[..., None]
        x = np.clip(gray + (x - gray) * s, 0, 1)
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        x = hsv_to_rgb(hsv)
    if p.grayscale:
        x = grayscale(x)
    if p.blur_sigma > 0:
        x = gaussian_blur(x, p.blur_sigma)
    if p.noise_sigma > 0:
        x = x + rng.normal(0.0, p.noise_sigma, size=x.shape)
    return np.clip(x, 0, 1).astype(np.float32)


def render_view(source: np.ndarray, view: ViewParams) -> np.ndarray:
    img = crop_resize(source, view.crop, view.out_size)
    img = apply_photometric(img, view.photo, view.seed)
    return rotate_image(img, view.rot_k)


def _sample_crop(rng, H: int, W: int, scale, ratio) -> Rect:
    area = H * W
    frac = rng.uniform(*scale)
    log_r = rng.uniform(math.log(ratio[0]), math.log(ratio[1]), size=10)
    for lr in log_r:
        r = math.exp(lr)
        w = math.sqrt(frac * area * r)
        h = math.sqrt(frac * area / r)
        if w <= W and h <= H:
            break
    else:
        w, h = math.sqrt(frac) * W, math.sqrt(frac) * H
    x0 = rng.uniform(0, W - w)
    y0 = rng.uniform(0, H - h)
    return Rect(x0, y0, x0 + w, y0 + h)


def _local_ok(crop: Rect, globals_: Sequence[Rect]) -> bool:
    for g in globals_:
        inter = intersect(crop, g)
        if inter is None or inter.area < MIN_LOCAL_OVERLAP * crop.area:
            return False
    return True


def _fallback_local(rng, crop: Rect, core: Rect, H: int, W: int) -> Rect:
    w, h = crop.width, crop.height
    if w <= core.width and h <= core.height:
        x0 = rng.uniform(core.x0, core.x1 - w)
        y0 = rng.uniform(core.y0, core.y1 - h)
    else:
        # crop larger than the common core: centre it on a core point, keep it in the image
        cx = rng.uniform(core.x0, core.x1)
        cy = rng.uniform(core.y0, core.y1)
        x0 = min(max(cx - w / 2, 0.0), W - w)
        y0 = min(max(cy - h / 2, 0.0), H - h)
    return Rect(x0, y0, x0 + w, y0 + h)


def _sample_photo(rng, cfg: ViewConfig, kind: str, out_size: int) -> PhotometricParams:
    gray = bool(rng.random() < cfg.grayscale_p)
    blur_p = cfg.blur_p_global if kind == "global" else cfg.blur_p_local
    sigma = rng.uniform(*cfg.blur_sigma) * out_size / 224.0
    blur = sigma if rng.random() < blur_p else 0.0
    noise = cfg.noise_sigma if rng.random() < cfg.noise_p else 0.0
    return PhotometricParams(cfg.jitter_strength, gray, float(blur), float(noise))


def prepare_source(image: np.ndarray, cfg: ViewConfig) -> np.ndarray:
    """Convert to float and upscale minimally so the short side covers a global view."""
    img = to_float(image)
    H, W = img.shape[:2]
    short = min(H, W)
    if short < cfg.min_size:
        raise ValueError(f"image {H}x{W} smaller than minimum {cfg.min_size}px")
    if short < cfg.global_size:
        s = cfg.global_size / short
        nh, nw = max(cfg.global_size, round(H * s)), max(cfg.global_size, round(W * s))
        img = resize_bilinear(img, Rect(0, 0, W, H), nh, nw)
    return img


def sample_view_set(image: np.ndarray, cfg: ViewConfig, seed: SeedLike) -> ViewSet:
    parts = _seed_parts(seed)
    src = prepare_source(image, cfg)
    H, W = src.shape[:2]
    params: List[ViewParams] = []
    global_crops: List[Rect] = []
    for v in range(cfg.G + cfg.L):
        vseed = derive_seed(*parts, v)
        rng = np.random.default_rng(vseed)
        if v < cfg.G:
            kind, size = "global", cfg.global_size
            crop = _sample_crop(rng, H, W, cfg.global_scale, cfg.ratio)
            global_crops.append(crop)
        else:
            kind, size = "local", cfg.local_size
            for _ in range(MAX_LOCAL_TRIES):
                crop = _sample_crop(rng, H, W, cfg.local_scale, cfg.ratio)
                if _local_ok(crop, global_crops):
                    break
            else:
                core = global_crops[0]
                for g in global_crops[1:]:
                    core = intersect(core, g)
                    if core is None:
                        raise ValueError("global crops share no common region")
                crop = _fallback_local(rng, crop, core, H, W)
        k = int(rng.integers(4)) if cfg.rotate else 0
        photo = _sample_photo(rng, cfg, kind, size)
        params.append(ViewParams(kind, crop, size, k, photo, vseed))
    if cfg.G >= 2:
        for i in range(cfg.G):
            for j in range(i + 1, cfg.G):
                assert intersect(global_crops[i], global_crops[j]) is not None, "disjoint globals"
    views = [(render_view(src, p), p) for p in params]
    return ViewSet(views, cfg.G, cfg.L, src)
