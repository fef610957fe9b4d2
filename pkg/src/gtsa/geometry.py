"""Coordinate bookkeeping between source images, augmented views and feature maps.

Conventions shared by every module:

* A stored value at integer index ``(i, j)`` sits at the continuous point
  ``(x, y) = (j + 0.5, i + 0.5)``.
* Quarter turns are counter-clockwise as seen on screen (y grows downward):
  a point ``(x, y)`` of a square frame of side ``S`` moves to ``(y, S - x)``,
  and an array element at ``(r, c)`` moves to ``(w - 1 - c, r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import torch

if TYPE_CHECKING:
    from gtsa.augment import ViewParams


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rect {vals}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"empty rect {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def contains(self, other: "Rect", tol: float = 1e-9) -> bool:
        return (other.x0 >= self.x0 - tol and other.y0 >= self.y0 - tol
                and other.x1 <= self.x1 + tol and other.y1 <= self.y1 + tol)


@dataclass(frozen=True)
class OverlapRegion:
    """Paired overlap rectangles in feature-cell coordinates.

    ``student_rect`` is expressed in the student's rotated frame,
    ``teacher_rect`` in the (never rotated) teacher frame.
    """

    student_rect: Optional[Rect]
    teacher_rect: Optional[Rect]
    rel_rot: int
    valid: bool


def check_rot(k: int) -> int:
    if int(k) != k or not 0 <= k <= 3:
        raise ValueError(f"rotation index must be in {{0,1,2,3}}, got {k}")
    return int(k)


def intersect(a: Rect, b: Rect) -> Optional[Rect]:
    """Axis-aligned intersection, or ``None`` when the interiors are disjoint."""
    x0, y0 = max(a.x0, b.x0), max(a.y0, b.y0)
    x1, y1 = min(a.x1, b.x1), min(a.y1, b.y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return Rect(x0, y0, x1, y1)


def rotate_point(x: float, y: float, size: float, k: int):
    """Rotate a point of a square frame of side ``size`` by ``k`` CCW quarter turns."""
    for _ in range(check_rot(k)):
        x, y = y, size - x
    return x, y


def rotate_rect(r: Rect, size: float, k: int) -> Rect:
    (ax, ay) = rotate_point(r.x0, r.y0, size, k)
    (bx, by) = rotate_point(r.x1, r.y1, size, k)
    return Rect(min(ax, bx), min(ay, by), max(ax, bx), max(ay, by))


def source_to_view(r: Rect, view: "ViewParams") -> Rect:
    """Map a source-pixel rect into the pixel frame of an augmented view.

    The rect is translated and scaled per axis onto the ``out_size`` square,
    then rotated with the view.
    """
    if intersect(r, view.crop) is None:
        raise ValueError(f"rect {r.as_tuple()} does not intersect crop {view.crop.as_tuple()}")
    c = view.crop
    sx = view.out_size / c.width
    sy = view.out_size / c.height
    scaled = Rect((r.x0 - c.x0) * sx, (r.y0 - c.y0) * sy,
                  (r.x1 - c.x0) * sx, (r.y1 - c.y0) * sy)
    return rotate_rect(scaled, view.out_size, view.rot_k)


def view_point_to_source(x: float, y: float, view: "ViewParams"):
    """Inverse of the view transform for a single point (view pixels -> source pixels)."""
    x, y = rotate_point(x, y, view.out_size, (4 - view.rot_k) % 4)
    c = view.crop
    return (c.x0 + x * c.width / view.out_size,
            c.y0 + y * c.height / view.out_size)


def source_point_to_view(x: float, y: float, view: "ViewParams"):
    c = view.crop
    x = (x - c.x0) * view.out_size / c.width
    y = (y - c.y0) * view.out_size / c.height
    return rotate_point(x, y, view.out_size, view.rot_k)


def view_to_feature(r: Rect, patch: float) -> Rect:
    if patch <= 0:
        raise ValueError(f"patch size must be positive, got {patch}")
    return Rect(r.x0 / patch, r.y0 / patch, r.x1 / patch, r.y1 / patch)


def overlap_region(sview: "ViewParams", tview: "ViewParams",
                   patch_s: float, patch_t: float) -> OverlapRegion:
    if tview.rot_k != 0:
        raise ValueError("teacher views must be unrotated")
    src = intersect(sview.crop, tview.crop)
    if src is None:
        return OverlapRegion(None, None, sview.rot_k, False)
    srect = view_to_feature(source_to_view(src, sview), patch_s)
    trect = view_to_feature(source_to_view(src, tview), patch_t)
    return OverlapRegion(srect, trect, sview.rot_k, True)


def interp_matrix(n_in: int, start: float, stop: float, n_out: int) -> np.ndarray:
    """Bilinear weights sampling ``n_out`` equal cells of ``[start, stop)`` at their centres.

    Row ``o`` holds the weights that combine the ``n_in`` stored values (at
    ``i + 0.5``) into the sample at ``start + (o + 0.5) * (stop - start) / n_out``.
    Samples outside ``[0.5, n_in - 0.5]`` clamp to the border value.
    """
    step = (stop - start) / n_out
    pos = start + (np.arange(n_out) + 0.5) * step - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    w = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def roi_align(fmap: torch.Tensor, rects, out_h: int, out_w: int) -> torch.Tensor:
    """Pool ``rects`` (feature-cell coordinates) out of a ``B x D x h x w`` map.

    ``rects`` is a single Rect applied to every batch item or a sequence of
    one Rect per item. One bilinear sample per output cell, at its centre.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    B, _, h, w = fmap.shape
    if isinstance(rects, Rect):
        rects = [rects] * B
    if len(rects) != B:
        raise ValueError(f"got {len(rects)} rects for batch of {B}")
    for r in rects:
        if r is None:
            raise ValueError("empty rect")
    ay = np.stack([interp_matrix(h, r.y0, r.y1, out_h) for r in rects])
    ax = np.stack([interp_matrix(w, r.x0, r.x1, out_w) for r in rects])
    ay = torch.as_tensor(ay, dtype=fmap.dtype)
    ax = torch.as_tensor(ax, dtype=fmap.dtype)
    return torch.einsum("boh,bdhw,bpw->bdop", ay, fmap, ax)


def rotate_map(fmap, k):
    """Rotate the last two axes by ``k`` CCW quarter turns.

    ``k`` may be an int or a per-batch-item sequence. Works on tensors and ndarrays.
    """
    if isinstance(k, (list, tuple, np.ndarray, torch.Tensor)) and not np.isscalar(k):
        ks = [int(v) for v in k]
        if len(ks) != fmap.shape[0]:
            raise ValueError("one rotation index per batch item expected")
        items = [rotate_map(fmap[i], kk) for i, kk in enumerate(ks)]
        return torch.stack(items) if isinstance(fmap, torch.Tensor) else np.stack(items)
    k = check_rot(k)
    h, w = fmap.shape[-2:]
    if k % 2 == 1 and h != w:
        raise ValueError(f"odd rotation of non-square map {h}x{w}")
    if isinstance(fmap, torch.Tensor):
        return torch.rot90(fmap, k, dims=(-2, -1))
    return np.rot90(fmap, k, axes=(-2, -1)).copy()


def patch_centers(h: int, w: int, patch: float) -> np.ndarray:
    """View-pixel centres of a ``h x w`` patch grid in row-major order, as (x, y)."""
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([(jj.ravel() + 0.5) * patch, (ii.ravel() + 0.5) * patch], axis=1)


def rects_overlap_all(r: Rect, others: Sequence[Rect]) -> bool:
    return all(intersect(r, o) is not None for o in others)
