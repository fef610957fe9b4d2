"""Sensitivity probe (encoder output variance under single-family view sets),
rotation-prediction accuracy and matched-pair export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from gtsa.augment import (PhotometricParams, ViewParams, derive_seed, render_view,
                          prepare_source, sample_view_set)
from gtsa.config import TrainConfig
from gtsa.geometry import Rect, view_point_to_source
from gtsa.losses import match_topk

FAMILIES = ("color_jitter", "four_fold_rotation", "crop_multicrop")
REPORT_FIELDS = ["family", "mean_variance", "n_views", "n_images"]

Encoder = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class ProbeEntry:
    family: str
    mean_variance: float
    n_views: int
    n_images: int

    def row(self):
        return [self.family, repr(float(self.mean_variance)), self.n_views, self.n_images]


@dataclass
class MatchExport:
    records: List[tuple]  # (sx, sy, tx, ty, sim) in source pixels
    student_view: ViewParams
    teacher_view: ViewParams
    source: np.ndarray


def _base_view(src: np.ndarray, cfg: TrainConfig, seed: int = 0) -> ViewParams:
    H, W = src.shape[:2]
    return ViewParams("global", Rect(0, 0, W, H), cfg.global_size, 0, PhotometricParams(), seed)


def family_views(image: np.ndarray, cfg: TrainConfig, family: str, n_views: int = 10,
                 seed=0, enabled: bool = True):
    """Views of one image varying only in ``family``; returns ``(images, params)``.

    With ``enabled=False`` every view is the identity view (full image, global
    size, no rotation, no photometric change).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    vcfg = cfg.view_config()
    src = prepare_source(image, vcfg)
    parts = [int(s) for s in np.atleast_1d(seed)]
    params = []
    if not enabled:
        params = [_base_view(src, cfg)] * n_views
    elif family == "color_jitter":
        for v in range(n_views):
            vs = derive_seed(*parts, v)
            params.append(ViewParams("global", _base_view(src, cfg).crop, cfg.global_size, 0,
                                     PhotometricParams(jitter_strength=cfg.jitter_strength), vs))
    elif family == "four_fold_rotation":
        for v in range(n_views):
            vs = derive_seed(*parts, v)
            k = int(np.random.default_rng(vs).integers(4))
            params.append(ViewParams("global", _base_view(src, cfg).crop, cfg.global_size, k,
                                     PhotometricParams(), vs))
    else:
        plain = cfg.view_config(G=2, L=n_views - 2, rotate=False, jitter_strength=0.0,
                                grayscale_p=0.0, blur_p_global=0.0, blur_p_local=0.0, noise_p=0.0)
        vs = sample_view_set(image, plain, parts)
        return vs.images, vs.params
    return [render_view(src, p) for p in params], params


def gap_features(encoder: Encoder, views: Sequence[np.ndarray], dtype=torch.float32) -> np.ndarray:
    """Global-average-pooled encoder output, one row per view (views grouped by size)."""
    out = [None] * len(views)
    by_size: Dict[int, List[int]] = {}
    for i, v in enumerate(views):
        by_size.setdefault(v.shape[0], []).append(i)
    with torch.no_grad():
        for idx in by_size.values():
            x = torch.from_numpy(np.stack([views[i] for i in idx]).transpose(0, 3, 1, 2).copy()).to(dtype)
            feats = encoder(x).mean(dim=(-2, -1)).double().numpy()
            for row, i in enumerate(idx):
                out[i] = feats[row]
    return np.stack(out)


def view_variance(feats: np.ndarray) -> float:
    """Per-dimension unbiased variance across views, averaged over dimensions."""
    return float(feats.var(axis=0, ddof=1).mean())


def sensitivity(encoder: Encoder, dataset, family: str, cfg: TrainConfig, n_views: int = 10,
                seed: int = 0, enabled: bool = True, dtype=torch.float32) -> ProbeEntry:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    if n_views < 2:
        raise ValueError("variance needs at least two views")
    per_image = []
    for i in range(len(dataset)):
        views, _ = family_views(dataset[i], cfg, family, n_views, (seed, i), enabled)
        per_image.append(view_variance(gap_features(encoder, views, dtype)))
    return ProbeEntry(family, float(np.mean(per_image)), n_views, len(dataset))


def write_report(entries: Sequence[ProbeEntry], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for e in entries:
            w.writerow(e.row())


def rotation_accuracy(student, dataset, cfg: TrainConfig, seed: int = 0) -> float:
    """Fraction of rotated held-out global views whose quarter turn is predicted correctly.

    One view per image; the rotation is drawn uniformly from {0,1,2,3}.
    """
    vcfg = cfg.view_config(L=0, G=1, rotate=True)
    correct = 0
    dtype = next(student.parameters()).dtype
    with torch.no_grad():
        for i in range(len(dataset)):
            img, p = sample_view_set(dataset[i], vcfg, (seed, i)).views[0]
            x = torch.from_numpy(img.transpose(2, 0, 1)[None].copy()).to(dtype)
            pred = int(student.rot_logits(student.encode(x)).argmax(dim=1))
            correct += pred == p.rot_k
    return correct / len(dataset)


def export_matches(image: np.ndarray, K: int, student_fn: Encoder, teacher_fn: Encoder,
                   cfg: TrainConfig, seed: int = 0,
                   views: Optional[Sequence[ViewParams]] = None) -> MatchExport:
    """Top-K patch matches between two global views, mapped back to source pixels.

    ``student_fn``/``teacher_fn`` map a ``1 x 3 x S x S`` batch to a feature
    map. By default two unrotated, photometrically clean global views are
    sampled; pass ``views`` to override.
    """
    src = prepare_source(image, cfg.view_config())
    if views is None:
        plain = cfg.view_config(G=2, L=0, rotate=False, jitter_strength=0.0, grayscale_p=0.0,
                                blur_p_global=0.0, noise_p=0.0)
        views = sample_view_set(image, plain, (seed,)).params
    sview, tview = views[0], views[1].unrotated()
    dtype = torch.float32

    def _fmap(fn, p):
        x = torch.from_numpy(render_view(src, p).transpose(2, 0, 1)[None].copy())
        with torch.no_grad():
            return fn(x.to(dtype))

    zs, zt = _fmap(student_fn, sview), _fmap(teacher_fn, tview)
    m = match_topk(zs, zt, K)[0]
    ws = zs.shape[-1]
    wt = zt.shape[-1]
    ps = sview.out_size / ws
    pt = tview.out_size / wt
    records = []
    for s, t, sim in m.pairs():
        sr, sc = divmod(s, ws)
        tr, tc = divmod(t, wt)
        sx, sy = view_point_to_source((sc + 0.5) * ps, (sr + 0.5) * ps, sview)
        tx, ty = view_point_to_source((tc + 0.5) * pt, (tr + 0.5) * pt, tview)
        records.append((sx, sy, tx, ty, float(sim)))
    return MatchExport(records, sview, tview, src)


def write_matches(export: MatchExport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sx", "sy", "tx", "ty", "sim"])
        for rec in export.records:
            w.writerow([repr(float(v)) for v in rec])


def checkpoint_encoders(path):
    """Student and teacher networks from a ``.gtsa`` checkpoint, plus its config."""
    from gtsa.checkpoint import load_checkpoint

    state, cfg = load_checkpoint(path)
    state.student.eval()
    state.teacher.eval()
    return state.student, state.teacher, cfg
