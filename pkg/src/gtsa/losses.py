"""Overlap, rotation and patch-correspondence losses and their multi-crop total.

Teacher-side maps must arrive detached; nothing here calls ``detach`` on the
caller's behalf except the top-K index selection, which is non-differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import torch

from gtsa.geometry import OverlapRegion, roi_align, rotate_map

EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for v in (self.alpha, self.beta):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weights must be finite and non-negative, got {v}")


@dataclass
class MatchSet:
    student_idx: torch.Tensor
    teacher_idx: torch.Tensor
    sim: torch.Tensor

    @property
    def K(self) -> int:
        return int(self.student_idx.numel())

    def pairs(self):
        return list(zip(self.student_idx.tolist(), self.teacher_idx.tolist(), self.sim.tolist()))


def cosine(a: torch.Tensor, b: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Cosine similarity with ``EPS`` added to each norm; zero vectors give 0."""
    na = a.norm(dim=dim) + EPS
    nb = b.norm(dim=dim) + EPS
    return (a * b).sum(dim=dim) / (na * nb)


def _as_list(regions, B):
    if isinstance(regions, OverlapRegion):
        return [regions] * B
    regions = list(regions)
    if len(regions) != B:
        raise ValueError(f"{len(regions)} regions for batch of {B}")
    return regions


def overlap_loss(z: torch.Tensor, zt: torch.Tensor, regions, out: int = 4) -> torch.Tensor:
    """Negative mean cosine between pooled student cells and rotated pooled teacher cells."""
    B = z.shape[0]
    if zt.shape[0] != B or zt.shape[1] != z.shape[1]:
        raise ValueError(f"shape mismatch {tuple(z.shape)} vs {tuple(zt.shape)}")
    regions = _as_list(regions, B)
    if not all(r.valid for r in regions):
        raise ValueError("overlap loss needs valid regions")
    ps = roi_align(z, [r.student_rect for r in regions], out, out)
    pt = roi_align(zt, [r.teacher_rect for r in regions], out, out)
    pt = rotate_map(pt, [r.rel_rot for r in regions])
    if ps.shape != pt.shape:
        raise ValueError(f"pooled shapes differ: {tuple(ps.shape)} vs {tuple(pt.shape)}")
    return -cosine(ps, pt, dim=1).mean()


def rotation_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean softmax cross-entropy over four rotation classes."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or logits.shape[1] != 4:
        raise ValueError(f"expected B x 4 logits, got {tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() > 3):
        raise ValueError("rotation labels must lie in {0,1,2,3}")
    logp = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -logp.gather(1, labels.view(-1, 1)).mean()


def _flat(fmap: torch.Tensor) -> torch.Tensor:
    B, D = fmap.shape[:2]
    return fmap.reshape(B, D, -1).transpose(1, 2)  # B x P x D


def similarity_matrix(z: torch.Tensor, zt: torch.Tensor) -> torch.Tensor:
    """``B x P_s x P_t`` cosine similarities between flattened patch lists."""
    a, b = _flat(z), _flat(zt)
    # divide after the dot product so exactly tied similarities stay tied
    na = a.norm(dim=-1) + EPS
    nb = b.norm(dim=-1) + EPS
    return (a @ b.transpose(1, 2)) / (na[:, :, None] * nb[:, None, :])


def select_topk(sim: torch.Tensor, K: int):
    """Best (student, teacher) pairs for a ``B x P_s x P_t`` similarity tensor.

    Each student patch takes its argmax teacher patch (lowest index on ties);
    pairs are ranked by similarity descending, lower student index first on
    ties. Returns ``B x K`` student indices, teacher indices and similarities.
    """
    P = sim.shape[1]
    K = max(1, min(int(K), P))
    best = sim.max(dim=2).values
    tidx = (sim == best[..., None]).to(torch.int64).argmax(dim=2)
    sidx = torch.sort(-best, dim=1, stable=True).indices[:, :K]
    return sidx, tidx.gather(1, sidx), best.gather(1, sidx)


def match_topk(z: torch.Tensor, zt: torch.Tensor, K: int) -> List[MatchSet]:
    with torch.no_grad():
        sidx, tidx, sim = select_topk(similarity_matrix(z, zt), K)
    return [MatchSet(sidx[i], tidx[i], sim[i]) for i in range(sidx.shape[0])]


def patch_corr_loss(z: torch.Tensor, zt: torch.Tensor, K: int) -> torch.Tensor:
    """Top-K nearest-neighbour patch correspondence on full (unpooled) grids."""
    if zt.shape[0] != z.shape[0] or zt.shape[1] != z.shape[1]:
        raise ValueError(f"shape mismatch {tuple(z.shape)} vs {tuple(zt.shape)}")
    with torch.no_grad():
        sidx, tidx, _ = select_topk(similarity_matrix(z, zt), K)
    a, b = _flat(z), _flat(zt)
    D = a.shape[-1]
    sa = a.gather(1, sidx[..., None].expand(-1, -1, D))
    sb = b.gather(1, tidx[..., None].expand(-1, -1, D))
    return -cosine(sa, sb, dim=-1).mean()


@dataclass
class StudentOutputs:
    """Per-view student results; ``z[v]`` is ``B x D x h x w``."""

    z: Sequence[torch.Tensor]
    logits: Sequence[torch.Tensor]
    labels: Sequence[torch.Tensor]


def total_loss(student: StudentOutputs, teacher_z: Sequence[torch.Tensor],
               regions: Dict, weights: LossWeights, G: int, L: int,
               K: int, pool: int = 4, enabled=(True, True, True)) -> Dict[str, torch.Tensor]:
    """Multi-crop total loss.

    ``regions[(v, g)]`` is the per-batch list of OverlapRegions between student
    view ``v`` and teacher view ``g``. Student views ``0..G-1`` are the globals
    in teacher order; the pairs ``v == g`` are skipped. ``enabled`` switches the
    overlap, correspondence and rotation terms in or out of the weighted sum;
    disabled terms are still evaluated (without gradient) for reporting.
    """
    n_views = L + G
    if len(student.z) != n_views or len(teacher_z) != G:
        raise ValueError(f"expected {n_views} student and {G} teacher outputs")
    n_pairs = G * n_views - G
    use_ov, use_pc, use_rp = enabled
    terms = {}

    def _pairs(fn, grad):
        acc = None
        with torch.set_grad_enabled(grad and torch.is_grad_enabled()):
            for g in range(G):
                for v in range(n_views):
                    if v == g:
                        continue
                    val = fn(v, g)
                    acc = val if acc is None else acc + val
        return acc / n_pairs

    def _ov(v, g):
        key = (v, g)
        if key not in regions:
            raise ValueError(f"missing overlap region for pair {key}")
        return overlap_loss(student.z[v], teacher_z[g], regions[key], pool)

    terms["overlap"] = _pairs(_ov, use_ov)
    terms["pc"] = _pairs(lambda v, g: patch_corr_loss(student.z[v], teacher_z[g], K), use_pc)
    with torch.set_grad_enabled(use_rp and torch.is_grad_enabled()):
        rp = None
        for v in range(n_views):
            val = rotation_loss(student.logits[v], student.labels[v])
            rp = val if rp is None else rp + val
        terms["rp"] = rp / n_views

    total = terms["overlap"] if use_ov else terms["overlap"].detach() * 0
    if use_pc:
        total = total + weights.alpha * terms["pc"]
    if use_rp:
        total = total + weights.beta * terms["rp"]
    terms["total"] = total
    return terms
