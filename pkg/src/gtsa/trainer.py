"""Teacher/student optimisation loop."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from gtsa.augment import derive_seed, rotate_image, sample_view_set
from gtsa.config import TrainConfig
from gtsa.geometry import overlap_region
from gtsa.losses import LossWeights, StudentOutputs, total_loss
from gtsa.model import Network, ema_update, init_model, momentum_at

log = logging.getLogger(__name__)

METRIC_FIELDS = ["step", "loss_total", "loss_overlap", "loss_pc", "loss_rp", "momentum", "lr"]
SHUFFLE_TAG = 0x5F1E


@dataclass
class TrainState:
    student: Network
    teacher: Network
    exp_avg: Dict[str, torch.Tensor]
    exp_avg_sq: Dict[str, torch.Tensor]
    step: int = 0
    epoch: int = 0
    momentum: float = 0.996


@dataclass
class StepMetrics:
    step: int
    loss_total: float
    loss_overlap: float
    loss_pc: float
    loss_rp: float
    momentum: float
    lr: float

    def row(self):
        return [self.step] + [repr(float(getattr(self, k))) for k in METRIC_FIELDS[1:]]


@dataclass
class Batch:
    """Views of ``B`` images grouped by view index."""

    student_images: List[torch.Tensor]
    teacher_images: List[torch.Tensor]
    labels: List[torch.Tensor]
    regions: Dict = field(default_factory=dict)
    view_sets: list = field(default_factory=list)


def dtype_of(cfg: TrainConfig):
    return torch.float64 if cfg.float64 else torch.float32


def init_state(cfg: TrainConfig) -> TrainState:
    student, teacher = init_model(cfg.model_config(), cfg.seed, dtype_of(cfg))
    zeros = {n: torch.zeros_like(p) for n, p in student.named_parameters()}
    return TrainState(student, teacher, zeros, {n: z.clone() for n, z in zeros.items()},
                      0, 0, cfg.m0)


def steps_per_epoch(n_images: int, batch_size: int) -> int:
    return math.ceil(n_images / batch_size)


def warmup_steps(cfg: TrainConfig, total: int) -> int:
    return round(0.1 * total) if cfg.warmup_steps < 0 else cfg.warmup_steps


def lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    """Linear warmup to the batch-scaled peak, then cosine decay to ``min_lr``."""
    peak = cfg.lr * cfg.batch_size / 256
    warm = warmup_steps(cfg, total)
    if step < warm:
        return peak * step / warm
    progress = (step - warm) / max(1, total - warm)
    return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1 + math.cos(math.pi * min(progress, 1.0)))


def _to_tensor(images: Sequence[np.ndarray], dtype) -> torch.Tensor:
    arr = np.stack(images).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def make_batch(images: Sequence[np.ndarray], indices: Sequence[int], cfg: TrainConfig,
               epoch: int, dtype=torch.float32, view_cfg=None) -> Batch:
    """Sample a ViewSet per image and regroup it by view index.

    Teacher inputs are the unrotated global views; student inputs are every
    view with its rotation applied.
    """
    vcfg = view_cfg or cfg.view_config()
    sets = [sample_view_set(img, vcfg, (cfg.seed, epoch, int(idx)))
            for img, idx in zip(images, indices)]
    n = vcfg.G + vcfg.L
    student = [_to_tensor([s.views[v][0] for s in sets], dtype) for v in range(n)]
    teacher = [_to_tensor([rotate_image(s.views[g][0], (4 - s.views[g][1].rot_k) % 4) for s in sets], dtype)
               for g in range(vcfg.G)]
    labels = [torch.tensor([s.views[v][1].rot_k for s in sets]) for v in range(n)]
    regions = {}
    for g in range(vcfg.G):
        for v in range(n):
            if v == g:
                continue
            regs = []
            for s in sets:
                r = overlap_region(s.views[v][1], s.views[g][1].unrotated(), cfg.patch, cfg.patch)
                if not r.valid:
                    raise RuntimeError(f"views {v} and {g} do not overlap")
                regs.append(r)
            regions[(v, g)] = regs
    return Batch(student, teacher, labels, regions, sets)


def forward_losses(student: Network, teacher: Network, batch: Batch, cfg: TrainConfig):
    """Evaluate every loss term; gradients reach the student only."""
    zs, logits = [], []
    for x in batch.student_images:
        z, feats = student(x)
        zs.append(z)
        logits.append(student.rot_logits(feats))
    with torch.no_grad():
        zt = [teacher(x)[0] for x in batch.teacher_images]
    return total_loss(StudentOutputs(zs, logits, batch.labels), zt, batch.regions,
                      LossWeights(cfg.alpha, cfg.beta), cfg.G, cfg.L, cfg.K, cfg.pool_size,
                      (cfg.use_overlap, cfg.use_pc, cfg.use_rp))


def check_finite(terms):
    for name in ("overlap", "pc", "rp", "total"):
        v = terms[name]
        if not torch.isfinite(v).all():
            raise FloatingPointError(f"non-finite loss term {name!r}: {v.item()}")


@torch.no_grad()
def adamw_update(params, grads, exp_avg, exp_avg_sq, step: int, lr: float, wd: float,
                 betas=(0.9, 0.999), eps=1e-8):
    """Decoupled-weight-decay Adam. ``step`` is the 1-based update count.

    Decay is applied to matrices and kernels only, not to biases or norm gains.
    """
    b1, b2 = betas
    bc1 = 1 - b1 ** step
    bc2 = 1 - b2 ** step
    for name, p in params.items():
        g = grads[name]
        if g is None:
            continue
        if wd and p.ndim >= 2:
            p.mul_(1 - lr * wd)
        m, v = exp_avg[name], exp_avg_sq[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)


def train_step(images, indices, state: TrainState, cfg: TrainConfig, total_steps: int):
    """One optimisation step on a batch of source images; mutates and returns ``state``."""
    if len(images) == 0:
        raise ValueError("empty batch")
    batch = make_batch(images, indices, cfg, state.epoch, dtype_of(cfg))
    params = dict(state.student.named_parameters())
    for p in params.values():
        p.grad = None
    terms = forward_losses(state.student, state.teacher, batch, cfg)
    check_finite(terms)
    terms["total"].backward()
    grads = {n: p.grad for n, p in params.items()}
    if cfg.max_grad_norm > 0:
        torch.nn.utils.clip_grad_norm_([g for g in grads.values() if g is not None],
                                       cfg.max_grad_norm, foreach=False)
    lr = lr_at(state.step, total_steps, cfg)
    adamw_update(params, grads, state.exp_avg, state.exp_avg_sq, state.step + 1, lr,
                 cfg.weight_decay)
    m = momentum_at(min(state.step, total_steps), total_steps, cfg.m0)
    ema_update(state.teacher, state.student, m)
    metrics = StepMetrics(state.step, terms["total"].item(), terms["overlap"].item(),
                          terms["pc"].item(), terms["rp"].item(), m, lr)
    state.step += 1
    state.momentum = m
    for p in params.values():
        p.grad = None
    return state, metrics


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, epoch, SHUFFLE_TAG)).permutation(n)


def run_pretrain(cfg: TrainConfig, dataset, out_dir, resume: Optional[str] = None,
                 stop_after_epochs: Optional[int] = None):
    """Epoch loop with seeded shuffling, periodic checkpoints and a CSV metrics log.

    Writes ``metrics.csv``, ``final.gtsa`` and, when ``checkpoint_every`` is
    set, ``epoch_NNNN.gtsa`` into ``out_dir``. ``stop_after_epochs`` ends the
    run early (used to produce resumable partial runs). Returns the final
    state and the list of step metrics produced by this call.
    """
    from gtsa.checkpoint import load_checkpoint, save_checkpoint

    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    if resume:
        state, saved_cfg = load_checkpoint(resume)
        if saved_cfg != cfg:
            log.warning("resuming with the checkpoint's config, not the one given")
        cfg = saved_cfg
    else:
        state = init_state(cfg)
    spe = steps_per_epoch(n, cfg.batch_size)
    total = spe * cfg.epochs
    metrics_path = os.path.join(out_dir, "metrics.csv")
    append = bool(resume) and os.path.exists(metrics_path)
    history = []
    log.info("pretrain: %d images, %d steps/epoch, %d total steps, seed %d", n, spe, total, cfg.seed)
    with open(metrics_path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not append:
            writer.writerow(METRIC_FIELDS)
        last_epoch = cfg.epochs if stop_after_epochs is None else min(cfg.epochs, state.epoch + stop_after_epochs)
        while state.epoch < last_epoch:
            order = epoch_order(n, cfg.seed, state.epoch)
            for b in range(spe):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                state, met = train_step([dataset[i] for i in idx], idx, state, cfg, total)
                writer.writerow(met.row())
                history.append(met)
                if met.step % 25 == 0:
                    log.info("step %d loss %.4f (ov %.4f pc %.4f rp %.4f) m %.5f lr %.2e",
                             met.step, met.loss_total, met.loss_overlap, met.loss_pc,
                             met.loss_rp, met.momentum, met.lr)
            fh.flush()
            state.epoch += 1
            if cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(state, cfg, os.path.join(out_dir, f"epoch_{state.epoch:04d}.gtsa"))
    save_checkpoint(state, cfg, os.path.join(out_dir, "final.gtsa"))
    return state, history
