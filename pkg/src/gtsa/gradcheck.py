"""Central finite-difference verification of the analytic (autograd) gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
import torch

from gtsa.config import TrainConfig, gradcheck_config
from gtsa.data import synthetic_dataset
from gtsa.trainer import forward_losses, init_state, make_batch

TOL = 1e-4


@dataclass
class GradcheckReport:
    errors: Dict[str, float]
    n_checked: Dict[str, int]
    tol: float = TOL

    @property
    def failures(self):
        return {k: v for k, v in self.errors.items() if not v < self.tol}

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def lines(self):
        for name, err in self.errors.items():
            flag = "ok" if err < self.tol else "FAIL"
            yield f"{name:<48s} n={self.n_checked[name]:<4d} max_rel_err={err:.3e} {flag}"


def rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def fd_check(loss_fn: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor],
             h: float = 1e-5, max_per_array: Optional[int] = 200, seed: int = 0,
             tol: float = TOL) -> GradcheckReport:
    """Compare ``loss_fn``'s autograd gradient with central differences.

    Arrays larger than ``max_per_array`` are checked on a random subsample of
    that many entries.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for n, p in params.items()}
    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            n = flat.numel()
            idx = np.arange(n) if max_per_array is None or n <= max_per_array else \
                np.sort(rng.choice(n, size=max_per_array, replace=False))
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                numeric[j] = (fp - fm) / (2 * h)
            a = analytic[name].view(-1).numpy()[idx]
            errors[name] = float(rel_error(a, numeric).max()) if len(idx) else 0.0
            counts[name] = len(idx)
    for p in params.values():
        p.grad = None
    return GradcheckReport(errors, counts, tol)


def gradcheck(cfg: Optional[TrainConfig] = None, n_images: int = 2, seed: int = 0,
              h: float = 1e-5, max_per_array: int = 200) -> GradcheckReport:
    """Finite-difference check of the total loss w.r.t. every student array.

    Runs in 64-bit on a tiny configuration. Teacher arrays are held fixed and
    never appear in the report.
    """
    cfg = (cfg or gradcheck_config()).replace(float64=True)
    torch_dtype = torch.float64
    state = init_state(cfg)
    data = synthetic_dataset(n_images, cfg.image_size, seed=seed)
    batch = make_batch([data[i] for i in range(n_images)], list(range(n_images)), cfg, 0,
                       torch_dtype)
    # move away from the near-symmetric init so gradients are not vanishingly small
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in state.student.parameters():
            p.add_(0.2 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    params = dict(state.student.named_parameters())

    def loss_fn():
        return forward_losses(state.student, state.teacher, batch, cfg)["total"]

    return fd_check(loss_fn, params, h, max_per_array, seed)
