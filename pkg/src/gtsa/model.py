"""Tiny ViT encoder with convolutional projector/predictor heads and a rotation head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    dim: int = 64
    depth: int = 2
    heads: int = 4
    patch: int = 8
    mlp_ratio: float = 2.0
    proj_blocks: int = 2
    pred_blocks: int = 1
    kernel: int = 3
    normalize_output: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ValueError("dim must be divisible by 4 for 2-D sinusoidal positions")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd to preserve spatial size")


def sincos_2d(h: int, w: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed 2-D sine/cosine position table of shape ``(h*w, dim)``."""
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64),
                            torch.arange(w, dtype=torch.float64), indexing="ij")
    oy = ys.reshape(-1, 1) * omega
    ox = xs.reshape(-1, 1) * omega
    pe = torch.cat([oy.sin(), oy.cos(), ox.sin(), ox.cos()], dim=1)
    return pe.to(dtype)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        # no key bias: it shifts every logit in a row equally, so softmax ignores it
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.q_bias = nn.Parameter(torch.zeros(dim))
        self.v_bias = nn.Parameter(torch.zeros(dim))
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, D = x.shape
        bias = torch.cat([self.q_bias, torch.zeros_like(self.q_bias), self.v_bias])
        q, k, v = F.linear(x, self.qkv.weight, bias).reshape(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(D // self.heads)
        out = att.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, N, D))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Encoder(nn.Module):
    """Patchify, embed, add fixed positions, transformer blocks, reshape to a grid.

    There is no class token; the output is the ``B x D x h x w`` token grid.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.dim, cfg.patch, stride=cfg.patch)
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.dim) if cfg.normalize_output else nn.Identity()

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected B x 3 x S x S images, got {tuple(x.shape)}")
        S = x.shape[-1]
        if x.shape[-2] != S or S % self.cfg.patch:
            raise ValueError(f"image size {tuple(x.shape[-2:])} incompatible with patch {self.cfg.patch}")
        x = self.patch_embed(x)
        B, D, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2) + sincos_2d(h, w, D, x.dtype)
        for blk in self.blocks:
            tokens = blk(tokens)
        tokens = self.norm(tokens)
        return tokens.transpose(1, 2).reshape(B, D, h, w)


class ChannelNorm(nn.LayerNorm):
    """LayerNorm over the channel axis of a ``B x C x H x W`` map."""

    def forward(self, x):
        return super().forward(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class ConvBlock(nn.Module):
    def __init__(self, dim, kernel=3):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim, kernel, stride=1, padding=kernel // 2)
        self.norm = ChannelNorm(dim)

    def forward(self, x):
        return x + F.gelu(self.norm(self.conv(x)))


class ConvHead(nn.Sequential):
    def __init__(self, dim, n_blocks, kernel=3):
        super().__init__(*[ConvBlock(dim, kernel) for _ in range(n_blocks)])

    def forward(self, x):
        if x.shape[1] != self[0].conv.in_channels:
            raise ValueError(f"channel mismatch: {x.shape[1]} vs {self[0].conv.in_channels}")
        return super().forward(x)


class RotationHead(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.fc = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, 4)

    def forward(self, fmap):
        v = fmap.mean(dim=(-2, -1))
        return self.out(self.norm(F.gelu(self.fc(v))))


class Network(nn.Module):
    """Encoder + projector, plus predictor and rotation head on the student side."""

    def __init__(self, cfg: ModelConfig, student: bool):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.projector = ConvHead(cfg.dim, cfg.proj_blocks, cfg.kernel)
        if student:
            self.predictor = ConvHead(cfg.dim, cfg.pred_blocks, cfg.kernel)
            self.rot_head = RotationHead(cfg.dim)
        else:
            self.predictor = None
            self.rot_head = None

    def encode(self, images):
        return self.encoder(images)

    def project(self, fmap):
        return self.projector(fmap)

    def predict(self, fmap):
        return self.predictor(fmap)

    def rot_logits(self, fmap):
        return self.rot_head(fmap)

    def forward(self, images):
        """Student: (z, encoder map); teacher: (z_tilde, encoder map)."""
        feats = self.encode(images)
        z = self.project(feats)
        if self.predictor is not None:
            z = self.predict(z)
        return z, feats


def init_weights(module: nn.Module, generator: torch.Generator):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d)):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=generator)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)


def init_model(cfg: ModelConfig, seed: int = 0, dtype=torch.float32):
    """Student and teacher networks; the teacher is an exact copy of the shared part."""
    gen = torch.Generator().manual_seed(int(seed))
    student = Network(cfg, student=True).to(dtype)
    init_weights(student, gen)
    teacher = Network(cfg, student=False).to(dtype)
    teacher.load_state_dict(student.state_dict(), strict=False)
    for p in teacher.parameters():
        p.requires_grad_(False)
    return student, teacher


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, m: float):
    """In-place ``t <- m * t + (1 - m) * s`` over the encoder and projector."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    sparams = dict(student.named_parameters())
    for name, pt in teacher.named_parameters():
        ps = sparams[name]
        if ps.shape != pt.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(ps.shape)} vs {tuple(pt.shape)}")
        pt.copy_(pt * m + ps.detach() * (1.0 - m))
    return teacher


def momentum_at(step: int, total_steps: int, m0: float = 0.996) -> float:
    """Cosine ramp of the teacher momentum from ``m0`` at step 0 to 1 at ``total_steps``."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return 1.0
    return 1.0 - (1.0 - m0) * (math.cos(math.pi * step / total_steps) + 1.0) / 2.0
