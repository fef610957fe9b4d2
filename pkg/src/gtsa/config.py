"""Training configuration and its ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from gtsa.augment import ViewConfig
from gtsa.model import ModelConfig


@dataclass
class TrainConfig:
    # views
    G: int = 2
    L: int = 4
    global_size: int = 64
    local_size: int = 32
    image_size: int = 64
    global_scale_min: float = 0.5
    global_scale_max: float = 1.0
    local_scale_min: float = 0.05
    local_scale_max: float = 0.4
    rotate: bool = True
    jitter_strength: float = 1.0
    grayscale_p: float = 0.2
    blur_p_global: float = 0.5
    blur_p_local: float = 0.1
    noise_p: float = 0.1
    noise_sigma: float = 0.05
    # encoder and heads
    patch: int = 8
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 2.0
    proj_blocks: int = 2
    pred_blocks: int = 1
    kernel: int = 3
    normalize_output: bool = True
    # losses
    pool_size: int = 4
    K: int = 16
    alpha: float = 0.5
    beta: float = 0.5
    use_overlap: bool = True
    use_pc: bool = True
    use_rp: bool = True
    # optimisation; lr is the peak rate at batch 256 and is scaled linearly with batch_size
    lr: float = 5e-4
    min_lr: float = 1e-6
    weight_decay: float = 0.04
    warmup_steps: int = -1  # -1: 10% of the run
    max_grad_norm: float = 3.0  # 0 disables clipping
    epochs: int = 1
    batch_size: int = 16
    m0: float = 0.996
    seed: int = 0
    checkpoint_every: int = 0
    float64: bool = False

    def __post_init__(self):
        if self.G < 1 or self.L < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("view counts, batch size and epochs must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.pool_size < 1 or self.K < 1:
            raise ValueError("pool_size and K must be at least 1")
        self.view_config()
        self.model_config()

    def view_config(self, **overrides) -> ViewConfig:
        kw = dict(
            G=self.G, L=self.L, global_size=self.global_size, local_size=self.local_size,
            patch=self.patch, global_scale=(self.global_scale_min, self.global_scale_max),
            local_scale=(self.local_scale_min, self.local_scale_max), rotate=self.rotate,
            jitter_strength=self.jitter_strength, grayscale_p=self.grayscale_p,
            blur_p_global=self.blur_p_global, blur_p_local=self.blur_p_local,
            noise_p=self.noise_p, noise_sigma=self.noise_sigma,
        )
        kw.update(overrides)
        return ViewConfig(**kw)

    def model_config(self) -> ModelConfig:
        return ModelConfig(dim=self.dim, depth=self.depth, heads=self.heads, patch=self.patch,
                           mlp_ratio=self.mlp_ratio, proj_blocks=self.proj_blocks,
                           pred_blocks=self.pred_blocks, kernel=self.kernel,
                           normalize_output=self.normalize_output)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            kw[key] = _parse(types[key], val, key)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _parse(typ: str, val: str, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
    except ValueError:
        raise ValueError(f"bad value for {key}: {val!r} (expected {typ})") from None
    return val


def gradcheck_config(**kw) -> TrainConfig:
    """Tiny 64-bit configuration: D=8, depth 1, 4x4 global and 2x2 local maps."""
    base = dict(G=2, L=2, global_size=16, local_size=8, image_size=32, patch=4, dim=8, depth=1,
                heads=2, proj_blocks=1, pred_blocks=1, pool_size=2, K=4, batch_size=2,
                float64=True, jitter_strength=0.5)
    base.update(kw)
    return TrainConfig(**base)
