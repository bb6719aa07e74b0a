"""Two-level set-abstraction decoder that maps a cloud to watermark-bit logits."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import ConfigMismatch, ShapeMismatch
from ..geometry_io import as_cloud, normalize
from .grouping import Grouping, build_grouping


@dataclass(frozen=True)
class DecoderConfig:
    n_bits: int = 3
    sa1_centroids: int = 256
    sa1_k: int = 16
    sa1_mlp: tuple[int, ...] = (3, 32, 64)
    sa2_centroids: int = 64
    sa2_k: int = 16
    sa2_mlp: tuple[int, ...] = (67, 128)
    head: tuple[int, ...] = field(default=None)
    # Also feed each SA1 centroid's absolute position into SA2 (as the
    # global layer of canonical PointNet++ does); widens sa2 input by 3.
    sa2_abs_xyz: bool = False

    def __post_init__(self):
        for name in ("sa1_mlp", "sa2_mlp", "head"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))
        if self.head is None:
            object.__setattr__(self, "head", (self.sa2_mlp[-1], 64, self.n_bits))
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise ConfigMismatch(f"decoder config: {msg}")

        if self.n_bits < 1:
            bad("n_bits must be positive")
        if len(self.sa1_mlp) < 2 or self.sa1_mlp[0] != 3:
            bad("sa1 MLP must start at 3 input channels")
        extra = 6 if self.sa2_abs_xyz else 3
        if len(self.sa2_mlp) < 2 or self.sa2_mlp[0] != extra + self.sa1_mlp[-1]:
            bad(f"sa2 MLP input must be {extra} + sa1 output channels")
        if len(self.head) < 2 or self.head[0] != self.sa2_mlp[-1] or self.head[-1] != self.n_bits:
            bad("head must map sa2 channels to n_bits")
        if min(self.sa1_mlp + self.sa2_mlp + self.head) < 1:
            bad("layer widths must be positive")
        if not 1 <= self.sa2_centroids <= self.sa1_centroids:
            bad("need 1 <= sa2 centroids <= sa1 centroids")
        if not 1 <= self.sa2_k <= self.sa1_centroids or self.sa1_k < 1:
            bad("neighbour counts out of range")

    @property
    def min_points(self) -> int:
        return max(self.sa1_centroids, self.sa1_k)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "DecoderConfig":
        known = set(cls.__dataclass_fields__)
        if set(data) - known:
            raise ConfigMismatch(f"unknown decoder config keys: {sorted(set(data) - known)}")
        return cls(**data)

    @classmethod
    def tiny(cls, n_bits: int = 2) -> "DecoderConfig":
        """Small configuration for 32-point clouds, used in tests."""
        return cls(n_bits=n_bits, sa1_centroids=8, sa1_k=4, sa1_mlp=(3, 4),
                   sa2_centroids=4, sa2_k=4, sa2_mlp=(7, 8), head=(8, 4, n_bits))

    @classmethod
    def overfit(cls, n_bits: int = 3) -> "DecoderConfig":
        """Tiny grouping with wider layers, for the capacity check on 32-point clouds."""
        return cls(n_bits=n_bits, sa1_centroids=8, sa1_k=4, sa1_mlp=(3, 32, 32),
                   sa2_centroids=4, sa2_k=4, sa2_mlp=(35, 64), head=(64, 64, n_bits))


def _mlp(widths, final_relu: bool) -> nn.Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(nn.Linear(a, b))
        if final_relu or i < len(widths) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Decoder(nn.Module):
    """Set abstraction (FPS + kNN + shared MLP + max-pool) twice, then a global head."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.sa1 = _mlp(config.sa1_mlp, final_relu=True)
        self.sa2 = _mlp(config.sa2_mlp, final_relu=True)
        self.head = _mlp(config.head, final_relu=False)

    def group(self, cloud) -> Grouping:
        """Normalize ``cloud`` and compute its (parameter-free) grouping."""
        pts, _ = normalize(as_cloud(cloud))
        c = self.config
        return build_grouping(pts, c.sa1_centroids, c.sa1_k, c.sa2_centroids, c.sa2_k)

    def forward(self, rel1: torch.Tensor, nbr2: torch.Tensor, rel2: torch.Tensor,
                centers1: torch.Tensor | None = None) -> torch.Tensor:
        """Logits ``(B, n_bits)`` from batched grouping tensors."""
        c = self.config
        b = rel1.shape[0]
        if rel1.shape[1:] != (c.sa1_centroids, c.sa1_k, 3) or rel2.shape[1:] != (c.sa2_centroids, c.sa2_k, 3):
            raise ShapeMismatch(f"grouping shapes {tuple(rel1.shape)}, {tuple(rel2.shape)} do not match config")
        f1 = self.sa1(rel1).amax(dim=2)  # (B, c1, C1)
        batch = torch.arange(b).view(b, 1, 1)
        gathered = f1[batch, nbr2]  # (B, c2, k2, C1)
        parts = [rel2, gathered]
        if c.sa2_abs_xyz:
            parts.insert(1, centers1[batch, nbr2])
        f2 = self.sa2(torch.cat(parts, dim=-1)).amax(dim=2)
        return self.head(f2.amax(dim=1))


def collate(groups: list[Grouping], dtype=torch.float32):
    rel1 = torch.from_numpy(np.stack([g.rel1 for g in groups])).to(dtype)
    nbr2 = torch.from_numpy(np.stack([g.nbr2 for g in groups]))
    rel2 = torch.from_numpy(np.stack([g.rel2 for g in groups])).to(dtype)
    centers1 = torch.from_numpy(np.stack([g.centers1 for g in groups])).to(dtype)
    return rel1, nbr2, rel2, centers1


def build_decoder(config: DecoderConfig, seed: int = 0, dtype=torch.float32) -> Decoder:
    """Construct a decoder with reproducible default (Kaiming-uniform) initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Decoder(config)
    return model.to(dtype)


@torch.no_grad()
def predict_logits(model: Decoder, clouds, batch_size: int = 64) -> np.ndarray:
    """Logits for a list of raw clouds (each re-normalized before grouping)."""
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(clouds), batch_size):
        groups = [model.group(c) for c in clouds[i:i + batch_size]]
        out.append(model(*collate(groups, dtype)).cpu().numpy())
    return np.concatenate(out) if out else np.zeros((0, model.config.n_bits))


def bce_loss(logits: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on logits: max(z,0) - z*b + log(1 + exp(-|z|))."""
    if logits.shape != bits.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs bits {tuple(bits.shape)}")
    z = logits
    return (z.clamp(min=0) - z * bits + torch.log1p(torch.exp(-z.abs()))).mean()
