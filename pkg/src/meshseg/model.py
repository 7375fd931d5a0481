"""The segmentation network: two per-face feature branches, a fusion MLP,
and a stack of two-stage transformer blocks over the padded cluster layout.

Per face, the geometry branch linearly embeds the 16-wide shape descriptor
and the texture branch runs the face's pixel rows plus a learnable summary
token through one transformer block, keeping the token's output. The two
halves are concatenated and fused by a two-layer MLP into the face feature
fed to the cluster stack.

Each stack iteration attends within every cluster sequence (padding masked,
padded rows reset to zero afterwards), then attends across the cluster
summary tokens so information travels between clusters. A cross-attention
variant additionally lets every face query the token set directly. The head
maps face features to class scores with a row softmax.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import clustering
from .geometry import DESCRIPTOR_WIDTH
from .nn import functional as F
from .nn.blocks import (
    CrossAttention,
    TransformerBlock,
    TwoLayerMLP,
    init_linear_,
)
from .texture import CHANNELS

MODALITY_CHOICES = ("both", "geometry", "texture")
GLOBAL_MODE_CHOICES = ("self_attention", "cross_attention")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``branch_dim`` is the width of each feature branch, ``embed_dim`` the
    fused face feature width used throughout the cluster stack. ``modality``
    zeroes one branch for ablations without changing any parameter shapes.
    """

    num_classes: int = 6
    branch_dim: int = 64
    embed_dim: int = 256
    num_blocks: int = 6
    num_heads: int = 2
    pixels_per_face: int = 128
    num_clusters: int = 300
    modality: str = "both"
    global_mode: str = "self_attention"
    dropout: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        for name in ("branch_dim", "embed_dim", "num_blocks", "num_heads",
                     "pixels_per_face", "num_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % self.num_heads or self.branch_dim % self.num_heads:
            raise ValueError("branch_dim and embed_dim must divide by num_heads")
        if self.modality not in MODALITY_CHOICES:
            raise ValueError(f"modality must be one of {MODALITY_CHOICES}")
        if self.global_mode not in GLOBAL_MODE_CHOICES:
            raise ValueError(f"global_mode must be one of {GLOBAL_MODE_CHOICES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


class TwoStageBlock(nn.Module):
    """One stack iteration: attention within clusters, then across them.

    The local block sees each padded cluster sequence under its mask and the
    padded rows are zeroed again afterwards. The global stage runs a block
    over the K summary tokens and writes them back to slot 0; in
    cross-attention mode every valid face row is additionally updated by
    attending over the token set.
    """

    def __init__(self, width: int, num_heads: int, dropout_rate: float,
                 global_mode: str, dtype: torch.dtype):
        super().__init__()
        self.local_block = TransformerBlock(width, num_heads, 2 * width, dropout_rate, dtype=dtype)
        self.global_block = TransformerBlock(width, num_heads, 2 * width, dropout_rate, dtype=dtype)
        self.face_query = (
            CrossAttention(width, num_heads, dtype=dtype)
            if global_mode == "cross_attention"
            else None
        )

    def forward(
        self,
        batch: torch.Tensor,
        mask: torch.Tensor,
        generator: torch.Generator | None = None,
        skip_global: bool = False,
    ) -> torch.Tensor:
        valid = mask.unsqueeze(-1).to(batch.dtype)
        z = self.local_block(batch, mask, generator) * valid
        if skip_global:
            return z
        tokens = self.global_block(z[:, 0, :], None, generator)
        faces = z[:, 1:, :]
        if self.face_query is not None:
            flat = faces.reshape(-1, faces.shape[-1])
            update = self.face_query(flat, tokens).reshape(faces.shape)
            faces = (faces + update) * valid[:, 1:]
        return torch.cat([tokens.unsqueeze(1), faces], dim=1)


class SegmentationModel(nn.Module):
    """Per-face classifier over a textured mesh.

    Construction is deterministic for a fixed seed: every linear layer and
    both learnable tokens are drawn Glorot-uniform from one generator, which
    afterwards also drives the dropout masks.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        dtype = config.torch_dtype()
        bd, ed = config.branch_dim, config.embed_dim
        self.generator = torch.Generator()
        self.generator.manual_seed(seed)
        self.geometry_proj = nn.Linear(DESCRIPTOR_WIDTH, bd, dtype=dtype)
        self.texture_token = nn.Parameter(torch.empty(CHANNELS, dtype=dtype))
        self.texture_proj = nn.Linear(CHANNELS, bd, dtype=dtype)
        self.texture_block = TransformerBlock(
            bd, config.num_heads, 2 * bd, config.dropout, dtype=dtype
        )
        self.fusion = TwoLayerMLP(2 * bd, ed, ed, config.dropout, dtype=dtype)
        self.cluster_token = nn.Parameter(torch.empty(ed, dtype=dtype))
        self.stages = nn.ModuleList(
            TwoStageBlock(ed, config.num_heads, config.dropout, config.global_mode, dtype)
            for _ in range(config.num_blocks)
        )
        self.head = nn.Linear(ed, config.num_classes, dtype=dtype)
        self._init_parameters()

    def _init_parameters(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                init_linear_(module, self.generator)
        with torch.no_grad():
            self.texture_token.copy_(
                F.glorot_init(1, CHANNELS, self.generator, shape=(CHANNELS,),
                              dtype=self.texture_token.dtype)
            )
            self.cluster_token.copy_(
                F.glorot_init(1, self.config.embed_dim, self.generator,
                              shape=(self.config.embed_dim,),
                              dtype=self.cluster_token.dtype)
            )

    def _gen(self) -> torch.Generator | None:
        return self.generator if self.training else None

    def geometry_features(self, descriptors: torch.Tensor) -> torch.Tensor:
        """(F, 16) descriptors -> (F, branch_dim)."""
        if descriptors.shape[-1] != DESCRIPTOR_WIDTH:
            raise ValueError(
                f"descriptors must be {DESCRIPTOR_WIDTH} wide, got {descriptors.shape[-1]}"
            )
        return self.geometry_proj(descriptors)

    def texture_features(self, pixels: torch.Tensor, pixel_mask: torch.Tensor) -> torch.Tensor:
        """(F, P, 3) pixel rows plus (F, P) validity -> (F, branch_dim).

        The learnable summary token is appended as the last row of every
        sequence before the transformer block; its output is the feature.
        """
        faces, _, channels = pixels.shape
        if channels != CHANNELS:
            raise ValueError(f"pixel rows must have {CHANNELS} channels, got {channels}")
        if pixel_mask.shape != pixels.shape[:2]:
            raise ValueError("pixel_mask must match pixels (F, P)")
        if not bool(pixel_mask.any(dim=1).all()):
            raise ValueError("every face needs at least one valid pixel")
        token = self.texture_token.expand(faces, 1, CHANNELS)
        seq = torch.cat([pixels.to(self.texture_token.dtype), token], dim=1)
        mask = torch.cat(
            [pixel_mask.bool(), torch.ones(faces, 1, dtype=torch.bool, device=pixels.device)],
            dim=1,
        )
        out = self.texture_block(self.texture_proj(seq), mask, self._gen())
        return out[:, -1, :]

    def embed_faces(
        self,
        descriptors: torch.Tensor,
        pixels: torch.Tensor,
        pixel_mask: torch.Tensor,
    ) -> torch.Tensor:
        """Fused per-face features, (F, embed_dim). The branch excluded by
        ``modality`` is replaced by zeros and never evaluated."""
        faces = len(descriptors)
        dtype = self.cluster_token.dtype
        if self.config.modality in ("both", "geometry"):
            geo = self.geometry_features(descriptors.to(dtype))
        else:
            geo = torch.zeros(faces, self.config.branch_dim, dtype=dtype)
        if self.config.modality in ("both", "texture"):
            tex = self.texture_features(pixels, pixel_mask)
        else:
            tex = torch.zeros(faces, self.config.branch_dim, dtype=dtype)
        return self.fusion(torch.cat([geo, tex], dim=1), self._gen())

    def run_stages(
        self,
        batch: torch.Tensor,
        mask: torch.Tensor,
        skip_global: bool = False,
    ) -> torch.Tensor:
        z = batch
        for stage in self.stages:
            z = stage(z, mask, self._gen(), skip_global)
        return z

    def forward(
        self,
        descriptors: torch.Tensor,
        pixels: torch.Tensor,
        pixel_mask: torch.Tensor,
        face_cluster: np.ndarray | torch.Tensor,
        num_clusters: int | None = None,
        skip_global: bool = False,
    ) -> torch.Tensor:
        """Per-face class probabilities, (F, num_classes)."""
        if num_clusters is None:
            num_clusters = self.config.num_clusters
        features = self.embed_faces(descriptors, pixels, pixel_mask)
        batch = clustering.build_batch(features, face_cluster, self.cluster_token, num_clusters)
        z = self.run_stages(batch.tensor, batch.mask, skip_global)
        face_features = clustering.flatten_batch(z, batch)
        scores = F.softmax(self.head(face_features), dim=-1)
        if not bool(torch.isfinite(scores).all()):
            raise RuntimeError("model produced non-finite scores")
        return scores

    @staticmethod
    def predict_labels(scores: torch.Tensor) -> torch.Tensor:
        """Argmax class per row; ties go to the lowest class index."""
        return torch.argmax(scores, dim=-1)


def save_checkpoint(
    path: str | Path,
    model: SegmentationModel,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Serialize config, parameters, optimizer state, and RNG state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "model_state": model.state_dict(),
        "torch_rng": model.generator.get_state(),
        "optimizer_state": optimizer_state,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    return payload


def model_from_checkpoint(payload: dict) -> SegmentationModel:
    """Rebuild a model that predicts bit-identically to the saved one."""
    config = ModelConfig(**payload["model_config"])
    model = SegmentationModel(config, seed=0)
    model.load_state_dict(payload["model_state"])
    model.generator.set_state(payload["torch_rng"])
    return model
