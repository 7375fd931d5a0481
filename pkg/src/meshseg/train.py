"""Training, validation, and prediction over preprocessed tiles.

A batch is one tile. Each optimizer step draws the next tile of a seeded
epoch shuffle, re-jitters its geometry, recomputes the shape descriptors,
and updates on the masked cross-entropy of the labeled faces. Texture
patches and the cluster layout are computed once per tile: jitter moves
vertices, not texture coordinates, and clusters stay fixed so batches keep a
stable shape. Model selection tracks the pooled validation mean F1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import clustering, geometry, metrics, texture
from .geometry import AugmentConfig
from .mesh_io import UNLABELED, Mesh
from .model import ModelConfig, SegmentationModel, save_checkpoint
from .nn.functional import cross_entropy, gradients
from .nn.optim import AdamW, cosine_lr

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    seed: int = 0
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    eval_every: int = 1
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")


@dataclass
class TileRecord:
    """One preprocessed tile, ready for training or inference."""

    name: str
    mesh: Mesh                       # original coordinates, original areas
    normalized: Mesh                 # centered and scaled copy
    descriptors: np.ndarray          # (F, 16) on the normalized mesh
    pixels: np.ndarray               # (F, P, 3)
    pixel_mask: np.ndarray           # (F, P)
    assignment: clustering.ClusterAssignment
    areas: np.ndarray                # (F,) raw face areas

    @property
    def labels(self) -> np.ndarray | None:
        return self.mesh.labels

    def labeled_count(self) -> int:
        if self.labels is None:
            return 0
        return int((self.labels != UNLABELED).sum())


def prepare_tile(
    mesh: Mesh,
    pixels_per_face: int,
    num_clusters: int,
    rng: np.random.Generator,
) -> TileRecord:
    """Normalize, cluster, and rasterize one tile.

    The cluster count is clamped to the vertex count so small tiles still
    run with the default configuration.
    """
    normalized = geometry.normalize_mesh(mesh)
    k = min(num_clusters, mesh.vertex_count)
    assignment = clustering.cluster_faces(normalized, k, rng)
    pixels, pixel_mask, _ = texture.face_patches(normalized, pixels_per_face)
    descriptors = geometry.face_descriptors(normalized).values
    areas = geometry.face_areas(mesh.vertices, mesh.faces)
    return TileRecord(
        name=mesh.name,
        mesh=mesh,
        normalized=normalized,
        descriptors=descriptors,
        pixels=pixels,
        pixel_mask=pixel_mask,
        assignment=assignment,
        areas=areas,
    )


@dataclass
class HistoryRow:
    step: int
    epoch: int
    tile: str
    lr: float
    loss: float


@dataclass
class TrainResult:
    history: list[HistoryRow]
    best_path: Path | None
    last_path: Path | None
    best_val_mean_f1: float
    val_mean_f1_by_epoch: list[tuple[int, float]]


def minibatch_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Masked cross-entropy over the labeled faces of one tile."""
    mask = labels != UNLABELED
    return cross_entropy(scores, labels, mask)


def _tile_tensors(record: TileRecord, descriptors: np.ndarray, dtype: torch.dtype):
    desc = torch.from_numpy(np.ascontiguousarray(descriptors)).to(dtype)
    pixels = torch.from_numpy(record.pixels).to(dtype)
    pixel_mask = torch.from_numpy(record.pixel_mask)
    return desc, pixels, pixel_mask


def predict_scores(model: SegmentationModel, record: TileRecord) -> np.ndarray:
    """Per-face class probabilities for one tile, (F, C) float64."""
    model.eval()
    desc, pixels, pixel_mask = _tile_tensors(
        record, record.descriptors, model.config.torch_dtype()
    )
    with torch.no_grad():
        scores = model(
            desc, pixels, pixel_mask,
            record.assignment.face_cluster,
            record.assignment.num_clusters,
        )
    return scores.cpu().numpy()


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Argmax class per face; ties resolve to the lowest class index."""
    return np.argmax(scores, axis=1).astype(np.int64)


def pooled_validation_mean_f1(
    model: SegmentationModel,
    records: list[TileRecord],
    num_classes: int,
) -> float:
    """Mean F1 over one confusion matrix pooled across all labeled tiles."""
    pooled = np.zeros((num_classes, num_classes), dtype=np.float64)
    seen = False
    for record in records:
        if record.labeled_count() == 0:
            continue
        scores = predict_scores(model, record)
        pred = predict_labels(scores)
        keep = record.labels != UNLABELED
        pooled += metrics.confusion_matrix(
            record.labels[keep], pred[keep], num_classes
        )
        seen = True
    if not seen:
        return float("nan")
    return float(metrics.f1_from_confusion(pooled).mean())


def train(
    train_records: list[TileRecord],
    val_records: list[TileRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: dict | None = None,
) -> tuple[SegmentationModel, TrainResult]:
    """Run the optimization loop and return the trained model and history.

    When ``out_dir`` is given, ``last.pt`` (every epoch) and ``best.pt``
    (on validation improvement) are written there along with
    ``history.csv``. ``resume_from`` accepts a checkpoint payload produced
    by an interrupted run and continues its epoch counter, optimizer state,
    and random streams.
    """
    if not train_records:
        raise ValueError("no training tiles")
    if all(record.labeled_count() == 0 for record in train_records):
        raise ValueError("all training tiles are unlabeled")

    model = SegmentationModel(model_config, seed=train_config.seed)
    named = dict(model.named_parameters())
    optimizer = AdamW(
        named,
        lr=train_config.lr_max,
        betas=(train_config.beta1, train_config.beta2),
        eps=train_config.adam_eps,
        weight_decay=train_config.weight_decay,
    )
    seeds = np.random.SeedSequence(train_config.seed).spawn(2)
    order_rng = np.random.default_rng(seeds[0])
    augment_rng = np.random.default_rng(seeds[1])

    start_epoch = 0
    step = 0
    best = float("-inf")
    history: list[HistoryRow] = []
    if resume_from is not None:
        model.load_state_dict(resume_from["model_state"])
        model.generator.set_state(resume_from["torch_rng"])
        optimizer.load_state_dict(resume_from["optimizer_state"])
        extra = resume_from["extra"]
        start_epoch = extra["epoch"] + 1
        step = extra["step"]
        best = extra.get("best_val_mean_f1", float("-inf"))
        order_rng.bit_generator.state = extra["order_rng_state"]
        augment_rng.bit_generator.state = extra["augment_rng_state"]

    total_steps = train_config.epochs * len(train_records)
    dtype = model_config.torch_dtype()
    out_dir = Path(out_dir) if out_dir is not None else None
    best_path = last_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        best_path = out_dir / "best.pt"
        last_path = out_dir / "last.pt"
    val_curve: list[tuple[int, float]] = []

    for epoch in range(start_epoch, train_config.epochs):
        order = order_rng.permutation(len(train_records))
        model.train()
        for index in order:
            record = train_records[int(index)]
            if record.labeled_count() == 0:
                logger.warning("tile %s has no labeled faces, skipping", record.name)
                continue
            if train_config.augment.enabled:
                jittered = geometry.augment(record.normalized, train_config.augment, augment_rng)
                descriptors = geometry.face_descriptors(jittered).values
            else:
                descriptors = record.descriptors
            desc, pixels, pixel_mask = _tile_tensors(record, descriptors, dtype)
            labels = torch.from_numpy(record.labels)
            lr = cosine_lr(min(step, total_steps), total_steps,
                           train_config.lr_max, train_config.lr_min)
            scores = model(
                desc, pixels, pixel_mask,
                record.assignment.face_cluster,
                record.assignment.num_clusters,
            )
            loss = minibatch_loss(scores, labels)
            grads = gradients(loss, named)
            optimizer.step(grads, lr)
            history.append(HistoryRow(step=step, epoch=epoch, tile=record.name,
                                      lr=lr, loss=float(loss.detach())))
            step += 1

        is_eval_epoch = (epoch + 1) % train_config.eval_every == 0
        if is_eval_epoch or epoch == train_config.epochs - 1:
            val_mf1 = pooled_validation_mean_f1(model, val_records, model_config.num_classes)
            if not np.isnan(val_mf1):
                val_curve.append((epoch, val_mf1))
                if val_mf1 > best:
                    best = val_mf1
                    if best_path is not None:
                        save_checkpoint(
                            best_path, model, optimizer.state_dict(),
                            extra=_run_state(epoch, step, best, order_rng, augment_rng,
                                             train_config),
                        )
            model.train()
        if last_path is not None:
            save_checkpoint(
                last_path, model, optimizer.state_dict(),
                extra=_run_state(epoch, step, best, order_rng, augment_rng, train_config),
            )

    if out_dir is not None:
        write_history_csv(out_dir / "history.csv", history)
        if best_path is not None and not best_path.exists():
            # no validation signal: the final model is the best we know
            save_checkpoint(
                best_path, model, optimizer.state_dict(),
                extra=_run_state(train_config.epochs - 1, step, best,
                                 order_rng, augment_rng, train_config),
            )
    model.eval()
    return model, TrainResult(
        history=history,
        best_path=best_path,
        last_path=last_path,
        best_val_mean_f1=best,
        val_mean_f1_by_epoch=val_curve,
    )


def _run_state(epoch, step, best, order_rng, augment_rng, train_config) -> dict:
    return {
        "epoch": int(epoch),
        "step": int(step),
        "best_val_mean_f1": float(best),
        "order_rng_state": order_rng.bit_generator.state,
        "augment_rng_state": augment_rng.bit_generator.state,
        "train_config": asdict(train_config),
    }


def write_history_csv(path: str | Path, history: list[HistoryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "epoch", "tile", "lr", "loss"])
        for row in history:
            writer.writerow(
                [row.step, row.epoch, row.tile, f"{row.lr:.17g}", f"{row.loss:.17g}"]
            )
