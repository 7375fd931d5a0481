"""Command-line interface: preprocess, train, evaluate, export.

Runs are described by a flat ``key = value`` config file; a handful of flags
override single values on top of it. Tiles live in directories containing
``mesh.obj``, ``texture.png``, and (except for pure prediction) a
``labels.txt``. The ``MESHSEG_OUTPUT_DIR`` environment variable overrides
the configured output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering, geometry, metrics, texture
from .geometry import AugmentConfig
from .mesh_io import (
    ClassPalette,
    load_labels,
    load_textured_mesh,
    write_prediction_csv,
    export_labeled_mesh,
)
from .model import (
    GLOBAL_MODE_CHOICES,
    MODALITY_CHOICES,
    ModelConfig,
    SegmentationModel,
    load_checkpoint,
    model_from_checkpoint,
)
from .train import (
    TileRecord,
    TrainConfig,
    predict_labels,
    predict_scores,
    prepare_tile,
    train,
)

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "MESHSEG_OUTPUT_DIR"

_MODEL_KEYS = {
    "num_classes": int,
    "branch_dim": int,
    "embed_dim": int,
    "num_blocks": int,
    "num_heads": int,
    "pixels_per_face": int,
    "num_clusters": int,
    "modality": str,
    "global_mode": str,
    "dropout": float,
    "dtype": str,
}
_TRAIN_KEYS = {
    "epochs": int,
    "seed": int,
    "lr_max": float,
    "lr_min": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "weight_decay": float,
    "eval_every": int,
}
_AUGMENT_KEYS = {
    "augment": bool,
    "rotate_max_deg": float,
    "scale_min": float,
    "scale_max": float,
    "noise_sigma": float,
}
_DATA_KEYS = {
    "train_tiles": str,
    "val_tiles": str,
    "test_tiles": str,
    "output_dir": str,
    "palette": str,
    "class_names": str,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_tiles: list[Path] = field(default_factory=list)
    val_tiles: list[Path] = field(default_factory=list)
    test_tiles: list[Path] = field(default_factory=list)
    output_dir: Path = Path("runs")
    palette_path: Path | None = None
    class_names: list[str] | None = None


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and # comments are skipped."""
    values: dict[str, str] = {}
    known = {**_MODEL_KEYS, **_TRAIN_KEYS, **_AUGMENT_KEYS, **_DATA_KEYS}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path} line {line_no}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path} line {line_no}: unknown key {key!r}")
            values[key] = raw.strip()
    return values


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _split_paths(raw: str) -> list[Path]:
    return [Path(part.strip()) for part in raw.split(",") if part.strip()]


def build_run_config(file_values: dict[str, str], args: argparse.Namespace) -> RunConfig:
    """Apply precedence: dataclass defaults, then file values, then flags,
    then the output-dir environment variable."""
    model_kwargs, train_kwargs, augment_kwargs = {}, {}, {}
    config = RunConfig()
    for key, raw in file_values.items():
        if key in _MODEL_KEYS:
            model_kwargs[key] = _MODEL_KEYS[key](raw)
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = _TRAIN_KEYS[key](raw)
        elif key in _AUGMENT_KEYS:
            if key == "augment":
                augment_kwargs["enabled"] = _parse_bool(raw)
            else:
                augment_kwargs[key] = _AUGMENT_KEYS[key](raw)
        elif key == "train_tiles":
            config.train_tiles = _split_paths(raw)
        elif key == "val_tiles":
            config.val_tiles = _split_paths(raw)
        elif key == "test_tiles":
            config.test_tiles = _split_paths(raw)
        elif key == "output_dir":
            config.output_dir = Path(raw)
        elif key == "palette":
            config.palette_path = Path(raw)
        elif key == "class_names":
            config.class_names = [part.strip() for part in raw.split(",") if part.strip()]

    if getattr(args, "modality", None):
        model_kwargs["modality"] = args.modality
    if getattr(args, "global_mode", None):
        model_kwargs["global_mode"] = {
            "sa": "self_attention", "ca": "cross_attention"
        }[args.global_mode]
    if getattr(args, "k_clusters", None) is not None:
        model_kwargs["num_clusters"] = args.k_clusters
    if getattr(args, "blocks", None) is not None:
        model_kwargs["num_blocks"] = args.blocks
    if getattr(args, "embed_dim", None) is not None:
        model_kwargs["embed_dim"] = args.embed_dim
    if getattr(args, "seed", None) is not None:
        train_kwargs["seed"] = args.seed

    config.model = ModelConfig(**model_kwargs)
    config.train = TrainConfig(augment=AugmentConfig(**augment_kwargs), **train_kwargs)
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        config.output_dir = Path(env_out)
    return config


def load_config(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    return build_run_config(file_values, args)


def _tile_seed(base_seed: int, tile_name: str) -> np.random.SeedSequence:
    # stable per-tile stream regardless of which command touches it first
    return np.random.SeedSequence([base_seed, zlib.crc32(tile_name.encode())])


def load_tile(tile_dir: Path, num_classes: int, require_labels: bool) -> "object":
    """Load mesh, texture, and labels from a tile directory."""
    mesh_path = tile_dir / "mesh.obj"
    texture_path = tile_dir / "texture.png"
    labels_path = tile_dir / "labels.txt"
    for path in (tile_dir, mesh_path, texture_path):
        if not path.exists():
            raise FileNotFoundError(f"missing {path}")
    mesh = load_textured_mesh(mesh_path, texture_path)
    mesh = mesh.replace(name=tile_dir.name)
    if labels_path.exists():
        mesh = mesh.replace(
            labels=load_labels(labels_path, mesh.face_count, num_classes)
        )
    elif require_labels:
        raise FileNotFoundError(f"missing {labels_path}")
    return mesh


def _cache_dir(config: RunConfig, tile_name: str) -> Path:
    return config.output_dir / "cache" / tile_name


def _cache_meta(config: RunConfig) -> dict:
    return {
        "pixels_per_face": config.model.pixels_per_face,
        "num_clusters": config.model.num_clusters,
        "seed": config.train.seed,
    }


def load_or_prepare_tile(
    tile_dir: Path,
    config: RunConfig,
    require_labels: bool,
    write_cache: bool = False,
) -> TileRecord:
    """Build a TileRecord, reusing the preprocess cache when it matches."""
    mesh = load_tile(tile_dir, config.model.num_classes, require_labels)
    cache = _cache_dir(config, mesh.name)
    meta_path = cache / "meta.json"
    arrays_path = cache / "arrays.npz"
    if meta_path.exists() and arrays_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta == _cache_meta(config):
            logger.info("tile %s: using cached preprocessing", mesh.name)
            return _record_from_cache(mesh, arrays_path)
    rng = np.random.default_rng(_tile_seed(config.train.seed, mesh.name))
    record = prepare_tile(
        mesh, config.model.pixels_per_face, config.model.num_clusters, rng
    )
    if write_cache:
        cache.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            arrays_path,
            descriptors=record.descriptors,
            pixels=record.pixels,
            pixel_mask=record.pixel_mask,
            vertex_cluster=record.assignment.vertex_cluster,
            face_cluster=record.assignment.face_cluster,
            centers=record.assignment.centers,
            distortion=np.asarray(record.assignment.distortion_history),
            num_clusters=record.assignment.num_clusters,
            areas=record.areas,
        )
        clustering.dump_assignment_csv(cache / "clusters.csv", record.assignment.face_cluster)
        geometry.dump_descriptors_csv(cache / "descriptors.csv", record.descriptors)
        meta_path.write_text(json.dumps(_cache_meta(config), indent=1), encoding="utf-8")
    return record


def _record_from_cache(mesh, arrays_path: Path) -> TileRecord:
    normalized = geometry.normalize_mesh(mesh)
    with np.load(arrays_path) as data:
        assignment = clustering.ClusterAssignment(
            vertex_cluster=data["vertex_cluster"],
            face_cluster=data["face_cluster"],
            centers=data["centers"],
            distortion_history=[float(v) for v in data["distortion"]],
            num_clusters=int(data["num_clusters"]),
        )
        return TileRecord(
            name=mesh.name,
            mesh=mesh,
            normalized=normalized,
            descriptors=data["descriptors"],
            pixels=data["pixels"],
            pixel_mask=data["pixel_mask"],
            assignment=assignment,
            areas=data["areas"],
        )


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = load_config(args)
    tiles = config.train_tiles + config.val_tiles + config.test_tiles
    if not tiles:
        raise ValueError("config lists no tiles")
    for tile_dir in tiles:
        record = load_or_prepare_tile(tile_dir, config, require_labels=False,
                                      write_cache=True)
        logger.info(
            "tile %s: %d faces, %d clusters",
            record.name, record.mesh.face_count, record.assignment.num_clusters,
        )
    print(f"preprocessed {len(tiles)} tiles into {config.output_dir / 'cache'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args)
    if not config.train_tiles:
        raise ValueError("config lists no training tiles")
    train_records = [
        load_or_prepare_tile(t, config, require_labels=True, write_cache=True)
        for t in config.train_tiles
    ]
    val_records = [
        load_or_prepare_tile(t, config, require_labels=True, write_cache=True)
        for t in config.val_tiles
    ]
    checkpoint_dir = config.output_dir / "checkpoints"
    resume_payload = None
    if getattr(args, "resume", False):
        last = checkpoint_dir / "last.pt"
        if not last.exists():
            raise FileNotFoundError(f"cannot resume, {last} does not exist")
        resume_payload = load_checkpoint(last)
    _, result = train(
        train_records, val_records, config.model, config.train,
        out_dir=checkpoint_dir, resume_from=resume_payload,
    )
    if result.history:
        tail = f"final loss {result.history[-1].loss:.4f}"
    else:
        tail = "nothing left to train"
    print(
        f"trained {len(result.history)} steps, {tail}, "
        f"best validation mean F1 {result.best_val_mean_f1:.4f}, "
        f"checkpoints in {checkpoint_dir}"
    )
    return 0


def _records_for_split(config: RunConfig, split: str) -> list[TileRecord]:
    dirs = {
        "train": config.train_tiles,
        "val": config.val_tiles,
        "test": config.test_tiles,
    }[split]
    if not dirs:
        raise ValueError(f"config lists no {split} tiles")
    return [
        load_or_prepare_tile(t, config, require_labels=True) for t in dirs
    ]


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args)
    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload)
    # the checkpoint fixes the architecture and preprocessing geometry
    config.model = model.config
    records = _records_for_split(config, args.split)
    num_classes = model.config.num_classes
    counts = np.zeros((num_classes, num_classes), dtype=np.float64)
    weighted = np.zeros_like(counts)
    for record in records:
        scores = predict_scores(model, record)
        pred = predict_labels(scores)
        keep = record.labels != -1
        counts += metrics.confusion_matrix(record.labels[keep], pred[keep], num_classes)
        weighted += metrics.confusion_matrix(
            record.labels[keep], pred[keep], num_classes, weights=record.areas[keep]
        )
    report = metrics.report_from_confusions(counts, weighted)
    text = metrics.format_report(report, config.class_names)
    out_dir = config.output_dir / "metrics"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{args.split}.txt").write_text(text, encoding="utf-8")
    metrics.write_metrics_csv(out_dir / f"{args.split}.csv", report, config.class_names)
    print(text)
    print(f"metrics written to {out_dir}")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    config = load_config(args)
    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload)
    config.model = model.config
    record = load_or_prepare_tile(Path(args.tile), config, require_labels=False)
    scores = predict_scores(model, record)
    pred = predict_labels(scores)
    palette_path = Path(args.palette) if args.palette else config.palette_path
    palette = (
        ClassPalette.from_csv(palette_path)
        if palette_path
        else ClassPalette.default(model.config.num_classes)
    )
    out_dir = config.output_dir / "export"
    out_dir.mkdir(parents=True, exist_ok=True)
    ply_path = out_dir / f"{record.name}_predicted.ply"
    csv_path = out_dir / f"{record.name}_scores.csv"
    export_labeled_mesh(ply_path, record.mesh, pred, palette)
    write_prediction_csv(csv_path, scores, pred)
    print(f"wrote {ply_path} and {csv_path}")
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--modality", choices=MODALITY_CHOICES,
                        help="feature branch selection override")
    parser.add_argument("--global-mode", choices=("sa", "ca"), dest="global_mode",
                        help="cross-cluster stage: self-attention or cross-attention")
    parser.add_argument("--k-clusters", type=int, dest="k_clusters",
                        help="vertex cluster count override")
    parser.add_argument("--blocks", type=int, help="transformer stack depth override")
    parser.add_argument("--embed-dim", type=int, dest="embed_dim",
                        help="fused face feature width override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshseg",
        description="per-face semantic segmentation of textured meshes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="cache descriptors, patches, clusters")
    _add_common_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit a model on the configured tiles")
    _add_common_flags(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the last checkpoint in the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled split")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write a colored prediction mesh and scores")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tile", required=True, help="tile directory to predict")
    p.add_argument("--palette", help="palette CSV overriding the default colors")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
