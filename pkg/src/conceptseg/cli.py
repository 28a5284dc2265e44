"""Command-line pipeline orchestration.

Every stage reads and writes files in a working directory, so stages can
be re-run individually, inspected, or swapped (e.g. an externally
produced embedding file can replace the built-in descriptor at the
embed stage).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

import numpy as np

from . import clustering, embedding, evaluate, primitives, refine, superpixel, viz
from .core import (Config, dataset_mean_color, load_image, load_labelmap,
                   read_manifest, save_image, save_labelmap)


class StageError(RuntimeError):
    pass


def _require(path: Path, stage: str, hint: str) -> Path:
    if not path.exists():
        raise StageError(f"stage {stage!r}: {hint} not found: {path}")
    return path


def _load_config(args: argparse.Namespace) -> Config:
    overrides: dict[str, str] = {}
    for key in ("scale", "sigma", "K", "C", "epochs", "seed",
                "spectral_sigma", "crop_size"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    min_size = getattr(args, "min_size", None)
    if min_size is not None and min_size != "auto":
        overrides["min_size"] = str(int(min_size))
    if args.config:
        return Config.from_file(args.config, overrides)
    return Config.from_dict(overrides)


def _snapshot_config(cfg: Config, workdir: Path) -> None:
    snap = workdir / "config_snapshot.txt"
    if not snap.exists():
        cfg.to_file(snap)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_primitives(cfg: Config, workdir: Path, manifest: Path) -> None:
    image_paths = read_manifest(manifest)
    out_dir = workdir / "primitives"
    out_dir.mkdir(parents=True, exist_ok=True)
    log_lines = []
    for image_id, path in enumerate(image_paths):
        img = load_image(path)
        h, w = img.shape[:2]
        min_size = cfg.min_size or superpixel.dynamic_min_size(h, w)
        params = superpixel.FelzParams(scale=cfg.scale, sigma=cfg.sigma,
                                       min_size=min_size)
        labels = superpixel.felzenszwalb_segment(img, params)
        hue = primitives.crop_hue_channel(img)
        stats = primitives.shape_stats(labels, hue)
        adjacency = primitives.build_adjacency(labels)
        merged, log = primitives.merge_primitives(
            labels, stats, adjacency, h * w,
            primitives.MergeParams(cfg.hue_threshold, cfg.area_factor,
                                   cfg.p_ratio_threshold))
        save_labelmap(out_dir / f"{image_id:04d}.png", merged)
        log_lines.extend(f"{image_id} {src} -> {dst}\n" for src, dst in log)
        print(f"primitives: image {image_id}: "
              f"{len(stats)} -> {int(merged.max()) + 1} segments",
              file=sys.stderr)
    (workdir / "merge_log.txt").write_text("".join(log_lines),
                                           encoding="utf-8")


def stage_crops(cfg: Config, workdir: Path, manifest: Path) -> None:
    image_paths = read_manifest(manifest)
    prim_dir = _require(workdir / "primitives", "crops",
                        "primitive label maps (run 'primitives' first)")
    out_dir = workdir / "crops"
    out_dir.mkdir(parents=True, exist_ok=True)
    mean_color = dataset_mean_color(image_paths)
    entries = []
    for image_id, path in enumerate(image_paths):
        img = load_image(path)
        labels = load_labelmap(
            _require(prim_dir / f"{image_id:04d}.png", "crops",
                     f"label map for image {image_id}"))
        for pid in range(int(labels.max()) + 1):
            crop = primitives.extract_crop(img, labels, pid, mean_color,
                                           cfg.crop_size)
            crop_path = out_dir / f"{image_id}_{pid}.png"
            save_image(crop_path, crop)
            entries.append((image_id, pid, crop_path))
    embedding.write_crop_manifest(workdir / "crop_manifest.txt", entries)
    np.savetxt(workdir / "mean_color.txt", mean_color[None, :], fmt="%.6f")


def stage_embed(cfg: Config, workdir: Path, source: str) -> None:
    manifest_path = _require(workdir / "crop_manifest.txt", "embed",
                             "crop manifest (run 'crops' first)")
    out_path = workdir / "embeddings.sgde"
    if source != "builtin":
        external = _require(Path(source), "embed", "embedding file")
        embedding.read_embeddings(external)   # validate before adopting
        shutil.copyfile(external, out_path)
        return
    entries = embedding.read_crop_manifest(manifest_path)
    keys = []
    rows = []
    for image_id, pid, crop_path in entries:
        crop = load_image(_require(crop_path, "embed",
                                   f"crop {image_id}_{pid}"))
        keys.append((image_id, pid))
        rows.append(embedding.embed_builtin(crop))
    matrix = embedding.EmbeddingMatrix(
        np.array(keys, dtype=np.uint32), np.array(rows, dtype=np.float32))
    embedding.write_embeddings(matrix, out_path)


def stage_cluster(cfg: Config, workdir: Path) -> None:
    emb_path = _require(workdir / "embeddings.sgde", "cluster",
                        "embedding file (run 'embed' first)")
    matrix = embedding.read_embeddings(emb_path)
    if cfg.normalize_embeddings:
        norms = np.linalg.norm(matrix.vectors, axis=1, keepdims=True)
        matrix = embedding.EmbeddingMatrix(
            matrix.keys, matrix.vectors / np.maximum(norms, 1e-12))
    params = clustering.OcraParams(
        K=cfg.K, C=cfg.C, batch_size=cfg.batch_size, max_iter=cfg.max_iter,
        patience=cfg.patience, spectral_sigma=cfg.spectral_sigma,
        seed=cfg.seed)
    concepts, over, model, _mapping = clustering.ocra(matrix, params)
    lines = [f"{img} {pid} {o} {c}\n" for (img, pid), o, c
             in zip(matrix.keys.tolist(), over.tolist(), concepts.tolist())]
    (workdir / "assignments.txt").write_text("".join(lines), encoding="utf-8")
    center_keys = np.stack([np.zeros(cfg.K, dtype=np.uint32),
                            np.arange(cfg.K, dtype=np.uint32)], axis=1)
    embedding.write_embeddings(
        embedding.EmbeddingMatrix(center_keys,
                                  model.centers.astype(np.float32)),
        workdir / "kmeans_model.sgde")
    sizes = np.bincount(concepts, minlength=cfg.C)
    print("cluster: concept sizes "
          + " ".join(f"{c}:{s}" for c, s in enumerate(sizes.tolist())),
          file=sys.stderr)


def read_assignments(path: Path) -> dict[int, dict[int, int]]:
    """Concept label per (image_id, primitive_id), grouped by image."""
    per_image: dict[int, dict[int, int]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        img, pid, _over, concept = (int(v) for v in line.split())
        per_image.setdefault(img, {})[pid] = concept
    return per_image


def stage_pseudolabel(cfg: Config, workdir: Path, manifest: Path) -> None:
    image_paths = read_manifest(manifest)
    assign = read_assignments(
        _require(workdir / "assignments.txt", "pseudolabel",
                 "assignments (run 'cluster' first)"))
    prim_dir = workdir / "primitives"
    out_dir = workdir / "pseudolabels"
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id in range(len(image_paths)):
        labels = load_labelmap(
            _require(prim_dir / f"{image_id:04d}.png", "pseudolabel",
                     f"label map for image {image_id}"))
        pseudo = refine.assemble_pseudolabels(labels,
                                              assign.get(image_id, {}))
        save_labelmap(out_dir / f"{image_id:04d}.png", pseudo)


def stage_refine(cfg: Config, workdir: Path, manifest: Path) -> None:
    image_paths = read_manifest(manifest)
    pl_dir = _require(workdir / "pseudolabels", "refine",
                      "pseudo-labels (run 'pseudolabel' first)")
    images = [load_image(p) for p in image_paths]
    pseudo = [load_labelmap(_require(pl_dir / f"{i:04d}.png", "refine",
                                     f"pseudo-label {i}"))
              for i in range(len(image_paths))]
    params = refine.TrainParams(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        epochs=cfg.epochs, augment_crop=cfg.augment_crop,
        augment_flip=cfg.augment_flip,
        augment_saturation=cfg.augment_saturation, seed=cfg.seed)
    model, trace = refine.train_refiner(images, pseudo, cfg.C, params)
    model.save(workdir / "refiner.sgdr")
    lines = ["epoch,mean_loss\n"]
    lines.extend(f"{e},{loss:.6f}\n" for e, loss in enumerate(trace))
    (workdir / "loss_trace.csv").write_text("".join(lines), encoding="utf-8")
    print(f"refine: epoch losses {trace[0]:.4f} -> {trace[-1]:.4f}",
          file=sys.stderr)


def stage_predict(cfg: Config, workdir: Path, manifest: Path) -> None:
    model = refine.RefinerModel.load(
        _require(workdir / "refiner.sgdr", "predict",
                 "trained model (run 'refine' first)"))
    out_dir = workdir / "predictions"
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_id, path in enumerate(read_manifest(manifest)):
        labels, _probs = refine.predict(model, load_image(path))
        save_labelmap(out_dir / f"{image_id:04d}.png", labels)


def _accumulate_confusion(pred_dir: Path, gt_manifest: Path, n_pred: int,
                          n_gt: int, stage: str) -> np.ndarray:
    gt_paths = read_manifest(gt_manifest)
    cm = np.zeros((n_pred, n_gt), dtype=np.int64)
    for image_id, gt_path in enumerate(gt_paths):
        pred = load_labelmap(
            _require(pred_dir / f"{image_id:04d}.png", stage,
                     f"prediction for image {image_id}"))
        gt = load_labelmap(_require(Path(gt_path), stage,
                                    f"ground truth for image {image_id}"))
        if pred.shape != gt.shape:
            # predictions are upsampled to the ground-truth size
            pred = primitives.nearest_resize(pred, *gt.shape)
        cm += evaluate.confusion(pred, gt, n_pred, n_gt)
    return cm


def stage_eval(cfg: Config, workdir: Path, gt_manifest: Path,
               n_classes: int, matching_kind: str,
               pred_subdir: str = "predictions") -> evaluate.MetricsReport:
    pred_dir = _require(workdir / pred_subdir, "eval",
                        f"{pred_subdir} directory")
    cm = _accumulate_confusion(pred_dir, gt_manifest, cfg.C, n_classes,
                               "eval")
    if matching_kind == "majority":
        match = evaluate.majority_match(cm)
    else:
        match = evaluate.hungarian_match(cm)
    report = evaluate.metrics(cm, match)
    (workdir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (workdir / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    hungarian = evaluate.hungarian_match(cm)
    violations = evaluate.majority_diagnostic(cm, hungarian)
    diag_lines = [
        f"group {v.group}: assigned class {v.assigned_class} "
        f"(fraction {v.assigned_fraction:.3f}) but majority class is "
        f"{v.majority_class}\n" for v in violations]
    (workdir / "majority_diagnostic.txt").write_text(
        "".join(diag_lines), encoding="utf-8")
    print(report.to_text(), end="", file=sys.stderr)
    return report


def stage_viz(cfg: Config, workdir: Path, gt_manifest: Path | None,
              n_classes: int | None) -> None:
    pred_dir = _require(workdir / "predictions", "viz",
                        "predictions (run 'predict' first)")
    out_dir = workdir / "viz"
    out_dir.mkdir(parents=True, exist_ok=True)
    matching = None
    if gt_manifest is not None:
        if n_classes is None:
            raise StageError("stage 'viz': --classes required with --gt")
        cm = _accumulate_confusion(pred_dir, gt_manifest, cfg.C, n_classes,
                                   "viz")
        matching = evaluate.majority_match(cm)
    for pred_path in sorted(pred_dir.glob("*.png")):
        labels = load_labelmap(pred_path)
        save_image(out_dir / pred_path.name,
                   viz.render(labels, cfg.C, matching))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptseg",
        description="Unsupervised visual concept discovery pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--workdir", type=Path, required=True)
        p.add_argument("--seed", type=int, default=None)
        if manifest:
            p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("primitives", help="superpixels + primitive merging")
    common(p)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--min-size", dest="min_size", default=None,
                   help="integer pixel count, or 'auto'")

    p = sub.add_parser("crops", help="extract mean-filled primitive crops")
    common(p)
    p.add_argument("--crop-size", dest="crop_size", type=int, default=None)

    p = sub.add_parser("embed", help="embed crops (builtin or external file)")
    common(p, manifest=False)
    p.add_argument("--embeddings", default="builtin",
                   help="'builtin' or path to an SGDE file")

    p = sub.add_parser("cluster", help="overclustering + reassignment")
    common(p, manifest=False)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--spectral-sigma", dest="spectral_sigma", type=float,
                   default=None)

    p = sub.add_parser("pseudolabel", help="assemble pseudo-label maps")
    common(p)
    p.add_argument("--C", type=int, default=None)

    p = sub.add_parser("refine", help="train the per-pixel refiner")
    common(p)
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("predict", help="predict refined concept maps")
    common(p)
    p.add_argument("--C", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate against ground truth")
    common(p, manifest=False)
    p.add_argument("--gt", type=Path, required=True,
                   help="manifest of ground-truth label maps")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--matching", choices=("majority", "hungarian"),
                   default="majority")
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--pred-subdir", default="predictions")

    p = sub.add_parser("viz", help="render predictions as color PNGs")
    common(p, manifest=False)
    p.add_argument("--gt", type=Path, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--C", type=int, default=None)

    p = sub.add_parser("pipeline", help="run every stage in order")
    common(p)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--min-size", dest="min_size", default=None)
    p.add_argument("--crop-size", dest="crop_size", type=int, default=None)
    p.add_argument("--embeddings", default="builtin")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--C", type=int, default=None)
    p.add_argument("--spectral-sigma", dest="spectral_sigma", type=float,
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--gt", type=Path, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--matching", choices=("majority", "hungarian"),
                   default="majority")
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = _load_config(args)
    workdir: Path = args.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    _snapshot_config(cfg, workdir)

    cmd = args.command
    if cmd == "primitives":
        stage_primitives(cfg, workdir, args.manifest)
    elif cmd == "crops":
        stage_crops(cfg, workdir, args.manifest)
    elif cmd == "embed":
        stage_embed(cfg, workdir, args.embeddings)
    elif cmd == "cluster":
        stage_cluster(cfg, workdir)
    elif cmd == "pseudolabel":
        stage_pseudolabel(cfg, workdir, args.manifest)
    elif cmd == "refine":
        stage_refine(cfg, workdir, args.manifest)
    elif cmd == "predict":
        stage_predict(cfg, workdir, args.manifest)
    elif cmd == "eval":
        stage_eval(cfg, workdir, args.gt, args.classes, args.matching,
                   args.pred_subdir)
    elif cmd == "viz":
        stage_viz(cfg, workdir, args.gt, args.classes)
    elif cmd == "pipeline":
        stage_primitives(cfg, workdir, args.manifest)
        stage_crops(cfg, workdir, args.manifest)
        stage_embed(cfg, workdir, args.embeddings)
        stage_cluster(cfg, workdir)
        stage_pseudolabel(cfg, workdir, args.manifest)
        stage_refine(cfg, workdir, args.manifest)
        stage_predict(cfg, workdir, args.manifest)
        if args.gt is not None:
            if args.classes is None:
                raise StageError(
                    "stage 'pipeline': --classes required with --gt")
            stage_eval(cfg, workdir, args.gt, args.classes, args.matching)
            stage_viz(cfg, workdir, args.gt, args.classes)
        else:
            stage_viz(cfg, workdir, None, None)
    else:  # pragma: no cover
        raise StageError(f"unknown command {cmd!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (StageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
