"""Command-line entry point: gen / train / eval / predict.

Every command resolves its configuration (config file first, flags on top)
and writes the resolved values next to its outputs so any run can be
reproduced. Exit codes: 0 success, 1 runtime abort, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import contrastive as contrastive_mod
from . import dataset, evaluation, model as model_mod, training


class CliConfigError(ValueError):
    pass


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise CliConfigError(f"cannot read config file {path}: {exc}") from exc
    except ValueError as exc:
        raise CliConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise CliConfigError(f"config file {path} must hold a JSON object")
    return obj


def _resolve(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise CliConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _echo_config(resolved: dict, out_dir: Path, name: str = "config.json"):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


GEN_DEFAULTS = {
    "products": 100, "categories": 5, "images_min": 1, "images_max": 4,
    "boxes_min": 1, "boxes_max": 4, "sigma_feat": 0.1, "sigma_latent": None,
    "sigma_title": 0.1, "distractor_rate": 0.0, "main_box_prob": 0.9,
    "title_absent_rate": 0.0,
    "box_dim": 512, "title_dim": 1536, "seed": 0, "format": "jsonl",
    "fractions": [0.75, 0.05, 0.20],
}


def cmd_gen(args) -> int:
    resolved = _resolve(args, GEN_DEFAULTS)
    cfg = dataset.SyntheticConfig(
        n_products=resolved["products"], n_categories=resolved["categories"],
        images_per_product=(resolved["images_min"], resolved["images_max"]),
        boxes_per_image=(resolved["boxes_min"], resolved["boxes_max"]),
        sigma_feat=resolved["sigma_feat"], sigma_latent=resolved["sigma_latent"],
        sigma_title=resolved["sigma_title"],
        distractor_rate=resolved["distractor_rate"],
        main_box_prob=resolved["main_box_prob"],
        title_absent_rate=resolved["title_absent_rate"], seed=resolved["seed"],
        box_dim=resolved["box_dim"], title_dim=resolved["title_dim"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    products = dataset.generate_synthetic(cfg)
    bundle = dataset.split(products, tuple(resolved["fractions"]), seed=cfg.seed,
                           provenance=json.dumps(resolved, sort_keys=True))
    files = {}
    for name, records in bundle.splits().items():
        if resolved["format"] in ("jsonl", "both"):
            path = out / f"{name}.jsonl"
            dataset.write_products_jsonl(records, path, split_name=name)
            files.setdefault(name, []).append(path.name)
        if resolved["format"] in ("binary", "both"):
            if (cfg.box_dim, cfg.title_dim) != (dataset.BINARY_BOX_DIM,
                                                dataset.BINARY_TITLE_DIM):
                raise CliConfigError(
                    "binary format requires box_dim=512 and title_dim=1536")
            path = out / f"{name}.mpdg"
            dataset.write_products_binary(records, path)
            files.setdefault(name, []).append(path.name)
    manifest = {"config": resolved, "splits": {k: len(v) for k, v in
                                               bundle.splits().items()},
                "files": files}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _echo_config(resolved, out)
    return 0


def _load_bundle(data_dir) -> dataset.DatasetBundle:
    data_dir = Path(data_dir)
    splits = {}
    for name in ("train", "val", "test"):
        jsonl = data_dir / f"{name}.jsonl"
        binary = data_dir / f"{name}.mpdg"
        if jsonl.exists():
            products, rejections = dataset.read_products_jsonl(jsonl)
            if rejections:
                raise CliConfigError(
                    f"{jsonl}: {len(rejections)} invalid products, first: "
                    f"{rejections[0].product_id} {rejections[0].reasons}")
            splits[name] = [record for _, record in products]
        elif binary.exists():
            splits[name] = dataset.read_products_binary(binary)
        else:
            raise CliConfigError(f"no {name}.jsonl or {name}.mpdg in {data_dir}")
    return dataset.DatasetBundle(provenance=str(data_dir), **splits)


TRAIN_DEFAULTS = {
    "model": "pdfs", "epochs": None, "batch_size": None, "lr_main": 1e-4,
    "lr_title_proj": None, "seed": 0, "gallery_only_train": False,
    "grad_clip": None, "early_stop_train_accuracy": None,
    "box_dim": 512, "title_dim": 1536, "embed_dim": 512,
    "margin": 0.5, "eval_threshold": 0.1,
}


def cmd_train(args) -> int:
    if args.variant and args.baseline:
        raise CliConfigError("--variant and --baseline are mutually exclusive")
    if args.variant:
        args.model = args.variant
    elif args.baseline:
        args.model = args.baseline
    resolved = _resolve(args, TRAIN_DEFAULTS)
    try:
        config = training.TrainConfig(**resolved)
    except ValueError as exc:
        raise CliConfigError(str(exc)) from exc
    bundle = _load_bundle(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot, log = training.train(bundle, config)
    training.save_snapshot(snapshot, out / "snapshot.mpds")
    training.write_log(log, out / "log.jsonl")
    _echo_config(resolved, out)
    return 0


def _snapshot_kind(snapshot) -> str:
    if isinstance(snapshot, contrastive_mod.ContrastiveParams):
        return "contrastive"
    return snapshot.variant


def cmd_eval(args) -> int:
    snapshot = training.load_snapshot(args.snapshot)
    kind = _snapshot_kind(snapshot)
    if args.variant and args.variant != kind:
        raise CliConfigError(
            f"snapshot holds a {kind!r} model but --variant {args.variant!r} was requested")
    bundle = _load_bundle(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conditions = ["gallery_only"] if args.gallery_only else ["normal"]
    if args.both_conditions:
        conditions = ["normal", "gallery_only"]
    for condition in conditions:
        report = evaluation.evaluate(snapshot, bundle.test, condition=condition)
        with open(out / f"report_{condition}.txt", "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
        if args.curve:
            curve_path = Path(args.curve)
            if len(conditions) > 1:
                curve_path = curve_path.with_name(
                    f"{curve_path.stem}_{condition}{curve_path.suffix}")
            with open(curve_path, "w", encoding="utf-8") as fh:
                fh.write(report.curve_csv())
    _echo_config({"snapshot": str(args.snapshot), "data": str(args.data),
                  "conditions": conditions, "variant": kind}, out,
                 name="eval_config.json")
    return 0


def cmd_predict(args) -> int:
    snapshot = training.load_snapshot(args.snapshot)
    products, rejections = dataset.read_products_jsonl(args.input, labeled=False)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for _, record in products:
            labeled = all(b.label is not None for b in record.all_boxes())
            pred = evaluation.predict(snapshot, record,
                                      gallery_only=record.raw_title is None)
            boxes = record.all_boxes()
            obj = {
                "product_id": record.product_id,
                "ranking": [boxes[i].box_id for i in pred.ranking],
                "nodes": [{"box_id": boxes[n.index].box_id,
                           "image_id": n.image_id,
                           "score": n.score if np.isfinite(n.score) else None,
                           "pred": n.pred,
                           **({"label": n.label} if labeled else {})}
                          for n in pred.nodes],
            }
            fh.write(json.dumps(obj) + "\n")
    if rejections:
        sys.stderr.write(f"skipped {len(rejections)} invalid products\n")
    _echo_config({"snapshot": str(args.snapshot), "input": str(args.input)},
                 out_path.parent, name="predict_config.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpdgraph")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (1 keeps runs bit-reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--config")
    gen.add_argument("--products", type=int)
    gen.add_argument("--categories", type=int)
    gen.add_argument("--images-min", dest="images_min", type=int)
    gen.add_argument("--images-max", dest="images_max", type=int)
    gen.add_argument("--boxes-min", dest="boxes_min", type=int)
    gen.add_argument("--boxes-max", dest="boxes_max", type=int)
    gen.add_argument("--sigma-feat", dest="sigma_feat", type=float)
    gen.add_argument("--sigma-latent", dest="sigma_latent", type=float)
    gen.add_argument("--sigma-title", dest="sigma_title", type=float)
    gen.add_argument("--distractor-rate", dest="distractor_rate", type=float)
    gen.add_argument("--main-box-prob", dest="main_box_prob", type=float)
    gen.add_argument("--title-absent-rate", dest="title_absent_rate", type=float)
    gen.add_argument("--box-dim", dest="box_dim", type=int)
    gen.add_argument("--title-dim", dest="title_dim", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--format", choices=["jsonl", "binary", "both"])
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train a model on a generated dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.add_argument("--variant", choices=list(model_mod.VARIANTS))
    tr.add_argument("--baseline", choices=["contrastive"])
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", dest="lr_main", type=float)
    tr.add_argument("--lr-title", dest="lr_title_proj", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--gallery-only-train", dest="gallery_only_train",
                    action="store_const", const=True)
    tr.add_argument("--grad-clip", dest="grad_clip", type=float)
    tr.add_argument("--box-dim", dest="box_dim", type=int)
    tr.add_argument("--title-dim", dest="title_dim", type=int)
    tr.add_argument("--embed-dim", dest="embed_dim", type=int)
    tr.set_defaults(func=cmd_train, model=None)

    ev = sub.add_parser("eval", help="evaluate a snapshot on the test split")
    ev.add_argument("--snapshot", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--variant")
    ev.add_argument("--gallery-only", dest="gallery_only", action="store_true")
    ev.add_argument("--both-conditions", dest="both_conditions", action="store_true")
    ev.add_argument("--curve")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="rank boxes of (possibly unlabeled) products")
    pr.add_argument("--snapshot", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (CliConfigError, dataset.ConfigError, dataset.FormatError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # runtime abort
        sys.stderr.write(f"aborted: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
