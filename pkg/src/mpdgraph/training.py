"""Training loops for the graph variants and the contrastive baseline.

Batches are seeded shuffles keyed by (seed, epoch); snapshots are taken at
the epoch with the best validation product accuracy (earlier epoch wins
ties). Snapshot files store parameters as little-endian f32, the same
primitive encoding the dataset binary uses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import contrastive as contrastive_mod
from . import evaluation, model as model_mod
from .core import ParamSet, adam_step, grads_from_leaves
from .dataset import FormatError, _write_string as _write_str

SNAPSHOT_MAGIC = b"MPDS1\x00"


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss); message carries epoch/batch info."""


@dataclass
class TrainConfig:
    model: str = "pdfs"  # ng | icfs | pcfs | pdfs | contrastive
    epochs: int | None = None  # defaults: 25 graph, 35 contrastive
    batch_size: int | None = None  # defaults: 6 graphs, 32 pairs
    lr_main: float = 1e-4
    lr_title_proj: float | None = None  # separate rate for the title projection
    seed: int = 0
    gallery_only_train: bool = False
    grad_clip: float | None = None
    early_stop_train_accuracy: float | None = None
    box_dim: int = 512
    title_dim: int = 1536
    embed_dim: int = 512
    margin: float = 0.5
    eval_threshold: float = 0.1

    def __post_init__(self):
        known = model_mod.VARIANTS + ("contrastive",)
        if self.model not in known:
            raise ValueError(f"unknown model {self.model!r}, expected one of {known}")
        if self.epochs is None:
            self.epochs = 35 if self.model == "contrastive" else 25
        if self.batch_size is None:
            self.batch_size = 32 if self.model == "contrastive" else 6
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_main <= 0 or (self.lr_title_proj is not None and self.lr_title_proj <= 0):
            raise ValueError("learning rates must be positive")

    def model_config(self) -> model_mod.ModelConfig:
        return model_mod.ModelConfig(box_dim=self.box_dim, title_dim=self.title_dim,
                                     embed_dim=self.embed_dim)

    def contrastive_config(self) -> contrastive_mod.ContrastiveConfig:
        return contrastive_mod.ContrastiveConfig(
            box_dim=self.box_dim, title_dim=self.title_dim, embed_dim=self.embed_dim,
            margin=self.margin, eval_threshold=self.eval_threshold)


def make_batches(items, batch_size: int, seed: int, epoch: int) -> list:
    """Deterministic shuffle keyed by (seed, epoch); final partial batch kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _clip(grads: dict, limit: float) -> dict:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm <= limit or norm == 0.0:
        return grads
    scale = limit / norm
    return {k: g * scale for k, g in grads.items()}


def _lr_overrides(config: TrainConfig, params: ParamSet) -> dict | None:
    if config.lr_title_proj is None:
        return None
    return {name: config.lr_title_proj for name in params.values
            if name.startswith("title_proj.")}


def _val_accuracy(snapshot, records, gallery_only: bool) -> float:
    preds = [evaluation.predict(snapshot, r, gallery_only=gallery_only) for r in records]
    return evaluation.product_accuracy(preds)


def _train_accuracy(snapshot, records, gallery_only: bool) -> float:
    return _val_accuracy(snapshot, records, gallery_only)


def train(bundle, config: TrainConfig):
    """Returns (best snapshot, per-epoch log list)."""
    if not bundle.train or not bundle.val:
        raise ValueError("train and val splits must be nonempty")
    if config.model == "contrastive":
        return _train_contrastive(bundle, config)
    return _train_graph(bundle, config)


def _train_graph(bundle, config: TrainConfig):
    variant = config.model
    mcfg = config.model_config()
    snapshot = model_mod.init_model_params(variant, mcfg, seed=config.seed)
    best = None  # (accuracy, -epoch, params copy)
    log = []
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for batch_idx, batch in enumerate(
                make_batches(bundle.train, config.batch_size, config.seed, epoch)):
            graphs = [g for record in batch
                      for g in model_mod.build_graphs(record, variant)]
            leaves = snapshot.params.leaves()
            loss = model_mod.loss_tensor(graphs, leaves, variant, mcfg,
                                         gallery_only=config.gallery_only_train)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch {batch_idx}")
            loss.backward()
            grads = grads_from_leaves(leaves)
            if config.grad_clip is not None:
                grads = _clip(grads, config.grad_clip)
            adam_step(snapshot.params, grads, config.lr_main,
                      lr_overrides=_lr_overrides(config, snapshot.params))
            epoch_losses.append(value)
        val_acc = _val_accuracy(snapshot, bundle.val,
                                gallery_only=config.gallery_only_train)
        entry = {"epoch": epoch,
                 "mean_loss": sum(epoch_losses) / len(epoch_losses),
                 "val_product_accuracy": val_acc}
        log.append(entry)
        if best is None or val_acc > best[0]:
            best = (val_acc, epoch,
                    model_mod.ModelParams(variant, mcfg, snapshot.params.copy()))
        if config.early_stop_train_accuracy is not None:
            train_acc = _train_accuracy(snapshot, bundle.train,
                                        gallery_only=config.gallery_only_train)
            entry["train_product_accuracy"] = train_acc
            if train_acc >= config.early_stop_train_accuracy:
                break
    return best[2], log


def _contrastive_pairs(records, title_dim: int, gallery_only: bool):
    pairs = []
    for record in records:
        raw = record.raw_title
        if gallery_only or raw is None:
            raw = np.zeros(title_dim)
        for img in record.images:
            for box in img.boxes:
                if box.label is None:
                    raise model_mod.MissingLabelError(
                        f"product {record.product_id}: box {box.box_id} has no label")
                pairs.append((box.feature, raw, box.label))
    return pairs


def _train_contrastive(bundle, config: TrainConfig):
    ccfg = config.contrastive_config()
    snapshot = contrastive_mod.init_contrastive_params(ccfg, seed=config.seed)
    pairs = _contrastive_pairs(bundle.train, config.title_dim,
                               config.gallery_only_train)
    best = None
    log = []
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for batch_idx, batch in enumerate(
                make_batches(pairs, config.batch_size, config.seed, epoch)):
            features = np.stack([p[0] for p in batch])
            titles = np.stack([p[1] for p in batch])
            labels = [p[2] for p in batch]
            leaves = snapshot.params.leaves()
            loss = contrastive_mod.batch_loss_tensor(features, titles, labels,
                                                     leaves, ccfg.margin)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch {batch_idx}")
            loss.backward()
            grads = grads_from_leaves(leaves)
            if config.grad_clip is not None:
                grads = _clip(grads, config.grad_clip)
            adam_step(snapshot.params, grads, config.lr_main)
            epoch_losses.append(value)
        val_acc = _val_accuracy(snapshot, bundle.val,
                                gallery_only=config.gallery_only_train)
        log.append({"epoch": epoch,
                    "mean_loss": sum(epoch_losses) / len(epoch_losses),
                    "val_product_accuracy": val_acc})
        if best is None or val_acc > best[0]:
            best = (val_acc, epoch,
                    contrastive_mod.ContrastiveParams(ccfg, snapshot.params.copy()))
    return best[2], log


def write_log(log, path):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

def save_snapshot(snapshot, path):
    if isinstance(snapshot, contrastive_mod.ContrastiveParams):
        kind = "contrastive"
        meta = asdict(snapshot.config)
    else:
        kind = snapshot.variant
        meta = asdict(snapshot.config)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        _write_str(fh, kind)
        _write_str(fh, json.dumps(meta, sort_keys=True))
        names = list(snapshot.params.values)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            value = snapshot.params.values[name]
            _write_str(fh, name)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.astype("<f4").tobytes())


def load_snapshot(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: not a snapshot file")
    pos = [len(SNAPSHOT_MAGIC)]

    def take(n):
        if pos[0] + n > len(data):
            raise FormatError(f"{path}: truncated snapshot")
        chunk = data[pos[0]:pos[0] + n]
        pos[0] += n
        return chunk

    def read_str():
        n = struct.unpack("<I", take(4))[0]
        return take(n).decode("utf-8")

    kind = read_str()
    meta = json.loads(read_str())
    ps = ParamSet()
    n_params = struct.unpack("<I", take(4))[0]
    for _ in range(n_params):
        name = read_str()
        ndim = struct.unpack("<I", take(4))[0]
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float64)
        ps.add(name, values.reshape(shape))
    if kind == "contrastive":
        return contrastive_mod.ContrastiveParams(
            contrastive_mod.ContrastiveConfig(**meta), ps)
    return model_mod.ModelParams(kind, model_mod.ModelConfig(**meta), ps)
