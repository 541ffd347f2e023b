"""Gallery-graph main product models: NG, ICFS, PCFS and PDFS topologies.

A product's detected boxes become nodes of a dense self-looped graph. A
two-layer learner maps [box_feature, projected_title] to per-node
embeddings; their Gram matrix is the learned adjacency used for one
message-passing step (skipped by NG); a leaky-ReLU updater and a two-way
classifier produce per-node main-product probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import core
from .core import (DimensionError, ParamSet, Tensor, activation, affine,
                   concat_cols, matmul, softmax_rows, tile_rows, two_class_ce)

VARIANTS = ("ng", "icfs", "pcfs", "pdfs")


class MissingLabelError(ValueError):
    """A training path needed node labels that are absent."""


@dataclass(frozen=True)
class ModelConfig:
    box_dim: int = 512
    title_dim: int = 1536
    embed_dim: int = 512
    leaky_slope: float = 0.01
    # second learner layer stays linear by default so affinities may be negative
    learner_relu_both: bool = False
    # classifier consumes the projected title by default (keeps input at 2*embed_dim)
    classifier_uses_raw_title: bool = False
    # gallery-only zeroing happens on the raw title before projection by default
    zero_title_after_projection: bool = False
    adjacency_row_softmax: bool = False

    def classifier_in_dim(self) -> int:
        title = self.title_dim if self.classifier_uses_raw_title else self.embed_dim
        return title + self.embed_dim


@dataclass
class BoxNode:
    box_id: str
    image_id: str
    feature: np.ndarray
    label: int | None = None
    bbox: tuple | None = None

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.bbox is not None:
            x1, y1, x2, y2 = self.bbox
            if not (x1 < x2 and y1 < y2):
                raise ValueError(f"box {self.box_id}: degenerate bbox {self.bbox}")


@dataclass
class GalleryGraph:
    """One densely connected graph of box nodes plus the product title."""

    product_id: str
    nodes: list
    raw_title: np.ndarray | None = None
    scope: str = "per-product"

    def __post_init__(self):
        if not self.nodes:
            raise ValueError(f"product {self.product_id}: graph has no nodes")
        if self.scope == "per-image":
            image_ids = {n.image_id for n in self.nodes}
            if len(image_ids) != 1:
                raise ValueError(
                    f"product {self.product_id}: per-image graph spans images {image_ids}")

    @property
    def size(self) -> int:
        return len(self.nodes)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([n.feature for n in self.nodes])

    def labels(self) -> list:
        out = []
        for n in self.nodes:
            if n.label is None:
                raise MissingLabelError(
                    f"product {self.product_id}: box {n.box_id} has no label")
            out.append(int(n.label))
        return out


@dataclass
class ModelParams:
    variant: str
    config: ModelConfig
    params: ParamSet

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model_params(variant: str, config: ModelConfig = ModelConfig(),
                      seed: int = 0) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases, in a fixed parameter order."""
    rng = np.random.default_rng(seed)
    d, tdim, p = config.box_dim, config.title_dim, config.embed_dim
    ps = ParamSet()

    def fc(name, fan_in, fan_out):
        ps.add(f"{name}.w", _glorot(rng, fan_in, fan_out))
        ps.add(f"{name}.b", np.zeros(fan_out))

    fc("title_proj", tdim, p)
    fc("learner_l1", d + p, p)
    fc("learner_l2", p, p)
    if variant == "pdfs":
        fc("decoupled_head", p, p)
    fc("updater", p, p)
    fc("classifier", config.classifier_in_dim(), 2)
    return ModelParams(variant=variant, config=config, params=ps)


def build_graphs(record, variant: str) -> list:
    """Graphs per variant: ICFS one per image, others one over the whole gallery."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    images = record.images
    if not images or all(not img.boxes for img in images):
        raise ValueError(f"product {record.product_id}: no boxes")
    title = None if record.raw_title is None else np.asarray(record.raw_title, dtype=np.float64)

    def node(img, box):
        return BoxNode(box_id=box.box_id, image_id=img.image_id,
                       feature=box.feature, label=box.label, bbox=box.bbox)

    if variant == "icfs":
        graphs = []
        for img in images:
            if not img.boxes:
                raise ValueError(f"product {record.product_id}: image {img.image_id} has no boxes")
            graphs.append(GalleryGraph(product_id=record.product_id,
                                       nodes=[node(img, b) for b in img.boxes],
                                       raw_title=title, scope="per-image"))
        return graphs
    nodes = [node(img, b) for img in images for b in img.boxes]
    return [GalleryGraph(product_id=record.product_id, nodes=nodes,
                         raw_title=title, scope="per-product")]


# ---------------------------------------------------------------------------
# differentiable forward path (leaves = gradient-tracking parameter tensors)
# ---------------------------------------------------------------------------

def _project_title_t(raw_title, leaves, config: ModelConfig, gallery_only: bool) -> Tensor:
    if raw_title is not None:
        raw = np.asarray(raw_title, dtype=np.float64)
        if raw.shape != (config.title_dim,):
            raise DimensionError(
                f"raw title has shape {raw.shape}, expected ({config.title_dim},)")
    else:
        raw = None
    zero_pre = gallery_only and not config.zero_title_after_projection
    if raw is None or zero_pre:
        raw = np.zeros(config.title_dim)
    t = affine(Tensor(raw.reshape(1, -1)), leaves["title_proj.w"], leaves["title_proj.b"])
    if gallery_only and config.zero_title_after_projection:
        t = t * 0.0
    return t


def _graph_learner_t(features: np.ndarray, t: Tensor, leaves,
                     config: ModelConfig, variant: str):
    n = features.shape[0]
    if features.shape[1] != config.box_dim:
        raise DimensionError(
            f"node features have dim {features.shape[1]}, expected {config.box_dim}")
    x = concat_cols([Tensor(features), tile_rows(t, n)])
    hidden = activation(affine(x, leaves["learner_l1.w"], leaves["learner_l1.b"]), "relu")
    e = affine(hidden, leaves["learner_l2.w"], leaves["learner_l2.b"])
    if config.learner_relu_both:
        e = activation(e, "relu")
    d = None
    if variant == "pdfs":
        d = affine(hidden, leaves["decoupled_head.w"], leaves["decoupled_head.b"])
    return e, d


def _adjacency_t(embeddings: Tensor, config: ModelConfig) -> Tensor:
    a = matmul(embeddings, embeddings.T)
    if config.adjacency_row_softmax:
        shifted = a - Tensor(a.data.max(axis=1, keepdims=True))
        ez = shifted.exp()
        a = ez / ez.sum(axis=1, keepdims=True)
    return a


def _forward_logits(graph: GalleryGraph, leaves, variant: str,
                    config: ModelConfig, gallery_only: bool) -> Tensor:
    t = _project_title_t(graph.raw_title, leaves, config, gallery_only)
    features = graph.feature_matrix()
    e, d = _graph_learner_t(features, t, leaves, config, variant)
    if variant == "ng":
        mixed = e
    else:
        affinity_source = d if variant == "pdfs" else e
        a = _adjacency_t(affinity_source, config)
        mixed = matmul(a, e)
    h = activation(affine(mixed, leaves["updater.w"], leaves["updater.b"]),
                   "leaky_relu", config.leaky_slope)
    n = features.shape[0]
    if config.classifier_uses_raw_title:
        raw = graph.raw_title
        if raw is None or (gallery_only and not config.zero_title_after_projection):
            raw = np.zeros(config.title_dim)
        title_part = tile_rows(Tensor(np.asarray(raw).reshape(1, -1)), n)
    else:
        title_part = tile_rows(t, n)
    return affine(concat_cols([title_part, h]), leaves["classifier.w"], leaves["classifier.b"])


def loss_tensor(graphs, leaves, variant: str, config: ModelConfig,
                gallery_only: bool = False) -> Tensor:
    """Mean two-class cross entropy over every node of every graph in the batch."""
    if not graphs:
        raise ValueError("loss_tensor: empty batch")
    logits = [_forward_logits(g, leaves, variant, config, gallery_only) for g in graphs]
    labels = [y for g in graphs for y in g.labels()]
    if len(logits) == 1:
        stacked = logits[0]
    else:
        # stack row blocks via a transpose of column concatenation of transposes
        stacked = concat_cols([l.T for l in logits]).T
    return two_class_ce(stacked, labels)


# ---------------------------------------------------------------------------
# public inference-side operations
# ---------------------------------------------------------------------------

def project_title(raw_title, model: ModelParams, gallery_only: bool = False) -> np.ndarray:
    t = _project_title_t(raw_title, model.params.leaves(), model.config, gallery_only)
    return t.data.reshape(-1)


def graph_learner(nodes, t, model: ModelParams):
    """Per-node embeddings E (and D for PDFS) from node features and a title vector."""
    features = np.stack([np.asarray(n.feature, dtype=np.float64) for n in nodes])
    t_row = Tensor(np.asarray(t, dtype=np.float64).reshape(1, -1))
    if t_row.data.shape[1] != model.config.embed_dim:
        raise DimensionError(
            f"projected title has dim {t_row.data.shape[1]}, "
            f"expected {model.config.embed_dim}")
    e, d = _graph_learner_t(features, t_row, model.params.leaves(),
                            model.config, model.variant)
    return (e.data, None if d is None else d.data)


def adjacency(embeddings: np.ndarray) -> np.ndarray:
    """Gram matrix of embedding rows: symmetric, nonnegative diagonal."""
    e = np.asarray(embeddings, dtype=np.float64)
    return e @ e.T


def message_pass(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[1] != e.shape[0]:
        raise DimensionError(f"message_pass: incompatible shapes {a.shape} x {e.shape}")
    return a @ e


def feature_update(mixed: np.ndarray, model: ModelParams) -> np.ndarray:
    leaves = model.params.leaves()
    out = activation(affine(Tensor(mixed), leaves["updater.w"], leaves["updater.b"]),
                     "leaky_relu", model.config.leaky_slope)
    return out.data


def classify(h: np.ndarray, t, model: ModelParams):
    """Logits and softmax probabilities; active-class probability is column 1."""
    leaves = model.params.leaves()
    n = np.asarray(h).shape[0]
    t_row = Tensor(np.asarray(t, dtype=np.float64).reshape(1, -1))
    logits = affine(concat_cols([tile_rows(t_row, n), Tensor(h)]),
                    leaves["classifier.w"], leaves["classifier.b"])
    return logits.data, softmax_rows(logits.data)


def forward(graph: GalleryGraph, model: ModelParams,
            gallery_only: bool = False) -> np.ndarray:
    """Per-node active-class probabilities, in node order.

    NG nodes are evaluated one at a time: they are independent by
    definition, and row-batched BLAS products are not bit-identical across
    row counts, so batching would break exact node locality.
    """
    leaves = model.params.leaves()
    if model.variant == "ng" and graph.size > 1:
        rows = [_forward_logits(
            GalleryGraph(product_id=graph.product_id, nodes=[node],
                         raw_title=graph.raw_title, scope=graph.scope),
            leaves, model.variant, model.config, gallery_only).data
            for node in graph.nodes]
        return softmax_rows(np.concatenate(rows, axis=0))[:, 1]
    logits = _forward_logits(graph, leaves, model.variant,
                             model.config, gallery_only)
    return softmax_rows(logits.data)[:, 1]


def model_loss(graphs, model: ModelParams, gallery_only: bool = False) -> float:
    return loss_tensor(graphs, model.params.leaves(), model.variant,
                       model.config, gallery_only).item()
