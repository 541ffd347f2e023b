"""Two-branch contrastive baseline: boxes and titles embedded into a shared space.

A box is accepted as main product when the cosine distance between its
embedding and the title embedding is strictly below the evaluation
threshold; ranking is by ascending distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, ParamSet, Tensor, activation, affine, matmul


@dataclass(frozen=True)
class ContrastiveConfig:
    box_dim: int = 512
    title_dim: int = 1536
    embed_dim: int = 512
    margin: float = 0.5
    eval_threshold: float = 0.1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not 0.0 < self.eval_threshold < 2.0:
            raise ValueError(f"eval_threshold must be in (0,2), got {self.eval_threshold}")


@dataclass
class ContrastiveParams:
    config: ContrastiveConfig
    params: ParamSet


def init_contrastive_params(config: ContrastiveConfig = ContrastiveConfig(),
                            seed: int = 0) -> ContrastiveParams:
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    for name, fan_in in (("image_branch", config.box_dim), ("text_branch", config.title_dim)):
        limit = np.sqrt(6.0 / (fan_in + config.embed_dim))
        ps.add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, config.embed_dim)))
        ps.add(f"{name}.b", np.zeros(config.embed_dim))
    return ContrastiveParams(config=config, params=ps)


def embed_pair(feature, raw_title, model: ContrastiveParams):
    leaves = model.params.leaves()
    f = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    t = np.asarray(raw_title, dtype=np.float64).reshape(1, -1)
    if f.shape[1] != model.config.box_dim:
        raise DimensionError(f"box feature dim {f.shape[1]} != {model.config.box_dim}")
    if t.shape[1] != model.config.title_dim:
        raise DimensionError(f"title dim {t.shape[1]} != {model.config.title_dim}")
    z_img = affine(Tensor(f), leaves["image_branch.w"], leaves["image_branch.b"])
    z_txt = affine(Tensor(t), leaves["text_branch.w"], leaves["text_branch.b"])
    return z_img.data.reshape(-1), z_txt.data.reshape(-1)


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_distance: zero-norm vector (degenerate embedding)")
    return float(1.0 - a.dot(b) / (na * nb))


def _cosine_distance_rows(a: Tensor, b: Tensor) -> Tensor:
    dot = (a * b).sum(axis=1)
    na = (a * a).sum(axis=1).sqrt()
    nb = (b * b).sum(axis=1).sqrt()
    return 1.0 - dot / (na * nb)


def batch_loss_tensor(features: np.ndarray, titles: np.ndarray, labels,
                      leaves, margin: float) -> Tensor:
    """Mean over pairs of y*d^2 + (1-y)*max(0, m-d)^2 with cosine distance d."""
    y = np.asarray(labels, dtype=np.float64)
    z_img = affine(Tensor(np.asarray(features, dtype=np.float64)),
                   leaves["image_branch.w"], leaves["image_branch.b"])
    z_txt = affine(Tensor(np.asarray(titles, dtype=np.float64)),
                   leaves["text_branch.w"], leaves["text_branch.b"])
    d = _cosine_distance_rows(z_img, z_txt)
    hinge = activation(Tensor(np.full(d.data.shape, margin)) - d, "relu")
    per_pair = Tensor(y) * d * d + Tensor(1.0 - y) * hinge * hinge
    return per_pair.mean()


def contrastive_loss(z_img, z_txt, y: int, margin: float) -> float:
    """Single-pair loss on already-embedded vectors."""
    d = cosine_distance(z_img, z_txt)
    if y == 1:
        return d * d
    return max(0.0, margin - d) ** 2


def predict_and_rank(record, model: ContrastiveParams, gallery_only: bool = False):
    """Per-box (labels, ranking, distances) for one product record.

    A missing title (or gallery-only) zeroes the raw title, leaving the text
    branch bias; a zero bias makes the distance undefined, in which case all
    boxes are negative and ranked by index.
    """
    cfg = model.config
    raw_title = record.raw_title
    if gallery_only or raw_title is None:
        raw_title = np.zeros(cfg.title_dim)
    leaves = model.params.leaves()
    z_txt = affine(Tensor(np.asarray(raw_title, dtype=np.float64).reshape(1, -1)),
                   leaves["text_branch.w"], leaves["text_branch.b"]).data.reshape(-1)
    features = np.stack([np.asarray(b.feature, dtype=np.float64)
                         for img in record.images for b in img.boxes])
    z_img = affine(Tensor(features), leaves["image_branch.w"],
                   leaves["image_branch.b"]).data

    n = features.shape[0]
    degenerate_title = np.linalg.norm(z_txt) == 0.0
    distances = []
    for i in range(n):
        if degenerate_title or np.linalg.norm(z_img[i]) == 0.0:
            distances.append(float("inf"))
        else:
            distances.append(cosine_distance(z_img[i], z_txt))
    labels = [1 if d < cfg.eval_threshold else 0 for d in distances]
    ranking = sorted(range(n), key=lambda i: (distances[i], i))
    return labels, ranking, distances
