"""Metrics: product accuracy, P@1, R@1, mAP, and accuracy-vs-graph-size curves.

Product accuracy is all-or-nothing per product. Classifier models label a
node positive iff its active probability is strictly above 0.5 and rank by
descending probability; the contrastive baseline labels by strict distance
threshold and ranks ascending. Ties always break by node index.

Metric aggregation uses plain Python sums in product order so results are
reproducible and directly comparable to definitional oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import contrastive as contrastive_mod
from . import model as model_mod

SIZE_CAP = 20
PROB_THRESHOLD = 0.5


@dataclass
class NodePrediction:
    index: int
    image_id: str
    score: float
    pred: int
    label: int


@dataclass
class ProductPrediction:
    product_id: str
    nodes: list
    ranking: list

    @property
    def size(self) -> int:
        return len(self.nodes)

    def all_correct(self) -> bool:
        return all(n.pred == n.label for n in self.nodes)

    def n_positive(self) -> int:
        return sum(1 for n in self.nodes if n.label == 1)


@dataclass
class MetricsReport:
    product_accuracy: float
    p_at_1: float
    r_at_1: float
    mean_ap: float
    curve: dict
    condition: str
    n_products: int

    def to_text(self) -> str:
        lines = [
            f"condition: {self.condition}",
            f"n_products: {self.n_products}",
            f"product_accuracy: {self.product_accuracy!r}",
            f"p_at_1: {self.p_at_1!r}",
            f"r_at_1: {self.r_at_1!r}",
            f"mAP: {self.mean_ap!r}",
        ]
        for size in sorted(self.curve):
            count, acc = self.curve[size]
            lines.append(f"curve[{size}]: count={count} accuracy={acc!r}")
        return "\n".join(lines) + "\n"

    def curve_csv(self) -> str:
        rows = ["size,count,accuracy"]
        for size in sorted(self.curve):
            count, acc = self.curve[size]
            rows.append(f"{size},{count},{acc!r}")
        return "\n".join(rows) + "\n"


def _rank(scores, descending: bool):
    idx = range(len(scores))
    if descending:
        return sorted(idx, key=lambda i: (-scores[i], i))
    return sorted(idx, key=lambda i: (scores[i], i))


def predict_graph_model(model, record, gallery_only: bool = False) -> ProductPrediction:
    """Forward all graphs of one product (ICFS: per image) in node order."""
    graphs = model_mod.build_graphs(record, model.variant)
    scores, image_ids, labels = [], [], []
    for g in graphs:
        probs = model_mod.forward(g, model, gallery_only=gallery_only)
        for node, p in zip(g.nodes, probs):
            scores.append(float(p))
            image_ids.append(node.image_id)
            labels.append(node.label)
    nodes = [NodePrediction(index=i, image_id=image_ids[i], score=scores[i],
                            pred=1 if scores[i] > PROB_THRESHOLD else 0,
                            label=labels[i])
             for i in range(len(scores))]
    return ProductPrediction(product_id=record.product_id, nodes=nodes,
                             ranking=_rank(scores, descending=True))


def predict_contrastive(model, record, gallery_only: bool = False) -> ProductPrediction:
    labels_pred, ranking, distances = contrastive_mod.predict_and_rank(
        record, model, gallery_only=gallery_only)
    boxes = [(img.image_id, b) for img in record.images for b in img.boxes]
    nodes = [NodePrediction(index=i, image_id=boxes[i][0], score=distances[i],
                            pred=labels_pred[i], label=boxes[i][1].label)
             for i in range(len(boxes))]
    return ProductPrediction(product_id=record.product_id, nodes=nodes, ranking=ranking)


def predict(model, record, gallery_only: bool = False) -> ProductPrediction:
    if isinstance(model, contrastive_mod.ContrastiveParams):
        return predict_contrastive(model, record, gallery_only=gallery_only)
    return predict_graph_model(model, record, gallery_only=gallery_only)


def product_accuracy(predictions) -> float:
    if not predictions:
        raise ValueError("product_accuracy: no predictions")
    return sum(1.0 if p.all_correct() else 0.0 for p in predictions) / len(predictions)


def icfs_product_accuracy(predictions) -> float:
    """Conjunction of per-image correctness; identical to product_accuracy."""
    if not predictions:
        raise ValueError("icfs_product_accuracy: no predictions")
    total = 0.0
    for p in predictions:
        image_ok = {}
        for n in p.nodes:
            image_ok[n.image_id] = image_ok.get(n.image_id, True) and (n.pred == n.label)
        total += 1.0 if all(image_ok.values()) else 0.0
    return total / len(predictions)


def precision_recall_at_1(predictions):
    if not predictions:
        raise ValueError("precision_recall_at_1: no predictions")
    p_sum, r_sum = 0.0, 0.0
    for p in predictions:
        n_pos = p.n_positive()
        if n_pos == 0:
            raise ValueError(f"product {p.product_id}: no positive node")
        top = p.ranking[0]
        hit = 1.0 if p.nodes[top].label == 1 else 0.0
        p_sum += hit
        r_sum += hit / n_pos
    return p_sum / len(predictions), r_sum / len(predictions)


def mean_ap(predictions) -> float:
    if not predictions:
        raise ValueError("mean_ap: no predictions")
    total = 0.0
    for p in predictions:
        if p.n_positive() == 0:
            raise ValueError(f"product {p.product_id}: no positive node")
        hits = 0
        precisions = []
        for rank, idx in enumerate(p.ranking, start=1):
            if p.nodes[idx].label == 1:
                hits += 1
                precisions.append(hits / rank)
        total += sum(precisions) / len(precisions)
    return total / len(predictions)


def accuracy_by_graph_size(predictions) -> dict:
    """size (clipped at 20) -> (count, product accuracy); empty buckets omitted."""
    buckets = {}
    for p in predictions:
        size = min(p.size, SIZE_CAP)
        count, correct = buckets.get(size, (0, 0))
        buckets[size] = (count + 1, correct + (1 if p.all_correct() else 0))
    return {size: (count, correct / count)
            for size, (count, correct) in sorted(buckets.items())}


def compute_report(predictions, condition: str = "normal") -> MetricsReport:
    p1, r1 = precision_recall_at_1(predictions)
    return MetricsReport(product_accuracy=product_accuracy(predictions),
                         p_at_1=p1, r_at_1=r1, mean_ap=mean_ap(predictions),
                         curve=accuracy_by_graph_size(predictions),
                         condition=condition, n_products=len(predictions))


def evaluate(model, records, condition: str = "normal") -> MetricsReport:
    if condition not in ("normal", "gallery_only"):
        raise ValueError(f"unknown condition {condition!r}")
    gallery_only = condition == "gallery_only"
    predictions = [predict(model, r, gallery_only=gallery_only) for r in records]
    return compute_report(predictions, condition=condition)
