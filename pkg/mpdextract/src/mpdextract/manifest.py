"""Raw-product manifest: what the extractor reads.

A manifest is a JSONL file, one product per line:

    {"product_id": "p1", "title": "red leather handbag",
     "images": [{"image_id": "i0", "path": "imgs/p1_0.png",
                 "boxes": [{"box_id": "b0", "bbox": [4, 4, 40, 40],
                            "label": 1}]}]}

`label` is optional (omit or null for unlabeled data). `title` may be an
empty string, meaning the title is absent. Relative image paths are
resolved against the manifest's directory. Geometric validation against
the actual image happens at extraction time; the manifest layer only
checks structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    """Malformed manifest; message names the line and the problem."""


@dataclass
class RawBox:
    box_id: str
    bbox: tuple  # (x0, y0, x1, y1) in pixels
    label: int | None = None


@dataclass
class RawImage:
    image_id: str
    path: Path
    boxes: list = field(default_factory=list)


@dataclass
class RawProduct:
    product_id: str
    title: str
    images: list = field(default_factory=list)


def _parse_box(obj: dict, where: str) -> RawBox:
    try:
        bbox = tuple(float(v) for v in obj["bbox"])
        box = RawBox(box_id=str(obj["box_id"]), bbox=bbox, label=obj.get("label"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: bad box entry: {exc}") from exc
    if len(bbox) != 4:
        raise ManifestError(f"{where}: bbox must have 4 coordinates, got {len(bbox)}")
    if box.label is not None and box.label not in (0, 1):
        raise ManifestError(f"{where}: label must be 0, 1 or null, got {box.label}")
    return box


def _parse_product(obj: dict, base: Path, where: str) -> RawProduct:
    try:
        product = RawProduct(product_id=str(obj["product_id"]),
                             title=str(obj.get("title") or ""))
        images_raw = obj["images"]
    except KeyError as exc:
        raise ManifestError(f"{where}: missing key {exc}") from exc
    if not images_raw:
        raise ManifestError(f"{where}: product {product.product_id} has no images")
    for img in images_raw:
        try:
            image = RawImage(image_id=str(img["image_id"]),
                             path=base / str(img["path"]))
            boxes_raw = img["boxes"]
        except KeyError as exc:
            raise ManifestError(f"{where}: missing key {exc}") from exc
        if not boxes_raw:
            raise ManifestError(f"{where}: image {image.image_id} has no boxes")
        image.boxes = [_parse_box(b, where) for b in boxes_raw]
        product.images.append(image)
    return product


def read_manifest(path) -> list:
    """Parse a JSONL manifest into RawProduct entries."""
    path = Path(path)
    products = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise ManifestError(f"{where}: invalid JSON: {exc}") from exc
            products.append(_parse_product(obj, path.parent, where))
    return products
