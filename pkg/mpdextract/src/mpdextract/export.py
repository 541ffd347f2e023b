"""Writers for the gallery interchange formats.

These are independent implementations of the two formats the downstream
engine consumes:

- JSONL: one product object per line; floats are float32-rounded.
- Binary "MPDG1": little-endian; u32 counts; length-prefixed UTF-8
  strings; per product a u8 title-presence flag followed by a fixed
  1536-float title block; per box 512 f32 features and a u8 label
  (0, 1, or 2 for unlabeled).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import BOX_FEATURE_DIM, TITLE_EMBED_DIM

MAGIC = b"MPDG1\x00"
_LABEL_ABSENT = 2


class ExportError(ValueError):
    """A product cannot be serialized; message names product and problem."""


def _f32_list(arr) -> list:
    return [float(np.float32(x)) for x in arr]


def _check_dims(product):
    if product.raw_title is not None and len(product.raw_title) != TITLE_EMBED_DIM:
        raise ExportError(f"product {product.product_id}: title must have "
                          f"{TITLE_EMBED_DIM} values, got {len(product.raw_title)}")
    for img in product.images:
        for b in img.boxes:
            if len(b.feature) != BOX_FEATURE_DIM:
                raise ExportError(f"product {product.product_id}: box {b.box_id} "
                                  f"must have {BOX_FEATURE_DIM} values, "
                                  f"got {len(b.feature)}")


def product_to_obj(product, split_name=None) -> dict:
    obj = {
        "product_id": product.product_id,
        "raw_title": None if product.raw_title is None
        else _f32_list(product.raw_title),
        "images": [
            {"image_id": img.image_id,
             "boxes": [
                 {"box_id": b.box_id,
                  "feature": _f32_list(b.feature),
                  "label": b.label,
                  "bbox": None if getattr(b, "bbox", None) is None
                  else [float(v) for v in b.bbox]}
                 for b in img.boxes]}
            for img in product.images],
    }
    if split_name is not None:
        obj["split"] = split_name
    return obj


def write_jsonl(products, path, split_name=None):
    for product in products:
        _check_dims(product)
    with open(path, "w", encoding="utf-8") as fh:
        for product in products:
            fh.write(json.dumps(product_to_obj(product, split_name)) + "\n")


def _write_string(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def write_binary(products, path):
    for product in products:
        _check_dims(product)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(products)))
        for product in products:
            _write_string(fh, product.product_id)
            has_title = product.raw_title is not None
            fh.write(struct.pack("<B", 1 if has_title else 0))
            title = (np.asarray(product.raw_title) if has_title
                     else np.zeros(TITLE_EMBED_DIM))
            fh.write(title.astype("<f4").tobytes())
            fh.write(struct.pack("<I", len(product.images)))
            for img in product.images:
                _write_string(fh, img.image_id)
                fh.write(struct.pack("<I", len(img.boxes)))
                for b in img.boxes:
                    _write_string(fh, b.box_id)
                    fh.write(np.asarray(b.feature).astype("<f4").tobytes())
                    label = _LABEL_ABSENT if b.label is None else int(b.label)
                    fh.write(struct.pack("<B", label))


def write_errors_jsonl(errors, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in errors:
            fh.write(json.dumps({"product_id": e.product_id,
                                 "image_id": e.image_id,
                                 "box_id": e.box_id,
                                 "reason": e.reason}) + "\n")
