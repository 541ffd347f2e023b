"""Shared helpers for building tiny records, bundles, and model configs."""

import numpy as np

from mpdgraph import dataset as ds

BOX_DIM = 5
TITLE_DIM = 7
EMBED_DIM = 4


def make_record(rng, n_images=2, boxes_per_image=(2, 3), box_dim=BOX_DIM,
                title_dim=TITLE_DIM, with_title=True, product_id="p0"):
    """A labeled product record with at least one positive box."""
    if isinstance(boxes_per_image, int):
        boxes_per_image = [boxes_per_image] * n_images
    images = []
    positive_placed = False
    for i in range(n_images):
        boxes = []
        for k in range(boxes_per_image[i]):
            label = 1 if (not positive_placed and i == 0 and k == 0) \
                else int(rng.random() < 0.4)
            positive_placed = positive_placed or label == 1
            boxes.append(ds.Box(box_id=f"{product_id}_i{i}_b{k}",
                                feature=rng.normal(size=box_dim), label=label))
        images.append(ds.ProductImage(image_id=f"{product_id}_i{i}", boxes=boxes))
    title = rng.normal(size=title_dim) if with_title else None
    return ds.ProductRecord(product_id=product_id, images=images, raw_title=title)


def make_bundle(rng, n_train=6, n_val=2, n_test=2, **kw):
    def batch(n, prefix):
        return [make_record(rng, product_id=f"{prefix}{i}", **kw) for i in range(n)]
    return ds.DatasetBundle(train=batch(n_train, "tr"), val=batch(n_val, "va"),
                            test=batch(n_test, "te"))
