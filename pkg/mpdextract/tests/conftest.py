import json

import pytest

from mpdextract import Extractor

from extractor_helpers import FAST_CONFIG, make_image


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """10 labeled products: seeded PNG images, boxes, titles, manifest."""
    root = tmp_path_factory.mktemp("raw")
    (root / "imgs").mkdir()
    lines = []
    for p in range(10):
        images = []
        for i in range(1 + p % 2):
            rel = f"imgs/p{p}_i{i}.png"
            make_image(root / rel, seed=100 * p + i)
            boxes = []
            for b in range(1 + (p + i) % 2):
                x0 = 2.0 + 8 * b
                boxes.append({"box_id": f"p{p}_i{i}_b{b}",
                              "bbox": [x0, 3.0, x0 + 30, 45.0],
                              "label": 1 if (i == 0 and b == 0) else 0})
            images.append({"image_id": f"p{p}_i{i}", "path": rel, "boxes": boxes})
        title = "" if p == 7 else f"classic item number {p} with leather strap"
        lines.append(json.dumps({"product_id": f"p{p}", "title": title,
                                 "images": images}))
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return root


@pytest.fixture(scope="session")
def fast_extractor():
    return Extractor(FAST_CONFIG)
