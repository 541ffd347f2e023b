"""Manifest parsing: structure, path resolution, diagnostics."""

import json

import pytest

from mpdextract import ManifestError, read_manifest


def write_manifest(tmp_path, *objs):
    path = tmp_path / "m.jsonl"
    path.write_text("\n".join(json.dumps(o) for o in objs) + "\n")
    return path


def product_obj(**overrides):
    obj = {"product_id": "p0", "title": "red bag",
           "images": [{"image_id": "i0", "path": "imgs/a.png",
                       "boxes": [{"box_id": "b0", "bbox": [0, 0, 10, 10],
                                  "label": 1}]}]}
    obj.update(overrides)
    return obj


class TestReadManifest:
    def test_fixture_manifest_parses(self, fixture_dir):
        products = read_manifest(fixture_dir / "manifest.jsonl")
        assert len(products) == 10
        assert products[0].product_id == "p0"
        assert products[7].title == ""

    def test_relative_paths_resolved_against_manifest_dir(self, tmp_path):
        path = write_manifest(tmp_path, product_obj())
        [product] = read_manifest(path)
        assert product.images[0].path == tmp_path / "imgs/a.png"

    def test_fields_carried(self, tmp_path):
        path = write_manifest(tmp_path, product_obj())
        [product] = read_manifest(path)
        box = product.images[0].boxes[0]
        assert (box.box_id, box.bbox, box.label) == ("b0", (0, 0, 10, 10), 1)

    def test_null_and_missing_label_both_mean_unlabeled(self, tmp_path):
        obj = product_obj()
        obj["images"][0]["boxes"][0]["label"] = None
        obj["images"][0]["boxes"].append({"box_id": "b1", "bbox": [1, 1, 5, 5]})
        [product] = read_manifest(write_manifest(tmp_path, obj))
        assert all(b.label is None for b in product.images[0].boxes)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(product_obj()) + "\n\n\n")
        assert len(read_manifest(path)) == 1


class TestDiagnostics:
    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(product_obj()) + "\n{broken\n")
        with pytest.raises(ManifestError, match="line 2"):
            read_manifest(path)

    @pytest.mark.parametrize("key", ["product_id", "images"])
    def test_missing_product_key(self, tmp_path, key):
        obj = product_obj()
        del obj[key]
        with pytest.raises(ManifestError, match=key):
            read_manifest(write_manifest(tmp_path, obj))

    def test_empty_images(self, tmp_path):
        with pytest.raises(ManifestError, match="no images"):
            read_manifest(write_manifest(tmp_path, product_obj(images=[])))

    def test_empty_boxes(self, tmp_path):
        obj = product_obj()
        obj["images"][0]["boxes"] = []
        with pytest.raises(ManifestError, match="no boxes"):
            read_manifest(write_manifest(tmp_path, obj))

    def test_bad_bbox_length(self, tmp_path):
        obj = product_obj()
        obj["images"][0]["boxes"][0]["bbox"] = [0, 0, 10]
        with pytest.raises(ManifestError, match="4 coordinates"):
            read_manifest(write_manifest(tmp_path, obj))

    def test_bad_label_value(self, tmp_path):
        obj = product_obj()
        obj["images"][0]["boxes"][0]["label"] = 3
        with pytest.raises(ManifestError, match="label"):
            read_manifest(write_manifest(tmp_path, obj))
