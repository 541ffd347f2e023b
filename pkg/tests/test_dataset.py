"""Dataset: synthetic generator, splits, JSONL / binary formats, validation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpdgraph import dataset as ds

TINY = dict(box_dim=6, title_dim=9)


def tiny_config(**kw):
    base = dict(n_products=10, n_categories=3, images_per_product=(1, 3),
                boxes_per_image=(1, 4), sigma_feat=0.1, sigma_title=0.1,
                seed=0, **TINY)
    base.update(kw)
    return ds.SyntheticConfig(**base)


class TestSyntheticConfig:
    @pytest.mark.parametrize("field,value", [
        ("n_products", 0), ("n_categories", 0),
        ("images_per_product", (0, 2)), ("images_per_product", (3, 2)),
        ("boxes_per_image", (2, 1)), ("sigma_feat", -0.1), ("sigma_title", -1.0),
        ("distractor_rate", 1.5), ("main_box_prob", -0.1),
        ("title_absent_rate", 2.0), ("box_dim", 0), ("title_dim", 0),
    ])
    def test_invalid_fields_rejected(self, field, value):
        with pytest.raises(ds.ConfigError) as exc:
            tiny_config(**{field: value})
        name = field if not field.endswith("_dim") else "dim"
        assert name.split("_")[0] in str(exc.value) or field in str(exc.value)


class TestGenerator:
    def test_deterministic(self):
        a = ds.generate_synthetic(tiny_config(seed=11))
        b = ds.generate_synthetic(tiny_config(seed=11))
        for ra, rb in zip(a, b):
            assert ra.product_id == rb.product_id
            assert np.array_equal(ra.raw_title, rb.raw_title)
            for ba, bb in zip(ra.all_boxes(), rb.all_boxes()):
                assert np.array_equal(ba.feature, bb.feature)
                assert ba.label == bb.label

    def test_box_count_bounds(self):
        products = ds.generate_synthetic(tiny_config(n_products=10, seed=3))
        total = sum(r.n_boxes for r in products)
        assert 10 * 1 * 1 <= total <= 10 * 3 * 4

    def test_every_product_valid(self):
        for record in ds.generate_synthetic(tiny_config(n_products=30, seed=5)):
            assert ds.validate_record(record) == []

    def test_zero_noise_main_boxes_identical(self):
        cfg = tiny_config(sigma_feat=0.0, sigma_latent=0.0, distractor_rate=0.0,
                          images_per_product=(2, 4), boxes_per_image=(1, 3), seed=7)
        for record in ds.generate_synthetic(cfg):
            mains = [b.feature for b in record.all_boxes() if b.label == 1]
            for f in mains[1:]:
                assert np.array_equal(f, mains[0])

    def test_title_absent_rate_extremes(self):
        absent = ds.generate_synthetic(tiny_config(title_absent_rate=1.0))
        assert all(r.raw_title is None for r in absent)
        present = ds.generate_synthetic(tiny_config(title_absent_rate=0.0))
        assert all(r.raw_title is not None for r in present)

    def test_features_are_f32_precision(self):
        record = ds.generate_synthetic(tiny_config(seed=9))[0]
        f = record.all_boxes()[0].feature
        assert np.array_equal(f, f.astype(np.float32).astype(np.float64))

    def test_mean_images_within_5_percent(self):
        cfg = ds.SyntheticConfig(n_products=10000, n_categories=3,
                                 images_per_product=(2, 7), boxes_per_image=(1, 1),
                                 sigma_feat=0.1, sigma_title=0.1, seed=1,
                                 box_dim=2, title_dim=2)
        products = ds.generate_synthetic(cfg)
        mean = sum(len(r.images) for r in products) / len(products)
        assert abs(mean - 4.5) / 4.5 < 0.05


class TestSplit:
    def make(self, n):
        return ds.generate_synthetic(tiny_config(n_products=n,
                                                 images_per_product=(1, 1),
                                                 boxes_per_image=(1, 1)))

    def test_100_products(self):
        b = ds.split(self.make(100))
        assert (len(b.train), len(b.val), len(b.test)) == (75, 5, 20)

    def test_101_products_floor_remainder_to_train(self):
        b = ds.split(self.make(101))
        assert (len(b.train), len(b.val), len(b.test)) == (76, 5, 20)

    def test_3_products_minimum_one_each(self):
        b = ds.split(self.make(3))
        assert (len(b.train), len(b.val), len(b.test)) == (1, 1, 1)

    def test_disjoint_and_complete(self):
        b = ds.split(self.make(47), seed=13)
        ids = [r.product_id for part in (b.train, b.val, b.test) for r in part]
        assert len(ids) == 47 and len(set(ids)) == 47

    def test_seed_changes_assignment(self):
        products = self.make(50)
        a = ds.split(products, seed=1)
        b = ds.split(products, seed=2)
        assert [r.product_id for r in a.test] != [r.product_id for r in b.test]

    def test_bad_fractions(self):
        with pytest.raises(ds.ConfigError):
            ds.split(self.make(10), fractions=(0.5, 0.2, 0.2))

    def test_too_few_products(self):
        with pytest.raises(ds.ConfigError):
            ds.split(self.make(2))


class TestValidateRecord:
    def box(self, **kw):
        base = dict(box_id="b0", feature=np.zeros(4), label=1)
        base.update(kw)
        return ds.Box(**base)

    def test_empty_gallery(self):
        record = ds.ProductRecord(product_id="p", images=[])
        assert any("empty gallery" in r for r in ds.validate_record(record))

    def test_duplicate_image_ids(self):
        imgs = [ds.ProductImage("i", [self.box()]),
                ds.ProductImage("i", [self.box(box_id="b1")])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("duplicate image ids" in r for r in reasons)

    def test_image_without_boxes(self):
        imgs = [ds.ProductImage("i0", [self.box()]), ds.ProductImage("i1", [])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("no boxes" in r for r in reasons)

    def test_duplicate_box_ids(self):
        imgs = [ds.ProductImage("i", [self.box(), self.box(label=0)])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("duplicate box ids" in r for r in reasons)

    def test_degenerate_bbox(self):
        imgs = [ds.ProductImage("i", [self.box(bbox=(3.0, 0.0, 1.0, 2.0))])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("bbox" in r for r in reasons)

    def test_bad_label(self):
        imgs = [ds.ProductImage("i", [self.box(label=3)])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("label" in r for r in reasons)

    def test_no_positive_box(self):
        imgs = [ds.ProductImage("i", [self.box(label=0)])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("no positive" in r for r in reasons)

    def test_missing_labels_in_labeled_data(self):
        imgs = [ds.ProductImage("i", [self.box(label=None)])]
        reasons = ds.validate_record(ds.ProductRecord("p", imgs))
        assert any("missing labels" in r for r in reasons)

    def test_unlabeled_mode_allows_missing_labels(self):
        imgs = [ds.ProductImage("i", [self.box(label=None)])]
        assert ds.validate_record(ds.ProductRecord("p", imgs), labeled=False) == []

    def test_valid_record_empty_reasons(self):
        imgs = [ds.ProductImage("i", [self.box(bbox=(0.0, 0.0, 2.0, 2.0)),
                                      self.box(box_id="b1", label=0)])]
        assert ds.validate_record(ds.ProductRecord("p", imgs)) == []


class TestJsonl:
    def bundle(self, n=9, seed=2, **kw):
        cfg = tiny_config(n_products=n, seed=seed, **kw)
        return ds.split(ds.generate_synthetic(cfg), (0.5, 0.25, 0.25), seed=seed)

    def test_round_trip_within_f32(self, tmp_path):
        bundle = self.bundle()
        path = tmp_path / "data.jsonl"
        ds.save_jsonl(bundle, path)
        loaded, rejections = ds.load_jsonl(path)
        assert rejections == []
        for part in ("train", "val", "test"):
            orig, back = bundle.splits()[part], loaded.splits()[part]
            assert [r.product_id for r in orig] == [r.product_id for r in back]
            for ro, rb in zip(orig, back):
                # generator output is already f32-rounded: round trip is exact
                assert np.array_equal(ro.raw_title, rb.raw_title) \
                    or (ro.raw_title is None and rb.raw_title is None)
                for bo, bb in zip(ro.all_boxes(), rb.all_boxes()):
                    assert np.array_equal(bo.feature, bb.feature)
                    assert bo.label == bb.label

    def test_round_trip_preserves_absent_titles(self, tmp_path):
        bundle = self.bundle(title_absent_rate=0.5, seed=4)
        path = tmp_path / "data.jsonl"
        ds.save_jsonl(bundle, path)
        loaded, _ = ds.load_jsonl(path)
        want = [r.raw_title is None for r in bundle.all_products()]
        got = [r.raw_title is None for r in loaded.all_products()]
        assert want == got and any(want)

    def test_empty_gallery_rejected_with_reason(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"product_id": "px", "raw_title": None,
                                    "images": []}) + "\n")
        products, rejections = ds.read_products_jsonl(path)
        assert products == []
        assert rejections[0].product_id == "px"
        assert any("empty gallery" in r for r in rejections[0].reasons)

    def test_malformed_line_number_in_error(self, tmp_path):
        bundle = self.bundle(n=4)
        path = tmp_path / "data.jsonl"
        ds.save_jsonl(bundle, path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][: len(lines[2]) // 2]  # truncate mid-record
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ds.FormatError) as exc:
            ds.read_products_jsonl(path)
        assert "line 3" in str(exc.value)

    def test_missing_key_is_format_error(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"raw_title": None, "images": []}) + "\n")
        with pytest.raises(ds.FormatError):
            ds.read_products_jsonl(path)

    def test_split_tags_preserved(self, tmp_path):
        bundle = self.bundle()
        path = tmp_path / "data.jsonl"
        ds.save_jsonl(bundle, path)
        loaded, _ = ds.load_jsonl(path)
        for part in ("train", "val", "test"):
            assert len(loaded.splits()[part]) == len(bundle.splits()[part])

    def test_floats_serialized_at_f32_precision(self, tmp_path):
        record = ds.ProductRecord(
            product_id="p",
            images=[ds.ProductImage("i", [ds.Box("b", [1.0 / 3.0], label=1)])],
            raw_title=None)
        path = tmp_path / "one.jsonl"
        ds.write_products_jsonl([record], path)
        value = json.loads(path.read_text())["images"][0]["boxes"][0]["feature"][0]
        assert value == float(np.float32(1.0 / 3.0))


class TestBinary:
    def products(self, n=5, seed=8, **kw):
        cfg = ds.SyntheticConfig(n_products=n, n_categories=2,
                                 images_per_product=(1, 2), boxes_per_image=(1, 3),
                                 sigma_feat=0.1, sigma_title=0.1, seed=seed,
                                 box_dim=512, title_dim=1536, **kw)
        return ds.generate_synthetic(cfg)

    def test_round_trip_bit_exact(self, tmp_path):
        products = self.products()
        p1, p2 = tmp_path / "a.mpdg", tmp_path / "b.mpdg"
        ds.write_products_binary(products, p1)
        ds.write_products_binary(ds.read_products_binary(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_and_labels_preserved(self, tmp_path):
        products = self.products(title_absent_rate=0.5, seed=12)
        products[0].images[0].boxes[0].label = None
        path = tmp_path / "a.mpdg"
        ds.write_products_binary(products, path)
        back = ds.read_products_binary(path)
        assert back[0].images[0].boxes[0].label is None
        for ro, rb in zip(products, back):
            assert (ro.raw_title is None) == (rb.raw_title is None)
            if ro.raw_title is not None:
                assert np.array_equal(ro.raw_title, rb.raw_title)
            for bo, bb in zip(ro.all_boxes(), rb.all_boxes()):
                assert np.array_equal(bo.feature, bb.feature)
                assert bo.label == bb.label

    def test_empty_list_header_only(self, tmp_path):
        path = tmp_path / "empty.mpdg"
        ds.write_products_binary([], path)
        assert path.read_bytes() == ds.MAGIC + b"\x00\x00\x00\x00"
        assert ds.read_products_binary(path) == []

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.mpdg"
        ds.write_products_binary(self.products(n=3), path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ds.FormatError):
            ds.read_products_binary(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "trunc.mpdg"
        ds.write_products_binary(self.products(n=3), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(ds.CorruptionError):
            ds.read_products_binary(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "trail.mpdg"
        ds.write_products_binary(self.products(n=3), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ds.CorruptionError):
            ds.read_products_binary(path)

    def test_wrong_dims_rejected_at_write(self, tmp_path):
        record = ds.ProductRecord(
            product_id="p",
            images=[ds.ProductImage("i", [ds.Box("b", np.zeros(8), label=1)])],
            raw_title=np.zeros(1536))
        with pytest.raises(ds.FormatError):
            ds.write_products_binary([record], tmp_path / "x.mpdg")

    def test_bundle_prefix_files(self, tmp_path):
        bundle = ds.split(self.products(n=6), (0.5, 0.25, 0.25))
        prefix = tmp_path / "set"
        ds.save_binary(bundle, prefix)
        for name in ("train", "val", "test"):
            assert (tmp_path / f"set.{name}.mpdg").exists()
        loaded = ds.load_binary(prefix)
        for name in ("train", "val", "test"):
            assert [r.product_id for r in loaded.splits()[name]] == \
                [r.product_id for r in bundle.splits()[name]]

    @settings(deadline=None, max_examples=60)
    @given(seed=st.integers(0, 10 ** 9))
    def test_fuzzed_truncation_never_accepted(self, tmp_path_factory, seed):
        path = tmp_path_factory.mktemp("fuzz") / "f.mpdg"
        ds.write_products_binary(self.products(n=2, seed=1), path)
        data = path.read_bytes()
        cut = np.random.default_rng(seed).integers(0, len(data))
        path.write_bytes(data[:cut])
        with pytest.raises(ds.FormatError):
            ds.read_products_binary(path)
