"""Product interchange formats, split logic and the synthetic gallery generator.

Files carry 32-bit floats; everything is promoted to float64 in memory.
Two formats are supported: self-describing JSONL (one product per line)
and the packed little-endian "MPDG1" binary, which fixes feature and title
dims at 512/1536.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MPDG1\x00"
BINARY_TITLE_DIM = 1536
BINARY_BOX_DIM = 512
_LABEL_ABSENT = 2


class ConfigError(ValueError):
    """Invalid generator or split configuration; message names the field."""


class FormatError(ValueError):
    """A file is not in the expected format."""


class CorruptionError(FormatError):
    """A file started well-formed but ended truncated or inconsistent."""


def _f32(x) -> float:
    return float(np.float32(x))


def _round_f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


@dataclass
class Box:
    box_id: str
    feature: np.ndarray
    label: int | None = None
    bbox: tuple | None = None

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)


@dataclass
class ProductImage:
    image_id: str
    boxes: list = field(default_factory=list)


@dataclass
class ProductRecord:
    product_id: str
    images: list
    raw_title: np.ndarray | None = None
    category: str | None = None

    def __post_init__(self):
        if self.raw_title is not None:
            self.raw_title = np.asarray(self.raw_title, dtype=np.float64)

    def all_boxes(self):
        return [b for img in self.images for b in img.boxes]

    @property
    def n_boxes(self) -> int:
        return sum(len(img.boxes) for img in self.images)


@dataclass
class Rejection:
    product_id: str
    reasons: list


@dataclass
class DatasetBundle:
    train: list
    val: list
    test: list
    provenance: str = ""

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}

    def all_products(self):
        return self.train + self.val + self.test


def validate_record(record: ProductRecord, labeled: bool = True) -> list:
    """All invariant violations for one record (empty list means valid)."""
    reasons = []
    if not record.images:
        reasons.append("empty gallery")
    image_ids = [img.image_id for img in record.images]
    if len(set(image_ids)) != len(image_ids):
        reasons.append("duplicate image ids")
    for img in record.images:
        if not img.boxes:
            reasons.append(f"image {img.image_id} has no boxes")
        box_ids = [b.box_id for b in img.boxes]
        if len(set(box_ids)) != len(box_ids):
            reasons.append(f"duplicate box ids in image {img.image_id}")
        for b in img.boxes:
            if b.bbox is not None:
                x1, y1, x2, y2 = b.bbox
                if not (x1 < x2 and y1 < y2):
                    reasons.append(f"box {b.box_id}: degenerate bbox")
            if b.label is not None and b.label not in (0, 1):
                reasons.append(f"box {b.box_id}: label must be 0 or 1")
    if labeled:
        labels = [b.label for b in record.all_boxes()]
        if any(l is None for l in labels):
            reasons.append("missing labels in labeled data")
        elif not any(l == 1 for l in labels):
            reasons.append("no positive box")
    return reasons


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_products: int = 100
    n_categories: int = 5
    images_per_product: tuple = (1, 4)
    boxes_per_image: tuple = (1, 4)
    sigma_feat: float = 0.1
    sigma_title: float = 0.1
    distractor_rate: float = 0.0
    seed: int = 0
    # extras beyond the core knobs: product-latent spread (defaults to
    # sigma_feat when None), probability an image contains a main box, dims
    sigma_latent: float | None = None
    main_box_prob: float = 0.9
    title_absent_rate: float = 0.0
    box_dim: int = 512
    title_dim: int = 1536

    def __post_init__(self):
        if self.n_products < 1:
            raise ConfigError(f"n_products must be >= 1, got {self.n_products}")
        if self.n_categories < 1:
            raise ConfigError(f"n_categories must be >= 1, got {self.n_categories}")
        for name in ("images_per_product", "boxes_per_image"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} range ({lo},{hi}) is empty or below 1")
        for name in ("sigma_feat", "sigma_title"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("distractor_rate", "main_box_prob", "title_absent_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0,1]")
        if self.box_dim < 1 or self.title_dim < 1:
            raise ConfigError("box_dim and title_dim must be >= 1")


def generate_synthetic(config: SyntheticConfig) -> list:
    """Deterministic synthetic product galleries.

    Per product: a main-item latent is drawn around a unit-norm category
    prototype; every main box repeats that latent plus box noise, so main
    boxes are mutually consistent across the gallery. Distractors get their
    own independent latents. The raw title is a fixed random lift of the
    main latent plus title noise.
    """
    rng = np.random.default_rng(config.seed)
    protos = rng.normal(size=(config.n_categories, config.box_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    lift = rng.normal(size=(config.box_dim, config.title_dim)) / np.sqrt(config.box_dim)
    sigma_latent = config.sigma_feat if config.sigma_latent is None else config.sigma_latent

    products = []
    for idx in range(config.n_products):
        prng = np.random.default_rng([config.seed, idx])
        cat = int(prng.integers(config.n_categories))
        latent = protos[cat] + prng.normal(0, 1, config.box_dim) * sigma_latent

        lo, hi = config.images_per_product
        n_images = int(prng.integers(lo, hi + 1))
        has_main = [bool(prng.random() < config.main_box_prob) for _ in range(n_images)]
        if not any(has_main):
            has_main[0] = True

        images = []
        for j in range(n_images):
            blo, bhi = config.boxes_per_image
            n_boxes = int(prng.integers(blo, bhi + 1))
            main_pos = int(prng.integers(n_boxes)) if has_main[j] else -1
            boxes = []
            for k in range(n_boxes):
                if k == main_pos:
                    feat = latent + prng.normal(0, 1, config.box_dim) * config.sigma_feat
                    label = 1
                else:
                    if config.n_categories > 1 and prng.random() >= config.distractor_rate:
                        other = int(prng.integers(config.n_categories - 1))
                        dcat = other + (other >= cat)
                    else:
                        dcat = cat
                    dlatent = protos[dcat] + prng.normal(0, 1, config.box_dim) * sigma_latent
                    feat = dlatent + prng.normal(0, 1, config.box_dim) * config.sigma_feat
                    label = 0
                boxes.append(Box(box_id=f"p{idx}_i{j}_b{k}",
                                 feature=_round_f32(feat), label=label))
            images.append(ProductImage(image_id=f"p{idx}_i{j}", boxes=boxes))

        title = latent @ lift + prng.normal(0, 1, config.title_dim) * config.sigma_title
        absent = prng.random() < config.title_absent_rate
        products.append(ProductRecord(product_id=f"p{idx}", images=images,
                                      raw_title=None if absent else _round_f32(title),
                                      category=f"cat{cat}"))
    return products


def split(products, fractions=(0.75, 0.05, 0.20), seed: int = 0,
          provenance: str = "") -> DatasetBundle:
    """Seeded shuffle, floor allocation for val/test (minimum 1), rest to train."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    n = len(products)
    if n < 3:
        raise ConfigError(f"need at least 3 products to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [products[i] for i in order]
    n_val = max(1, int(fractions[1] * n))
    n_test = max(1, int(fractions[2] * n))
    n_train = n - n_val - n_test
    return DatasetBundle(train=shuffled[:n_train],
                         val=shuffled[n_train:n_train + n_val],
                         test=shuffled[n_train + n_val:],
                         provenance=provenance)


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------

def _record_to_obj(record: ProductRecord, split_name=None) -> dict:
    obj = {
        "product_id": record.product_id,
        "raw_title": None if record.raw_title is None
        else [_f32(x) for x in record.raw_title],
        "category": record.category,
        "images": [
            {"image_id": img.image_id,
             "boxes": [
                 {"box_id": b.box_id,
                  "feature": [_f32(x) for x in b.feature],
                  "label": b.label,
                  "bbox": None if b.bbox is None else [float(v) for v in b.bbox]}
                 for b in img.boxes]}
            for img in record.images],
    }
    if split_name is not None:
        obj["split"] = split_name
    return obj


def _record_from_obj(obj: dict) -> ProductRecord:
    images = []
    for img in obj["images"]:
        boxes = [Box(box_id=b["box_id"],
                     feature=np.asarray(b["feature"], dtype=np.float64),
                     label=b.get("label"),
                     bbox=None if b.get("bbox") is None else tuple(b["bbox"]))
                 for b in img["boxes"]]
        images.append(ProductImage(image_id=img["image_id"], boxes=boxes))
    title = obj.get("raw_title")
    return ProductRecord(product_id=obj["product_id"], images=images,
                         raw_title=None if title is None else np.asarray(title),
                         category=obj.get("category"))


def write_products_jsonl(products, path, split_name=None):
    with open(path, "w", encoding="utf-8") as fh:
        for record in products:
            fh.write(json.dumps(_record_to_obj(record, split_name)) + "\n")


def read_products_jsonl(path, labeled: bool = True):
    """Parse + validate one JSONL file; returns (products, rejections).

    Malformed lines raise FormatError with the line number; invariant
    violations only reject the offending product.
    """
    products, rejections = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                record = _record_from_obj(obj)
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}: malformed line {lineno}: {exc}") from exc
            reasons = validate_record(record, labeled=labeled)
            if reasons:
                rejections.append(Rejection(product_id=record.product_id, reasons=reasons))
            else:
                products.append((obj.get("split"), record))
    return products, rejections


def save_jsonl(bundle: DatasetBundle, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name, records in bundle.splits().items():
            for record in records:
                fh.write(json.dumps(_record_to_obj(record, name)) + "\n")


def load_jsonl(path, labeled: bool = True):
    """Returns (DatasetBundle, rejections); products without a split go to train."""
    tagged, rejections = read_products_jsonl(path, labeled=labeled)
    splits = {"train": [], "val": [], "test": []}
    for split_name, record in tagged:
        splits.get(split_name if split_name in splits else "train").append(record)
    bundle = DatasetBundle(provenance=str(path), **splits)
    return bundle, rejections


# ---------------------------------------------------------------------------
# MPDG1 binary
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(f"{self.path}: truncated at byte {self.pos} "
                                  f"(needed {n} more bytes)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def string(self) -> str:
        n = self.u32()
        if n > len(self.data):
            raise CorruptionError(f"{self.path}: string length {n} overruns file")
        return self.take(n).decode("utf-8")

    def f32s(self, n: int) -> np.ndarray:
        raw = self.take(4 * n)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def _write_string(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def write_products_binary(products, path):
    for record in products:
        if record.raw_title is not None and record.raw_title.shape != (BINARY_TITLE_DIM,):
            raise FormatError(f"product {record.product_id}: binary format requires "
                              f"{BINARY_TITLE_DIM}-dim titles, got {record.raw_title.shape}")
        for b in record.all_boxes():
            if b.feature.shape != (BINARY_BOX_DIM,):
                raise FormatError(f"product {record.product_id}: binary format requires "
                                  f"{BINARY_BOX_DIM}-dim features, got {b.feature.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(products)))
        for record in products:
            _write_string(fh, record.product_id)
            has_title = record.raw_title is not None
            fh.write(struct.pack("<B", 1 if has_title else 0))
            title = record.raw_title if has_title else np.zeros(BINARY_TITLE_DIM)
            fh.write(title.astype("<f4").tobytes())
            fh.write(struct.pack("<I", len(record.images)))
            for img in record.images:
                _write_string(fh, img.image_id)
                fh.write(struct.pack("<I", len(img.boxes)))
                for b in img.boxes:
                    _write_string(fh, b.box_id)
                    fh.write(b.feature.astype("<f4").tobytes())
                    label = _LABEL_ABSENT if b.label is None else int(b.label)
                    fh.write(struct.pack("<B", label))


def read_products_binary(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {data[:len(MAGIC)]!r}")
    r = _Reader(data, path)
    r.pos = len(MAGIC)
    products = []
    for _ in range(r.u32()):
        product_id = r.string()
        has_title = r.u8()
        if has_title not in (0, 1):
            raise CorruptionError(f"{path}: invalid title flag {has_title}")
        title = r.f32s(BINARY_TITLE_DIM)
        images = []
        for _ in range(r.u32()):
            image_id = r.string()
            boxes = []
            for _ in range(r.u32()):
                box_id = r.string()
                feature = r.f32s(BINARY_BOX_DIM)
                label = r.u8()
                if label not in (0, 1, _LABEL_ABSENT):
                    raise CorruptionError(f"{path}: invalid label byte {label}")
                boxes.append(Box(box_id=box_id, feature=feature,
                                 label=None if label == _LABEL_ABSENT else label))
            images.append(ProductImage(image_id=image_id, boxes=boxes))
        products.append(ProductRecord(product_id=product_id, images=images,
                                      raw_title=title if has_title else None))
    if r.pos != len(data):
        raise CorruptionError(f"{path}: {len(data) - r.pos} trailing bytes")
    return products


def save_binary(bundle: DatasetBundle, prefix):
    """Writes {prefix}.train.mpdg / .val.mpdg / .test.mpdg."""
    for name, records in bundle.splits().items():
        write_products_binary(records, f"{prefix}.{name}.mpdg")


def load_binary(prefix) -> DatasetBundle:
    parts = {name: read_products_binary(f"{prefix}.{name}.mpdg")
             for name in ("train", "val", "test")}
    return DatasetBundle(provenance=str(prefix), **parts)
