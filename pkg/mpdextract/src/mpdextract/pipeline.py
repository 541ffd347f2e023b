"""End-to-end extraction: manifest entries -> feature products + error log."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from PIL import Image, UnidentifiedImageError

from .config import ExtractorConfig
from .manifest import RawImage, RawProduct
from .text import build_text_encoder, extract_title_embedding
from .vision import CropError, build_image_encoder, extract_box_feature


@dataclass
class BoxError:
    """One box that could not be extracted."""
    product_id: str
    image_id: str
    box_id: str
    reason: str


@dataclass
class FeatureBox:
    box_id: str
    feature: object  # np.ndarray(512,)
    label: int | None = None
    bbox: tuple | None = None


@dataclass
class FeatureImage:
    image_id: str
    boxes: list = field(default_factory=list)


@dataclass
class FeatureProduct:
    product_id: str
    images: list = field(default_factory=list)
    raw_title: object = None  # np.ndarray(1536,) or None


class Extractor:
    """Holds the two frozen encoders and runs products through them."""

    def __init__(self, config: ExtractorConfig | None = None):
        self.config = config or ExtractorConfig()
        self.image_encoder = build_image_encoder(self.config)
        self.text_encoder = build_text_encoder(self.config)

    def _extract_image(self, product_id: str, raw_image: RawImage):
        boxes, errors = [], []
        try:
            with Image.open(raw_image.path) as handle:
                image = handle.convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            errors = [BoxError(product_id, raw_image.image_id, b.box_id,
                               f"unreadable image: {exc}")
                      for b in raw_image.boxes]
            return FeatureImage(image_id=raw_image.image_id), errors
        for b in raw_image.boxes:
            try:
                feature = extract_box_feature(self.image_encoder, image,
                                              b.bbox, self.config)
            except CropError as exc:
                errors.append(BoxError(product_id, raw_image.image_id,
                                       b.box_id, str(exc)))
                continue
            boxes.append(FeatureBox(box_id=b.box_id, feature=feature,
                                    label=b.label, bbox=b.bbox))
        return FeatureImage(image_id=raw_image.image_id, boxes=boxes), errors

    def extract(self, raw: RawProduct, workers: int = 1):
        """(FeatureProduct | None, [BoxError]).

        Images are processed in parallel (`workers` threads) but results keep
        manifest order. The product is dropped (None) only when no box at all
        survives; images whose boxes all failed are dropped from the product.
        """
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(
                    lambda img: self._extract_image(raw.product_id, img),
                    raw.images))
        else:
            results = [self._extract_image(raw.product_id, img)
                       for img in raw.images]
        images = [img for img, _ in results if img.boxes]
        errors = [e for _, errs in results for e in errs]
        if not images:
            return None, errors
        title = extract_title_embedding(self.text_encoder, raw.title, self.config)
        return FeatureProduct(product_id=raw.product_id, images=images,
                              raw_title=title), errors

    def extract_all(self, raw_products, workers: int = 1):
        """([FeatureProduct], [BoxError]) over a whole manifest."""
        products, errors = [], []
        for raw in raw_products:
            product, errs = self.extract(raw, workers=workers)
            errors.extend(errs)
            if product is not None:
                products.append(product)
        return products, errors
