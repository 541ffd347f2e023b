"""Feature extraction pipeline producing gallery interchange files.

Converts raw product listings (images + bounding boxes + title strings)
into the JSONL / binary dataset formats consumed by the mpdgraph engine:
512-dim box features from a frozen ResNet-34 and 1536-dim title embeddings
from average+max pooled token vectors of a frozen BERT-shaped encoder.
"""

from .config import ExtractorConfig
from .manifest import ManifestError, RawBox, RawImage, RawProduct, read_manifest
from .pipeline import BoxError, Extractor

__all__ = [
    "BoxError",
    "Extractor",
    "ExtractorConfig",
    "ManifestError",
    "RawBox",
    "RawImage",
    "RawProduct",
    "read_manifest",
]
