"""Extractor configuration.

Crop preprocessing defaults (documented here because the choice is ours):
crops are converted to RGB, resized to `image_size` x `image_size` with
bilinear interpolation, scaled to [0, 1], and normalized with the ImageNet
channel statistics below.
"""

from __future__ import annotations

from dataclasses import dataclass

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

BOX_FEATURE_DIM = 512
TITLE_EMBED_DIM = 1536


class ConfigError(ValueError):
    """Invalid extractor configuration; message names the field."""


@dataclass(frozen=True)
class ExtractorConfig:
    """Knobs for both backbones. Weights are always frozen.

    vision_weights:
        "random"   - seeded random initialization (default; fully offline,
                     deterministic given `seed`).
        "imagenet" - torchvision's pretrained classification weights; needs
                     the weight file to be downloadable or cached.
    text_model_path:
        Optional local directory of a pretrained encoder loadable by
        transformers; when None a seeded, randomly initialized BERT-base
        shaped encoder with a deterministic hash tokenizer is used.
    include_special_tokens:
        Whether the sequence-start/end marker tokens participate in the
        average/max pooling. Default False.
    language:
        "en" lowercases titles before tokenizing (uncased behaviour);
        any other value preserves case (cased behaviour).
    """

    image_size: int = 224
    vision_weights: str = "random"
    text_model_path: str | None = None
    text_layers: int = 12
    include_special_tokens: bool = False
    language: str = "en"
    seed: int = 0
    vocab_size: int = 30522
    max_tokens: int = 128

    def __post_init__(self):
        if self.image_size < 1:
            raise ConfigError(f"image_size must be >= 1, got {self.image_size}")
        if self.vision_weights not in ("random", "imagenet"):
            raise ConfigError(
                f"vision_weights must be 'random' or 'imagenet', got {self.vision_weights!r}")
        if self.text_layers < 1:
            raise ConfigError(f"text_layers must be >= 1, got {self.text_layers}")
        if self.vocab_size < 1000:
            raise ConfigError(f"vocab_size must be >= 1000, got {self.vocab_size}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
