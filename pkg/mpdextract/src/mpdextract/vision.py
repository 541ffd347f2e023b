"""Box features: crop -> frozen ResNet-34 -> layer4 average pool (512 floats)."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import models
from torchvision.transforms import functional as TF

from .config import BOX_FEATURE_DIM, IMAGENET_MEAN, IMAGENET_STD, ExtractorConfig


class CropError(ValueError):
    """A box cannot be cropped from its image; message says why."""


def build_image_encoder(config: ExtractorConfig) -> nn.Module:
    """ResNet-34 up to and including the global average pool, frozen.

    Output of the returned module on a (1, 3, H, W) input is (1, 512, 1, 1).
    """
    torch.set_num_threads(1)
    if config.vision_weights == "imagenet":
        backbone = models.resnet34(weights=models.ResNet34_Weights.IMAGENET1K_V1)
    else:
        torch.manual_seed(config.seed)
        backbone = models.resnet34(weights=None)
    encoder = nn.Sequential(*list(backbone.children())[:-1])
    encoder.eval()
    encoder.requires_grad_(False)
    return encoder


def preprocess_crop(image: Image.Image, bbox, config: ExtractorConfig) -> torch.Tensor:
    """Validate + crop a box and produce a normalized (1, 3, S, S) tensor."""
    x0, y0, x1, y1 = bbox
    if not (x0 < x1 and y0 < y1):
        raise CropError(f"degenerate bbox {tuple(bbox)}")
    if x0 < 0 or y0 < 0 or x1 > image.width or y1 > image.height:
        raise CropError(f"bbox {tuple(bbox)} outside image "
                        f"bounds {image.width}x{image.height}")
    crop = image.convert("RGB").crop((x0, y0, x1, y1))
    crop = crop.resize((config.image_size, config.image_size), Image.BILINEAR)
    tensor = TF.to_tensor(crop)  # [0, 1], (3, S, S)
    tensor = TF.normalize(tensor, IMAGENET_MEAN, IMAGENET_STD)
    return tensor.unsqueeze(0)


def extract_box_feature(encoder: nn.Module, image: Image.Image, bbox,
                        config: ExtractorConfig) -> np.ndarray:
    """512-dim float64 feature for one box (values f32-exact).

    Boxes are evaluated one at a time so the result for a crop never
    depends on which other crops share its batch.
    """
    tensor = preprocess_crop(image, bbox, config)
    with torch.no_grad():
        out = encoder(tensor)
    feature = out.reshape(-1)
    if feature.numel() != BOX_FEATURE_DIM:
        raise RuntimeError(f"encoder produced {feature.numel()} values, "
                           f"expected {BOX_FEATURE_DIM}")
    return feature.numpy().astype(np.float32).astype(np.float64)
