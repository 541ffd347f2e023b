"""Title embeddings: tokens -> frozen encoder -> avg pool ++ max pool (1536).

Token vectors are 768-dim; the embedding is the concatenation of their
token-wise average and token-wise maximum, so it is always 1536-dim.
Sequence-start/end marker tokens are excluded from pooling unless
configured otherwise.

Without a pretrained model directory, tokenization is a deterministic
hash of word/punctuation pieces and the encoder is a seeded, frozen
BERT-base shaped transformer — offline-friendly and bit-reproducible.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
import torch
from transformers import BertConfig, BertModel

from .config import TITLE_EMBED_DIM, ExtractorConfig

_CLS_ID = 101
_SEP_ID = 102
_RESERVED_IDS = 1000  # hash token ids start above this
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(title: str, config: ExtractorConfig) -> list:
    """Deterministic token ids for a title (no special tokens included)."""
    text = title.lower() if config.language == "en" else title
    span = config.vocab_size - _RESERVED_IDS
    ids = []
    for piece in _TOKEN_RE.findall(text)[: config.max_tokens]:
        digest = hashlib.sha256(piece.encode("utf-8")).digest()
        ids.append(_RESERVED_IDS + int.from_bytes(digest[:8], "little") % span)
    return ids


def build_text_encoder(config: ExtractorConfig):
    torch.set_num_threads(1)
    if config.text_model_path is not None:
        model = BertModel.from_pretrained(config.text_model_path)
    else:
        torch.manual_seed(config.seed + 1)
        model = BertModel(BertConfig(vocab_size=config.vocab_size,
                                     num_hidden_layers=config.text_layers))
    model.eval()
    model.requires_grad_(False)
    return model


def extract_title_embedding(encoder, title: str,
                            config: ExtractorConfig) -> np.ndarray | None:
    """1536-dim float64 embedding (values f32-exact); None for empty titles."""
    if not title.strip():
        return None
    token_ids = tokenize(title, config)
    ids = [_CLS_ID] + token_ids + [_SEP_ID]
    with torch.no_grad():
        hidden = encoder(input_ids=torch.tensor([ids])).last_hidden_state[0]
    pooled = hidden if config.include_special_tokens or not token_ids \
        else hidden[1:-1]
    embedding = torch.cat([pooled.mean(dim=0), pooled.max(dim=0).values])
    if embedding.numel() != TITLE_EMBED_DIM:
        raise RuntimeError(f"encoder produced {embedding.numel()} values, "
                           f"expected {TITLE_EMBED_DIM}")
    return embedding.numpy().astype(np.float32).astype(np.float64)
