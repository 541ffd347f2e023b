"""Command line: manifest in, interchange files out."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExtractorConfig
from .export import write_binary, write_errors_jsonl, write_jsonl
from .manifest import ManifestError, read_manifest
from .pipeline import Extractor


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpdextract",
        description="Extract box features and title embeddings from a "
                    "product manifest into gallery interchange files.")
    parser.add_argument("--manifest", required=True,
                        help="JSONL manifest of products, images, boxes, titles")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", choices=["jsonl", "binary", "both"],
                        default="jsonl")
    parser.add_argument("--split-name", dest="split_name",
                        help="optional split tag written into JSONL records")
    parser.add_argument("--vision-weights", dest="vision_weights",
                        choices=["random", "imagenet"], default="random")
    parser.add_argument("--text-model", dest="text_model_path",
                        help="local pretrained encoder directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--language", default="en")
    parser.add_argument("--include-special-tokens", action="store_true")
    parser.add_argument("--workers", type=int, default=1,
                        help="threads for per-image extraction")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExtractorConfig(vision_weights=args.vision_weights,
                                 text_model_path=args.text_model_path,
                                 seed=args.seed, language=args.language,
                                 include_special_tokens=args.include_special_tokens)
        raw_products = read_manifest(args.manifest)
    except (ConfigError, ManifestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    from pathlib import Path
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    extractor = Extractor(config)
    products, errors = extractor.extract_all(raw_products, workers=args.workers)

    if args.format in ("jsonl", "both"):
        write_jsonl(products, out / "products.jsonl", split_name=args.split_name)
    if args.format in ("binary", "both"):
        write_binary(products, out / "products.mpdg")
    write_errors_jsonl(errors, out / "errors.jsonl")

    print(f"extracted {len(products)} of {len(raw_products)} products "
          f"({len(errors)} box errors) -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
