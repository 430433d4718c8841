#!/usr/bin/env python3
"""Encode prompts with a CLIP text encoder and write the JSON dump read by
`lisa anchors build --encoder-dump`.

Output format: {"prompts": [...], "embeddings": [[...], ...]}

Requires `torch` and `transformers`; neither is needed by the C++ build.
"""

import argparse
import json
import sys

# Same pool the C++ pseudo encoder uses by default.
DEFAULT_PROMPTS = [
    "a driver wearing sunglasses",
    "a driver wearing a face mask",
    "a driver wearing eyeglasses",
    "a face in harsh sunlight",
    "a face in low light",
    "a face with a beard",
    "a driver wearing a hat",
    "an occluded face",
]


def read_prompts(path):
    if path is None:
        return list(DEFAULT_PROMPTS)
    with open(path, encoding="utf-8") as f:
        prompts = [line.strip() for line in f if line.strip()]
    if not prompts:
        sys.exit(f"{path} contains no prompts")
    return prompts


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--prompts", help="text file, one prompt per line")
    parser.add_argument("--model", default="openai/clip-vit-base-patch32")
    parser.add_argument("--out", required=True, help="JSON output path")
    args = parser.parse_args()

    try:
        import torch
        from transformers import CLIPModel, CLIPTokenizer
    except ImportError as exc:
        sys.exit(f"missing dependency: {exc}. Install torch and transformers.")

    prompts = read_prompts(args.prompts)
    tokenizer = CLIPTokenizer.from_pretrained(args.model)
    model = CLIPModel.from_pretrained(args.model).eval()
    with torch.no_grad():
        tokens = tokenizer(prompts, padding=True, return_tensors="pt")
        emb = model.get_text_features(**tokens)
        emb = emb / emb.norm(dim=-1, keepdim=True)

    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"prompts": prompts, "embeddings": emb.double().tolist()}, f)
    print(f"wrote {len(prompts)} embeddings of dimension {emb.shape[1]} to {args.out}")


if __name__ == "__main__":
    main()
