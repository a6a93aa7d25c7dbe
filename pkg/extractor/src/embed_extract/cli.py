"""Command-line entry point for the extraction pipeline."""

from __future__ import annotations

import argparse
import sys

from .extract import DEFAULT_PROMPT_TEMPLATE, ExtractError, extract, parse_task_list


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="Convert an image+caption dataset into a DEB1 embedding bundle "
        "and a class-prototype file for the classifier.",
    )
    parser.add_argument("--images", required=True, help="directory holding one image file per sample id")
    parser.add_argument("--labels", required=True, help="CSV with columns id, text, and one column per task")
    parser.add_argument("--out-bundle", required=True, help="output DEB1 path")
    parser.add_argument("--out-prototypes", required=True, help="output DPT1 path")
    parser.add_argument("--manifest", help="manifest path (default: <bundle>.manifest.json)")
    parser.add_argument("--encoder", choices=("clip", "hashed"), default="clip")
    parser.add_argument("--model-id", help="huggingface model id for the clip encoder")
    parser.add_argument("--tasks", help="override task columns as name:classes[,name:classes...]")
    parser.add_argument("--prototype-task", help="task whose class prompts seed the prototypes")
    parser.add_argument("--prompt-template", default=DEFAULT_PROMPT_TEMPLATE,
                        help="prototype prompt with a {label} placeholder")
    parser.add_argument("--d-map", type=int, default=1024, help="prototype width expected by the classifier")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = extract(
            dataset_dir=args.images,
            label_csv=args.labels,
            out_bundle=args.out_bundle,
            out_prototypes=args.out_prototypes,
            encoder_kind=args.encoder,
            model_id=args.model_id,
            tasks=parse_task_list(args.tasks) if args.tasks else None,
            prototype_task=args.prototype_task,
            prompt_template=args.prompt_template,
            d_map=args.d_map,
            out_manifest=args.manifest,
        )
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    kept = len(manifest["rows"])
    print(f"wrote {manifest['outputs']['bundle']} ({kept} samples) and {manifest['outputs']['prototypes']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
