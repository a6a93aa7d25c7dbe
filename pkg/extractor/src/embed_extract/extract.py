"""Dataset -> DEB1 bundle + class-prototype file + manifest."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .encoders import EMBED_DIM, make_encoder
from .formats import write_bundle, write_prototypes

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

# Task catalog used both for label validation and for prototype prompts.
KNOWN_TASKS: dict[str, tuple[int, list[str]]] = {
    "hate": (2, ["no hate", "hate"]),
    "target": (4, ["undirected", "individual", "community", "organization"]),
    "stance": (3, ["neutral", "support", "oppose"]),
    "humor": (2, ["no humor", "humor"]),
}

DEFAULT_PROMPT_TEMPLATE = "a photo of {label}."


class ExtractError(ValueError):
    pass


def parse_task_list(spec: str) -> list[tuple[str, int]]:
    """Parse "name:classes,name:classes" into (name, n_classes) pairs."""
    tasks = []
    for chunk in spec.split(","):
        name, _, count = chunk.strip().partition(":")
        if not name or not count.isdigit():
            raise ExtractError(f"cannot parse task spec {chunk!r}; expected name:classes")
        tasks.append((name, int(count)))
    return tasks


def _find_image(dataset_dir: Path, row: dict) -> Path | None:
    if row.get("image"):
        candidate = dataset_dir / row["image"]
        return candidate if candidate.exists() else None
    for ext in IMAGE_EXTENSIONS:
        candidate = dataset_dir / f"{row['id']}{ext}"
        if candidate.exists():
            return candidate
    return None


def _class_labels(task: str, n_classes: int) -> list[str]:
    if task in KNOWN_TASKS and KNOWN_TASKS[task][0] == n_classes:
        return KNOWN_TASKS[task][1]
    return [f"class {i}" for i in range(n_classes)]


def bridge_to_width(vec: np.ndarray, d_map: int) -> np.ndarray:
    """Resize an embedding to the classifier width, then L2-normalise.

    Wider targets tile the vector; narrower targets fold it by summing
    strided blocks so no coordinate is simply dropped.
    """
    vec = vec.astype(np.float64)
    if d_map >= vec.size:
        out = np.tile(vec, math.ceil(d_map / vec.size))[:d_map]
    else:
        blocks = math.ceil(vec.size / d_map)
        padded = np.zeros(blocks * d_map)
        padded[: vec.size] = vec
        out = padded.reshape(blocks, d_map).sum(axis=0)
    norm = np.linalg.norm(out)
    if norm == 0.0:
        raise ExtractError(f"prototype embedding collapsed to zero when bridged to width {d_map}")
    return out / norm


def extract(
    dataset_dir,
    label_csv,
    out_bundle,
    out_prototypes,
    encoder_kind: str = "hashed",
    model_id: str | None = None,
    tasks: list[tuple[str, int]] | None = None,
    prototype_task: str | None = None,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    d_map: int = 1024,
    out_manifest=None,
    log=print,
) -> dict:
    """Encode every (image, text) sample and write bundle/prototypes/manifest.

    Samples missing their image file or text are skipped with a logged id.
    Returns the manifest dict (also written as JSON).
    """
    dataset_dir = Path(dataset_dir)
    label_csv = Path(label_csv)
    out_bundle = Path(out_bundle)
    out_prototypes = Path(out_prototypes)
    manifest_path = Path(out_manifest) if out_manifest else out_bundle.with_name(out_bundle.name + ".manifest.json")

    with open(label_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    for required in ("id", "text"):
        if required not in header:
            raise ExtractError(f"label csv must have an {required!r} column, found {header}")

    if tasks is None:
        tasks = [(name, KNOWN_TASKS[name][0]) for name in header if name in KNOWN_TASKS]
    if not tasks:
        raise ExtractError("no task columns found; declare tasks explicitly")
    for name, _ in tasks:
        if name not in header:
            raise ExtractError(f"task column {name!r} missing from csv header {header}")

    encoder = make_encoder(encoder_kind, model_id)

    images, texts, labels, ids, skipped = [], [], [], [], []
    for row in rows:
        image_path = _find_image(dataset_dir, row)
        text = (row.get("text") or "").strip()
        if image_path is None or not text:
            reason = "image missing" if image_path is None else "text missing"
            log(f"skipping sample {row.get('id')!r}: {reason}")
            skipped.append(row.get("id"))
            continue
        sample_labels = []
        for name, n_classes in tasks:
            raw = (row.get(name) or "").strip()
            value = int(raw) if raw else -1
            if value != -1 and not 0 <= value < n_classes:
                raise ExtractError(f"sample {row['id']!r}: label {value} out of range for task {name!r}")
            sample_labels.append(value)
        images.append(encoder.encode_image(image_path))
        texts.append(encoder.encode_text(text))
        labels.append(sample_labels)
        ids.append(row["id"])
    if not ids:
        raise ExtractError("no usable samples: every row was skipped")

    image_array = np.stack(images)[:, None, :]
    text_array = np.stack(texts)[:, None, :]
    label_array = np.asarray(labels, dtype=np.int32)
    out_bundle.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(out_bundle, image_array, text_array, label_array, tasks)

    proto_task = prototype_task or tasks[0][0]
    proto_classes = dict(tasks).get(proto_task)
    if proto_classes is None:
        raise ExtractError(f"prototype task {proto_task!r} is not one of the extracted tasks")
    prompts = [prompt_template.format(label=label) for label in _class_labels(proto_task, proto_classes)]
    prototypes = np.stack([bridge_to_width(encoder.encode_text(p), d_map) for p in prompts])
    out_prototypes.parent.mkdir(parents=True, exist_ok=True)
    write_prototypes(out_prototypes, prototypes)

    manifest = {
        "encoder": encoder.name,
        "embed_dim": EMBED_DIM,
        "dataset_dir": str(dataset_dir),
        "label_csv": str(label_csv),
        "tasks": [{"name": name, "n_classes": n} for name, n in tasks],
        "rows": [{"id": sample_id, "row": index} for index, sample_id in enumerate(ids)],
        "skipped": skipped,
        "prototype_task": proto_task,
        "prototype_prompts": prompts,
        "prototype_bridge": (
            f"resize {EMBED_DIM}-d text embedding to d_map={d_map} "
            "(tile when widening, fold-sum when narrowing), then L2-normalise"
        ),
        "outputs": {"bundle": str(out_bundle), "prototypes": str(out_prototypes)},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
