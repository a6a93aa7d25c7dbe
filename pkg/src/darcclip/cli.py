"""Command-line surface: synth | train | eval | gradcheck.

Every command is a pure function of its flags, input files, and seed;
re-runs are byte-identical except for the timestamp, which only appears in
the manifest file. Options may also come from a flat ``key=value`` config
file (``--config``); explicit flags win over file values, file values win
over defaults, and the fully resolved configuration is echoed into the
output directory so a run can be reproduced from its artifacts alone.

Exit codes: 0 success, 2 usage/configuration, 3 data format,
4 numeric failure (gradcheck), 5 undefined metric.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ShapeError, grad_check
from .checkpoint import load_checkpoint, load_prototypes, save_checkpoint
from .data import (
    PRIDEMM_TASKS,
    pridemm_priors,
    read_bundle,
    stratified_split,
    synth_generate,
    write_bundle,
)
from .errors import ConfigurationError, DataFormatError, UndefinedMetricError
from .metrics import roc_points, roc_points_to_csv, trapezoid_area
from .model import DarcModel, ModelConfig
from .train import TrainConfig, cross_entropy, evaluate, repeat_runs, softmax_probs

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_METRIC = 5


# ---------------------------------------------------------------------------
# option resolution: flag > config file > default
# ---------------------------------------------------------------------------


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and #-comments are skipped."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigurationError(f"config key {key!r}: cannot parse {text!r} as a boolean")


def resolve_options(args: argparse.Namespace, option_types: dict[str, type], defaults: dict) -> dict:
    """Merge CLI values, config-file values, and defaults into one dict."""
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(option_types)
    if unknown:
        raise ConfigurationError(f"config file sets unknown keys: {sorted(unknown)}")
    resolved = {}
    for key, typ in option_types.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in file_values:
            raw = file_values[key]
            resolved[key] = _parse_bool(raw, key) if typ is bool else typ(raw)
        else:
            resolved[key] = defaults[key]
    return resolved


def echo_config(resolved: dict) -> str:
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _write_manifest(path: Path, command: str, resolved: dict) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "options": {k: v for k, v in resolved.items() if v is not None},
    }
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SYNTH_TYPES = {
    "task": str,
    "samples": int,
    "separation": float,
    "seed": int,
    "d_img": int,
    "d_txt": int,
    "img_tokens": int,
    "txt_tokens": int,
    "priors": str,
    "out": str,
}
_SYNTH_DEFAULTS = {
    "task": "hate",
    "samples": 1000,
    "separation": 1.0,
    "seed": 0,
    "d_img": 768,
    "d_txt": 768,
    "img_tokens": 1,
    "txt_tokens": 1,
    "priors": None,
    "out": None,
}


def cmd_synth(args: argparse.Namespace) -> int:
    r = resolve_options(args, _SYNTH_TYPES, _SYNTH_DEFAULTS)
    if r["out"] is None:
        raise ConfigurationError("synth requires --out for the bundle file")
    if r["samples"] < 1:
        raise ConfigurationError(f"--samples must be >= 1, got {r['samples']}")
    if r["task"] not in PRIDEMM_TASKS:
        raise ConfigurationError(f"unknown task {r['task']!r}; choose from {sorted(PRIDEMM_TASKS)}")
    spec = PRIDEMM_TASKS[r["task"]]
    if r["priors"] is not None:
        priors = np.asarray([float(p) for p in str(r["priors"]).split(",")])
    else:
        priors = pridemm_priors(r["task"])
    bundle = synth_generate(
        n=r["samples"],
        task_spec=spec,
        class_priors=priors,
        d_img=r["d_img"],
        d_txt=r["d_txt"],
        separation=r["separation"],
        noise_seed=r["seed"],
        n_img_tokens=r["img_tokens"],
        n_txt_tokens=r["txt_tokens"],
    )
    out = Path(r["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(bundle, out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "synth", {**r, "priors": priors.tolist()})
    counts = np.bincount(bundle.labels[:, 0], minlength=spec.n_classes)
    print(f"wrote {out} ({bundle.n_samples} samples, task {spec.name!r}, class counts {counts.tolist()})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_TYPES = {
    "data": str,
    "task": str,
    "out": str,
    "seed": int,
    "d_map": int,
    "n_blocks": int,
    "n_heads": int,
    "bottleneck_ratio": int,
    "lambda_init": float,
    "sigma_scale": float,
    "use_acar": bool,
    "use_dfa": bool,
    "use_sai": bool,
    "use_lp": bool,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "repeats": int,
    "class_weighting": bool,
    "val_fraction": float,
    "prototypes": str,
}
_TRAIN_DEFAULTS = {
    "data": None,
    "task": "0",
    "out": None,
    "seed": 0,
    "d_map": 1024,
    "n_blocks": 2,
    "n_heads": 8,
    "bottleneck_ratio": 4,
    "lambda_init": 0.05,
    "sigma_scale": 30.0,
    "use_acar": True,
    "use_dfa": True,
    "use_sai": True,
    "use_lp": True,
    "epochs": 15,
    "batch_size": 32,
    "learning_rate": 1e-4,
    "weight_decay": 1e-4,
    "repeats": 1,
    "class_weighting": False,
    "val_fraction": 0.1,
    "prototypes": None,
}


def _task_argument(bundle, task: str):
    return int(task) if task.lstrip("-").isdigit() else task


def cmd_train(args: argparse.Namespace) -> int:
    r = resolve_options(args, _TRAIN_TYPES, _TRAIN_DEFAULTS)
    if r["data"] is None or r["out"] is None:
        raise ConfigurationError("train requires --data and --out")
    bundle = read_bundle(r["data"])
    task_index = bundle.task_index(_task_argument(bundle, r["task"]))
    task_spec = bundle.tasks[task_index]
    prototypes = load_prototypes(r["prototypes"]) if r["prototypes"] else None

    mcfg = ModelConfig(
        n_classes=task_spec.n_classes,
        d_in_img=bundle.d_img,
        d_in_txt=bundle.d_txt,
        d_map=r["d_map"],
        n_blocks=r["n_blocks"],
        n_heads=r["n_heads"],
        bottleneck_ratio=r["bottleneck_ratio"],
        lambda_init=r["lambda_init"],
        sigma_scale=r["sigma_scale"],
        use_acar=r["use_acar"],
        use_dfa=r["use_dfa"],
        use_sai=r["use_sai"],
        use_lp=r["use_lp"],
    )
    mcfg.validate()
    tcfg = TrainConfig(
        task_index=task_index,
        epochs=r["epochs"],
        batch_size=r["batch_size"],
        learning_rate=r["learning_rate"],
        weight_decay=r["weight_decay"],
        seed=r["seed"],
        n_repeats=r["repeats"],
        class_weighting=r["class_weighting"],
        val_fraction=r["val_fraction"],
    )
    tcfg.validate()

    out_dir = Path(r["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    models: dict[int, DarcModel] = {}

    def make_model(seed: int) -> DarcModel:
        models[seed] = DarcModel(mcfg, seed=seed, prototypes=prototypes)
        return models[seed]

    def make_split(seed: int):
        return stratified_split(bundle, task_index, (1.0 - r["val_fraction"], r["val_fraction"]), seed)

    result = repeat_runs(r["repeats"], r["seed"], bundle, make_model, tcfg, make_split)

    single = r["repeats"] == 1
    for seed, run in zip(result.seeds, result.runs):
        ckpt_name = "checkpoint.dck" if single else f"checkpoint-seed{seed}.dck"
        save_checkpoint(models[seed], out_dir / ckpt_name)
        log_name = "metrics.jsonl" if single else f"metrics-seed{seed}.jsonl"
        with open(out_dir / log_name, "w", encoding="utf-8") as fh:
            for record in run.log_records:
                fh.write(json.dumps(record) + "\n")

    report: dict = {
        "task": task_spec.name,
        "n_classes": task_spec.n_classes,
        "repeats": r["repeats"],
        "mean": result.mean,
        "std": result.std,
        "runs": [
            {"seed": seed, "best_epoch": run.best_epoch, **{k: result.runs[i].best_report.to_dict()[k] for k in ("accuracy", "macro_f1", "auroc")}}
            for i, (seed, run) in enumerate(zip(result.seeds, result.runs))
        ],
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (out_dir / "config.txt").write_text(echo_config(r), encoding="utf-8")
    _write_manifest(out_dir / "manifest.json", "train", r)
    best = result.runs[0]
    print(
        f"trained {r['repeats']} run(s) on task {task_spec.name!r}: "
        f"mean val AUROC {result.mean['auroc']:.4f} (best epoch of first run: {best.best_epoch})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_EVAL_TYPES = {
    "data": str,
    "checkpoint": str,
    "task": str,
    "split": str,
    "seed": int,
    "val_fraction": float,
    "out": str,
    "roc": str,
    "roc_class": int,
}
_EVAL_DEFAULTS = {
    "data": None,
    "checkpoint": None,
    "task": "0",
    "split": "all",
    "seed": 0,
    "val_fraction": 0.1,
    "out": None,
    "roc": None,
    "roc_class": None,
}


def cmd_eval(args: argparse.Namespace) -> int:
    r = resolve_options(args, _EVAL_TYPES, _EVAL_DEFAULTS)
    if r["data"] is None or r["checkpoint"] is None:
        raise ConfigurationError("eval requires --data and --checkpoint")
    if r["split"] not in ("all", "train", "val"):
        raise ConfigurationError(f"--split must be all, train, or val, got {r['split']!r}")
    model = load_checkpoint(r["checkpoint"])
    bundle = read_bundle(r["data"])
    task_index = bundle.task_index(_task_argument(bundle, r["task"]))
    task_spec = bundle.tasks[task_index]
    if bundle.d_img != model.config.d_in_img or bundle.d_txt != model.config.d_in_txt:
        raise DataFormatError(
            f"checkpoint expects inputs d_img={model.config.d_in_img}, d_txt={model.config.d_in_txt}; "
            f"bundle provides d_img={bundle.d_img}, d_txt={bundle.d_txt}"
        )
    if task_spec.n_classes != model.config.n_classes:
        raise DataFormatError(
            f"checkpoint has {model.config.n_classes} classes but task {task_spec.name!r} has {task_spec.n_classes}"
        )

    if r["split"] == "all":
        idx = bundle.labeled_indices(task_index)
    else:
        plan = stratified_split(bundle, task_index, (1.0 - r["val_fraction"], r["val_fraction"]), r["seed"])
        idx = plan.part(r["split"])
    if idx.size == 0:
        raise ConfigurationError(f"split {r['split']!r} selects no labelled samples")

    images = bundle.images[idx].astype(np.float64)
    texts = bundle.texts[idx].astype(np.float64)
    labels = bundle.labels[idx, task_index].astype(np.int64)

    want_roc = r["roc"] is not None
    if want_roc and task_spec.n_classes != 2 and r["roc_class"] is None:
        raise ConfigurationError(
            f"--roc exports a binary ROC curve but task {task_spec.name!r} has "
            f"{task_spec.n_classes} classes; pass --roc-class C for a one-vs-rest curve"
        )

    report = evaluate(model, images, texts, labels, include_roc=want_roc and task_spec.n_classes == 2)
    if want_roc:
        if task_spec.n_classes == 2:
            points = report.roc
        else:
            c = r["roc_class"]
            if not 0 <= c < task_spec.n_classes:
                raise ConfigurationError(f"--roc-class must lie in [0, {task_spec.n_classes}), got {c}")
            probs = softmax_probs(model.predict_logits(images, texts))
            points = roc_points(probs[:, c], (labels == c).astype(np.int64))
        roc_path = Path(r["roc"])
        roc_path.parent.mkdir(parents=True, exist_ok=True)
        roc_path.write_text(roc_points_to_csv(points), encoding="utf-8")

    payload = report.to_json() + "\n"
    if r["out"]:
        out_path = Path(r["out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(payload, encoding="utf-8")
    sys.stdout.write(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

_GRADCHECK_TYPES = {
    "d_map": int,
    "n_heads": int,
    "n_blocks": int,
    "bottleneck_ratio": int,
    "n_classes": int,
    "d_in": int,
    "batch": int,
    "tolerance": float,
    "step": float,
    "seed": int,
    "use_acar": bool,
    "use_dfa": bool,
    "use_sai": bool,
    "use_lp": bool,
}
_GRADCHECK_DEFAULTS = {
    "d_map": 16,
    "n_heads": 2,
    "n_blocks": 2,
    "bottleneck_ratio": 4,
    "n_classes": 3,
    "d_in": 8,
    "batch": 2,
    "tolerance": 1e-5,
    "step": 1e-5,
    "seed": 0,
    "use_acar": True,
    "use_dfa": True,
    "use_sai": True,
    "use_lp": True,
}


def model_gradient_report(
    config: ModelConfig, seed: int = 0, batch: int = 2, h: float = 1e-5, tol: float = 1e-5
) -> dict[str, float]:
    """Worst finite-difference relative error per parameter group.

    Builds a seeded model and random inputs, takes the cross-entropy of the
    forward pass as the scalar under test, and runs a central-difference
    check over every trainable tensor.
    """
    if not config.use_lp:
        config = ModelConfig(**{**config.to_dict(), "d_in_img": config.d_map, "d_in_txt": config.d_map})
    config.validate()
    model = DarcModel(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    images = rng.standard_normal((batch, 1, config.d_in_img))
    texts = rng.standard_normal((batch, 1, config.d_in_txt))
    labels = rng.integers(0, config.n_classes, size=batch)

    def loss_fn(_):
        return cross_entropy(model.forward(images, texts), labels)

    worst: dict[str, float] = {}
    for name, param in model.named_parameters().items():
        result = grad_check(loss_fn, param, h=h, tol=tol)
        group = name.rsplit(".", 1)[0]
        worst[group] = max(worst.get(group, 0.0), result.max_rel_error)
    return worst


def cmd_gradcheck(args: argparse.Namespace) -> int:
    r = resolve_options(args, _GRADCHECK_TYPES, _GRADCHECK_DEFAULTS)
    d_in = r["d_map"] if not r["use_lp"] else r["d_in"]
    config = ModelConfig(
        n_classes=r["n_classes"],
        d_in_img=d_in,
        d_in_txt=d_in,
        d_map=r["d_map"],
        n_blocks=r["n_blocks"],
        n_heads=r["n_heads"],
        bottleneck_ratio=r["bottleneck_ratio"],
        use_acar=r["use_acar"],
        use_dfa=r["use_dfa"],
        use_sai=r["use_sai"],
        use_lp=r["use_lp"],
    )
    worst = model_gradient_report(config, seed=r["seed"], batch=r["batch"], h=r["step"], tol=r["tolerance"])
    failed = False
    for group, err in worst.items():
        ok = err <= r["tolerance"]
        failed |= not ok
        print(f"{group:32s} max_rel_error={err:.3e} {'PASS' if ok else 'FAIL'}")
    overall = max(worst.values())
    print(f"overall max_rel_error={overall:.3e} tolerance={r['tolerance']:.3e} -> {'FAIL' if failed else 'PASS'}")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--seed", type=int, help="seed for every stochastic choice")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darcclip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding bundle")
    _add_shared(p)
    p.add_argument("--task", choices=sorted(PRIDEMM_TASKS))
    p.add_argument("--samples", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--d-img", dest="d_img", type=int)
    p.add_argument("--d-txt", dest="d_txt", type=int)
    p.add_argument("--img-tokens", dest="img_tokens", type=int)
    p.add_argument("--txt-tokens", dest="txt_tokens", type=int)
    p.add_argument("--priors", help="comma-separated class priors overriding the task defaults")
    p.add_argument("--out", help="output bundle path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a bundle and keep the best-AUROC checkpoint")
    _add_shared(p)
    p.add_argument("--data", help="input bundle")
    p.add_argument("--task", help="task name or index within the bundle")
    p.add_argument("--out", help="output directory")
    p.add_argument("--d-map", dest="d_map", type=int)
    p.add_argument("--blocks", dest="n_blocks", type=int)
    p.add_argument("--heads", dest="n_heads", type=int)
    p.add_argument("--bottleneck", dest="bottleneck_ratio", type=int)
    p.add_argument("--lambda-init", dest="lambda_init", type=float)
    p.add_argument("--sigma", dest="sigma_scale", type=float)
    p.add_argument("--no-acar", dest="use_acar", action="store_const", const=False)
    p.add_argument("--no-dfa", dest="use_dfa", action="store_const", const=False)
    p.add_argument("--no-sai", dest="use_sai", action="store_const", const=False)
    p.add_argument("--no-lp", dest="use_lp", action="store_const", const=False)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--class-weights", dest="class_weighting", action="store_const", const=True)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--prototypes", help="prototype file for semantic classifier initialisation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a bundle split")
    _add_shared(p)
    p.add_argument("--data", help="input bundle")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--task", help="task name or index within the bundle")
    p.add_argument("--split", choices=("all", "train", "val"))
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--out", help="write the JSON report here as well as stdout")
    p.add_argument("--roc", help="write ROC points CSV here (binary tasks)")
    p.add_argument("--roc-class", dest="roc_class", type=int, help="one-vs-rest class for --roc on multiclass tasks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    _add_shared(p)
    p.add_argument("--d-map", dest="d_map", type=int)
    p.add_argument("--heads", dest="n_heads", type=int)
    p.add_argument("--blocks", dest="n_blocks", type=int)
    p.add_argument("--bottleneck", dest="bottleneck_ratio", type=int)
    p.add_argument("--classes", dest="n_classes", type=int)
    p.add_argument("--d-in", dest="d_in", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--step", type=float, help="finite-difference step h")
    p.add_argument("--no-acar", dest="use_acar", action="store_const", const=False)
    p.add_argument("--no-dfa", dest="use_dfa", action="store_const", const=False)
    p.add_argument("--no-sai", dest="use_sai", action="store_const", const=False)
    p.add_argument("--no-lp", dest="use_lp", action="store_const", const=False)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
