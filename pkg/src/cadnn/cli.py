"""Command-line experiment harness.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 shape/build
error, 5 archive mismatch.  Artifacts are written only after a run has
fully succeeded, each through a temp file and rename.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import archive, dataset, images, metrics, synthetic, training, zoo
from .config import ConfigError, ExperimentConfig
from .tensor import RngState, ShapeError

log = logging.getLogger("cadnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BUILD, EXIT_ARCHIVE = 0, 2, 3, 4, 5

WEIGHTS_FILE = "model.nnwa"


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sidecar(weights_path: Path) -> Path:
    return weights_path.with_suffix(".json")


def _write_all(out_dir: Path, files: dict[str, bytes | str]):
    for name, content in files.items():
        archive.atomic_write(out_dir / name, content)


# ------------------------------------------------------------------ helpers


def _load_data(root, labels=None) -> dataset.LabeledDataset:
    try:
        ds = dataset.load_dataset_dir(root, labels)
    except (dataset.DataError, OSError) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from None
    if len(ds) == 0:
        raise CommandError(EXIT_DATA, f"no decodable images under {root}")
    return ds


def _apply_class_mode(ds, mode: str, mapping_path=None) -> dataset.LabeledDataset:
    try:
        if mode == "custom":
            with open(mapping_path, encoding="utf-8") as fh:
                mapping = json.load(fh)
        else:
            mapping = dataset.class_mapping(mode, ds.labels)
        merged = dataset.merge_classes(ds, mapping)
    except (dataset.DataError, OSError, json.JSONDecodeError) as exc:
        raise CommandError(EXIT_DATA, f"class mode {mode!r}: {exc}") from None
    if len(merged) == 0:
        raise CommandError(EXIT_DATA, "no samples left after class mapping")
    return merged


def load_model(weights_path) -> zoo.Sequential:
    """Rebuild a model from ``<name>.json`` and load ``<name>.nnwa``."""
    weights_path = Path(weights_path)
    try:
        meta = json.loads(_sidecar(weights_path).read_text("utf-8"))
        spec = zoo.ModelSpec.from_dict(meta["spec"])
        model = spec.build(None, meta.get("labels"))
        model.meta.update({k: v for k, v in meta.items() if k != "layers"})
        return archive.load_weights(weights_path.read_bytes(), model)
    except (OSError, KeyError, ValueError) as exc:
        raise CommandError(EXIT_ARCHIVE, f"cannot load model {weights_path}: {exc}") from None


def _model_files(model, spec: zoo.ModelSpec, extra: dict) -> dict[str, bytes | str]:
    meta = {"spec": spec.to_dict(), "labels": model.meta.get("labels"), **extra,
            "layers": model.describe()}
    return {WEIGHTS_FILE: archive.save_weights(model),
            Path(WEIGHTS_FILE).with_suffix(".json").name: json.dumps(meta, indent=2, sort_keys=True) + "\n"}


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from None
    rng = RngState(cfg.seed)
    ds = _apply_class_mode(_load_data(cfg.data_root), cfg.class_mode, cfg.class_mapping)
    (val_mode, val_value), = cfg.val.items()
    try:
        if val_mode == "fraction":
            train_ds, val_ds = dataset.stratified_split(ds, rng.spawn(1), fraction=val_value)
        else:
            train_ds, val_ds = dataset.stratified_split(ds, rng.spawn(1), per_class=val_value)
    except (dataset.DataError, ValueError) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from None
    train_aug = dataset.augment_dataset(train_ds, cfg.augment, rng.spawn(2))
    size = cfg.input_size
    input_shape = (1, size, size)
    k = len(ds.labels)

    try:
        if cfg.pretrained_weights:
            base = load_model(cfg.pretrained_weights)
            spec = zoo.ModelSpec.from_dict(json.loads(_sidecar(Path(cfg.pretrained_weights)).read_text("utf-8"))["spec"])
            if tuple(spec.input_shape) != input_shape:
                raise CommandError(EXIT_BUILD, f"pretrained input shape {spec.input_shape} != {input_shape}")
            model = zoo.replace_head(base, k, rng.spawn(3), ds.labels)
            spec.num_classes = k
            spec.layers[-2] = {**spec.layers[-2], "out_features": k}
        else:
            spec = zoo.model_spec(cfg.model, input_shape, k, **cfg.model_options)
            model = spec.build(rng.spawn(3), ds.labels)
        if cfg.freeze_boundary:
            zoo.freeze_features(model, cfg.freeze_boundary)
    except (ShapeError, KeyError, TypeError, ValueError) as exc:
        raise CommandError(EXIT_BUILD, f"cannot build model: {exc}") from None

    x_train, y_train = train_aug.to_arrays(size)
    x_val, y_val = val_ds.to_arrays(size)
    report = training.fit(model, (x_train, y_train), (x_val, y_val) if len(val_ds) else None, cfg, rng.spawn(4))
    if len(val_ds):
        cm, scores = metrics.evaluate(model, x_val, y_val, ds.labels)
    else:
        cm, scores = metrics.evaluate(model, x_train, y_train, ds.labels)
        log.warning("validation split is empty; metrics are on the training split")

    out = Path(cfg.out_dir)
    files = _model_files(model, spec, {"class_mode": cfg.class_mode, "input_size": size})
    files.update({
        "train_report.csv": report.to_csv(),
        "train_report.json": report.to_json(),
        "metrics.json": scores.to_json(),
        "metrics.csv": scores.to_csv(),
        "confusion_matrix.txt": cm.render(),
        "split_train.tsv": dataset.manifest_text(train_ds),
        "split_val.tsv": dataset.manifest_text(val_ds),
        "resolved_config.json": cfg.to_json(),
    })
    _write_all(out, files)
    print(f"trained {cfg.model} on {len(train_aug)} samples, {cfg.epochs} epochs -> {out}")
    print(scores.summary(), end="")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    mode = args.class_mode or model.meta.get("class_mode", "four")
    ds = _apply_class_mode(_load_data(args.data), mode)
    labels = model.meta.get("labels")
    head = model.layers[-2]
    if len(ds.labels) != model.num_classes or (labels and list(labels) != ds.labels):
        raise CommandError(EXIT_ARCHIVE, f"layer {head.name!r} outputs {model.num_classes} classes {labels}, "
                                         f"data has {len(ds.labels)} classes {ds.labels}")
    _, h, w = model.input_shape
    x, y = ds.to_arrays((h, w))
    cm, scores = metrics.evaluate(model, x, y, ds.labels)
    out = Path(args.out) if args.out else Path(args.model).parent / "eval"
    _write_all(out, {"metrics.json": scores.to_json(), "metrics.csv": scores.to_csv(),
                     "confusion_matrix.txt": cm.render()})
    print(cm.render(), end="")
    print(scores.summary(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        img = images.read_image(args.image)
    except (images.ImageDecodeError, OSError) as exc:
        raise CommandError(EXIT_DATA, f"cannot decode {args.image}: {exc}") from None
    model = load_model(args.model)
    labels = model.meta.get("labels") or [str(i) for i in range(model.num_classes)]
    c, h, w = model.input_shape
    gray = images.to_grayscale(img)
    if gray.shape != (h, w):
        gray = images.resize(gray, h, w)
    probs = model.predict_proba(gray[None].astype(np.float32))
    best = int(np.argmax(probs))
    print(labels[best])
    for name, p in zip(labels, probs):
        print(f"{name}\t{float(p)!r}")
    return EXIT_OK


def cmd_filter(args) -> int:
    if args.name not in images.FILTER_BANK:
        raise CommandError(EXIT_CONFIG, f"unknown filter {args.name!r}; choose from {sorted(images.FILTER_BANK)}")
    try:
        img = images.read_image(getattr(args, "in"))
    except (images.ImageDecodeError, OSError) as exc:
        raise CommandError(EXIT_DATA, f"cannot decode {getattr(args, 'in')}: {exc}") from None
    try:
        result = images.apply_filter(img, args.name)
    except ValueError as exc:
        raise CommandError(EXIT_DATA, str(exc)) from None
    archive.atomic_write(args.out, images.encode_image(result))
    return EXIT_OK


def cmd_split(args) -> int:
    ds = _load_data(args.data)
    try:
        train_ds, val_ds = dataset.stratified_split(ds, RngState(args.seed), fraction=args.fraction,
                                                    per_class=args.per_class)
    except (dataset.DataError, ValueError) as exc:
        raise CommandError(EXIT_DATA, str(exc)) from None
    _write_all(Path(args.out), {"train.tsv": dataset.manifest_text(train_ds),
                                "val.tsv": dataset.manifest_text(val_ds)})
    counts = val_ds.counts()
    print("\t".join(f"{name}={counts[name]}" for name in val_ds.labels))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.layout == "kaggle":
        counts = dict(zip(synthetic.KAGGLE_CLASSES, args.counts)) if args.counts else None
        ds = synthetic.kaggle_fixture(counts, args.size, args.seed)
    else:
        ds = synthetic.two_class_textures(args.per_class, args.size, args.seed)
    dataset.write_tree(ds, args.out)
    print(f"wrote {len(ds)} images to {args.out}: {ds.counts()}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CommandError(EXIT_CONFIG, message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cadnn", description="CNN training and evaluation harness for MRI-style image classes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset directory")
    p.add_argument("--model", required=True, help="weights file (model.nnwa) with its model.json beside it")
    p.add_argument("--data", required=True)
    p.add_argument("--class-mode", choices=sorted(dataset.CLASS_MODES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("filter", help="apply a standard 3x3 filter to an image")
    p.add_argument("--name", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("split", help="write stratified train/val manifests")
    p.add_argument("--data", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--fraction", type=float)
    group.add_argument("--per-class", type=int)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synth", help="write a synthetic texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--layout", choices=("kaggle", "two-class"), default="kaggle")
    p.add_argument("--counts", type=int, nargs=4, metavar=("MILD", "MODERATE", "NON", "VERYMILD"))
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=_u64, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
