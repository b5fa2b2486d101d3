"""Command-line entry point: ``tstkit <command> [options]``.

Commands: pretrain, train, finetune, evaluate, impute, masks, diff, manifest.

Settings are merged from (lowest to highest precedence) built-in defaults,
a preset, an INI config file (``--config``), the environment variables
``TSTKIT_OUTPUT_DIR`` / ``TSTKIT_THREADS``, and command-line flags including
``--set section.key=value``.  The effective configuration is written to
``config.ini`` in the output directory; passing it back with ``--config``
reproduces the run.

Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint
error, 4 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, diff_checkpoints, load_checkpoint, save_checkpoint
from .data import (
    DataError,
    Dataset,
    normalize_dataset,
    parse_archive,
    parse_csv_long,
    split_train_val,
    subset_labels,
)
from .masking import VARIANTS, MaskSpec, sample_mask, save_mask_text
from .model import ConfigError, ModelConfig
from .train import NumericError, TrainConfig, evaluate, impute, model_for_task, pretrain, train_supervised

log = logging.getLogger("tstkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- presets ---------------------------------------------------------------------------------------
GOOD_DEFAULT = {"model": {"d_model": 128, "d_ff": 256, "n_heads": 16, "n_blocks": 3},
                "train": {"batch_size": 128}}

# (n_blocks, n_heads, d_model, d_ff) per dataset
SUPERVISED = {
    "AppliancesEnergy": (3, 8, 128, 512),
    "BenzeneConcentration": (3, 8, 128, 256),
    "BeijingPM10Quality": (3, 8, 64, 256),
    "BeijingPM25Quality": (3, 8, 64, 256),
    "LiveFuelMoistureContent": (3, 8, 64, 256),
    "IEEEPPG": (3, 8, 512, 512),
    "EthanolConcentration": (1, 8, 64, 256),
    "FaceDetection": (3, 8, 128, 256),
    "Handwriting": (1, 8, 128, 256),
    "Heartbeat": (1, 8, 64, 256),
    "JapaneseVowels": (3, 8, 128, 256),
    "PEMS-SF": (1, 8, 128, 512),
    "SelfRegulationSCP1": (3, 8, 128, 256),
    "SelfRegulationSCP2": (3, 8, 128, 256),
    "SpokenArabicDigits": (3, 8, 64, 256),
    "UWaveGestureLibrary": (3, 16, 256, 256),
}
UNSUPERVISED = {
    "AppliancesEnergy": (3, 16, 128, 512),
    "BenzeneConcentration": (1, 8, 128, 256),
    "BeijingPM10Quality": (3, 8, 64, 256),
    "BeijingPM25Quality": (3, 8, 128, 256),
    "LiveFuelMoistureContent": (3, 8, 64, 256),
    "IEEEPPG": (4, 16, 512, 512),
    "EthanolConcentration": (1, 8, 64, 256),
    "FaceDetection": (3, 8, 128, 256),
    "Handwriting": (3, 16, 64, 256),
    "Heartbeat": (1, 8, 64, 256),
    "JapaneseVowels": (3, 8, 128, 256),
    "PEMS-SF": (1, 8, 256, 512),
    "SelfRegulationSCP1": (3, 16, 256, 512),
    "SelfRegulationSCP2": (3, 8, 256, 512),
    "SpokenArabicDigits": (3, 8, 64, 256),
    "UWaveGestureLibrary": (3, 16, 256, 512),
}


def _table_preset(row) -> dict:
    b, h, d, ff = row
    return {"model": {**GOOD_DEFAULT["model"], "n_blocks": b, "n_heads": h, "d_model": d, "d_ff": ff},
            "train": dict(GOOD_DEFAULT["train"])}


def preset_names() -> list[str]:
    names = ["good-default", "auto"]
    names += [f"{n}/supervised" for n in SUPERVISED] + [f"{n}/unsupervised" for n in UNSUPERVISED]
    return names


def resolve_preset(name: str, command: str, dataset_name: str | None) -> tuple[str, dict]:
    """Preset sections for ``name``.

    A bare dataset name picks the supervised table for ``train`` and the
    unsupervised table (pretrained models) otherwise.  ``auto`` looks up the
    dataset's own name and falls back to ``good-default``.
    """
    if not name:
        return "", {}
    if name == "good-default":
        return name, {k: dict(v) for k, v in GOOD_DEFAULT.items()}
    if name == "auto":
        name = dataset_name or ""
        if name not in SUPERVISED:
            return "good-default", {k: dict(v) for k, v in GOOD_DEFAULT.items()}
    base, _, kind = name.partition("/")
    kind = kind or ("supervised" if command == "train" else "unsupervised")
    table = {"supervised": SUPERVISED, "unsupervised": UNSUPERVISED}.get(kind)
    if table is None or base not in table:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")
    return f"{base}/{kind}", _table_preset(table[base])


# -- configuration keys --------------------------------------------------------------------------------
# section -> key -> (type, default, help)
CONFIG_KEYS: dict[str, dict[str, tuple]] = {
    "run": {
        "data": (str, "", "training data (.ts archive or long-format .csv); the input data for evaluate/impute"),
        "test": (str, "", "optional test data scored after training"),
        "val": (str, "", "optional validation data (otherwise see val_ratio)"),
        "val_ratio": (float, 0.0, "hold out this fraction of the training data for validation (0 = none)"),
        "label_fraction": (float, 1.0, "keep labels on this stratified fraction of training samples"),
        "label_column": (str, "", "label column name for long-format CSV input"),
        "preset": (str, "auto", "hyperparameter preset: auto, good-default or <Dataset>[/supervised|/unsupervised]"),
        "output_dir": (str, "runs/latest", "directory for checkpoints, metrics and the effective config"),
        "seed": (int, 0, "seed for initialization, shuffling, dropout and masks"),
        "threads": (int, 1, "BLAS/OpenMP threads (1 keeps runs bitwise reproducible)"),
        "checkpoint": (str, "", "input checkpoint (finetune source, evaluate/impute model)"),
        "freeze": (bool, False, "finetune: train only the output head (static representations)"),
        "mask_source": (str, "generated", "impute: 'generated' masks or 'from-data-missing'"),
        "dump": (bool, False, "evaluate: write per-sample predictions"),
    },
    "model": {
        "w": (int, 0, "maximum sequence length (0 = longest sample in the given data)"),
        "d_model": (int, 128, "representation dimension d"),
        "n_heads": (int, 16, "attention heads"),
        "n_blocks": (int, 3, "encoder blocks"),
        "d_ff": (int, 256, "feed-forward inner dimension"),
        "dropout": (float, 0.1, "dropout probability"),
        "activation": (str, "gelu", "feed-forward activation (gelu)"),
        "norm": (str, "batch", "normalization layer: batch or layer"),
        "pos_encoding": (str, "learnable", "positional encoding: learnable or sinusoidal"),
        "projection": (str, "linear", "input projection: linear or conv"),
        "conv_kernel": (int, 1, "conv projection kernel size"),
        "conv_stride": (int, 1, "conv projection stride"),
        "conv_dilation": (int, 1, "conv projection dilation"),
        "conv_padding": (str, "same", "conv projection padding: same or valid"),
        "dtype": (str, "float64", "float64 or float32"),
    },
    "train": {
        "lr": (float, 1e-3, "Adam learning rate"),
        "batch_size": (int, 128, "minibatch size"),
        "epochs": (int, 100, "training epochs"),
        "beta1": (float, 0.9, "Adam beta1"),
        "beta2": (float, 0.999, "Adam beta2"),
        "adam_eps": (float, 1e-8, "Adam epsilon"),
        "patience": (int, 0, "early-stopping patience in epochs (0 = off)"),
        "warmup_epochs": (int, 0, "linear learning-rate warmup epochs (0 = constant rate)"),
        "norm_mode": (str, "stddev", "input normalization: stddev or variance"),
        "eval_batch_size": (int, 256, "batch size for evaluation passes"),
    },
    "mask": {
        "variant": (str, "sep_stateful", f"noise mask: {', '.join(VARIANTS)}"),
        "r": (float, 0.15, "masking ratio"),
        "lm": (float, 3.0, "mean masked run length"),
        "fraction": (float, 0.2, "forecast variant: hidden suffix fraction"),
    },
}


def _parse_value(section: str, key: str, raw) -> object:
    typ = CONFIG_KEYS[section][key][0]
    if not isinstance(raw, str):
        return typ(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise UsageError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _check_key(section: str, key: str, origin: str) -> None:
    if section not in CONFIG_KEYS:
        raise UsageError(f"{origin}: unknown section [{section}]; expected one of {sorted(CONFIG_KEYS)}")
    if key not in CONFIG_KEYS[section]:
        raise UsageError(f"{origin}: unknown key {key!r} in [{section}]; expected one of {sorted(CONFIG_KEYS[section])}")


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    out: dict = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            _check_key(section, key, str(path))
            out.setdefault(section, {})[key] = _parse_value(section, key, value)
    return out


def help_epilog() -> str:
    lines = ["configuration keys (INI sections; also settable as --set section.key=value):"]
    for section, keys in CONFIG_KEYS.items():
        lines.append(f"  [{section}]")
        for key, (typ, default, text) in keys.items():
            lines.append(f"    {f'{key} = {default!r}':<30} {text}")
    lines.append("environment: TSTKIT_OUTPUT_DIR overrides run.output_dir, TSTKIT_THREADS overrides run.threads")
    lines.append(f"presets: good-default, auto, or a dataset name ({', '.join(SUPERVISED)})")
    lines.append("exit codes: 0 ok, 2 usage/config error, 3 data/checkpoint error, 4 non-finite loss")
    return "\n".join(lines)


class Settings:
    """Merged configuration plus the set of explicitly given keys."""

    def __init__(self, values: dict, explicit: set, preset: str):
        self.values = values
        self.explicit = explicit
        self.preset = preset

    def __getitem__(self, section):
        return self.values[section]

    def write(self, path: Path, command: str) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {k: str(v) for k, v in keys.items()}
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# effective configuration of `tstkit {command}`\n")
            parser.write(fh)


def build_settings(command: str, args, env=os.environ) -> Settings:
    """Merge defaults, preset, config file, environment and flags."""
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in CONFIG_KEYS.items()}
    layers: list[tuple[str, dict]] = []
    explicit: set = set()
    if args.config:
        layers.append(("config", read_config_file(args.config)))
    env_layer: dict = {}
    if env.get("TSTKIT_OUTPUT_DIR"):
        env_layer.setdefault("run", {})["output_dir"] = env["TSTKIT_OUTPUT_DIR"]
    if env.get("TSTKIT_THREADS"):
        env_layer.setdefault("run", {})["threads"] = _parse_value("run", "threads", env["TSTKIT_THREADS"])
    layers.append(("environment", env_layer))

    flags: dict = {}
    for key in ("data", "test", "val", "preset", "seed", "threads", "checkpoint", "output_dir"):
        v = getattr(args, key, None)
        if v is not None:
            flags.setdefault("run", {})[key] = v
    if getattr(args, "freeze", False):
        flags.setdefault("run", {})["freeze"] = True
    if getattr(args, "dump", False):
        flags.setdefault("run", {})["dump"] = True
    if getattr(args, "mask_source", None):
        flags.setdefault("run", {})["mask_source"] = args.mask_source
    for item in getattr(args, "set", None) or []:
        name, eq, raw = item.partition("=")
        section, dot, key = name.partition(".")
        if not eq or not dot:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        _check_key(section, key, "--set")
        flags.setdefault(section, {})[key] = _parse_value(section, key, raw)
    layers.append(("flags", flags))

    # the preset name itself may come from any layer; it slots in below them
    preset_name = values["run"]["preset"]
    for _, layer in layers:
        preset_name = layer.get("run", {}).get("preset", preset_name)
    dataset_name = None
    data_path = values["run"]["data"]
    for _, layer in layers:
        data_path = layer.get("run", {}).get("data", data_path)
    if data_path:
        dataset_name = Path(data_path).stem.rsplit("_", 1)[0]
    resolved, preset = resolve_preset(preset_name, command, dataset_name)
    for section, keys in preset.items():
        values[section].update(keys)
    for _, layer in layers:
        for section, keys in layer.items():
            values[section].update(keys)
            explicit.update((section, k) for k in keys)
    return Settings(values, explicit, resolved)


# -- helpers --------------------------------------------------------------------------------------------
def load_data(path: str, label_column: str = "") -> Dataset:
    if not path:
        raise UsageError("no dataset path given (use --data or [run] data)")
    p = Path(path)
    if not p.exists():
        raise DataError(f"data file not found: {p}")
    if p.suffix.lower() == ".csv":
        return parse_csv_long(p, label_column or None)
    return parse_archive(p)


def _model_kwargs(settings: Settings) -> dict:
    kw = dict(settings["model"])
    kw.pop("w")
    return kw


def _train_config(settings: Settings, **extra) -> TrainConfig:
    try:
        return TrainConfig(seed=settings["run"]["seed"], **settings["train"], **extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _mask_spec(settings: Settings) -> MaskSpec:
    try:
        return MaskSpec(seed=settings["run"]["seed"], **settings["mask"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _window(settings: Settings, *datasets) -> int:
    w = settings["model"]["w"]
    if w:
        return w
    return max(d.max_length for d in datasets if d is not None)


class RecordWriter:
    """Appends line-delimited JSON metric records."""

    def __init__(self, path: Path, **context):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        self.context = context
        path.write_text("", encoding="utf-8")

    def __call__(self, rec: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({**self.context, **rec}) + "\n")
        if rec.get("split") != "train" or rec.get("metric") == "loss":
            log.info("epoch %s %s %s = %.6g", rec.get("epoch"), rec.get("split"), rec.get("metric"), rec["value"])


def _splits(settings: Settings, train: Dataset) -> tuple[Dataset, Dataset | None]:
    run = settings["run"]
    if run["val"]:
        return train, load_data(run["val"], run["label_column"])
    if run["val_ratio"]:
        try:
            return split_train_val(train, 1.0 - run["val_ratio"], run["seed"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return train, None


def _out_dir(settings: Settings) -> Path:
    return Path(settings["run"]["output_dir"])


def _save_run(out: Path, result, settings: Settings, command: str) -> None:
    save_checkpoint(result.last, out / "checkpoint.tstk")
    save_checkpoint(result.best, out / "best.tstk")
    settings.write(out / "config.ini", command)


def _model_config(settings: Settings, m: int, w: int, head: str, n_out: int = 0) -> ModelConfig:
    try:
        return ModelConfig(m=m, w=w, head=head, n_out=n_out, **_model_kwargs(settings))
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _task_head(ds: Dataset) -> tuple[str, int]:
    if ds.task == "classification":
        return "classification", ds.n_classes
    if ds.task == "regression":
        return "regression", ds.n_targets
    raise DataError(f"{ds.name}: dataset has no labels; supervised training needs class or target labels")


def _test_report(model, norm, settings: Settings, writer, epoch: int, train_ds: Dataset) -> dict | None:
    run = settings["run"]
    if not run["test"]:
        return None
    test = load_data(run["test"], run["label_column"])
    if test.m != train_ds.m:
        raise DataError(f"test data has m={test.m}, training data m={train_ds.m}")
    rep = evaluate(model, normalize_dataset(test, norm), model.config.head)
    for k, v in rep.metrics.items():
        writer({"epoch": epoch, "split": "test", "metric": k, "value": float(v)})
    return rep.metrics


# -- commands ---------------------------------------------------------------------------------------------
def cmd_pretrain(settings: Settings) -> int:
    run = settings["run"]
    data = load_data(run["data"], run["label_column"])
    train, val = _splits(settings, data)
    w = _window(settings, train, val)
    mc = _model_config(settings, data.m, w, "reconstruction")
    out = _out_dir(settings)
    writer = RecordWriter(out / "metrics.jsonl", command="pretrain", dataset=data.name)
    res = pretrain(train, mc, _train_config(settings), _mask_spec(settings), val=val, on_record=writer)
    _save_run(out, res, settings, "pretrain")
    log.info("wrote %s", out / "checkpoint.tstk")
    return EXIT_OK


def _supervised(settings: Settings, command: str, init=None) -> int:
    run = settings["run"]
    data = load_data(run["data"], run["label_column"])
    head, n_out = _task_head(data)
    if run["label_fraction"] < 1.0:
        try:
            data = subset_labels(data, run["label_fraction"], run["seed"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    train, val = _splits(settings, data)
    if init is not None:
        base = init.model_config
        if base.m != data.m:
            raise CheckpointError(f"checkpoint was trained on m={base.m} variables, data has m={data.m}")
        overrides = {k: settings["model"][k] for (s, k) in settings.explicit if s == "model"}
        mc = replace(base, dropout=overrides.pop("dropout", base.dropout))
        clash = {k: (getattr(mc, k), v) for k, v in overrides.items() if getattr(mc, k) != v}
        if clash:
            raise CheckpointError(f"model settings conflict with the checkpoint encoder: {clash}")
        mc = model_for_task(mc, head, n_out)
    else:
        mc = _model_config(settings, data.m, _window(settings, train, val), head, n_out)
    out = _out_dir(settings)
    writer = RecordWriter(out / "metrics.jsonl", command=command, dataset=data.name)
    cfg = _train_config(settings, freeze_all_but_head=bool(run["freeze"]) if init is not None else False)
    res = train_supervised(train, mc, cfg, init=init, val=val, on_record=writer)
    _save_run(out, res, settings, command)
    metrics = _test_report(res.model("best"), res.best.norm, settings, writer, res.best.epoch, data)
    if metrics:
        log.info("test: %s", ", ".join(f"{k}={v:.6g}" for k, v in metrics.items()))
    return EXIT_OK


def cmd_train(settings: Settings) -> int:
    return _supervised(settings, "train")


def cmd_finetune(settings: Settings) -> int:
    path = settings["run"]["checkpoint"]
    if not path:
        raise UsageError("finetune needs --from <checkpoint>")
    return _supervised(settings, "finetune", init=load_checkpoint(path))


def _load_model(settings: Settings):
    path = settings["run"]["checkpoint"]
    if not path:
        raise UsageError("a --checkpoint is required")
    ck = load_checkpoint(path)
    if ck.norm is None:
        raise CheckpointError(f"{path}: checkpoint lacks normalization statistics")
    return ck, ck.build_model()


def cmd_evaluate(settings: Settings) -> int:
    run = settings["run"]
    ck, model = _load_model(settings)
    data = load_data(run["data"], run["label_column"])
    if data.m != model.config.m:
        raise DataError(f"data has m={data.m}, checkpoint expects m={model.config.m}")
    out = _out_dir(settings)
    writer = RecordWriter(out / "metrics.jsonl", command="evaluate", dataset=data.name)
    rep = evaluate(model, normalize_dataset(data, ck.norm), model.config.head, _mask_spec(settings),
                   settings["train"]["eval_batch_size"], dump=bool(run["dump"]))
    for k, v in rep.metrics.items():
        writer({"epoch": ck.epoch, "split": "eval", "metric": k, "value": float(v)})
    if rep.predictions is not None:
        _write_jsonl(out / "predictions.jsonl", rep.predictions)
    settings.write(out / "config.ini", "evaluate")
    print(json.dumps(rep.metrics))
    return EXIT_OK


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def cmd_impute(settings: Settings) -> int:
    run = settings["run"]
    ck, model = _load_model(settings)
    if model.config.head != "reconstruction":
        raise CheckpointError("imputation needs a pretrained checkpoint with a reconstruction head")
    data = load_data(run["data"], run["label_column"])
    if data.m != model.config.m:
        raise DataError(f"data has m={data.m}, checkpoint expects m={model.config.m}")
    source = run["mask_source"]
    if source not in ("generated", "from-data-missing"):
        raise UsageError(f"mask source must be 'generated' or 'from-data-missing', got {source!r}")
    res = impute(model, data, ck.norm, _mask_spec(settings), use_missing=source == "from-data-missing",
                 batch_size=settings["train"]["eval_batch_size"])
    out = _out_dir(settings)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "imputation.jsonl", res.records)
    writer = RecordWriter(out / "metrics.jsonl", command="impute", dataset=data.name)
    writer({"epoch": ck.epoch, "split": "impute", "metric": "n_masked", "value": float(res.n_masked)})
    if res.masked_rmse is not None:
        writer({"epoch": ck.epoch, "split": "impute", "metric": "masked_rmse", "value": res.masked_rmse})
    settings.write(out / "config.ini", "impute")
    print(json.dumps({"masked_rmse": res.masked_rmse, "n_masked": res.n_masked}))
    return EXIT_OK


def cmd_masks(settings: Settings, args) -> int:
    out = _out_dir(settings)
    out.mkdir(parents=True, exist_ok=True)
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    summary = {}
    for variant in variants:
        spec = _mask_spec(replace_mask(settings, variant))
        fractions = []
        for i in range(args.count):
            mask = sample_mask(args.w, args.m, spec, 0, i)
            save_mask_text(mask, out / f"mask_{variant}_{i}.txt")
            fractions.append(mask.masked_fraction())
        summary[variant] = float(np.mean(fractions))
    (out / "masks.json").write_text(json.dumps({"w": args.w, "m": args.m, "count": args.count,
                                                "masked_fraction": summary}, indent=2) + "\n")
    settings.write(out / "config.ini", "masks")
    print(json.dumps(summary))
    return EXIT_OK


def replace_mask(settings: Settings, variant: str) -> Settings:
    values = {s: dict(v) for s, v in settings.values.items()}
    values["mask"]["variant"] = variant
    return Settings(values, settings.explicit, settings.preset)


def cmd_diff(args) -> int:
    a, b = load_checkpoint(args.a), load_checkpoint(args.b)
    diffs = diff_checkpoints(a, b)
    changed = {k: v for k, v in diffs.items() if v != 0.0}
    only_a = sorted(set(a.params) - set(b.params))
    only_b = sorted(set(b.params) - set(a.params))
    for name, v in sorted(diffs.items()):
        if v != 0.0 or args.all:
            print(f"{name}\t{v:.6g}")
    for name in only_a:
        print(f"{name}\tonly in {args.a}")
    for name in only_b:
        print(f"{name}\tonly in {args.b}")
    print(f"# {len(diffs) - len(changed)} identical, {len(changed)} changed, {len(only_a) + len(only_b)} unmatched")
    return EXIT_OK


def cmd_manifest(args) -> int:
    print(load_data(args.data, args.label_column or "").manifest_text())
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="tstkit", description="Transformer encoders for multivariate time series.",
                                     epilog=help_epilog(), formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, data_help="data file"):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--preset", help="hyperparameter preset")
        p.add_argument("--data", help=data_help)
        p.add_argument("--out", dest="output_dir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")

    def add(name, text):
        return sub.add_parser(name, help=text, description=text, epilog=help_epilog(), formatter_class=fmt)

    p = add("pretrain", "unsupervised masked-value pretraining")
    common(p, "training data (labels ignored)")
    p.add_argument("--val", help="validation data")

    for name, text in (("train", "supervised training from scratch"),
                       ("finetune", "supervised fine-tuning of a pretrained encoder")):
        p = add(name, text)
        common(p, "labelled training data")
        p.add_argument("--val", help="validation data")
        p.add_argument("--test", help="test data scored with the best model")
        if name == "finetune":
            p.add_argument("--from", dest="checkpoint", help="pretrained checkpoint")
            p.add_argument("--freeze", action="store_true", help="train only the output head")

    p = add("evaluate", "score a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dump", action="store_true", help="write per-sample predictions")

    p = add("impute", "fill masked or missing values with a pretrained model")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mask-source", choices=("generated", "from-data-missing"))

    p = add("masks", "write noise-mask fixtures")
    common(p)
    p.add_argument("--variant", default="all", choices=("all",) + VARIANTS)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("diff", help="compare the tensors of two checkpoints")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--all", action="store_true", help="also list identical tensors")

    p = sub.add_parser("manifest", help="print a dataset manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    return parser


COMMANDS = {"pretrain": cmd_pretrain, "train": cmd_train, "finetune": cmd_finetune,
            "evaluate": cmd_evaluate, "impute": cmd_impute}


def _dispatch(args) -> int:
    if args.command == "diff":
        return cmd_diff(args)
    if args.command == "manifest":
        return cmd_manifest(args)
    settings = build_settings(args.command, args)
    with threadpool_limits(limits=max(1, settings["run"]["threads"])):
        if args.command == "masks":
            return cmd_masks(settings, args)
        return COMMANDS[args.command](settings)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except UsageError as exc:
        print(f"tstkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"tstkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"tstkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
