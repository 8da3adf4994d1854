"""Command-line surface: synth, augment, pretrain, train, finetune, detect, eval, inspect.

Every command resolves its parameters into a plain dict, writes that dict to
``<out>/config.json``, and can be replayed bit-identically from such a
snapshot via ``--from-config``. Exit codes: 0 success, 2 configuration
errors, 3 data errors, 4 numeric failures.
"""
from __future__ import annotations

import functools
import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import dataio, synth
from .arch import ArchSpec, build_model, load_model, model_file_size, save_model
from .augment import AugmentPolicy, apply_policy
from .errors import ConfigError, DataError, NumericError
from .series import ANOMALY_KINDS
from .stream import NormalizationSpec, detect as run_detect
from .train import (TrainConfig, EvalReport, evaluate, event_precision_recall,
                    finetune_freeze, finetune_multipliers, iou_per_class,
                    mean_iou, train as run_train)

DATA_ROOT_ENV = "TSUNET_DATA_ROOT"


def _fail(message, code):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(exc, 2)
        except DataError as exc:
            _fail(exc, 3)
        except NumericError as exc:
            _fail(exc, 4)
    return wrapper


def _resolve_path(path):
    """Relative paths resolve against $TSUNET_DATA_ROOT when it is set."""
    if path is None:
        return None
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _resolve_params(command, params, from_config, ctx):
    """Load a replay snapshot if given; --out on the command line still wins."""
    if from_config:
        with open(from_config) as fh:
            snap = json.load(fh)
        if snap.get("command") != command:
            raise ConfigError(f"config snapshot is for {snap.get('command')!r}, "
                              f"not {command!r}")
        loaded = snap["params"]
        src = ctx.get_parameter_source("out") if "out" in params else None
        if src is not None and src.name == "COMMANDLINE":
            loaded["out"] = params["out"]
        return loaded
    return params


def _write_config(out_dir, command, params):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"command": command, "params": params}, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--threads", default=1, show_default=True,
              help="Worker threads; 1 keeps runs bit-reproducible.")
def main(threads):
    """Time series segmentation toolkit: synthesize, train, transfer, detect."""
    if threads < 1:
        raise click.UsageError("--threads must be >= 1")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@main.command("synth")
@click.option("--task", type=click.Choice(["pretrain", "shapes"]), default="pretrain",
              show_default=True)
@click.option("--n", default=500, show_default=True, help="Number of samples.")
@click.option("--length", default=1024, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["npz", "csv"]), default="npz",
              show_default=True)
@click.option("--from-config", type=click.Path(exists=True), default=None,
              help="Replay a saved config snapshot.")
@click.pass_context
@_guard
def cmd_synth(ctx, task, n, length, seed, out, fmt, from_config):
    """Generate a synthetic dataset directory with manifest."""
    params = {"task": task, "n": n, "length": length, "seed": seed,
              "out": out, "format": fmt}
    params = _resolve_params("synth", params, from_config, ctx)
    if params["n"] < 1:
        raise ConfigError(f"--n must be >= 1, got {params['n']}")
    out_dir = _resolve_path(params["out"])
    if params["task"] == "pretrain":
        samples = synth.make_pretraining_set(params["n"], params["length"],
                                             params["seed"])
    else:
        samples = synth.make_shape_task_set(params["n"], params["length"],
                                            params["seed"])
    # manifest params exclude paths so the hash fingerprints content only
    gen_params = {k: params[k] for k in ("task", "n", "length", "seed")}
    manifest = dataio.save_dataset(samples, out_dir, params["task"], gen_params,
                                   fmt=params["format"])
    _write_config(out_dir, "synth", params)
    click.echo(f"wrote {len(samples)} samples to {out_dir}")
    click.echo(f"manifest hash: {dataio.manifest_hash(manifest)}")


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

@main.command("augment")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--policy", type=click.Path(exists=True), default=None,
              help="Augmentation policy JSON; default policy if omitted.")
@click.option("--seed", default=0, show_default=True)
@click.option("--passes", default=1, show_default=True,
              help="Augmented copies per input sample.")
@click.option("--include-originals/--no-include-originals", default=True,
              show_default=True)
@click.option("--force", is_flag=True,
              help="Apply ops even when the invariance table forbids them.")
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_augment(ctx, data, out, policy, seed, passes, include_originals, force,
                from_config):
    """Expand a dataset with label-invariant augmentations."""
    params = {"data": data, "out": out, "policy": policy, "seed": seed,
              "passes": passes, "include_originals": include_originals,
              "force": force}
    params = _resolve_params("augment", params, from_config, ctx)
    if params["passes"] < 1:
        raise ConfigError("--passes must be >= 1")
    samples, manifest = dataio.load_dataset(_resolve_path(params["data"]))
    if params["policy"]:
        with open(params["policy"]) as fh:
            pol = AugmentPolicy.from_json(fh.read())
    else:
        pol = AugmentPolicy.default()
    kinds = _dataset_anomaly_kinds(manifest)
    bad = pol.disallowed_pairs(kinds)
    if bad and not params["force"]:
        raise DataError(
            "policy contains ops that are not label-invariant for this dataset: "
            + ", ".join(f"({op}, {kind})" for op, kind in sorted(set(bad)))
            + "; pass --force to override")
    out_samples = list(samples) if params["include_originals"] else []
    n = len(samples)
    for p in range(params["passes"]):
        for i, s in enumerate(samples):
            partner = samples[(i + 1 + p) % n] if n > 1 else None
            out_samples.append(apply_policy(pol, s, seed=[params["seed"], p, i],
                                            anomaly_kinds=kinds, partner=partner,
                                            force=params["force"]))
    out_dir = _resolve_path(params["out"])
    gen_params = {"source": manifest.get("params", {}),
                  "policy": json.loads(pol.to_json()),
                  **{k: params[k] for k in ("seed", "passes",
                                            "include_originals", "force")}}
    new_manifest = dataio.save_dataset(out_samples, out_dir,
                                       manifest["task"], gen_params,
                                       fmt=manifest.get("file_format", "npz"))
    _write_config(out_dir, "augment", params)
    click.echo(f"wrote {len(out_samples)} samples to {out_dir}")
    click.echo(f"manifest hash: {dataio.manifest_hash(new_manifest)}")


def _dataset_anomaly_kinds(manifest):
    """Anomaly kinds present in a dataset, by class index convention."""
    if manifest["task"] == "pretrain":
        kinds = set()
        for entry in manifest["samples"]:
            for a in entry.get("meta", {}).get("anomalies", []):
                kinds.add(ANOMALY_KINDS[a["kind_index"]])
        return sorted(kinds)
    return ["unusual_shape"] if manifest["task"] == "shapes" else []


# ---------------------------------------------------------------------------
# training commands
# ---------------------------------------------------------------------------

_ARCH_OPTIONS = [
    click.option("--label-mode", type=click.Choice(["multi_label", "single_label"]),
                 default="multi_label", show_default=True),
    click.option("--depth", default=5, show_default=True),
    click.option("--base-width", default=16, show_default=True),
    click.option("--pool", default=4, show_default=True),
    click.option("--kernel", default=3, show_default=True),
]

_TRAIN_OPTIONS = [
    click.option("--epochs", default=20, show_default=True),
    click.option("--batch-size", default=8, show_default=True),
    click.option("--lr", default=1e-3, show_default=True),
    click.option("--seed", default=0, show_default=True),
    click.option("--val-fraction", default=0.2, show_default=True),
    click.option("--precision", type=click.Choice(["float32", "float64"]),
                 default="float32", show_default=True),
]


def _add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


def _load_training_data(data_dir):
    samples, manifest = dataio.load_dataset(data_dir)
    x, y = dataio.dataset_arrays(samples)
    return x, y, manifest


def _train_config_from(params):
    return TrainConfig(base_lr=params["lr"], batch_size=params["batch_size"],
                       epochs=params["epochs"], seed=params["seed"],
                       precision=params["precision"],
                       val_fraction=params["val_fraction"])


def _write_run(out_dir, command, params, model, report):
    _write_config(out_dir, command, params)
    dataio.write_history_csv(os.path.join(out_dir, "history.csv"), report.history)
    final_path = os.path.join(out_dir, "model_final.tsu")
    best_path = os.path.join(out_dir, "model_best.tsu")
    best_state = model.get_state()
    if report.final_state is not None:
        model.set_state(report.final_state)
    save_model(model, final_path)
    model.set_state(best_state)
    save_model(model, best_path)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"run directory: {out_dir}")
    if report.mean_iou is not None:
        click.echo(f"best validation mean IoU: {report.mean_iou:.4f} "
                   f"(epoch {report.best_epoch})")


def _scratch_train(ctx, command, data, out, label_mode, depth, base_width, pool,
                   kernel, epochs, batch_size, lr, seed, val_fraction, precision,
                   from_config):
    params = {"data": data, "out": out, "label_mode": label_mode, "depth": depth,
              "base_width": base_width, "pool": pool, "kernel": kernel,
              "epochs": epochs, "batch_size": batch_size, "lr": lr, "seed": seed,
              "val_fraction": val_fraction, "precision": precision}
    params = _resolve_params(command, params, from_config, ctx)
    x, y, _ = _load_training_data(_resolve_path(params["data"]))
    config = _train_config_from(params)
    spec = ArchSpec(kind="unet", input_length=x.shape[1], channels=x.shape[2],
                    classes=y.shape[2], label_mode=params["label_mode"],
                    depth=params["depth"], base_width=params["base_width"],
                    pool=params["pool"], kernel=params["kernel"])
    model = build_model(spec, seed=params["seed"], dtype=config.dtype)
    report = run_train(model, x, y, config)
    out_dir = _resolve_path(params["out"])
    os.makedirs(out_dir, exist_ok=True)
    _write_run(out_dir, command, params, model, report)


@main.command("pretrain")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_add_options(_ARCH_OPTIONS)
@_add_options(_TRAIN_OPTIONS)
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_pretrain(ctx, **kwargs):
    """Train a fresh model on the synthetic pretraining corpus."""
    _scratch_train(ctx, "pretrain", **kwargs)


@main.command("train")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_add_options(_ARCH_OPTIONS)
@_add_options(_TRAIN_OPTIONS)
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_train(ctx, **kwargs):
    """Train a model from scratch on any dataset directory."""
    _scratch_train(ctx, "train", **kwargs)


@main.command("finetune")
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--base-model", required=True, type=click.Path())
@click.option("--strategy", type=click.Choice(["multipliers", "freeze"]),
              default=None, help="Default: multipliers for unet, freeze for munet.")
@click.option("--target", type=click.Choice(["unet", "munet"]), default="unet",
              show_default=True)
@click.option("--channels", default=None, type=int,
              help="Channel count for a munet target.")
@click.option("--label-mode", type=click.Choice(["multi_label", "single_label"]),
              default="multi_label", show_default=True)
@click.option("--multipliers", default=None,
              help="Comma-separated per-section learning rate multipliers.")
@_add_options(_TRAIN_OPTIONS)
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_finetune(ctx, data, out, base_model, strategy, target, channels,
                 label_mode, multipliers, epochs, batch_size, lr, seed,
                 val_fraction, precision, from_config):
    """Transfer a pretrained model to a new task."""
    params = {"data": data, "out": out, "base_model": base_model,
              "strategy": strategy, "target": target, "channels": channels,
              "label_mode": label_mode, "multipliers": multipliers,
              "epochs": epochs, "batch_size": batch_size, "lr": lr,
              "seed": seed, "val_fraction": val_fraction, "precision": precision}
    params = _resolve_params("finetune", params, from_config, ctx)
    x, y, _ = _load_training_data(_resolve_path(params["data"]))
    config = _train_config_from(params)
    if params["multipliers"]:
        mults = tuple(float(v) for v in str(params["multipliers"]).split(","))
        config = replace(config, section_lr_multipliers=mults)
    pretrained = load_model(_resolve_path(params["base_model"]),
                            dtype=config.dtype)
    target = params["target"]
    strategy = params["strategy"] or ("freeze" if target == "munet" else "multipliers")
    channels = params["channels"]
    if target == "munet":
        if channels is None:
            channels = x.shape[2]
    elif x.shape[2] != pretrained.spec.channels:
        raise DataError(f"dataset has {x.shape[2]} channels but the base model "
                        f"expects {pretrained.spec.channels}; use --target munet")
    fn = finetune_multipliers if strategy == "multipliers" else finetune_freeze
    model, report = fn(pretrained, x, y, config, label_mode=params["label_mode"],
                       target_kind=target, channels=channels)
    out_dir = _resolve_path(params["out"])
    os.makedirs(out_dir, exist_ok=True)
    _write_run(out_dir, "finetune", params, model, report)


# ---------------------------------------------------------------------------
# detect / eval / inspect
# ---------------------------------------------------------------------------

@main.command("detect")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--input", "input_csv", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--snapshot", default=None, type=int,
              help="Snapshot length in stream points; default model input length.")
@click.option("--coverage", default=3, show_default=True,
              help="Evaluations per point; sets stride = snapshot / coverage.")
@click.option("--stride", default=None, type=int, help="Explicit stride; overrides --coverage.")
@click.option("--center", default=0.0, show_default=True)
@click.option("--scale", default=1.0, show_default=True)
@click.option("--per-snapshot", is_flag=True,
              help="Normalize each snapshot independently instead of a fixed scale.")
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--min-len", default=2, show_default=True)
@click.option("--merge-gap", default=2, show_default=True)
@click.option("--rule", type=click.Choice(["mean", "max"]), default="mean",
              show_default=True)
@click.option("--probs/--no-probs", default=False,
              help="Also write per-point probabilities CSV.")
@click.option("--force", is_flag=True, help="Allow gap-leaving strides.")
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_detect(ctx, model_path, input_csv, out, snapshot, coverage, stride,
               center, scale, per_snapshot, threshold, min_len, merge_gap,
               rule, probs, force, from_config):
    """Run streaming detection over a CSV stream; emit events as JSON lines."""
    params = {"model": model_path, "input": input_csv, "out": out,
              "snapshot": snapshot, "coverage": coverage, "stride": stride,
              "center": center, "scale": scale, "per_snapshot": per_snapshot,
              "threshold": threshold, "min_len": min_len,
              "merge_gap": merge_gap, "rule": rule, "probs": probs,
              "force": force}
    params = _resolve_params("detect", params, from_config, ctx)
    model = load_model(_resolve_path(params["model"]))
    values, _, _ = dataio.load_series_csv(_resolve_path(params["input"]))
    norm = NormalizationSpec(
        mode="per_snapshot" if params["per_snapshot"] else "fixed",
        center=params["center"], scale=params["scale"])
    result = run_detect(model, values, snapshot_length=params["snapshot"],
                        coverage=params["coverage"], stride=params["stride"],
                        norm=norm, threshold=params["threshold"],
                        min_len=params["min_len"], merge_gap=params["merge_gap"],
                        rule=params["rule"], force=params["force"])
    out_dir = _resolve_path(params["out"])
    os.makedirs(out_dir, exist_ok=True)
    _write_config(out_dir, "detect", params)
    dataio.write_events_jsonl(os.path.join(out_dir, "events.jsonl"), result.events)
    if params["probs"]:
        dataio.save_series_csv(os.path.join(out_dir, "probs.csv"), result.probs)
    click.echo(f"{len(result.events)} events -> {os.path.join(out_dir, 'events.jsonl')}")


@main.command("eval")
@click.option("--model", "model_path", default=None, type=click.Path(),
              help="Evaluate this model on --data.")
@click.option("--data", default=None, type=click.Path())
@click.option("--pred", default=None, type=click.Path(),
              help="Predicted-mask CSV (m1..mM columns).")
@click.option("--true", "true_csv", default=None, type=click.Path(),
              help="Ground-truth mask CSV.")
@click.option("--events", default=None, type=click.Path(),
              help="Predicted events JSONL for event-level scores.")
@click.option("--true-events", default=None, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.option("--from-config", type=click.Path(exists=True), default=None)
@click.pass_context
@_guard
def cmd_eval(ctx, model_path, data, pred, true_csv, events, true_events, out,
             from_config):
    """Score predictions: per-class IoU and optional event precision/recall."""
    params = {"model": model_path, "data": data, "pred": pred, "true": true_csv,
              "events": events, "true_events": true_events, "out": out}
    params = _resolve_params("eval", params, from_config, ctx)
    if params["model"] and params["data"]:
        model = load_model(_resolve_path(params["model"]))
        samples, _ = dataio.load_dataset(_resolve_path(params["data"]))
        x, y = dataio.dataset_arrays(samples)
        report = evaluate(model, x, y)
    elif params["pred"] and params["true"]:
        _, pred_mask, _ = dataio.load_series_csv(_resolve_path(params["pred"]))
        _, true_mask, _ = dataio.load_series_csv(_resolve_path(params["true"]))
        if pred_mask is None or true_mask is None:
            raise DataError("both CSVs need mask columns m1..mM")
        if pred_mask.shape != true_mask.shape:
            raise DataError(f"mask shapes differ: {pred_mask.shape} vs {true_mask.shape}")
        per_class = iou_per_class(pred_mask, true_mask)
        report = EvalReport(per_class_iou=list(map(float, per_class)),
                            mean_iou=mean_iou(pred_mask, true_mask))
    else:
        raise ConfigError("eval needs either --model with --data, or --pred with --true")
    if params["events"] and params["true_events"]:
        pred_ev = dataio.read_events_jsonl(_resolve_path(params["events"]))
        true_ev = dataio.read_events_jsonl(_resolve_path(params["true_events"]))
        report.event_precision, report.event_recall = \
            event_precision_recall(pred_ev, true_ev)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if params["out"]:
        out_path = _resolve_path(params["out"])
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w") as fh:
            fh.write(payload + "\n")
    click.echo(payload)


@main.command("inspect")
@click.option("--model", "model_path", required=True, type=click.Path())
@_guard
def cmd_inspect(model_path):
    """Print a model's spec and parameter counts."""
    model = load_model(_resolve_path(model_path))
    spec = model.spec
    click.echo(f"kind:         {spec.kind}")
    click.echo(f"input_length: {spec.input_length}")
    click.echo(f"channels:     {spec.channels}")
    click.echo(f"classes:      {spec.classes} ({spec.label_mode}, "
               f"head depth {spec.out_channels})")
    click.echo(f"depth:        {spec.depth}")
    click.echo(f"base_width:   {spec.base_width}")
    click.echo(f"pool:         {spec.pool}   kernel: {spec.kernel}")
    click.echo("sections:")
    for name, params in model.section_map().items():
        count = sum(p.value.size for p in params)
        click.echo(f"  {name:<12} {count:>10,} params")
    click.echo(f"total parameters: {model.param_count():,}")
    click.echo(f"file size: {model_file_size(model):,} bytes")


if __name__ == "__main__":
    main()
