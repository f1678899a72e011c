"""``mvsc <command> [--config path] [--key value ...]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import SidecarExtractor, StubExtractor, load_features
from .config import RunConfig, count_parameters, parse_config
from .errors import ConfigError, MVSCError
from .network import load_checkpoint, save_checkpoint
from .pipeline import baseline_samples, build_model, make_embeddings, prepare_samples
from .selection import score_table, select_topk
from .tensor import no_grad
from .text import load_embeddings, write_embeddings
from .train import Evaluation, Sample, SurrogateClassifier, evaluate, train
from .volume import (LabeledVolume, ManifestRecord, load_volume, read_manifest,
                     synth_dataset, write_manifest, write_volume)

log = logging.getLogger("mvsc")

COMMANDS = ("select", "synth", "train", "eval", "export-surrogate", "bench-baselines", "params")


class CommandError(MVSCError):
    """A command could not run with the inputs it was given."""


def _fmt(value) -> str:
    return f"{value:.10g}" if isinstance(value, float) else str(value)


def write_report(path: Path, values: dict) -> None:
    path.write_text("".join(f"{k}={_fmt(values[k])}\n" for k in sorted(values)))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CommandError(f"missing {what}: {path}")
    return path


def _load_split(cfg: RunConfig, key: str) -> list[LabeledVolume]:
    records = read_manifest(_require(cfg.path(key), key))
    return [LabeledVolume(load_volume(_require(r.path, "volume")), r.label, r.subject_id)
            for r in records]


def _embeddings_for(cfg: RunConfig, volumes: Sequence[LabeledVolume]):
    emb_dir = cfg.path("embeddings_dir")
    if not emb_dir.is_dir():
        return None
    return {lv.subject_id: load_embeddings(_require(emb_dir / f"{lv.subject_id}.mvsctxt",
                                                    "embedding file"), cfg.k)
            for lv in volumes}


def _extractor(cfg: RunConfig):
    return StubExtractor(cfg.seed, cfg.n_feat, cfg.extractor_channels)


def _samples(cfg: RunConfig, volumes: Sequence[LabeledVolume]) -> list[Sample]:
    if cfg.extractor == "sidecar":
        return [Sample(lv.label, lv.subject_id, feature_row=i) for i, lv in enumerate(volumes)]
    if cfg.baseline != "none":
        return baseline_samples(volumes, cfg.selection(), cfg.baseline)
    embeddings = _embeddings_for(cfg, volumes)
    if embeddings is not None:
        return prepare_samples(volumes, cfg.selection(), cfg.d_t, "file", embeddings=embeddings)
    return prepare_samples(volumes, cfg.selection(), cfg.d_t, cfg.text, cfg.seed)


def _sidecar(cfg: RunConfig, key: str, count: int) -> SidecarExtractor:
    return SidecarExtractor(load_features(_require(cfg.path(key), "feature sidecar"), count))


def _model_for(cfg: RunConfig) -> SurrogateClassifier:
    learned = cfg.baseline == "none" and cfg.extractor == "stub"
    return build_model(cfg.net() if learned else None, cfg.n_feat, cfg.n_classes, cfg.seed)


def _eval_report(ev: Evaluation, prefix: str = "") -> dict:
    return {f"{prefix}{k}": v for k, v in ev.report().items()}


# ------------------------------------------------------------------ commands


def cmd_select(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir) / "scores"
    out.mkdir(parents=True, exist_ok=True)
    if cfg.volume:
        items = [(Path(cfg.volume).stem, load_volume(_require(Path(cfg.volume), "volume")))]
    else:
        items = [(lv.subject_id, lv.volume) for lv in _load_split(cfg, "manifest")]
    for name, vol in items:
        table = score_table(vol, cfg.selection())
        (out / f"{name}.csv").write_text(table)
        if cfg.volume:
            sys.stdout.write(table)
    log.info("wrote %d score tables to %s", len(items), out)
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    vol_dir = out / "volumes"
    emb_dir = cfg.path("embeddings_dir")
    vol_dir.mkdir(parents=True, exist_ok=True)
    emb_dir.mkdir(parents=True, exist_ok=True)
    splits = {"manifest": synth_dataset(cfg.synth(), cfg.seed)}
    if cfg.val_per_class:
        splits["val_manifest"] = synth_dataset(cfg.synth(cfg.val_per_class), cfg.seed,
                                               offset=cfg.per_class)
    for key, volumes in splits.items():
        records = []
        for lv in volumes:
            path = vol_dir / f"{lv.subject_id}.mvscvol"
            write_volume(path, lv.volume)
            indices = select_topk(lv.volume, cfg.selection())
            emb = make_embeddings(cfg.text, cfg.seed, lv, indices, cfg.d_t)
            write_embeddings(emb_dir / f"{lv.subject_id}.mvsctxt", emb)
            records.append(ManifestRecord(path, lv.label, lv.subject_id))
        write_manifest(cfg.path(key), records)
        log.info("wrote %d volumes for %s", len(records), key)
    return 0


def _train_model(cfg: RunConfig, log_path: Path | None):
    train_vols = _load_split(cfg, "manifest")
    val_path = cfg.path("val_manifest")
    val_vols = _load_split(cfg, "val_manifest") if val_path.exists() else []
    if cfg.extractor == "sidecar":
        extractor = _sidecar(cfg, "features", len(train_vols))
        if val_vols:
            log.warning("sidecar runs report no per-epoch validation metrics")
        val_vols = []
    else:
        extractor = _extractor(cfg)
    model = _model_for(cfg)
    samples = _samples(cfg, train_vols)
    val_samples = _samples(cfg, val_vols) if val_vols else None
    history = train(samples, cfg.training(), model, extractor, val_samples)
    if log_path is not None:
        log_path.write_text("\n".join(history.lines()) + "\n")
    return model, extractor, samples, history


def _extras(cfg: RunConfig) -> dict[str, str]:
    return {"n_feat": str(cfg.n_feat), "n_classes": str(cfg.n_classes),
            "baseline": cfg.baseline, "extractor": cfg.extractor,
            "extractor_channels": str(cfg.extractor_channels), "seed": str(cfg.seed),
            "has_net": str(int(cfg.baseline == "none" and cfg.extractor == "stub"))}


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, extractor, samples, history = _train_model(cfg, out / "metrics.log")
    ckpt = cfg.path("checkpoint")
    save_checkpoint(ckpt, cfg.net(), model.state_dict(), _extras(cfg))
    report = _eval_report(evaluate(samples, model, extractor), "train_")
    report["steps"] = history.steps
    report["epochs"] = len(history.records)
    report["trainable_params"] = model.num_parameters()
    write_report(out / "train_report.txt", report)
    log.info("checkpoint written to %s", ckpt)
    return 0


def _restore(cfg: RunConfig) -> SurrogateClassifier:
    net_cfg, state, extras = load_checkpoint(_require(cfg.path("checkpoint"), "checkpoint"))
    has_net = extras.get("has_net") == "1"
    model = build_model(net_cfg if has_net else None, int(extras["n_feat"]),
                        int(extras["n_classes"]), cfg.seed)
    model.load_state_dict(state)
    return model


def cmd_eval(cfg: RunConfig) -> int:
    key = "val_manifest" if cfg.path("val_manifest").exists() else "manifest"
    volumes = _load_split(cfg, key)
    model = _restore(cfg)
    if cfg.extractor == "sidecar":
        extractor = _sidecar(cfg, "val_features" if key == "val_manifest" else "features",
                             len(volumes))
    else:
        extractor = _extractor(cfg)
    ev = evaluate(_samples(cfg, volumes), model, extractor)
    report = _eval_report(ev)
    report["split"] = key
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "eval_report.txt", report)
    sys.stdout.write((out / "eval_report.txt").read_text())
    return 0


def cmd_export(cfg: RunConfig) -> int:
    volumes = _load_split(cfg, "manifest")
    out = Path(cfg.out_dir) / "surrogates"
    out.mkdir(parents=True, exist_ok=True)
    if cfg.extractor == "sidecar":
        raise CommandError("export-surrogate needs image surrogates, not a feature sidecar")
    model = None if cfg.baseline != "none" else _restore(cfg)
    samples = _samples(cfg, volumes)

    for sample in samples:
        if model is None:
            image = sample.surrogate
        else:
            model.eval()
            with no_grad():
                image = model.surrogates([sample]).data[0]
        write_volume(out / f"{sample.subject_id}.mvscvol", image.astype(np.float32))
    log.info("exported %d surrogates to %s", len(samples), out)
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    train_vols = _load_split(cfg, "manifest")
    val_vols = _load_split(cfg, "val_manifest")
    extractor = _extractor(cfg)
    rows = []
    for method in ("mean", "max", "mvsc"):
        run = dataclasses.replace(cfg, baseline="none" if method == "mvsc" else method)
        model = _model_for(run)
        train(_samples(run, train_vols), run.training(), model, extractor)
        ev = evaluate(_samples(run, val_vols), model, extractor)
        rows.append(f"{method},{ev.auc:.10g},{ev.macro_auc:.10g},{ev.accuracy:.10g}")
    table = "method,auc,macro_auc,accuracy\n" + "\n".join(rows) + "\n"
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_params(cfg: RunConfig) -> int:
    sys.stdout.write(f"{count_parameters(cfg)}\n")
    return 0


HANDLERS = {"select": cmd_select, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "export-surrogate": cmd_export, "bench-baselines": cmd_bench, "params": cmd_params}


def parse_overrides(tokens: Sequence[str]) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` tokens into a dict."""
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"expected --key value, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{key} is missing a value")
            value = tokens[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mvsc", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--verbose", "-v", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, parse_overrides(rest))
        return HANDLERS[args.command](cfg)
    except (MVSCError, OSError, KeyError) as exc:
        print(f"mvsc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
