"""Config-driven command line: phantom-gen, train, evaluate, synthesize, analyze.

One experiment = one JSON or TOML config file plus a seed. Every command
stamps a ``provenance.json`` (resolved-config hash, content hashes of the
input files, seed) into its output directory and refuses to write into a
non-empty directory unless ``--force`` is given. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.

The compute device comes from ``CMEDL_DEVICE`` (default cpu); ``--seed``
overrides the config seed.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import io as cio
from . import metrics as M
from .analysis import (dump_feature_maps, feature_matrix, harvest_features,
                       separability_score, subsample_balanced, tsne_embed)
from .data import build_phantom_corpus, load_corpus, save_corpus
from .data.preprocess import clip_rescale
from .errors import ConfigurationError
from .trainer import CmedlSystem, TrainConfig, infer_probabilities, train
from .trainer.batches import samples_to_tensors

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "data": {
        "kind": "phantom",            # "phantom" (generated) or "disk" (path below)
        "path": None,                 # corpus directory when kind == "disk"
        "clip": [0.0, 1.0],           # intensity window mapped onto [-1, 1]
        "phantom": {
            "counts": {"train": 32, "val": 8, "test": 16},
            "profile": "informative_teacher",
            "size": 64,
            "noise_sigma": 0.03,
            "n_organs": None,
        },
    },
    "train": TrainConfig().to_dict(),
    "metrics": {
        "sdsc_tolerance_mm": 2.0,     # surface-DSC tolerance, recorded per row
        "spacing_mm": [1.0, 1.0],
        "tumor_label": 1,
    },
    "analysis": {
        "perplexity": 60.0,
        "iterations": 1000,
        "max_points": 600,            # balanced t-SNE sample across the split
        "patch": 160,
        "feature_channels": 24,
    },
}


# -- config plumbing ------------------------------------------------------------


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict) \
                and key not in ("counts",):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"override must look like key.path=value: {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    *parents, leaf = dotted.split(".")
    for part in parents:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigurationError(f"unknown config key: {dotted}")
        node = node[part]
    if leaf not in node:
        raise ConfigurationError(f"unknown config key: {dotted}")
    node[leaf] = value


def load_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    user: dict = {}
    if path is not None:
        text = Path(path).read_text()
        if path.endswith(".toml"):
            import tomllib
            user = tomllib.loads(text)
        else:
            user = json.loads(text)
    config = _merge(DEFAULT_CONFIG, user)
    for assignment in overrides:
        _apply_override(config, assignment)
    if seed is not None:
        config["seed"] = seed
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_out_dir(out: str, force: bool) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ConfigurationError(
            f"output directory {out_dir} is not empty (pass --force to reuse)")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_provenance(out_dir: Path, command: str, config: dict,
                      inputs: list[Path]) -> None:
    prov = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "seed": config["seed"],
    }
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))


def _load_data(config: dict):
    data = config["data"]
    if data["kind"] == "disk":
        if not data["path"]:
            raise ConfigurationError("data.kind=disk requires data.path")
        return load_corpus(data["path"])
    if data["kind"] == "phantom":
        ph = data["phantom"]
        return build_phantom_corpus(ph["counts"], ph["profile"], config["seed"],
                                    ph["size"], noise_sigma=ph["noise_sigma"],
                                    n_organs=ph["n_organs"])
    raise ConfigurationError(f"unknown data.kind {data['kind']!r}")


def _device() -> str:
    return os.environ.get("CMEDL_DEVICE", "cpu")


# -- commands ---------------------------------------------------------------------


def cmd_phantom_gen(args) -> int:
    config = load_config(args.config, args.override, args.seed)
    out_dir = _prepare_out_dir(args.out, args.force)
    corpus = _load_data(config)
    save_corpus(corpus, out_dir)
    _write_provenance(out_dir, "phantom-gen", config,
                      [Path(args.config)] if args.config else [])
    print(f"wrote corpus with splits "
          f"{ {k: len(v.student) for k, v in corpus.splits.items()} } to {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.override, args.seed)
    out_dir = _prepare_out_dir(args.out, args.force)
    corpus = _load_data(config)
    train_cfg = TrainConfig.from_dict({**config["train"], "device": _device()})
    _train_cfg, warnings = train_cfg.normalized()
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    train(train_cfg, corpus, out_dir, seed=config["seed"], resume_from=args.resume)
    _write_provenance(out_dir, "train", config,
                      ([Path(args.config)] if args.config else [])
                      + ([Path(args.resume)] if args.resume else []))
    print(f"run directory: {out_dir}")
    return 0


def _case_probabilities(system, samples, clip):
    for sample in samples:
        images, _ = samples_to_tensors([sample], clip=tuple(clip))
        yield sample, infer_probabilities(system, images)[0]


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.override, args.seed)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigurationError(f"checkpoint not found: {ckpt}")
    out_dir = _prepare_out_dir(args.out, args.force)
    corpus = _load_data(config)
    split = corpus.splits[args.split]
    system, _meta = CmedlSystem.load(ckpt, device=_device())

    mcfg = config["metrics"]
    tol = float(mcfg["sdsc_tolerance_mm"])
    spacing = tuple(mcfg["spacing_mm"])
    tumor_label = int(mcfg["tumor_label"])
    records = []
    all_probs, all_labels = [], []
    for sample, probs in _case_probabilities(system, split.student, config["data"]["clip"]):
        pred = probs.argmax(dim=0).numpy()
        labels = sorted(set(np.unique(sample.mask)) - {0})
        for k in labels:
            pair = M.MaskPair(pred == k, sample.mask == k, spacing)
            records.append(M.MetricRecord(
                case_id=sample.case_id,
                structure="tumor" if k == tumor_label else f"organ{k}",
                dsc=M.dsc(pair), sdsc=M.surface_dsc(pair, tol), hd95_mm=M.hd95(pair),
                sdsc_tolerance_mm=tol))
        all_probs.append(probs[tumor_label].numpy().ravel())
        all_labels.append((sample.mask == tumor_label).ravel())

    M.write_metrics_csv(out_dir / "metrics.csv", records)
    aggregate = M.aggregate_records(records)
    (out_dir / "aggregate.json").write_text(json.dumps(aggregate, indent=1, sort_keys=True))
    table = M.format_aggregate_table(aggregate)
    (out_dir / "aggregate.txt").write_text(table + "\n")

    points, auc = M.roc_curve(np.concatenate(all_probs), np.concatenate(all_labels))
    (out_dir / "roc.json").write_text(json.dumps({"auc": auc}, indent=1))
    _plot_roc(points, auc, out_dir / "roc.png")
    _write_provenance(out_dir, "evaluate", config,
                      ([Path(args.config)] if args.config else []) + [ckpt])
    print(table)
    print(f"pixel ROC AUC: {auc:.4f}")
    return 0


def cmd_synthesize(args) -> int:
    config = load_config(args.config, args.override, args.seed)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigurationError(f"checkpoint not found: {ckpt}")
    out_dir = _prepare_out_dir(args.out, args.force)
    corpus = _load_data(config)
    split = corpus.splits[args.split]
    system, _meta = CmedlSystem.load(ckpt, device=_device())
    if system.cycle is None and system.drit is None:
        raise ConfigurationError("checkpoint has no translation networks")

    pseudo_dir = out_dir / "pseudo"
    pseudo_dir.mkdir(exist_ok=True)
    pseudo_images = {}
    with torch.no_grad():
        for sample in split.student:
            images, _ = samples_to_tensors([sample], clip=tuple(config["data"]["clip"]))
            if system.cycle is not None:
                pseudo = system.cycle.gen_s2t(images)
            else:
                content = system.drit.content_enc_s(images)
                z = torch.zeros(1, system.drit.style_dim)
                pseudo = system.drit.gen_t(content, z)
            arr = pseudo[0, 0].numpy()
            pseudo_images[sample.case_id] = arr
            cio.write_image16(pseudo_dir / f"{sample.case_id}.png", arr,
                              {"modality": "pseudo_teacher", "case_id": sample.case_id,
                               "slice_index": sample.slice_index, "spacing_mm": [1.0, 1.0]})

    real_teacher = [clip_rescale(s.image, *config["data"]["clip"]) for s in split.teacher]
    kl = M.intensity_kl(real_teacher, list(pseudo_images.values()))
    records = []
    for case_id, pseudo in sorted(pseudo_images.items()):
        ref = split.paired_teacher.get(case_id)
        if ref is None:
            continue
        ref = clip_rescale(ref, *config["data"]["clip"])
        records.append(M.MetricRecord(
            case_id=case_id, structure="image", dsc=math.nan, kl=kl,
            psnr=M.psnr(ref, pseudo, data_range=2.0), ssim=M.ssim(ref, pseudo, data_range=2.0)))
    M.write_metrics_csv(out_dir / "synthesis.csv", records)
    summary = {"intensity_kl": kl, "n_pseudo": len(pseudo_images),
               "n_paired": len(records)}
    if records:
        summary["psnr_mean"] = float(np.mean([min(r.psnr, M.PSNR_CAP_DB) for r in records]))
        summary["ssim_mean"] = float(np.mean([r.ssim for r in records]))
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _write_provenance(out_dir, "synthesize", config,
                      ([Path(args.config)] if args.config else []) + [ckpt])
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    config = load_config(args.config, args.override, args.seed)
    out_dir = _prepare_out_dir(args.out, args.force)
    corpus = _load_data(config)
    split = corpus.splits[args.split]
    acfg = config["analysis"]
    scores = {}
    for ckpt_arg in args.checkpoints:
        ckpt = Path(ckpt_arg)
        if not ckpt.is_file():
            raise ConfigurationError(f"checkpoint not found: {ckpt}")
        system, _meta = CmedlSystem.load(ckpt, device=_device())
        net = system.nets.get("seg_student", system.nets.get("seg_teacher"))
        feats = harvest_features(net, split.student, patch=int(acfg["patch"]),
                                 seed=config["seed"])
        feats = subsample_balanced(feats, int(acfg["max_points"]), seed=config["seed"])
        x, labels = feature_matrix(feats)
        result = tsne_embed(x, perplexity=float(acfg["perplexity"]),
                            iterations=int(acfg["iterations"]), seed=config["seed"])
        score = separability_score(result.embedding, labels)
        name = ckpt.stem if ckpt.stem != "best" else ckpt.parent.name or ckpt.stem
        scores[name] = score
        _write_embedding_csv(out_dir / f"embedding_{name}.csv", result.embedding,
                             labels, feats)
        _plot_embedding(result.embedding, labels, score,
                        out_dir / f"embedding_{name}.png")
        if int(acfg["feature_channels"]) > 0 and split.student:
            dump_feature_maps(net, clip_rescale(split.student[0].image, 0.0, 1.0),
                              out_dir / f"feature_maps_{name}.png",
                              channels=range(int(acfg["feature_channels"])))
    (out_dir / "separability.json").write_text(json.dumps(scores, indent=1, sort_keys=True))
    _write_provenance(out_dir, "analyze", config,
                      ([Path(args.config)] if args.config else [])
                      + [Path(c) for c in args.checkpoints])
    for name, score in scores.items():
        print(f"{name}: silhouette {score:.4f}")
    return 0


def _write_embedding_csv(path, embedding, labels, feats) -> None:
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["x", "y", "label", "case_id"])
        for (x, y), lab, f in zip(embedding, labels, feats):
            writer.writerow([repr(float(x)), repr(float(y)),
                             "tumor" if lab == 1 else "background", f.case_id])


def _plot_embedding(embedding, labels, score, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 5))
    for lab, color, name in ((0, "tab:blue", "background"), (1, "tab:red", "tumor")):
        sel = labels == lab
        ax.scatter(embedding[sel, 0], embedding[sel, 1], s=4, c=color, label=name, alpha=0.6)
    ax.set_title(f"silhouette {score:.3f}")
    ax.legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_roc(points, auc, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, label=f"AUC {auc:.3f}")
    ax.plot([0, 1], [0, 1], "k--", lw=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmedl")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, checkpoints=False, split=False, resume=False):
        p.add_argument("--config", default=None, help="JSON or TOML experiment config")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dot-path config override, repeatable")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="write into a non-empty output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        if checkpoints:
            p.add_argument("checkpoints", nargs="+")
        if split:
            p.add_argument("--split", default="test", choices=["train", "val", "test"])
        if resume:
            p.add_argument("--resume", default=None, help="checkpoint to resume from")

    common(sub.add_parser("phantom-gen", help="generate and store a phantom corpus"))
    common(sub.add_parser("train", help="train a model"), resume=True)
    common(sub.add_parser("evaluate", help="segment a split and emit metrics"),
           checkpoint=True, split=True)
    common(sub.add_parser("synthesize", help="translate a split and score the synthesis"),
           checkpoint=True, split=True)
    common(sub.add_parser("analyze", help="t-SNE feature separability per checkpoint"),
           checkpoints=True, split=True)
    return parser


_COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "synthesize": cmd_synthesize,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
