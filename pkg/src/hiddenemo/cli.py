"""Command-line front end.

Every subcommand reads one YAML config (``--config``), writes under ``--out``
and leaves a config echo in ``<out>/echo/<command>.yaml``. Layout::

    data/         synthetic gold set (manifest.jsonl + streams)
    pool/         optional unlabeled pool for pseudo-labels
    splits/       train.jsonl / val.jsonl drawn from the gold manifest
    features/     one sampled view per record (featgen)
    checkpoints/  pretrain_<branch>.pt, finetune_full.pt
    reports/      training curves, metrics, predictions, ablation tables
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from hiddenemo.ablation import AblationBudget, AblationData, AblationGrid, run_ablation
from hiddenemo.batching import FeatureStore, view_seed
from hiddenemo.config import RunConfig, dump_config, load_config
from hiddenemo.datamodel import DatasetManifest, Label, ValidationError, load_manifest, split_train_val, write_manifest
from hiddenemo.encoders import SPATIAL_KINDS
from hiddenemo.inference import (
    VoteStats,
    evaluate,
    metrics_from_predictions,
    predict_dataset,
    write_predictions,
)
from hiddenemo.model import BRANCHES, branch_fingerprint, load_checkpoint, module_from_checkpoint
from hiddenemo.seeding import derive_seed
from hiddenemo.synthgen import describe, format_description, generate_dataset
from hiddenemo.training import finetune_full, gradient_check_suite, pretrain_branch
from hiddenemo.weaksup import (
    PseudoLabel,
    merge_datasets,
    parse_response,
    select_pseudo_label,
    simulate_pseudo_labels,
)

COMMANDS = ("synth", "featgen", "pretrain", "finetune", "infer", "evaluate", "ablate", "gradcheck", "report")


def _paths(out: Path) -> dict[str, Path]:
    return {k: out / k for k in ("data", "pool", "splits", "features", "checkpoints", "reports", "echo")}


def _echo(cfg: RunConfig, command: str, argv) -> None:
    p = _paths(Path(cfg.out_dir))["echo"]
    p.mkdir(parents=True, exist_ok=True)
    header = f"# command: {command}\n# argv: {' '.join(argv)}\n# seed: {cfg.seed}\n"
    (p / f"{command}.yaml").write_text(header + dump_config(cfg))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _gold_manifest(cfg: RunConfig, args):
    path = Path(args.manifest) if getattr(args, "manifest", None) else _paths(Path(cfg.out_dir))["data"] / "manifest.jsonl"
    return load_manifest(path)


def _split(cfg: RunConfig, args, settings):
    """Deterministic train/val split shared by pretrain and finetune."""
    manifest = _gold_manifest(cfg, args)
    gold = manifest.subset([r.sample_id for r in manifest.records if r.label is not None])
    train, val = split_train_val(gold, settings.val_fraction, derive_seed(cfg.seed, "split"))
    sp = _paths(Path(cfg.out_dir))["splits"]
    sp.mkdir(parents=True, exist_ok=True)
    write_manifest(train, sp / "train.jsonl")
    write_manifest(val, sp / "val.jsonl")
    return train, val


def cmd_synth(cfg: RunConfig, args) -> int:
    paths = _paths(Path(cfg.out_dir))
    synth = dataclasses.replace(cfg.synth, seed=derive_seed(cfg.seed, "synth", cfg.synth.seed))
    manifest, _ = generate_dataset(synth, paths["data"])
    desc = describe(manifest)
    _write_json(paths["reports"] / "data_description.json", desc)
    print(format_description(desc))
    if args.pool_count:
        pool_cfg = dataclasses.replace(synth, sample_count=args.pool_count, seed=derive_seed(synth.seed, "pool"))
        pool, _ = generate_dataset(pool_cfg, paths["pool"], id_prefix="pool")
        # the pool is unlabeled as far as training is concerned; truth stays in the sidecar
        truth = {r.sample_id: r.label.value for r in pool.records}
        _write_json(paths["pool"] / "truth.json", truth)
        write_manifest(DatasetManifest([dataclasses.replace(r, label=None) for r in pool.records], "train"),
                       paths["pool"] / "manifest.jsonl")
        print(f"pool: {len(pool)} unlabeled records in {paths['pool']}")
    return 0


def cmd_featgen(cfg: RunConfig, args) -> int:
    manifest = _gold_manifest(cfg, args)
    out = _paths(Path(cfg.out_dir))["features"]
    out.mkdir(parents=True, exist_ok=True)
    store = FeatureStore(cfg.model)
    items = [(r, view_seed(cfg.seed, r.sample_id, 0), 1.0) for r in manifest.records]
    for view in store.views(items, cfg.workers):
        np.savez(out / f"{view.sample_id}.npz", visual=view.visual, text=np.asarray(view.text),
                 **{f"keypoint_{g}": a for g, a in view.groups.items()})
    shapes = {g: list(a.shape) for g, a in view.groups.items()} if manifest.records else {}
    print(f"wrote {len(manifest)} feature files to {out}; keypoint group shapes {shapes}")
    return 0


def cmd_pretrain(cfg: RunConfig, args) -> int:
    paths = _paths(Path(cfg.out_dir))
    train, val = _split(cfg, args, cfg.pretrain)
    store = FeatureStore(cfg.model)
    branches = BRANCHES if args.branch == "all" else (args.branch,)
    for b in branches:
        stage = cfg.pretrain.stage(f"pretrain_{b}", cfg.seed, cfg.workers)
        report, ckpt, _ = pretrain_branch(b, train, cfg.model, stage, cfg.loss, val=val, store=store,
                                          out_path=paths["checkpoints"] / f"pretrain_{b}.pt")
        report.write_jsonl(paths["reports"] / f"pretrain_{b}.jsonl")
        print(report.summary_table())
        if report.error:
            return 1
    return 0


def _pseudo_labels(cfg: RunConfig, args, pool):
    if args.responses:
        files = sorted(Path(args.responses).glob("*.txt"))
        return [select_pseudo_label(parse_response(f), cfg.weaksup.exclusion_threshold) for f in files]
    truth_path = Path(args.pool).parent / "truth.json"
    if not truth_path.exists():
        raise ValidationError("--simulate-noise needs truth.json next to the pool manifest")
    truth = json.loads(truth_path.read_text())
    labels = [Label(truth[r.sample_id]) for r in pool.records]
    rate = cfg.weaksup.noise_rate if args.simulate_noise is None else args.simulate_noise
    return simulate_pseudo_labels(labels, rate, derive_seed(cfg.seed, "pseudo"), pool.ids)


def cmd_finetune(cfg: RunConfig, args) -> int:
    paths = _paths(Path(cfg.out_dir))
    train, val = _split(cfg, args, cfg.pretrain)
    merged = train
    if args.pool:
        pool = load_manifest(args.pool)
        pseudo = _pseudo_labels(cfg, args, pool)
        _write_json(paths["reports"] / "pseudo_labels.json", [p.to_json() for p in pseudo])
        merged = merge_datasets(train, pseudo, pool)
        write_manifest(merged, paths["splits"] / "merged.jsonl")
        print(f"merged: {len(train)} gold + {len(merged) - len(train)} pseudo-labeled records")
    pretrained = {}
    ckdir = Path(args.checkpoints) if args.checkpoints else paths["checkpoints"]
    for b in BRANCHES:
        p = ckdir / f"pretrain_{b}.pt"
        if p.exists():
            pretrained[b] = load_checkpoint(p, branch_fingerprint(cfg.model, b), args.allow_mismatch)
    print("pretrained branches: " + (", ".join(pretrained) or "none (training from scratch)"))
    stage = cfg.finetune.stage("finetune_full", cfg.seed, cfg.workers)
    report, _, _ = finetune_full(pretrained, merged, cfg.model, stage, cfg.loss, val=val,
                                 store=FeatureStore(cfg.model), out_path=paths["checkpoints"] / "finetune_full.pt",
                                 allow_mismatch=args.allow_mismatch)
    report.write_jsonl(paths["reports"] / "finetune_full.jsonl")
    print(report.summary_table())
    return 1 if report.error else 0


def _load_module(cfg: RunConfig, args):
    path = Path(args.checkpoint) if args.checkpoint else _paths(Path(cfg.out_dir))["checkpoints"] / "finetune_full.pt"
    ckpt = load_checkpoint(path)
    module = module_from_checkpoint(ckpt)
    return module, ckpt


def cmd_infer(cfg: RunConfig, args) -> int:
    module, ckpt = _load_module(cfg, args)
    manifest = load_manifest(args.manifest) if args.manifest else load_manifest(
        _paths(Path(cfg.out_dir))["splits"] / "val.jsonl")
    store = FeatureStore(module.cfg)
    stats = VoteStats()
    preds = predict_dataset(module, manifest, store, cfg.vote, stats, workers=cfg.workers)
    out = _paths(Path(cfg.out_dir))["reports"] / "predictions.csv"
    write_predictions(preds, out)
    print(f"{len(preds)} predictions ({stats.tie_breaks} tie breaks) -> {out}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    module, ckpt = _load_module(cfg, args)
    manifest = load_manifest(args.manifest) if args.manifest else load_manifest(
        _paths(Path(cfg.out_dir))["splits"] / "val.jsonl")
    stats = VoteStats()
    metrics, preds = evaluate(module, manifest, FeatureStore(module.cfg), cfg.vote, stats, workers=cfg.workers)
    reports = _paths(Path(cfg.out_dir))["reports"]
    write_predictions(preds, reports / "predictions.csv")
    summary = metrics.to_dict() | {"stage": ckpt.stage, "views": cfg.vote.views, "tie_breaks": stats.tie_breaks}
    # the recount from the emitted predictions must agree
    summary["recount_accuracy"] = metrics_from_predictions(preds).accuracy
    _write_json(reports / "metrics.json", summary)
    print(f"accuracy {metrics.accuracy:.4f} on {metrics.count} records  confusion {metrics.confusion}")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    a = cfg.ablation
    grid = AblationGrid(
        tuple(args.grid.split(",")) if args.grid else a.kinds,
        tuple(args.offsets.split(",")) if args.offsets else a.offsets,
        tuple(args.strategies.split(",")) if args.strategies else a.strategies,
    )
    data = AblationData(synth=cfg.synth, gold_count=a.gold_count, pool_count=a.pool_count,
                        val_count=a.val_count, noise_rate=cfg.weaksup.noise_rate)
    seeds = tuple(derive_seed(cfg.seed, "ablation", s) if cfg.seed else s for s in a.seeds)
    budget = AblationBudget(max_seconds=a.max_seconds, seeds=seeds, epochs=a.epochs,
                            learning_rate=cfg.pretrain.learning_rate, views_per_epoch=a.views_per_epoch,
                            batch_size=cfg.pretrain.batch_size, workers=cfg.workers)
    table = run_ablation(grid, data, budget, cfg.model, cfg.loss, progress=print)
    csv_path, txt_path = table.write(_paths(Path(cfg.out_dir))["reports"])
    print(table.format())
    print(f"-> {csv_path}, {txt_path}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    result = gradient_check_suite(args.threshold)
    _write_json(_paths(Path(cfg.out_dir))["reports"] / "gradcheck.json", result)
    for name, err in result["errors"].items():
        print(f"{name:<14} max relative error {err:.3e}  {'ok' if err <= args.threshold else 'FAIL'}")
    return 0 if result["passed"] else 1


def cmd_report(cfg: RunConfig, args) -> int:
    reports = _paths(Path(cfg.out_dir))["reports"]
    if not reports.exists():
        raise ValidationError(f"no reports under {reports}")
    lines = [f"# run report: {cfg.out_dir}", ""]
    for p in sorted(reports.glob("*.jsonl")):
        rows = [json.loads(l) for l in p.read_text().splitlines() if l.strip()]
        epochs = [r for r in rows if "epoch" in r]
        if epochs:
            best = max(epochs, key=lambda r: r.get("val_accuracy", -1))
            lines.append(f"- {p.stem}: {len(epochs)} epochs, best val accuracy "
                         f"{best['val_accuracy']:.4f} at epoch {best['epoch']}")
    m = reports / "metrics.json"
    if m.exists():
        d = json.loads(m.read_text())
        lines.append(f"- evaluation ({d['stage']}, {d['views']} views): accuracy {d['accuracy']:.4f} "
                     f"on {d['count']} records, confusion {d['confusion']}")
    g = reports / "gradcheck.json"
    if g.exists():
        d = json.loads(g.read_text())
        lines.append(f"- gradient check: max error {max(d['errors'].values()):.2e}, passed={d['passed']}")
    t = reports / "ablation.txt"
    if t.exists():
        lines += ["", "## ablation", "", "```", t.read_text().rstrip(), "```"]
    text = "\n".join(lines) + "\n"
    (reports / "summary.md").write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="global seed; overrides the config")
    common.add_argument("--workers", type=int, help="parallel feature-preparation workers")
    common.add_argument("--out", help="output directory; overrides out_dir in the config")

    parser = argparse.ArgumentParser(prog="hiddenemo", description="Trimodal hidden-emotion pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--pool-count", type=int, default=0, help="also write an unlabeled pool of this size")

    p = sub.add_parser("featgen", parents=[common], help="write one sampled feature view per record")
    p.add_argument("--manifest")

    p = sub.add_parser("pretrain", parents=[common], help="stage 1: pretrain one branch (or all)")
    p.add_argument("--branch", choices=BRANCHES + ("all",), default="all")
    p.add_argument("--manifest")

    p = sub.add_parser("finetune", parents=[common], help="stage 2: full model on gold (+ pseudo) labels")
    p.add_argument("--manifest")
    p.add_argument("--pool", help="unlabeled pool manifest")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--responses", help="directory of VLM response files for the pool")
    src.add_argument("--simulate-noise", type=float, help="simulate pseudo-labels at this flip rate")
    p.add_argument("--checkpoints", help="directory holding pretrain_<branch>.pt")
    p.add_argument("--allow-mismatch", action="store_true")

    for name, text in (("infer", "voted predictions"), ("evaluate", "voted predictions plus metrics")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint")
        p.add_argument("--manifest")

    p = sub.add_parser("ablate", parents=[common], help="encoder x offsets x strategy table")
    p.add_argument("--grid", help=f"comma-separated encoder kinds from {','.join(SPATIAL_KINDS)}")
    p.add_argument("--offsets", help="comma-separated subset of on,off")
    p.add_argument("--strategies", help="comma-separated training strategies")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--threshold", type=float, default=1e-4)

    sub.add_parser("report", parents=[common], help="summarize the reports of a run directory")
    return parser


HANDLERS = {
    "synth": cmd_synth,
    "featgen": cmd_featgen,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.workers, args.out)
        _echo(cfg, args.command, argv)
        started = time.perf_counter()
        code = HANDLERS[args.command](cfg, args)
        print(f"[{args.command}] done in {time.perf_counter() - started:.1f}s")
        return code
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
