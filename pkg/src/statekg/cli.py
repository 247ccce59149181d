"""Command-line entry point: prepare, train, evaluate, truncate, analyze,
plotdata. Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config
error. All outputs land under --out with a fixed layout (config.resolved,
train_log.csv, checkpoints/, reports/).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import load_id_names
from .errors import ConfigError, StateKGError
from .evaluation import evaluate, truncation_experiment
from .memory import DualMemory
from .model import BACKBONE_KINDS, SCORER_KINDS, ForecastModel
from .training import ABLATIONS, train, write_log_csv


def _ensure_dirs(out: Path) -> tuple[Path, Path]:
    ckpt = out / "checkpoints"
    reports = out / "reports"
    for p in (out, ckpt, reports):
        p.mkdir(parents=True, exist_ok=True)
    return ckpt, reports


def _resolve_config(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        ablation=getattr(args, "ablation", None),
        backbone=getattr(args, "backbone", None),
        scorer=getattr(args, "scorer", None),
        filter=getattr(args, "filter", None),
        out_dir=getattr(args, "out", None),
    )
    if cfg["backbone"] not in BACKBONE_KINDS:
        raise ConfigError(
            f"invalid backbone {cfg['backbone']!r}; valid kinds: {', '.join(BACKBONE_KINDS)}"
        )
    if cfg["scorer"] not in SCORER_KINDS:
        raise ConfigError(
            f"invalid scorer {cfg['scorer']!r}; valid kinds: {', '.join(SCORER_KINDS)}"
        )
    if cfg["filter"] not in ("rolling", "standard"):
        raise ConfigError(f"invalid filter {cfg['filter']!r}; valid kinds: rolling, standard")
    for flag in cfgmod.parse_ablation(cfg["ablation"]):
        if flag not in ABLATIONS:
            raise ConfigError(
                f"invalid ablation {flag!r}; valid names: {', '.join(ABLATIONS)}"
            )
    return cfg


def _write_resolved(cfg: dict, out: Path) -> None:
    (out / "config.resolved").write_text(cfgmod.resolved_text(cfg))


def _report_json(cfg: dict, split: str, report) -> str:
    payload = {
        "run_id": cfgmod.run_id(cfg),
        "config_hash": cfgmod.config_hash(cfg),
        "split": split,
        "filter": cfg["filter"],
        "mrr": round(report.mrr, 10),
        "hits1": round(report.hits[1], 10),
        "hits3": round(report.hits[3], 10),
        "hits10": round(report.hits[10], 10),
        "query_count": report.query_count,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def cmd_prepare(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg["out_dir"])
    _ensure_dirs(out)
    _write_resolved(cfg, out)
    kg = cfgmod.build_dataset(cfg)
    cfgmod.save_dataset_npz(kg, out / "dataset.npz")
    summary = cfgmod.dataset_summary(kg)
    for key in ("entities", "relations", "train", "valid", "test", "snapshots"):
        print(f"{key}: {summary[key]}")
    (out / "reports" / "dataset_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg["out_dir"])
    ckpt_dir, _ = _ensure_dirs(out)
    _write_resolved(cfg, out)
    kg = cfgmod.build_dataset(cfg)
    model_cfg = cfgmod.model_config(cfg, kg)
    train_cfg = cfgmod.train_config(cfg)
    model = ForecastModel(model_cfg, seed=train_cfg.seed)
    memory = DualMemory(
        kg.entity_count, model_cfg.dim, train_cfg.lam, train_cfg.kappa, train_cfg.gamma
    )
    memory.save_path(ckpt_dir / "memory_initial.bin")

    cadence = cfg["checkpoint_every"]

    def on_epoch(epoch: int, row: dict) -> None:
        print(
            f"epoch {epoch:3d} loss {row['loss']:.5f} lr {row['lr']:.6f}"
            + (f" valid_mrr {row['valid_mrr']:.4f}" if row["valid_mrr"] != "" else "")
        )
        if cadence and epoch % cadence == 0:
            model.save_path(ckpt_dir / f"model_epoch{epoch:03d}.bin")
            memory.save_path(ckpt_dir / f"memory_epoch{epoch:03d}.bin")

    rows = train(
        kg, model, memory, train_cfg, filter_mode=cfg["filter"], progress=on_epoch
    )
    header = (
        f"# run_id={cfgmod.run_id(cfg)} config_hash={cfgmod.config_hash(cfg)}"
        f" backbone={cfg['backbone']} scorer={cfg['scorer']} filter={cfg['filter']}"
        f" ablation={cfg['ablation'] or 'none'} seed={cfg['seed']}\n"
    )
    with open(out / "train_log.csv", "w") as fh:
        fh.write(header)
        write_log_csv(rows, fh)
    model.save_path(ckpt_dir / "model_final.bin")
    memory.save_path(ckpt_dir / "memory_final.bin")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg["out_dir"])
    ckpt_dir, reports = _ensure_dirs(out)
    _write_resolved(cfg, out)
    model_path = Path(args.model) if args.model else ckpt_dir / "model_final.bin"
    memory_path = Path(args.memory) if args.memory else ckpt_dir / "memory_final.bin"
    for p in (model_path, memory_path):
        if not p.exists():
            raise ConfigError(f"checkpoint not found: {p}")
    kg = cfgmod.build_dataset(cfg)
    model = ForecastModel.load_path(model_path)
    memory = DualMemory.load_path(memory_path)
    train_cfg = cfgmod.train_config(cfg)
    report = evaluate(kg, model, memory, args.split, train_cfg, filter_mode=cfg["filter"])
    (reports / f"eval_{args.split}.json").write_text(_report_json(cfg, args.split, report))
    if cfg["dump_ranks"]:
        with open(reports / f"ranks_{args.split}.csv", "w") as fh:
            fh.write("subject,relation,time,gold,rank\n")
            for s, r, t, o, rank in report.per_query:
                fh.write(f"{s},{r},{t},{o},{rank}\n")
    print(
        f"{args.split} mrr {report.mrr:.4f} hits@1 {report.hits[1]:.4f}"
        f" hits@3 {report.hits[3]:.4f} hits@10 {report.hits[10]:.4f}"
        f" queries {report.query_count}"
    )
    return 0


def cmd_truncate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg["out_dir"])
    _, reports = _ensure_dirs(out)
    _write_resolved(cfg, out)
    fractions = cfgmod.parse_fractions(args.fractions or cfg["truncate_fractions"])
    kg = cfgmod.build_dataset(cfg)
    model_cfg = cfgmod.model_config(cfg, kg)
    train_cfg = cfgmod.train_config(cfg)
    results = truncation_experiment(
        kg, model_cfg, train_cfg, fractions, filter_mode=cfg["filter"],
        progress=lambda frac, rep: print(f"fraction {frac}% test mrr {rep.mrr:.4f}"),
    )
    with open(reports / "truncation.csv", "w") as fh:
        fh.write("fraction,mrr,hits1,hits3,hits10,query_count,warning\n")
        for res in results:
            if res.report is None:
                fh.write(f"{res.fraction},,,,,,{res.warning}\n")
                print(res.warning, file=sys.stderr)
            else:
                rep = res.report
                fh.write(
                    f"{res.fraction},{rep.mrr:.10g},{rep.hits[1]:.10g},{rep.hits[3]:.10g},"
                    f"{rep.hits[10]:.10g},{rep.query_count},\n"
                )
    return 0


def cmd_analyze(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg["out_dir"])
    ckpt_dir, reports = _ensure_dirs(out)
    _write_resolved(cfg, out)
    memory_path = Path(args.memory) if args.memory else ckpt_dir / "memory_final.bin"
    baseline_path = Path(args.baseline) if args.baseline else ckpt_dir / "memory_initial.bin"
    for p in (memory_path, baseline_path):
        if not p.exists():
            raise ConfigError(f"memory checkpoint not found: {p}")
    memory = DualMemory.load_path(memory_path)
    baseline = DualMemory.load_path(baseline_path)
    id_names = None
    if cfg["entity_names_file"]:
        path = Path(cfg["entity_names_file"])
        if not path.exists():
            raise ConfigError(f"entity names file not found: {path}")
        with open(path) as fh:
            id_names = load_id_names(fh)
    from .evaluation import analyze_states

    top_k = args.top or cfg["analyze_top_k"]
    rows = analyze_states(memory, baseline.slow, id_names, top_k)
    with open(reports / "state_analysis.csv", "w") as fh:
        fh.write("rank,entity,displacement,gate_mean,gate_std\n")
        for rank, label, disp, g_mu, g_sigma in rows:
            fh.write(f"{rank},{label},{disp:.10g},{g_mu:.10g},{g_sigma:.10g}\n")
    with open(reports / "slow_states.csv", "w") as fh:
        memory.export_slow_csv(fh)
    print(f"{'rank':>4}  {'entity':<24} {'displacement':>12} {'gate_mu':>8} {'gate_sigma':>10}")
    for rank, label, disp, g_mu, g_sigma in rows:
        print(f"{rank:>4}  {label:<24} {disp:>12.4f} {g_mu:>8.4f} {g_sigma:>10.4f}")
    return 0


def cmd_plotdata(args) -> int:
    wrote = False
    out = Path(args.out or "run_out")
    _, reports = _ensure_dirs(out)
    if args.train_log:
        path = Path(args.train_log)
        if not path.exists():
            raise ConfigError(f"training log not found: {path}")
        rows = []
        with open(path) as fh:
            header = None
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if header is None:
                    header = line.split(",")
                    continue
                cells = dict(zip(header, line.split(",")))
                if cells.get("valid_mrr"):
                    rows.append((int(cells["epoch"]), cells["valid_mrr"]))
        with open(reports / "plot_convergence.csv", "w") as fh:
            fh.write("epoch,valid_mrr\n")
            for epoch, mrr in rows:
                fh.write(f"{epoch},{mrr}\n")
        wrote = True
    if args.truncation:
        path = Path(args.truncation)
        if not path.exists():
            raise ConfigError(f"truncation report not found: {path}")
        lines = path.read_text().strip().splitlines()
        with open(reports / "plot_truncation.csv", "w") as fh:
            fh.write("fraction,mrr,hits1,hits3,hits10\n")
            for line in lines[1:]:
                cells = line.split(",")
                if len(cells) >= 5 and cells[1]:
                    fh.write(",".join(cells[:5]) + "\n")
        wrote = True
    if not wrote:
        raise ConfigError("plotdata needs --train-log and/or --truncation")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statekg",
        description="Stateful temporal knowledge graph forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, need_config: bool = True) -> None:
        p.add_argument("--config", required=need_config, help="run config file (YAML)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--ablation", default=None, help="comma list: wo_context,wo_state,wo_ccl")
        p.add_argument("--backbone", default=None, choices=BACKBONE_KINDS)
        p.add_argument("--scorer", default=None, choices=SCORER_KINDS)
        p.add_argument("--filter", default=None, choices=("rolling", "standard"))
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("prepare", help="build and summarize the dataset")
    common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model; writes checkpoints and log")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="filtered ranking on valid or test")
    common(p)
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--model", default=None, help="model checkpoint path")
    p.add_argument("--memory", default=None, help="memory checkpoint path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("truncate", help="retrain on earliest X%% of history per fraction")
    common(p)
    p.add_argument("--fractions", default=None, help="comma list of percentages")
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("analyze", help="entity state displacement report")
    common(p)
    p.add_argument("--memory", default=None, help="memory checkpoint (default: final)")
    p.add_argument("--baseline", default=None, help="baseline memory (default: initial)")
    p.add_argument("--top", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plotdata", help="emit CSV bundles for plots")
    p.add_argument("--train-log", dest="train_log", default=None)
    p.add_argument("--truncation", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StateKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
