"""Command-line entry point.

Subcommands: build-graph, train-embed, train, eval, ablate. All outputs
embed the config digest; eval refuses a checkpoint whose digest does not
match the supplied config. Exit codes: 0 success, 1 usage, 2
input/validation, 3 numeric fault, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import evaluation, pipeline
from .config import ExperimentConfig, load_config
from .errors import (
    ArtifactMismatch,
    ConfigError,
    ContractError,
    DegenerateDataError,
    EmptyGraphError,
    GvseError,
    NumericFault,
    SplitError,
    ValidationError,
)
from .model import load_checkpoint, save_checkpoint
from .tensor import Tensor
from .train import TrainConfig, train_model

logger = logging.getLogger("gvse")

_INPUT_ERRORS = (ConfigError, ValidationError, DegenerateDataError, EmptyGraphError,
                 SplitError, ContractError)

ABLATION_AXES = {
    "wiring": [("wiring", v) for v in ("each-block", "each-stage", "last-block")],
    "graph-type": [("graph_type", v) for v in ("attribute", "category")],
    "fusion": [("fusion", v) for v in ("concat", "sum")],
    "delta": [("delta", v) for v in (0.25, 0.50, 0.75)],
    "gamma": [("gamma", v) for v in (0.0, 0.5, 1.0)],
    "gvse-on-off": [("gvse", True), ("gvse", False)],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1 for usage
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("GVSE_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _train_config(cfg: ExperimentConfig, seed_override=None) -> TrainConfig:
    t = cfg.train
    seed = t.seed if seed_override is None else seed_override
    return TrainConfig(lr=t.lr, batch_size=t.batch, epochs=t.epochs, gamma=t.gamma,
                       alpha=t.alpha, transductive=t.transductive,
                       bias_weight=t.bias_weight, seed=seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build_graph(cfg: ExperimentConfig, outdir: str) -> int:
    dataset = pipeline.build_dataset(cfg)
    kg = pipeline.build_graph(cfg, dataset.cam)
    degrees = kg.edges.sum(axis=1)
    hist = np.bincount(degrees, minlength=1)
    payload = json.loads(kg.to_json())
    payload["stats"] = {
        "vertices": kg.m,
        "edges": kg.num_edges,
        "delta": kg.delta,
        "degree_histogram": hist.tolist(),
    }
    payload["config_digest"] = cfg.digest
    path = os.path.join(outdir, "graph.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if kg.num_edges == 0:
        logger.warning("graph has no edges at delta=%s", kg.delta)
    print(f"build-graph: {kg.m} vertices, {kg.num_edges} edges, delta={kg.delta} -> {path}")
    return 0


def cmd_train_embed(cfg: ExperimentConfig, outdir: str) -> int:
    dataset = pipeline.build_dataset(cfg)
    table = pipeline.build_embedding(cfg, dataset.cam)
    from . import embed as embed_mod
    from .graph import binarize_attributes

    membership = binarize_attributes(dataset.cam, cfg.graph.binarize)
    ppmi = embed_mod.build_ppmi(embed_mod.AttributeCorpus.from_membership(membership))
    err = float(np.linalg.norm(ppmi - table.vectors @ table.vectors.T))
    path = os.path.join(outdir, "embedding.csv")
    embed_mod.write_embedding_csv(path, table)
    with open(os.path.join(outdir, "embedding_meta.json"), "w") as fh:
        json.dump({"d": table.dim, "m": table.m, "reconstruction_error": err,
                   "config_digest": cfg.digest}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("PPMI reconstruction error at d=%d: %.3e", table.dim, err)
    print(f"train-embed: {table.m}x{table.dim} table, reconstruction error {err:.3e} -> {path}")
    return 0


def cmd_train(cfg: ExperimentConfig, outdir: str, seed_override=None) -> int:
    dataset = pipeline.build_dataset(cfg)
    kg = pipeline.build_graph(cfg, dataset.cam)
    dataset.word_table = pipeline.build_embedding(cfg, dataset.cam)
    model = pipeline.build_model(cfg, dataset, kg)
    tc = _train_config(cfg, seed_override)
    reports = train_model(model, dataset, tc)
    ckpt = os.path.join(outdir, "checkpoint.bin")
    save_checkpoint(model, ckpt, cfg.digest, cfg.to_dict())
    log_path = os.path.join(outdir, "train_log.jsonl")
    with open(log_path, "w") as fh:
        fh.write(json.dumps({"config_digest": cfg.digest}) + "\n")
        for r in reports:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    if reports:
        last = reports[-1]
        print(f"train: {len(reports)} epochs, final total={last['total']:.4f} "
              f"L_A={last['L_A']:.4f} L_LT={last['L_LT']:.4f} L_W={last['L_W']:.4f} -> {ckpt}")
    else:
        print(f"train: 0 epochs, checkpoint is the initialization -> {ckpt}")
    return 0


def _evaluate(cfg: ExperimentConfig, checkpoint: str, setting: str):
    dataset = pipeline.build_dataset(cfg)
    kg = pipeline.build_graph(cfg, dataset.cam)
    dataset.word_table = pipeline.build_embedding(cfg, dataset.cam)
    model = pipeline.build_model(cfg, dataset, kg)
    load_checkpoint(model, checkpoint, cfg.digest)

    seen_ids = np.asarray(dataset.split.seen)
    unseen_ids = np.asarray(dataset.split.unseen)
    test_mask = (np.isin(dataset.labels, unseen_ids) if setting == "czsl"
                 else np.ones(len(dataset.labels), dtype=bool))
    test_idx = np.where(test_mask)[0]
    space = unseen_ids if setting == "czsl" else np.arange(dataset.num_classes)

    # Decision rule: attribute scores only. The latent-prototype refinement is
    # available in the library, but on the synthetic benchmark the ridge-derived
    # unseen prototypes are noisy enough to hurt transfer, so the CLI sticks to
    # the plain attribute argmax.
    phi_x = np.stack([model.forward(Tensor(dataset.images[i])).phi.numpy()
                      for i in test_idx])
    preds = evaluation.predict_czsl(phi_x, dataset.cam.values, space)

    labels = dataset.labels[test_idx]
    if setting == "czsl":
        return evaluation.czsl_metrics(preds, labels, unseen_ids)
    return evaluation.gzsl_metrics(preds, labels, seen_ids, unseen_ids)


def cmd_eval(cfg: ExperimentConfig, checkpoint: str, setting: str, outdir: str) -> int:
    metrics = _evaluate(cfg, checkpoint, setting)
    report = metrics.to_dict()
    report["split"] = "default"
    report["config_digest"] = cfg.digest
    path = os.path.join(outdir, f"metrics_{setting}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if setting == "czsl":
        print(f"eval czsl: ACC={metrics.acc:.4f} -> {path}")
    else:
        print(f"eval gzsl: ACC_S={metrics.acc_s:.4f} ACC_U={metrics.acc_u:.4f} H={metrics.h:.4f} -> {path}")
    return 0


def _apply_arm(cfg_dict: dict, knob: str, value) -> dict:
    import copy

    out = copy.deepcopy(cfg_dict)
    if knob == "wiring":
        out["model"]["wiring"] = value
    elif knob == "fusion":
        out["model"]["fusion"] = value
    elif knob == "delta":
        out["graph"]["delta"] = value
    elif knob == "gamma":
        out["train"]["gamma"] = value
    elif knob == "graph_type":
        out["graph"]["type"] = value
    elif knob == "gvse":
        out["model"]["gvse_enabled"] = bool(value)
    else:
        raise ConfigError(f"unknown ablation knob {knob!r}")
    return out


def cmd_ablate(cfg: ExperimentConfig, axis: str, outdir: str, seed_override=None) -> int:
    from .config import parse_config

    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    base = cfg.to_dict()
    rows = []
    for knob, value in ABLATION_AXES[axis]:
        arm = f"{knob}={value}"
        t0 = time.perf_counter()
        try:
            arm_cfg = parse_config(_apply_arm(base, knob, value))
            armdir = os.path.join(outdir, f"arm_{axis}_{str(value).replace(' ', '')}")
            os.makedirs(armdir, exist_ok=True)
            cmd_train(arm_cfg, armdir, seed_override)
            czsl = _evaluate(arm_cfg, os.path.join(armdir, "checkpoint.bin"), "czsl")
            gzsl = _evaluate(arm_cfg, os.path.join(armdir, "checkpoint.bin"), "gzsl")
            rows.append({"arm": arm, "acc": czsl.acc, "acc_s": gzsl.acc_s,
                         "acc_u": gzsl.acc_u, "h": gzsl.h,
                         "wall_ms": (time.perf_counter() - t0) * 1000.0, "error": ""})
        except GvseError as exc:
            logger.error("ablation arm %s failed: %s", arm, exc)
            rows.append({"arm": arm, "acc": "", "acc_s": "", "acc_u": "", "h": "",
                         "wall_ms": (time.perf_counter() - t0) * 1000.0, "error": str(exc)})
    path = os.path.join(outdir, f"ablate_{axis}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["arm", "acc", "acc_s", "acc_u", "h",
                                                "wall_ms", "error", "config_digest"])
        writer.writeheader()
        for r in rows:
            r["config_digest"] = cfg.digest
            writer.writerow(r)
    print(f"ablate {axis}: {len(rows)} arms -> {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="gvse", description="Graph-entangled visual-semantic zero-shot recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")

    common(sub.add_parser("build-graph", help="build the knowledge graph JSON"))
    common(sub.add_parser("train-embed", help="build the attribute word-embedding CSV"))
    common(sub.add_parser("train", help="train a model; writes checkpoint and log"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--setting", choices=["czsl", "gzsl"], default="czsl")
    p_abl = sub.add_parser("ablate", help="run an ablation sweep")
    common(p_abl)
    p_abl.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train.seed = args.seed
        os.makedirs(args.out, exist_ok=True)
        if args.command == "build-graph":
            return cmd_build_graph(cfg, args.out)
        if args.command == "train-embed":
            return cmd_train_embed(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.setting, args.out)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.axis, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ArtifactMismatch as exc:
        logger.error("%s", exc)
        return 4
    except NumericFault as exc:
        logger.error("%s", exc)
        return 3
    except _INPUT_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
