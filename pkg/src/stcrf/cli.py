"""Command-line driver: ``stcrf {train,infer,eval,synth,verify}``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 verification failure.

A run configuration is a JSON object; flags override its fields::

    {
      "mode": "gsteg", "rank": 2, "bandwidth": 10.0, "hidden": [],
      "train": {"optimizer": "adaptive_moment", "learning_rate": 0.01, "epochs": 30},
      "data": {"train": "train.jsonl"},
      "synth": {"label_sizes": [3, 3, 3], "num_steps": 2, "num_instances": 2000},
      "seed": 0, "out": "run"
    }

Training reads ``data.train`` when present and otherwise samples the
``synth`` block.  Relative paths resolve against the config file.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .energy import EnergyError, Mode, init_model
from .evaluation import (EvalError, MetricReport, RelationInstance, detection_metrics,
                         recognition_metrics, tagging_metrics, zero_shot_split)
from .graph import GraphError
from .inference import PARALLEL, SEQUENTIAL, batch_marginals
from .learning import TrainConfig, TrainingError, train
from .seeding import substream
from .synth import SynthConfig, generate_dataset, synth_spec
from .verify import SUITES, run_suite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

MODEL_KEYS = {"mode", "rank", "bandwidth", "hidden", "pairwise_scale", "dropout"}
TOP_KEYS = MODEL_KEYS | {"train", "data", "synth", "seed", "out"}
SYNTH_KEYS = {"label_sizes", "num_steps", "num_contexts", "context_strength", "noise_std",
              "num_instances", "coupling", "bandwidth", "structure_seed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> tuple[dict, Path]:
    """Parse a config file; errors carry the file name and line."""
    path = Path(path)
    if not path.is_file():
        raise io.DataError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise io.DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise io.DataError(f"{path}:1: config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise io.DataError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg, path.parent


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    cfg["train"] = dict(cfg.get("train", {}))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        cfg["mode"] = args.mode
    if getattr(args, "passes", None) is not None:
        cfg["train"]["num_passes"] = args.passes
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    cfg.setdefault("seed", 0)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    block = cfg.get("train", {})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(block) - known
    if unknown:
        raise io.DataError(f"unknown train keys {sorted(unknown)}")
    return TrainConfig(**{**block, "seed": int(cfg["seed"])})


def synth_config(block: dict, seed: int) -> SynthConfig:
    unknown = set(block) - SYNTH_KEYS
    if unknown:
        raise io.DataError(f"unknown synth keys {sorted(unknown)}")
    block = dict(block)
    C = int(block.pop("num_contexts", 2))
    spec = synth_spec(block.pop("label_sizes", (3, 3, 3)), int(block.pop("num_steps", 2)), C)
    return SynthConfig(spec, num_contexts=C, seed=seed, **block)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _require(path: Path) -> Path:
    if not path.is_file():
        raise io.DataError(f"input file not found: {path}")
    return path


def _out_dir(cfg_out, default="out") -> Path:
    out = Path(cfg_out if cfg_out is not None else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg, base = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    seed = int(cfg["seed"])
    tcfg = train_config(cfg)
    data = cfg.get("data", {})
    if "train" in data:
        dataset = io.read_instances(_require(_resolve(base, data["train"])))
    elif "synth" in cfg:
        dataset = generate_dataset(synth_config(cfg["synth"], seed))
    else:
        raise io.DataError("config needs data.train or a synth block")
    if not dataset:
        raise io.DataError("training set is empty")
    spec = dataset[0].spec
    model = init_model(spec, cfg.get("mode", "gsteg"), rank=int(cfg.get("rank", 2)),
                       bandwidth=float(cfg.get("bandwidth", 10.0)), hidden=cfg.get("hidden", ()),
                       pairwise_scale=float(cfg.get("pairwise_scale", 1.0)),
                       dropout=float(cfg.get("dropout", 0.0)), seed=substream(seed, "init"))
    out = _out_dir(cfg.get("out"))
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log:
        result = train(model, dataset, tcfg, lambda rec: log.write(io.dumps_line(rec) + "\n"))
    io.save_checkpoint(out / "checkpoint.json", result.model, result.optimizer_state)
    (out / "losses.json").write_text(io.dumps_line(result.epoch_losses) + "\n", encoding="utf-8")
    print(f"trained {result.model.mode.value} for {tcfg.epochs} epochs; "
          f"final loss {result.epoch_losses[-1]:.6f}; wrote {out / 'checkpoint.json'}")
    return EXIT_OK


def _relations_from(inst, q, labels, index) -> list[RelationInstance]:
    video = str(inst.meta.get("video", index))
    rels = []
    for t in range(labels.shape[0]):
        score = float(np.prod([q.node(t, k)[labels[t, k]] for k in range(labels.shape[1])]))
        rels.append(RelationInstance(tuple(int(x) for x in labels[t]), score, (t, t + 1), None,
                                     None, video))
    return rels


def cmd_infer(args) -> int:
    model, _ = io.load_checkpoint(_require(Path(args.checkpoint)))
    instances = io.read_instances(_require(Path(args.instances)))
    for i, inst in enumerate(instances):
        s, m = inst.spec, model.spec
        if (s.num_streams, s.label_sizes, s.feature_dims) != (m.num_streams, m.label_sizes, m.feature_dims):
            raise io.DataError(f"{args.instances}:{i + 1}: spec mismatch between checkpoint and instance")
    passes = args.passes if args.passes is not None else 3
    qs = batch_marginals(model, instances, passes, args.schedule, args.damping)
    out = _out_dir(args.out)
    relations = []
    with open(out / "marginals.jsonl", "w", encoding="utf-8") as fm, \
            open(out / "labels.jsonl", "w", encoding="utf-8") as fl:
        for i, (inst, q) in enumerate(zip(instances, qs)):
            labels = np.argmax(q.values, axis=2)
            fm.write(io.dumps_line(q.to_list()) + "\n")
            fl.write(io.dumps_line({"labels": labels, "meta": inst.meta}) + "\n")
            relations.extend(_relations_from(inst, q, labels, i))
    if args.relations:
        io.write_relations(out / "relations.jsonl", relations)
    print(f"inferred {len(instances)} instances with {passes} passes; wrote {out}")
    return EXIT_OK


def read_labels(path) -> list[np.ndarray]:
    out = []
    for lineno, d in io.read_jsonl(path):
        try:
            out.append(np.asarray(d["labels"] if isinstance(d, dict) else d, dtype=np.int64))
        except (KeyError, TypeError, ValueError) as exc:
            raise io.DataError(f"{path}:{lineno}: {exc}") from None
    return out


def _entity_names(K):
    return ["subject", "predicate", "object"] if K == 3 else [f"entity{k}" for k in range(K)]


def _recognize(args, train_triplets) -> MetricReport:
    pred = read_labels(_require(Path(args.predictions)))
    gold_insts = io.read_instances(_require(Path(args.ground_truth)))
    if len(pred) != len(gold_insts):
        raise io.DataError("prediction and ground-truth files differ in length")
    prow, grow = [], []
    for i, (p, inst) in enumerate(zip(pred, gold_insts)):
        if inst.gold is None:
            raise io.DataError(f"{args.ground_truth}:{i + 1}: instance has no gold labels")
        if p.shape != inst.gold.labels.shape:
            raise io.DataError(f"{args.predictions}:{i + 1}: label shape does not match instance")
        prow.extend(p.tolist())
        grow.extend(inst.gold.labels.tolist())
    if train_triplets is not None:
        keep = [j for j, g in enumerate(grow) if tuple(g) not in train_triplets]
        if not keep:
            warnings.warn("zero-shot split is empty; metrics are undefined", RuntimeWarning)
        prow = [prow[j] for j in keep]
        grow = [grow[j] for j in keep]
    K = gold_insts[0].spec.num_streams if gold_insts else 3
    if not grow:
        return recognition_metrics(np.zeros((0, K), dtype=int), np.zeros((0, K), dtype=int),
                                   _entity_names(K))
    return recognition_metrics(prow, grow, _entity_names(K))


def cmd_eval(args) -> int:
    train_triplets = None
    if args.zero_shot is not None:
        train_triplets = io.read_triplets(_require(Path(args.zero_shot)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.task == "recognize":
            report = _recognize(args, train_triplets)
        else:
            preds = io.read_relations(_require(Path(args.predictions)))
            gt = io.read_relations(_require(Path(args.ground_truth)))
            if train_triplets is not None:
                gt = zero_shot_split(train_triplets, gt)
            if args.task == "detect":
                localized = all(g.subject_traj is not None and g.object_traj is not None
                                for rels in gt.values() for g in rels)
                report = detection_metrics(preds, gt, Ks=args.k or (50, 100),
                                           localized=localized, pooled=args.pooled_map)
            else:
                report = tagging_metrics(preds, gt, Ks=args.k or (1, 5, 10))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    text = io.dumps_report(report)
    if args.out is not None:
        out = _out_dir(args.out)
        (out / "report.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.config is not None:
        cfg, _ = load_config(args.config)
    else:
        cfg = {}
    cfg = _apply_overrides(cfg, args)
    scfg = synth_config(cfg.get("synth", {}), int(cfg["seed"]))
    if args.num_instances is not None:
        scfg = SynthConfig(**{**{f.name: getattr(scfg, f.name) for f in fields(SynthConfig)},
                              "num_instances": args.num_instances})
    out = _out_dir(cfg.get("out"))
    name = args.name or "instances.jsonl"
    io.write_instances(out / name, generate_dataset(scfg))
    print(f"wrote {scfg.num_instances} instances to {out / name}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_suite(args.suite, seed, schedule=args.schedule)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{args.suite}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stcrf", description="Gated spatio-temporal CRF experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    modes = [m.value for m in Mode]

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (checkpoint, logs)")
    p.add_argument("--passes", type=int, help="mean-field passes to unroll")
    p.add_argument("--mode", choices=modes)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="marginals and labels for an instance file")
    p.add_argument("checkpoint")
    p.add_argument("instances")
    p.add_argument("--out", help="output directory")
    p.add_argument("--passes", type=int)
    p.add_argument("--schedule", choices=[SEQUENTIAL, PARALLEL], default=SEQUENTIAL)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--relations", action="store_true",
                   help="also write one scored relation per (instance, step)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("task", choices=["detect", "tag", "recognize"])
    p.add_argument("predictions", help="relation file, or labels.jsonl for recognize")
    p.add_argument("ground_truth", help="relation file, or instance file for recognize")
    p.add_argument("--zero-shot", metavar="PATH", help="training triplets (JSON list or relation file)")
    p.add_argument("--pooled-map", action="store_true", help="AP over one pooled ranking")
    p.add_argument("--k", type=int, nargs="+", help="cutoffs for R@K or P@K")
    p.add_argument("--out", help="also write report.json here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="sample a planted synthetic instance file")
    p.add_argument("--config", help="JSON config with a synth block")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--num-instances", type=int)
    p.add_argument("--name", help="output file name (default instances.jsonl)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run an invariant suite")
    p.add_argument("suite", choices=SUITES)
    p.add_argument("--seed", type=int)
    p.add_argument("--schedule", choices=[SEQUENTIAL, PARALLEL], default=SEQUENTIAL)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (io.DataError, GraphError, EnergyError, EvalError, TrainingError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
