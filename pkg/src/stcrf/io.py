"""JSON file formats: instances, models/checkpoints, relation predictions, reports.

Floats are written with Python's shortest round-trip representation, so a
write/read cycle reproduces every value bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .energy import EnergyModel, Mode
from .evaluation import MetricReport, RelationInstance, Trajectory
from .graph import GraphError, GraphSpec, ObservationInstance, validate_instance

MODEL_SCHEMA = "stcrf.model/1"
CHECKPOINT_SCHEMA = "stcrf.checkpoint/1"


class DataError(ValueError):
    """Malformed input file; the message names the file and line."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


# ---------------------------------------------------------------------------
# instances


def instance_to_dict(inst: ObservationInstance) -> dict:
    return {
        "spec": inst.spec.to_dict(),
        "features": inst.to_nested(),
        "gold": None if inst.gold is None else inst.gold.to_list(),
        "meta": _jsonable(inst.meta),
    }


def instance_from_dict(d: dict) -> ObservationInstance:
    spec = GraphSpec.from_dict(d["spec"])
    inst = ObservationInstance.from_nested(spec, d["features"], d.get("gold"), d.get("meta") or {})
    return validate_instance(inst)


def dumps_instance(inst: ObservationInstance) -> str:
    return _dumps(instance_to_dict(inst))


def write_instances(path, instances: Iterable[ObservationInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(dumps_instance(inst) + "\n")


def read_jsonl(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def read_instances(path) -> list[ObservationInstance]:
    out = []
    for lineno, d in read_jsonl(path):
        try:
            out.append(instance_from_dict(d))
        except (GraphError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# models


def model_to_dict(model: EnergyModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "mode": model.mode.value,
        "rank": model.rank,
        "bandwidth": model.bandwidth,
        "hidden": list(model.hidden),
        "pairwise_scale": model.pairwise_scale,
        "dropout": model.dropout,
        "spec": model.spec.to_dict(),
        "params": {name: {"shape": list(p.shape), "data": p.ravel().tolist()}
                   for name, p in sorted(model.params.items())},
        "embeddings": None if model.embeddings is None else [e.tolist() for e in model.embeddings],
    }


def model_from_dict(d: dict) -> EnergyModel:
    if d.get("schema") != MODEL_SCHEMA:
        raise DataError(f"unsupported model schema {d.get('schema')!r}")
    params = {name: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for name, v in d["params"].items()}
    emb = d.get("embeddings")
    return EnergyModel(GraphSpec.from_dict(d["spec"]), Mode(d["mode"]), int(d["rank"]),
                       float(d["bandwidth"]), params, tuple(d.get("hidden", ())),
                       None if emb is None else tuple(np.array(e) for e in emb),
                       float(d.get("pairwise_scale", 1.0)), float(d.get("dropout", 0.0)))


def save_checkpoint(path, model: EnergyModel, optimizer_state: dict | None = None) -> None:
    doc = {"schema": CHECKPOINT_SCHEMA, "model": model_to_dict(model),
           "optimizer": _jsonable(optimizer_state or {})}
    Path(path).write_text(_dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[EnergyModel, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    if doc.get("schema") == MODEL_SCHEMA:
        return model_from_dict(doc), {}
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise DataError(f"{path}: unsupported checkpoint schema {doc.get('schema')!r}")
    return model_from_dict(doc["model"]), doc.get("optimizer", {})


# ---------------------------------------------------------------------------
# relations and reports


def relation_to_dict(rel: RelationInstance) -> dict:
    return {
        "video": rel.video,
        "triplet": list(rel.triplet),
        "score": float(rel.score),
        "span": None if rel.span is None else list(rel.span),
        "straj": None if rel.subject_traj is None else rel.subject_traj.to_rows(),
        "otraj": None if rel.object_traj is None else rel.object_traj.to_rows(),
    }


def relation_from_dict(d: dict) -> RelationInstance:
    straj = d.get("straj")
    otraj = d.get("otraj")
    span = d.get("span")
    return RelationInstance(
        tuple(d["triplet"]), float(d.get("score", 1.0)), None if span is None else tuple(span),
        None if straj is None else Trajectory.from_rows(straj),
        None if otraj is None else Trajectory.from_rows(otraj),
        None if d.get("video") is None else str(d["video"]),
    )


def write_relations(path, relations: Iterable[RelationInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rel in relations:
            fh.write(_dumps(relation_to_dict(rel)) + "\n")


def read_relations(path) -> dict[str, list[RelationInstance]]:
    """Relation file grouped by video id (insertion order kept per video)."""
    out: dict[str, list[RelationInstance]] = {}
    for lineno, d in read_jsonl(path):
        try:
            rel = relation_from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        out.setdefault(rel.video or "", []).append(rel)
    return out


def read_triplets(path) -> set[tuple[int, ...]]:
    """Training triplets: a JSON list of triplets, or a relation file."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return {tuple(int(x) for x in t) for t in json.loads(text)}
    return {rel.triplet for rels in read_relations(path).values() for rel in rels}


def dumps_report(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def dumps_line(obj) -> str:
    return _dumps(_jsonable(obj))
