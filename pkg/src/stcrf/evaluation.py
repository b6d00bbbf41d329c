"""Relationship detection, tagging and recognition metrics.

Detection ranks scored relation instances per video and counts a prediction
as correct when its triplet matches a not-yet-matched ground-truth instance
(and, when ``localized``, both subject and object trajectories overlap it
with vIoU above the threshold).  Recall@K and max-precision-interpolated AP
are computed per video and averaged over videos that have ground truth.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Boxes ``(x1, y1, x2, y2)`` on the contiguous frames ``start_frame, start_frame+1, ...``."""

    start_frame: int
    boxes: np.ndarray

    def __post_init__(self):
        b = np.array(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(b) == 0:
            raise EvalError("trajectory needs at least one box")
        if np.any(b[:, 0] >= b[:, 2]) or np.any(b[:, 1] >= b[:, 3]):
            raise EvalError("degenerate box: need x1 < x2 and y1 < y2")
        b.setflags(write=False)
        object.__setattr__(self, "boxes", b)
        object.__setattr__(self, "start_frame", int(self.start_frame))

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes)

    def areas(self) -> np.ndarray:
        b = self.boxes
        return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    def restrict(self, lo: int, hi: int) -> "Trajectory":
        lo, hi = max(lo, self.start_frame), min(hi, self.end_frame)
        if lo >= hi:
            raise EvalError("restriction leaves no frames")
        return Trajectory(lo, self.boxes[lo - self.start_frame:hi - self.start_frame])

    def extend(self, later: "Trajectory") -> "Trajectory":
        """Append the frames of ``later`` past this trajectory's end."""
        if later.start_frame > self.end_frame:
            raise EvalError("trajectories leave a gap")
        tail = later.boxes[max(0, self.end_frame - later.start_frame):]
        return Trajectory(self.start_frame, np.concatenate([self.boxes, tail]))

    def to_rows(self) -> list[list[float]]:
        return [[self.start_frame + i, *map(float, b)] for i, b in enumerate(self.boxes)]

    @classmethod
    def from_rows(cls, rows) -> "Trajectory":
        rows = sorted(rows, key=lambda r: r[0])
        frames = [int(r[0]) for r in rows]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise EvalError("trajectory frames must be contiguous")
        return cls(frames[0], np.array([r[1:5] for r in rows], dtype=np.float64))


def viou(a: Trajectory, b: Trajectory) -> float:
    """Voluminal IoU; frames covered by only one trajectory add to the union."""
    lo, hi = max(a.start_frame, b.start_frame), min(a.end_frame, b.end_frame)
    union = a.areas().sum() + b.areas().sum()
    inter = 0.0
    if lo < hi:
        ba = a.boxes[lo - a.start_frame:hi - a.start_frame]
        bb = b.boxes[lo - b.start_frame:hi - b.start_frame]
        w = np.clip(np.minimum(ba[:, 2], bb[:, 2]) - np.maximum(ba[:, 0], bb[:, 0]), 0, None)
        h = np.clip(np.minimum(ba[:, 3], bb[:, 3]) - np.maximum(ba[:, 1], bb[:, 1]), 0, None)
        inter = float((w * h).sum())
    union = float(union) - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


@dataclass(frozen=True)
class RelationInstance:
    triplet: tuple[int, ...]
    score: float = 1.0
    span: tuple[int, int] | None = None
    subject_traj: Trajectory | None = None
    object_traj: Trajectory | None = None
    video: str | None = None
    members: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "triplet", tuple(int(x) for x in self.triplet))
        if self.span is not None:
            object.__setattr__(self, "span", (int(self.span[0]), int(self.span[1])))
        if not math.isfinite(self.score):
            raise EvalError("score must be finite")


# ---------------------------------------------------------------------------
# association


def _overlap_viou(a: Trajectory, b: Trajectory, lo: int, hi: int) -> float:
    return viou(a.restrict(lo, hi), b.restrict(lo, hi))


def greedy_associate(chunks: Sequence[Sequence[RelationInstance]], threshold: float = 0.5
                     ) -> list[RelationInstance]:
    """Link chunk-level relation instances into video-level ones.

    An instance of chunk ``i`` extends a track last extended in chunk
    ``i - 1`` when the triplets agree and both subject and object vIoU over
    the shared frames exceed ``threshold``.  Instances are visited in
    descending score; each track takes at most one instance per chunk.
    Merged scores are the mean of the member scores; ``members`` lists the
    ``(chunk, position)`` of every merged instance.
    """
    prev_start = None
    for i, chunk in enumerate(chunks):
        for inst in chunk:
            if inst.span is None or inst.subject_traj is None or inst.object_traj is None:
                raise EvalError("association needs spans and trajectories")
        if chunk:
            start = min(inst.span[0] for inst in chunk)
            if prev_start is not None and start <= prev_start:
                raise EvalError("unordered chunks")
            prev_start = start

    tracks: list[dict] = []
    for i, chunk in enumerate(chunks):
        active = [tr for tr in tracks if tr["last"] == i - 1]
        taken = set()
        order = sorted(range(len(chunk)), key=lambda j: -chunk[j].score)
        for j in order:
            inst = chunk[j]
            best, best_ov = None, threshold
            for n, tr in enumerate(active):
                if n in taken or tr["triplet"] != inst.triplet:
                    continue
                lo, hi = max(tr["span"][0], inst.span[0]), min(tr["span"][1], inst.span[1])
                lo = max(lo, tr["straj"].start_frame, inst.subject_traj.start_frame,
                         tr["otraj"].start_frame, inst.object_traj.start_frame)
                hi = min(hi, tr["straj"].end_frame, inst.subject_traj.end_frame,
                         tr["otraj"].end_frame, inst.object_traj.end_frame)
                if lo >= hi:
                    continue
                sv = _overlap_viou(tr["straj"], inst.subject_traj, lo, hi)
                ov = _overlap_viou(tr["otraj"], inst.object_traj, lo, hi)
                if sv > threshold and ov > threshold and min(sv, ov) > best_ov:
                    best, best_ov = n, min(sv, ov)
            if best is None:
                tracks.append({"triplet": inst.triplet, "scores": [inst.score],
                               "span": list(inst.span), "straj": inst.subject_traj,
                               "otraj": inst.object_traj, "last": i, "members": [(i, j)],
                               "video": inst.video})
            else:
                taken.add(best)
                tr = active[best]
                tr["scores"].append(inst.score)
                tr["span"] = [min(tr["span"][0], inst.span[0]), max(tr["span"][1], inst.span[1])]
                tr["straj"] = tr["straj"].extend(inst.subject_traj)
                tr["otraj"] = tr["otraj"].extend(inst.object_traj)
                tr["last"] = i
                tr["members"].append((i, j))
    return [RelationInstance(tr["triplet"], float(np.mean(tr["scores"])), tuple(tr["span"]),
                             tr["straj"], tr["otraj"], tr["video"], tuple(tr["members"]))
            for tr in tracks]


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    precision_at: dict[int, float] = field(default_factory=dict)
    map: float | None = None
    acc_at_1: dict[str, float] = field(default_factory=dict)
    per_video: dict[str, dict] = field(default_factory=dict)

    def merge(self, other: "MetricReport") -> "MetricReport":
        per_video = {k: dict(v) for k, v in self.per_video.items()}
        for vid, vals in other.per_video.items():
            per_video.setdefault(vid, {}).update(vals)
        return MetricReport({**self.recall_at, **other.recall_at},
                            {**self.precision_at, **other.precision_at},
                            other.map if other.map is not None else self.map,
                            {**self.acc_at_1, **other.acc_at_1}, per_video)

    def to_dict(self) -> dict:
        def clean(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
        return {
            "recall_at": {str(k): clean(v) for k, v in sorted(self.recall_at.items())},
            "precision_at": {str(k): clean(v) for k, v in sorted(self.precision_at.items())},
            "map": clean(self.map),
            "acc_at_1": {k: clean(v) for k, v in self.acc_at_1.items()},
            "per_video": {vid: {k: clean(v) for k, v in vals.items()}
                          for vid, vals in sorted(self.per_video.items())},
        }


def _ranked(preds: Sequence[RelationInstance]) -> list[RelationInstance]:
    return sorted(preds, key=lambda p: -p.score)


def _match(ranked, gt, localized, viou_thresh):
    """True-positive flag for each ranked prediction (greedy one-to-one)."""
    matched = [False] * len(gt)
    flags = []
    for p in ranked:
        best, best_ov = -1, -1.0
        for j, g in enumerate(gt):
            if matched[j] or g.triplet != p.triplet:
                continue
            if localized:
                if None in (p.subject_traj, p.object_traj, g.subject_traj, g.object_traj):
                    raise EvalError("localized detection needs trajectories")
                ov = min(viou(p.subject_traj, g.subject_traj), viou(p.object_traj, g.object_traj))
                if ov <= viou_thresh:
                    continue
            else:
                ov = 0.0
            if ov > best_ov:
                best, best_ov = j, ov
        if best >= 0:
            matched[best] = True
        flags.append(best >= 0)
    return np.array(flags, dtype=bool)


def average_precision(flags: np.ndarray, num_gt: int) -> float:
    """Area under the max-precision-interpolated precision/recall curve."""
    if num_gt == 0:
        return float("nan")
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(flags)
    rec = tp / num_gt
    prec = tp / np.arange(1, len(flags) + 1)
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def _nanmean(values):
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else float("nan")


def detection_metrics(preds: Mapping[str, Sequence[RelationInstance]],
                      gt: Mapping[str, Sequence[RelationInstance]],
                      Ks: Iterable[int] = (50, 100), viou_thresh: float = 0.5,
                      localized: bool = True, pooled: bool = False) -> MetricReport:
    """Recall@K and mAP over videos.

    Videos without ground truth are skipped.  With ``pooled`` the AP is
    computed once over the global ranking of all predictions instead of
    averaged per video.  A K larger than the prediction list uses the
    whole list.
    """
    Ks = sorted(set(int(k) for k in Ks))
    report = MetricReport()
    recalls = {k: [] for k in Ks}
    aps = []
    pooled_rows = []
    total_gt = 0
    for vid in sorted(gt):
        g = list(gt[vid])
        if not g:
            continue
        total_gt += len(g)
        ranked = _ranked(preds.get(vid, []))
        flags = _match(ranked, g, localized, viou_thresh)
        row = {}
        for k in Ks:
            r = float(flags[:k].sum()) / len(g)
            recalls[k].append(r)
            row[f"recall@{k}"] = r
        ap = average_precision(flags, len(g))
        aps.append(ap)
        row["ap"] = ap
        report.per_video[vid] = row
        pooled_rows.extend((p.score, bool(f)) for p, f in zip(ranked, flags))
    report.recall_at = {k: _nanmean(recalls[k]) for k in Ks}
    if pooled:
        pooled_rows.sort(key=lambda r: -r[0])
        flags = np.array([f for _, f in pooled_rows], dtype=bool)
        report.map = average_precision(flags, total_gt) if total_gt else float("nan")
    else:
        report.map = _nanmean(aps)
    return report


def _dedup_triplets(preds: Sequence[RelationInstance]) -> list[tuple[int, ...]]:
    best: dict[tuple, float] = {}
    first: dict[tuple, int] = {}
    for i, p in enumerate(preds):
        if p.triplet not in best or p.score > best[p.triplet]:
            best[p.triplet] = p.score
        first.setdefault(p.triplet, i)
    return sorted(best, key=lambda t: (-best[t], first[t]))


def tagging_metrics(preds: Mapping[str, Sequence[RelationInstance]],
                    gt: Mapping[str, Sequence[RelationInstance]],
                    Ks: Iterable[int] = (1, 5, 10)) -> MetricReport:
    """Precision@K of the top-K distinct predicted triplets per video.

    The denominator is always ``K``, even when fewer triplets are predicted.
    """
    Ks = sorted(set(int(k) for k in Ks))
    report = MetricReport()
    values = {k: [] for k in Ks}
    for vid in sorted(gt):
        truth = {g.triplet for g in gt[vid]}
        if not truth:
            continue
        ranked = _dedup_triplets(preds.get(vid, []))
        row = {}
        for k in Ks:
            v = sum(1 for t in ranked[:k] if t in truth) / k
            values[k].append(v)
            row[f"precision@{k}"] = v
        report.per_video[vid] = row
    report.precision_at = {k: _nanmean(values[k]) for k in Ks}
    return report


def recognition_metrics(pred, gold, names: Sequence[str] | None = None) -> MetricReport:
    """Top-1 accuracy per entity column and for whole rows (``relationship``)."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape or pred.ndim != 2:
        raise EvalError("predictions and gold must be matching (n, K) arrays")
    K = pred.shape[1]
    names = list(names) if names is not None else [f"entity{k}" for k in range(K)]
    if len(names) != K:
        raise EvalError("one name per entity column")
    if len(pred) == 0:
        return MetricReport(acc_at_1={n: float("nan") for n in [*names, "relationship"]})
    hit = pred == gold
    acc = {n: float(hit[:, k].mean()) for k, n in enumerate(names)}
    acc["relationship"] = float(np.all(hit, axis=1).mean())
    return MetricReport(acc_at_1=acc)


def zero_shot_triplets(train_triplets: Iterable, eval_triplets: Iterable) -> set:
    return {tuple(t) for t in eval_triplets} - {tuple(t) for t in train_triplets}


def zero_shot_split(train_triplets: Iterable, gt: Mapping[str, Sequence[RelationInstance]]
                    ) -> dict[str, list[RelationInstance]]:
    """Keep only ground-truth instances whose triplet never occurs in training."""
    train = {tuple(t) for t in train_triplets}
    out = {vid: [g for g in insts if g.triplet not in train] for vid, insts in gt.items()}
    if not any(out.values()):
        warnings.warn("zero-shot split is empty; metrics are undefined", RuntimeWarning, stacklevel=2)
    return out
