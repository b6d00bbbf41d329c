"""Slow reference implementations used to cross-check the metric code.

Everything here is written from the metric definitions with plain Python
loops and exact rational arithmetic, sharing no code with
:mod:`stcrf.evaluation`.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def viou_bruteforce(a, b) -> Fraction:
    boxes_a = {a.start_frame + i: tuple(Fraction(float(v)) for v in box) for i, box in enumerate(a.boxes)}
    boxes_b = {b.start_frame + i: tuple(Fraction(float(v)) for v in box) for i, box in enumerate(b.boxes)}
    inter = Fraction(0)
    union = Fraction(0)
    for f in sorted(set(boxes_a) | set(boxes_b)):
        ba, bb = boxes_a.get(f), boxes_b.get(f)
        area_a = (ba[2] - ba[0]) * (ba[3] - ba[1]) if ba else Fraction(0)
        area_b = (bb[2] - bb[0]) * (bb[3] - bb[1]) if bb else Fraction(0)
        i = Fraction(0)
        if ba and bb:
            w = min(ba[2], bb[2]) - max(ba[0], bb[0])
            h = min(ba[3], bb[3]) - max(ba[1], bb[1])
            if w > 0 and h > 0:
                i = w * h
        inter += i
        union += area_a + area_b - i
    return inter / union if union > 0 else Fraction(0)


def _tp_flags(preds, gt, localized, thresh):
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    used = set()
    flags = []
    for i in order:
        p = preds[i]
        cands = []
        for j, g in enumerate(gt):
            if j in used or g.triplet != p.triplet:
                continue
            if localized:
                s = viou_bruteforce(p.subject_traj, g.subject_traj)
                o = viou_bruteforce(p.object_traj, g.object_traj)
                if not (s > thresh and o > thresh):
                    continue
                cands.append((-min(s, o), j))
            else:
                cands.append((0, j))
        if cands:
            used.add(min(cands)[1])
            flags.append(True)
        else:
            flags.append(False)
    return flags


def recall_at_k_bruteforce(preds, gt, k, localized=True, thresh=0.5) -> Fraction:
    flags = _tp_flags(preds, gt, localized, thresh)
    return Fraction(sum(flags[:k]), len(gt))


def ap_bruteforce(preds, gt, localized=True, thresh=0.5) -> Fraction:
    """Mean over recall levels j/n of the best precision reached at recall >= j/n."""
    flags = _tp_flags(preds, gt, localized, thresh)
    n = len(gt)
    points = []
    hits = 0
    for rank, f in enumerate(flags, 1):
        hits += f
        points.append((Fraction(hits, n), Fraction(hits, rank)))
    total = Fraction(0)
    for j in range(1, n + 1):
        level = Fraction(j, n)
        reached = [p for r, p in points if r >= level]
        total += max(reached) if reached else Fraction(0)
    return total / n


def precision_at_k_bruteforce(preds, gt, k) -> Fraction:
    truth = {g.triplet for g in gt}
    best = {}
    for i, p in enumerate(preds):
        if p.triplet not in best or p.score > best[p.triplet][0]:
            best[p.triplet] = (p.score, best.get(p.triplet, (None, i))[1])
    ranked = sorted(best, key=lambda t: (-best[t][0], best[t][1]))
    return Fraction(sum(1 for t in ranked[:k] if t in truth), k)


def accuracy_bruteforce(pred, gold) -> list[Fraction]:
    """Per-column accuracies followed by the all-columns accuracy."""
    pred = np.asarray(pred).tolist()
    gold = np.asarray(gold).tolist()
    n = len(pred)
    K = len(pred[0])
    out = [Fraction(sum(1 for i in range(n) if pred[i][k] == gold[i][k]), n) for k in range(K)]
    out.append(Fraction(sum(1 for i in range(n) if pred[i] == gold[i]), n))
    return out
