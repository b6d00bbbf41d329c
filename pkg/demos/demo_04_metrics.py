"""
Relation detection metrics
==========================

A predicted relation counts as a hit when its triplet matches an unused
ground-truth relation and both subject and object trajectories overlap it
with vIoU above 0.5.  Long videos are scored chunk by chunk and linked
back together greedily.
"""

import numpy as np

from stcrf import RelationInstance, Trajectory, chunk_video, detection_metrics, greedy_associate, viou


def traj(start, n, x):
    return Trajectory(start, np.tile([x, 0.0, x + 10.0, 10.0], (n, 1)))


print("chunks of a 75 frame video:", [c.to_list() for c in chunk_video(75, 30, 15)])

a, b = traj(0, 10, 0.0), traj(0, 10, 5.0)
print(f"vIoU of two half-shifted boxes: {viou(a, b):.3f}")

# the same relation seen in two overlapping chunks becomes one track
first = RelationInstance((1, 4, 2), 0.9, (0, 30), traj(0, 30, 0.0), traj(0, 30, 20.0), "v")
second = RelationInstance((1, 4, 2), 0.7, (15, 45), traj(15, 30, 0.0), traj(15, 30, 20.0), "v")
(track,) = greedy_associate([[first], [second]])
print("merged span", track.span, "score", track.score, "members", track.members)

# a ranked list [hit, miss, hit] over two gold relations
box = traj(0, 1, 0.0)
gt = {"v": [RelationInstance((0, 0, 0), 1, None, box, box), RelationInstance((1, 1, 1), 1, None, box, box)]}
preds = {"v": [RelationInstance(t, s, None, box, box) for t, s in
               (((0, 0, 0), 0.9), ((0, 1, 0), 0.8), ((1, 1, 1), 0.7))]}
report = detection_metrics(preds, gt, Ks=(1, 2, 3))
print("recall@K", report.recall_at, "AP", report.map)
