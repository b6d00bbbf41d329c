"""
Gated pairwise energies
=======================

Every node ``(t, k)`` of the graph carries a label for entity stream ``k``
at step ``t``.  In the gated model the transition matrix between two nodes
is a rank-``r`` product whose factors are computed from the *source*
node's features, so the same stream pair can prefer different label
combinations in different videos.
"""

import numpy as np

from stcrf import GraphSpec, ObservationInstance, init_model
from stcrf.energy import pairwise_transition, temporal_kernel

# three streams (subject, predicate, object), four steps
spec = GraphSpec(num_streams=3, num_steps=4, label_sizes=(4, 5, 4), feature_dims=(6, 6, 6))
model = init_model(spec, "gsteg", rank=2, bandwidth=2.0, seed=0)
print("parameters:", model.num_parameters())

rng = np.random.default_rng(1)
inst = ObservationInstance(spec, tuple(rng.normal(size=(4, 6)) for _ in range(3)))

# same step, subject -> predicate
phi = pairwise_transition(model, inst, (0, 0), (0, 1)).values
print("spatial transition, shape", phi.shape, "rank", np.linalg.matrix_rank(phi))

# the temporal term decays with the lag through a Gaussian kernel
for lag in (1, 2, 3):
    m = pairwise_transition(model, inst, (0, 0), (lag, 1)).values
    print(f"lag {lag}: kernel {temporal_kernel(0, lag, 2.0):.3f}, |phi| max {np.abs(m).max():.3f}")

# changing the subject's features changes the gate; the target's features do not matter
feats = list(inst.features)
feats[0] = feats[0] + 1.0
moved = ObservationInstance(spec, tuple(feats))
print("gate moved:", not np.allclose(pairwise_transition(model, moved, (0, 0), (0, 1)).values, phi))

# the template model shares a single matrix across all instances
steg = init_model(spec, "steg", seed=0)
a = pairwise_transition(steg, inst, (0, 0), (0, 1)).values
b = pairwise_transition(steg, moved, (0, 0), (0, 1)).values
print("template unchanged:", np.array_equal(a, b))
