"""Gated spatio-temporal energy graphs for video relation reasoning.

A fully connected CRF over ``K`` entity streams and ``T`` time steps, with
feature-gated low-rank pairwise energies, mean-field inference, training
through the unrolled inference, a planted synthetic task and the
detection/tagging/recognition metrics.
"""
from .energy import EnergyModel, Mode, Potentials, init_model, total_energy
from .evaluation import (MetricReport, RelationInstance, Trajectory, detection_metrics,
                         greedy_associate, recognition_metrics, tagging_metrics, viou,
                         zero_shot_split)
from .graph import Assignment, ChunkRange, GraphSpec, ObservationInstance, chunk_video
from .inference import (Marginals, batch_marginals, exact_inference, free_energy, map_labels,
                        run_mean_field)
from .learning import CHARADES, IMAGENET_VIDEO, TrainConfig, finite_diff_check, train
from .synth import SynthConfig, bayes_accuracy, generate_dataset, synth_spec

__all__ = [
    "Assignment", "CHARADES", "ChunkRange", "EnergyModel", "GraphSpec", "IMAGENET_VIDEO",
    "Marginals", "MetricReport", "Mode", "ObservationInstance", "Potentials", "RelationInstance",
    "SynthConfig", "TrainConfig", "Trajectory", "batch_marginals", "bayes_accuracy", "chunk_video",
    "detection_metrics", "exact_inference", "finite_diff_check", "free_energy", "generate_dataset",
    "greedy_associate", "init_model", "map_labels", "recognition_metrics", "run_mean_field",
    "synth_spec", "tagging_metrics", "total_energy", "train", "viou", "zero_shot_split",
]
__version__ = "0.1.0"
