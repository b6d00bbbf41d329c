"""Graph shape, observation instances, label assignments and video chunking.

A graph has ``K`` synchronous streams observed over ``T`` steps.  Node
``(t, k)`` carries a feature vector of length ``feature_dims[k]`` and a
categorical label in ``range(label_sizes[k])``.  Nodes are indexed in
``(t, k)`` lexicographic order, i.e. ``n = t * K + k``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

DEFAULT_STATE_CAP = 10**6


class GraphError(ValueError):
    """Base class for malformed graph shapes or instances."""


class FeatureDimMismatch(GraphError):
    pass


class NonFiniteFeature(GraphError):
    pass


class LabelOutOfRange(GraphError):
    pass


class StateSpaceTooLarge(GraphError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    """Shape of a spatio-temporal graph."""

    num_streams: int
    num_steps: int
    label_sizes: tuple[int, ...]
    feature_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "label_sizes", tuple(int(s) for s in self.label_sizes))
        object.__setattr__(self, "feature_dims", tuple(int(d) for d in self.feature_dims))
        if self.num_streams < 1:
            raise GraphError("num_streams must be >= 1")
        if self.num_steps < 1:
            raise GraphError("num_steps must be >= 1")
        if len(self.label_sizes) != self.num_streams:
            raise GraphError("label_sizes must have one entry per stream")
        if len(self.feature_dims) != self.num_streams:
            raise GraphError("feature_dims must have one entry per stream")
        if any(s < 2 for s in self.label_sizes):
            raise GraphError("every label size must be >= 2")
        if any(d < 1 for d in self.feature_dims):
            raise GraphError("every feature dim must be >= 1")

    @property
    def K(self) -> int:
        return self.num_streams

    @property
    def T(self) -> int:
        return self.num_steps

    @property
    def num_nodes(self) -> int:
        return self.num_streams * self.num_steps

    @property
    def max_label_size(self) -> int:
        return max(self.label_sizes)

    def nodes(self) -> list[tuple[int, int]]:
        """All ``(t, k)`` pairs in lexicographic order."""
        return [(t, k) for t in range(self.num_steps) for k in range(self.num_streams)]

    def node_index(self, t: int, k: int) -> int:
        if not (0 <= t < self.num_steps and 0 <= k < self.num_streams):
            raise GraphError(f"node ({t},{k}) outside graph")
        return t * self.num_streams + k

    def state_space_size(self) -> int:
        return math.prod(self.label_sizes) ** self.num_steps

    def label_mask(self) -> np.ndarray:
        """Boolean ``(K, L)`` mask of valid labels, ``L = max_label_size``."""
        mask = np.zeros((self.num_streams, self.max_label_size), dtype=bool)
        for k, size in enumerate(self.label_sizes):
            mask[k, :size] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "K": self.num_streams,
            "T": self.num_steps,
            "label_sizes": list(self.label_sizes),
            "feature_dims": list(self.feature_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphSpec":
        return cls(int(d["K"]), int(d["T"]), tuple(d["label_sizes"]), tuple(d["feature_dims"]))

    def with_steps(self, num_steps: int) -> "GraphSpec":
        return GraphSpec(self.num_streams, num_steps, self.label_sizes, self.feature_dims)


@dataclass(frozen=True)
class Assignment:
    """Joint labelling, ``labels[t, k]``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise GraphError("assignment must be a T x K array")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __getitem__(self, node):
        return int(self.labels[node])

    def __eq__(self, other):
        return isinstance(other, Assignment) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    def check(self, spec: GraphSpec) -> "Assignment":
        if self.labels.shape != (spec.num_steps, spec.num_streams):
            raise GraphError(
                f"assignment shape {self.labels.shape} does not match "
                f"({spec.num_steps}, {spec.num_streams})"
            )
        for (t, k), y in np.ndenumerate(self.labels):
            if not 0 <= y < spec.label_sizes[k]:
                raise LabelOutOfRange(f"label out of range at ({t},{k}): {y}")
        return self

    def to_list(self) -> list[list[int]]:
        return self.labels.tolist()


@dataclass(frozen=True)
class ObservationInstance:
    """Features for every node plus optional gold labels.

    ``features[k]`` is a ``(T, feature_dims[k])`` array holding stream ``k``
    for all steps; ``feature(t, k)`` returns a single node vector.
    """

    spec: GraphSpec
    features: tuple[np.ndarray, ...]
    gold: Assignment | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        feats = []
        for f in self.features:
            a = np.array(f, dtype=np.float64)
            a.setflags(write=False)
            feats.append(a)
        object.__setattr__(self, "features", tuple(feats))
        if self.gold is not None and not isinstance(self.gold, Assignment):
            object.__setattr__(self, "gold", Assignment(self.gold))

    @classmethod
    def from_nested(cls, spec: GraphSpec, nested: Sequence[Sequence[Sequence[float]]],
                    gold=None, meta=None) -> "ObservationInstance":
        """Build from a ``T x K`` nested list of node feature vectors."""
        if len(nested) != spec.num_steps:
            raise FeatureDimMismatch(f"expected {spec.num_steps} steps, got {len(nested)}")
        streams = []
        for k in range(spec.num_streams):
            rows = []
            for t in range(spec.num_steps):
                if len(nested[t]) != spec.num_streams:
                    raise FeatureDimMismatch(f"feature dim mismatch at ({t},{k}): wrong stream count")
                row = np.asarray(nested[t][k], dtype=np.float64).ravel()
                if row.shape[0] != spec.feature_dims[k]:
                    raise FeatureDimMismatch(f"feature dim mismatch at ({t},{k})")
                rows.append(row)
            streams.append(np.stack(rows))
        return cls(spec, tuple(streams), gold, dict(meta or {}))

    def feature(self, t: int, k: int) -> np.ndarray:
        return self.features[k][t]

    def to_nested(self) -> list[list[list[float]]]:
        return [[self.features[k][t].tolist() for k in range(self.spec.num_streams)]
                for t in range(self.spec.num_steps)]


def validate_instance(inst: ObservationInstance) -> ObservationInstance:
    """Return ``inst`` unchanged if it satisfies all shape and value invariants."""
    spec = inst.spec
    if len(inst.features) != spec.num_streams:
        raise FeatureDimMismatch(
            f"feature dim mismatch: {len(inst.features)} streams, expected {spec.num_streams}")
    for k, f in enumerate(inst.features):
        if f.ndim != 2 or f.shape[0] != spec.num_steps:
            raise FeatureDimMismatch(f"feature dim mismatch at (*,{k}): shape {f.shape}")
        if f.shape[1] != spec.feature_dims[k]:
            raise FeatureDimMismatch(f"feature dim mismatch at (0,{k})")
        bad = np.argwhere(~np.isfinite(f))
        if len(bad):
            raise NonFiniteFeature(f"non-finite feature value at ({bad[0][0]},{k})")
    if inst.gold is not None:
        inst.gold.check(spec)
    return inst


@dataclass(frozen=True)
class ChunkRange:
    """Half-open frame range ``[start_frame, end_frame)``."""

    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame < 0 or self.end_frame <= self.start_frame:
            raise GraphError(f"bad chunk range [{self.start_frame},{self.end_frame})")

    def __len__(self):
        return self.end_frame - self.start_frame

    def overlap(self, other: "ChunkRange") -> tuple[int, int] | None:
        lo = max(self.start_frame, other.start_frame)
        hi = min(self.end_frame, other.end_frame)
        return (lo, hi) if lo < hi else None

    def to_list(self) -> list[int]:
        return [self.start_frame, self.end_frame]


def chunk_video(frame_count: int, chunk_len: int, stride: int) -> list[ChunkRange]:
    """Split ``frame_count`` frames into fixed-length windows ``stride`` apart.

    When frames remain after the last full-stride window, one extra window
    is appended that ends exactly at ``frame_count`` (so it overlaps its
    predecessor by more than ``chunk_len - stride``).
    """
    if chunk_len < 1 or stride < 1 or frame_count < 1:
        raise GraphError("frame_count, chunk_len and stride must be positive")
    if chunk_len > frame_count:
        raise GraphError("video shorter than one chunk")
    if stride > chunk_len:
        raise GraphError("gap between chunks")
    starts = list(range(0, frame_count - chunk_len + 1, stride))
    if starts[-1] + chunk_len < frame_count:
        starts.append(frame_count - chunk_len)
    return [ChunkRange(s, s + chunk_len) for s in starts]


def enumerate_assignment_array(spec: GraphSpec, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All joint assignments as an ``(S, T*K)`` array in node order.

    Rows are lexicographic with the last node varying fastest.
    """
    size = spec.state_space_size()
    if size > cap:
        raise StateSpaceTooLarge(f"oracle state space too large ({size} > {cap})")
    sizes = [spec.label_sizes[k] for _, k in spec.nodes()]
    grids = np.indices(sizes, dtype=np.int64)
    return grids.reshape(len(sizes), -1).T


def enumerate_assignments(spec: GraphSpec, cap: int = DEFAULT_STATE_CAP) -> Iterator[Assignment]:
    """Yield every joint assignment exactly once, lexicographic in (t, k, label)."""
    size = spec.state_space_size()
    if size > cap:
        raise StateSpaceTooLarge(f"oracle state space too large ({size} > {cap})")
    ranges = [range(spec.label_sizes[k]) for _, k in spec.nodes()]
    for combo in itertools.product(*ranges):
        yield Assignment(np.array(combo, dtype=np.int64).reshape(spec.num_steps, spec.num_streams))
