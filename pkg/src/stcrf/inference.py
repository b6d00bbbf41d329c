"""Naive mean-field inference, free energy and an enumeration oracle.

For the ordered-pair energy

    E(y) = sum_a psi_a(y_a) + sum_{a != c} phi_ac(y_a, y_c)

the coordinate-wise minimiser of the variational free energy over ``q_a`` is

    q_a(y) ∝ exp(-psi_a(y)) * prod_{c != a} m_{c->a}(y),
    m_{c->a}(y) = exp(-sum_y' [phi_ac(y, y') + phi_ca(y', y)] q_c(y')).

Both ordered terms linking ``a`` and ``c`` enter the message, which is what
makes every sequential update a descent step on the free energy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import (EnergyError, EnergyModel, Mode, Potentials, assignment_energy, build_potentials,
                     instance_potentials, stack_features)
from .graph import Assignment, GraphSpec, ObservationInstance, enumerate_assignment_array, DEFAULT_STATE_CAP

SEQUENTIAL = "sequential"
PARALLEL = "parallel"


@dataclass(frozen=True)
class Marginals:
    """Per-node categorical distributions stored as a padded ``(T, K, L)`` array."""

    values: np.ndarray
    label_sizes: tuple[int, ...]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "label_sizes", tuple(self.label_sizes))

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_streams(self) -> int:
        return self.values.shape[1]

    def node(self, t: int, k: int) -> np.ndarray:
        return self.values[t, k, :self.label_sizes[k]]

    def flat(self) -> np.ndarray:
        """``(N, L)`` view in node order."""
        T, K, L = self.values.shape
        return self.values.reshape(T * K, L)

    def to_list(self) -> list[list[list[float]]]:
        return [[self.node(t, k).tolist() for k in range(self.num_streams)]
                for t in range(self.num_steps)]

    def check(self, atol: float = 1e-9) -> "Marginals":
        for t in range(self.num_steps):
            for k in range(self.num_streams):
                q = self.node(t, k)
                if np.any(q < 0) or np.any(q > 1) or abs(q.sum() - 1.0) > atol:
                    raise ValueError(f"marginal at ({t},{k}) is not a distribution")
        return self

    @classmethod
    def from_flat(cls, flat: np.ndarray, spec: GraphSpec, num_steps: int | None = None) -> "Marginals":
        T = spec.num_steps if num_steps is None else num_steps
        return cls(flat.reshape(T, spec.num_streams, -1), spec.label_sizes)


@dataclass(frozen=True)
class GibbsDistribution:
    log_partition: float
    exact_marginals: Marginals
    map_assignment: Assignment
    log_probs: np.ndarray


def masked_softmax(s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    s = np.where(mask, s, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(q, g):
    return q * (g - (q * g).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# batched core


def mean_field_forward(pot: Potentials, num_passes: int = 3, schedule: str = SEQUENTIAL,
                       damping: float = 0.0, tol: float | None = None, record: bool = False,
                       coupling: np.ndarray | None = None):
    """Run mean field on a batch of potentials.

    Returns ``(Q, tape)`` where ``Q`` is ``(B, N, L)``; ``tape`` is only
    filled when ``record`` is true and is consumed by
    :func:`mean_field_backward`.
    """
    if num_passes < 1:
        raise ValueError("num_passes must be >= 1")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    if schedule not in (SEQUENTIAL, PARALLEL):
        raise ValueError(f"unknown schedule {schedule!r}")
    mask = pot.mask
    Q = masked_softmax(-pot.unary, mask)
    tape = {"Q0": Q.copy(), "steps": [], "schedule": schedule, "damping": damping}
    C = pot.coupling() if coupling is None else coupling
    if C is None:
        # unary-only: the initial marginals are already the fixed point
        return Q, tape
    N = pot.num_nodes
    for _ in range(num_passes):
        start = Q.copy() if tol is not None else None
        if schedule == SEQUENTIAL:
            for a in range(N):
                s = -pot.unary[:, a] - np.einsum("bcij,bcj->bi", C[:, a], Q)
                qa = masked_softmax(s, mask[a])
                if record:
                    tape["steps"].append((a, Q.copy(), qa))
                Q[:, a] = qa
        else:
            s = -pot.unary - np.einsum("bacij,bcj->bai", C, Q)
            sm = masked_softmax(s, mask)
            if record:
                tape["steps"].append((None, Q.copy(), sm))
            Q = (1.0 - damping) * sm + damping * Q
        if tol is not None and np.max(np.abs(Q - start)) < tol:
            break
    return Q, tape


def mean_field_backward(pot: Potentials, tape, dQ: np.ndarray, coupling: np.ndarray | None = None):
    """Reverse pass through a recorded mean-field run.

    Returns ``(d_unary, d_pair)`` given the adjoint ``dQ`` of the output.
    """
    G = np.array(dQ, dtype=np.float64)
    d_unary = np.zeros_like(pot.unary)
    C = pot.coupling() if coupling is None else coupling
    dC = None if C is None else np.zeros_like(C)
    damping = tape["damping"]
    for a, Qb, qn in reversed(tape["steps"]):
        if a is not None:
            ds = _softmax_backward(qn, G[:, a])
            G[:, a] = 0.0
            d_unary[:, a] -= ds
            dC[:, a] -= ds[:, None, :, None] * Qb[:, :, None, :]
            G -= np.einsum("bcij,bi->bcj", C[:, a], ds)
        else:
            ds = _softmax_backward(qn, (1.0 - damping) * G)
            d_unary -= ds
            dC -= ds[:, :, None, :, None] * Qb[:, None, :, None, :]
            G = damping * G - np.einsum("bacij,bai->bcj", C, ds)
    d_unary -= _softmax_backward(tape["Q0"], G)
    d_pair = None if dC is None else dC + dC.transpose(0, 2, 1, 4, 3)
    return d_unary, d_pair


def free_energy_batch(pot: Potentials, Q: np.ndarray) -> np.ndarray:
    """Expected energy minus entropy for every batch element."""
    expected = np.einsum("bni,bni->b", Q, pot.unary)
    if pot.pair is not None:
        expected = expected + np.einsum("bai,bacij,bcj->b", Q, pot.pair, Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(Q > 0, Q * np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    return expected + qlogq.sum(axis=(1, 2))


def exact_gibbs(pot: Potentials, spec: GraphSpec, cap: int = DEFAULT_STATE_CAP) -> GibbsDistribution:
    """Brute-force Gibbs distribution of batch element 0."""
    T = pot.num_nodes // spec.num_streams
    s = spec.with_steps(T)
    labels = enumerate_assignment_array(s, cap)
    energies = assignment_energy(pot, labels)
    neg = -energies
    m = neg.max()
    log_z = float(m + np.log(np.exp(neg - m).sum()))
    logp = neg - log_z
    p = np.exp(logp)
    L = spec.max_label_size
    marg = np.stack([np.bincount(labels[:, a], weights=p, minlength=L) for a in range(labels.shape[1])])
    best = int(np.argmin(energies))
    return GibbsDistribution(
        log_z,
        Marginals.from_flat(marg, spec, T),
        Assignment(labels[best].reshape(T, spec.num_streams)),
        logp,
    )


# ---------------------------------------------------------------------------
# single-instance API


def _pot(model, inst):
    return instance_potentials(model, inst)


def _as_flat(q: Marginals) -> np.ndarray:
    return np.array(q.flat())[None]


def init_marginals(model: EnergyModel, inst: ObservationInstance) -> Marginals:
    """``softmax(-psi)`` at every node."""
    pot = _pot(model, inst)
    return Marginals.from_flat(masked_softmax(-pot.unary, pot.mask)[0], inst.spec)


def _check_edge(model: EnergyModel, source, target):
    if tuple(source) == tuple(target):
        raise EnergyError("source and target must differ")
    if not model.mode.has_pairwise:
        raise EnergyError("no pairwise terms in unary-only mode")
    if model.mode is Mode.SEG and source[0] != target[0]:
        raise EnergyError("temporal edge in spatial-only mode")


def compute_message(model: EnergyModel, inst: ObservationInstance, q: Marginals,
                    source: tuple[int, int], target: tuple[int, int]) -> np.ndarray:
    """Message ``m_{source -> target}`` as a vector over the target's labels."""
    _check_edge(model, source, target)
    spec = inst.spec
    a = spec.node_index(*target)
    c = spec.node_index(*source)
    pot = _pot(model, inst)
    P = pot.pair[0]
    Ca = P[a, c] + P[c, a].T
    m = np.exp(-(Ca @ q.flat()[c]))
    return m[:spec.label_sizes[target[1]]]


def mean_field_update_node(model: EnergyModel, inst: ObservationInstance, q: Marginals,
                           node: tuple[int, int]) -> Marginals:
    """Replace the marginal at ``node`` by its coordinate-descent update."""
    spec = inst.spec
    a = spec.node_index(*node)
    pot = _pot(model, inst)
    Q = q.flat().copy()
    s = -pot.unary[0, a]
    if pot.pair is not None:
        C = pot.pair[0, a] + pot.pair[0, :, a].transpose(0, 2, 1)
        s = s - np.einsum("cij,cj->i", C, Q)
    Q[a] = masked_softmax(s, pot.mask[a])
    return Marginals.from_flat(Q, spec)


def run_mean_field(model: EnergyModel, inst: ObservationInstance, num_passes: int = 3,
                   schedule: str = SEQUENTIAL, damping: float = 0.0,
                   tol: float | None = None) -> Marginals:
    """Mean field started from the unary marginals.

    ``sequential`` visits nodes in ``(t, k)`` order updating in place;
    ``parallel`` updates all nodes from the previous iterate and blends
    ``(1 - damping) * new + damping * old``.  With ``tol`` set, iteration
    stops once a full pass changes no entry by more than ``tol``.
    """
    pot = _pot(model, inst)
    Q, _ = mean_field_forward(pot, num_passes, schedule, damping, tol)
    return Marginals.from_flat(Q[0], inst.spec)


def free_energy(model: EnergyModel, inst: ObservationInstance, q: Marginals) -> float:
    """``sum q psi + sum_{a != c} q_a^T phi_ac q_c + sum q log q``."""
    pot = _pot(model, inst)
    return float(free_energy_batch(pot, _as_flat(q))[0])


def exact_inference(model: EnergyModel, inst: ObservationInstance,
                    cap: int = DEFAULT_STATE_CAP) -> GibbsDistribution:
    return exact_gibbs(_pot(model, inst), inst.spec, cap)


def fixed_point_residual(model: EnergyModel, inst: ObservationInstance, q: Marginals) -> float:
    """Largest change any single-node update would make to ``q``."""
    pot = _pot(model, inst)
    Q = q.flat()
    if pot.pair is None:
        return float(np.max(np.abs(masked_softmax(-pot.unary[0], pot.mask) - Q)))
    C = pot.coupling()[0]
    s = -pot.unary[0] - np.einsum("acij,cj->ai", C, Q)
    return float(np.max(np.abs(masked_softmax(s, pot.mask) - Q)))


def map_labels(q: Marginals) -> Assignment:
    """Per-node argmax; ties go to the smallest label."""
    T, K = q.num_steps, q.num_streams
    labels = np.zeros((T, K), dtype=np.int64)
    for t in range(T):
        for k in range(K):
            labels[t, k] = int(np.argmax(q.node(t, k)))
    return Assignment(labels)


def batch_marginals(model: EnergyModel, instances, num_passes: int = 3,
                    schedule: str = SEQUENTIAL, damping: float = 0.0) -> list[Marginals]:
    """Mean-field marginals for many instances, batched by sequence length."""
    groups: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(inst.spec.num_steps, []).append(i)
    out: list[Marginals | None] = [None] * len(instances)
    for T in sorted(groups):
        idx = groups[T]
        spec = instances[idx[0]].spec
        pot, _ = build_potentials(model, stack_features(spec, [instances[i] for i in idx]))
        Q, _ = mean_field_forward(pot, num_passes, schedule, damping)
        for j, i in enumerate(idx):
            out[i] = Marginals.from_flat(Q[j], spec)
    return out
