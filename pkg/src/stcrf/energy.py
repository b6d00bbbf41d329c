"""Unary and pairwise energies of the spatio-temporal CRF.

Four model families share one parameter layout:

``ueg``    unary energies only
``seg``    unary + observation-independent compatibility matrices between
           streams at the same step
``steg``   as ``seg`` plus temporal edges discounted by a Gaussian kernel
``gsteg``  pairwise matrices produced from the source node's features as a
           rank-``r`` product ``g(x) h(x)^T`` (same step) or
           ``K(t, t') r(x) s(x)^T`` (different steps)

Every ordered node pair ``(a, b)`` contributes its own term
``phi_ab(y_a, y_b)``, gated by the features of ``a``.  An optional prior term
``u(S^k[y]) * v(S^k'[y'])`` built from fixed label embeddings is added to
every existing edge.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import Assignment, GraphError, GraphSpec, ObservationInstance, validate_instance
from .projection import init_map, map_backward, map_forward


class Mode(str, enum.Enum):
    UEG = "ueg"
    SEG = "seg"
    STEG = "steg"
    GSTEG = "gsteg"

    @property
    def has_pairwise(self) -> bool:
        return self is not Mode.UEG

    @property
    def has_temporal(self) -> bool:
        return self in (Mode.STEG, Mode.GSTEG)


class EnergyError(ValueError):
    pass


class ShapeMismatch(EnergyError):
    pass


def temporal_kernel(t, t2, sigma: float):
    """Gaussian discount ``exp(-(t - t2)^2 / (2 sigma^2))``; works on arrays."""
    if not sigma > 0:
        raise EnergyError("bandwidth must be positive")
    d = np.asarray(t, dtype=np.float64) - np.asarray(t2, dtype=np.float64)
    out = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def _pair_names(prefix, k, k2):
    return f"{prefix}/{k}/{k2}"


@dataclass
class EnergyModel:
    """All learnable parameters plus the hyperparameters that shape them.

    ``params`` maps names to arrays; unary maps are ``w/k``, gated maps
    ``g/k/k2``, ``h/k/k2``, ``r/k/k2``, ``s/k/k2``, compatibility matrices
    ``mu/k/k2`` and prior score maps ``u``, ``v``.  ``embeddings`` holds the
    fixed per-stream label embedding tables used by the prior term.
    """

    spec: GraphSpec
    mode: Mode
    rank: int
    bandwidth: float
    params: dict[str, np.ndarray]
    hidden: tuple[int, ...] = ()
    embeddings: tuple[np.ndarray, ...] | None = None
    pairwise_scale: float = 1.0
    dropout: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.rank < 1:
            raise EnergyError("rank must be positive")
        if self.mode is Mode.GSTEG and self.rank >= min(self.spec.label_sizes):
            raise EnergyError("rank must be smaller than every label size")
        if not self.bandwidth > 0:
            raise EnergyError("bandwidth must be positive")
        if self.embeddings is not None:
            self.embeddings = tuple(np.asarray(e, dtype=np.float64) for e in self.embeddings)
            for k, e in enumerate(self.embeddings):
                if e.ndim != 2 or e.shape[0] != self.spec.label_sizes[k]:
                    raise ShapeMismatch(f"embedding table {k} must have {self.spec.label_sizes[k]} rows")
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise EnergyError(f"non-finite parameter {name}")

    @property
    def has_prior(self) -> bool:
        return self.embeddings is not None

    def with_params(self, params: dict[str, np.ndarray]) -> "EnergyModel":
        return replace(self, params={k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def copy(self) -> "EnergyModel":
        return self.with_params(self.params)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def edge_mask(self, num_steps: int | None = None) -> np.ndarray:
        """``(N, N)`` boolean mask of ordered node pairs carrying a pairwise term."""
        T = self.spec.num_steps if num_steps is None else num_steps
        K = self.spec.num_streams
        t_idx = np.repeat(np.arange(T), K)
        n = T * K
        if self.mode is Mode.UEG:
            return np.zeros((n, n), dtype=bool)
        off_diag = ~np.eye(n, dtype=bool)
        if self.mode is Mode.SEG:
            return off_diag & (t_idx[:, None] == t_idx[None, :])
        return off_diag


def init_model(spec: GraphSpec, mode: Mode | str, *, rank: int = 2, bandwidth: float = 10.0,
               hidden: Sequence[int] = (), embeddings: Sequence[np.ndarray] | None = None,
               prior_hidden: Sequence[int] = (), pairwise_scale: float = 1.0,
               dropout: float = 0.0, seed: int | np.random.Generator = 0) -> EnergyModel:
    """Create a model with Glorot-uniform weights and zero biases."""
    mode = Mode(mode)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = spec.num_streams
    Y = spec.label_sizes
    D = spec.feature_dims
    params: dict[str, np.ndarray] = {}
    for k in range(K):
        params.update(init_map(rng, f"w/{k}", D[k], Y[k]))
    if mode is Mode.GSTEG:
        for k in range(K):
            for k2 in range(K):
                if k != k2:
                    params.update(init_map(rng, _pair_names("g", k, k2), D[k], Y[k] * rank, hidden))
                    params.update(init_map(rng, _pair_names("h", k, k2), D[k], Y[k2] * rank, hidden))
                params.update(init_map(rng, _pair_names("r", k, k2), D[k], Y[k] * rank, hidden))
                params.update(init_map(rng, _pair_names("s", k, k2), D[k], Y[k2] * rank, hidden))
    elif mode in (Mode.SEG, Mode.STEG):
        for k in range(K):
            for k2 in range(K):
                if k != k2 or mode is Mode.STEG:
                    a = np.sqrt(6.0 / (Y[k] + Y[k2]))
                    params[_pair_names("mu", k, k2)] = rng.uniform(-a, a, size=(Y[k], Y[k2]))
    if embeddings is not None:
        if mode is Mode.UEG:
            raise EnergyError("prior term needs a pairwise mode")
        d = np.asarray(embeddings[0]).shape[1]
        params.update(init_map(rng, "u", d, 1, prior_hidden))
        params.update(init_map(rng, "v", d, 1, prior_hidden))
    return EnergyModel(spec, mode, rank, bandwidth, params, tuple(hidden),
                       None if embeddings is None else tuple(embeddings),
                       pairwise_scale, dropout)


# ---------------------------------------------------------------------------
# batched potentials


@dataclass
class Potentials:
    """Padded unary and pairwise energy tensors for a batch of instances.

    ``unary`` is ``(B, N, L)``; ``pair`` is ``(B, N, N, L, L)`` with
    ``pair[b, a, c]`` the transition matrix of ordered pair ``(a, c)``.
    Entries for labels outside a stream's range are zero and masked by
    ``mask`` (``(N, L)``).
    """

    unary: np.ndarray
    pair: np.ndarray | None
    mask: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.unary.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.unary.shape[1]

    def coupling(self) -> np.ndarray | None:
        """``C[a, c] = P[a, c] + P[c, a]^T``: the full coupling of ``a`` to ``c``."""
        if self.pair is None:
            return None
        return self.pair + self.pair.transpose(0, 2, 1, 4, 3)


def stack_features(spec: GraphSpec, instances: Sequence[ObservationInstance]) -> list[np.ndarray]:
    """Per-stream ``(B, T, d_k)`` arrays for instances sharing ``spec``."""
    out = []
    for k in range(spec.num_streams):
        out.append(np.stack([inst.features[k] for inst in instances]))
    return out


def _check_compatible(model: EnergyModel, spec: GraphSpec):
    ms = model.spec
    if (ms.num_streams, ms.label_sizes, ms.feature_dims) != (
            spec.num_streams, spec.label_sizes, spec.feature_dims):
        raise ShapeMismatch("model and instance graph shapes differ")


def build_potentials(model: EnergyModel, feats: Sequence[np.ndarray], rng=None):
    """Evaluate all energies for a batch; returns ``(Potentials, cache)``.

    ``feats`` is the output of :func:`stack_features`.  Dropout is applied in
    hidden layers only when ``rng`` is given.
    """
    spec = model.spec
    K = spec.num_streams
    Y = spec.label_sizes
    L = spec.max_label_size
    B, T = feats[0].shape[:2]
    for k in range(K):
        if feats[k].shape != (B, T, spec.feature_dims[k]):
            raise ShapeMismatch(f"stream {k} features have shape {feats[k].shape}")
    p = model.params
    cache: dict = {"B": B, "T": T, "maps": {}}
    drop = model.dropout

    def run(name, x):
        out, c = map_forward(p, name, x, drop, rng)
        cache["maps"][name] = c
        return out

    unary = np.zeros((B, T, K, L))
    for k in range(K):
        unary[:, :, k, :Y[k]] = run(f"w/{k}", feats[k].reshape(B * T, -1)).reshape(B, T, Y[k])
    mask = np.tile(spec.label_mask(), (T, 1))
    if not model.mode.has_pairwise:
        return Potentials(unary.reshape(B, T * K, L), None, mask), cache

    r = model.rank
    ar = np.arange(T)
    kern = temporal_kernel(ar[:, None], ar[None, :], model.bandwidth)
    np.fill_diagonal(kern, 0.0)
    cache["kern"] = kern
    pair = np.zeros((B, T, K, T, K, L, L))
    if model.mode is Mode.GSTEG:
        factors = {}
        for k in range(K):
            x = feats[k].reshape(B * T, -1)
            for k2 in range(K):
                if k != k2:
                    G = run(_pair_names("g", k, k2), x).reshape(B, T, Y[k], r)
                    H = run(_pair_names("h", k, k2), x).reshape(B, T, Y[k2], r)
                    factors["g", k, k2] = (G, H)
                    M = np.einsum("btir,btjr->btij", G, H)
                    pair[:, ar, k, ar, k2, :Y[k], :Y[k2]] = M
                if T > 1:
                    R = run(_pair_names("r", k, k2), x).reshape(B, T, Y[k], r)
                    S = run(_pair_names("s", k, k2), x).reshape(B, T, Y[k2], r)
                    factors["r", k, k2] = (R, S)
                    M = np.einsum("btir,btjr->btij", R, S)
                    pair[:, :, k, :, k2, :Y[k], :Y[k2]] += (
                        kern[None, :, :, None, None] * M[:, :, None])
        cache["factors"] = factors
    else:
        for k in range(K):
            for k2 in range(K):
                if k != k2:
                    pair[:, ar, k, ar, k2, :Y[k], :Y[k2]] = p[_pair_names("mu", k, k2)]
                if model.mode is Mode.STEG and T > 1:
                    pair[:, :, k, :, k2, :Y[k], :Y[k2]] += (
                        kern[:, :, None, None] * p[_pair_names("mu", k, k2)])
    if model.has_prior:
        u_list, v_list = [], []
        for k, e in enumerate(model.embeddings):
            u_out, uc = map_forward(p, "u", e, drop, rng)
            v_out, vc = map_forward(p, "v", e, drop, rng)
            cache["maps"][f"u@{k}"] = uc
            cache["maps"][f"v@{k}"] = vc
            u_list.append(u_out[:, 0])
            v_list.append(v_out[:, 0])
        cache["prior"] = (u_list, v_list)
        edges = model.edge_mask(T).reshape(T, K, T, K)
        for k in range(K):
            for k2 in range(K):
                outer = np.outer(u_list[k], v_list[k2])
                e = edges[:, k, :, k2]
                pair[:, :, k, :, k2, :Y[k], :Y[k2]] += e[None, :, :, None, None] * outer
    pair *= model.pairwise_scale
    return Potentials(unary.reshape(B, T * K, L), pair.reshape(B, T * K, T * K, L, L), mask), cache


def potentials_backward(model: EnergyModel, cache, d_unary, d_pair) -> dict[str, np.ndarray]:
    """Gradients of all parameters given adjoints of the potential tensors."""
    spec = model.spec
    K = spec.num_streams
    Y = spec.label_sizes
    L = spec.max_label_size
    B, T = cache["B"], cache["T"]
    p = model.params
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    maps = cache["maps"]

    du = d_unary.reshape(B, T, K, L)
    for k in range(K):
        map_backward(p, f"w/{k}", maps[f"w/{k}"], du[:, :, k, :Y[k]].reshape(B * T, Y[k]), grads)
    if d_pair is None or not model.mode.has_pairwise:
        return grads

    dp = d_pair.reshape(B, T, K, T, K, L, L) * model.pairwise_scale
    ar = np.arange(T)
    kern = cache["kern"]
    r = model.rank
    if model.mode is Mode.GSTEG:
        factors = cache["factors"]
        for k in range(K):
            for k2 in range(K):
                if k != k2:
                    G, H = factors["g", k, k2]
                    dM = dp[:, ar, k, ar, k2, :Y[k], :Y[k2]]
                    dG = np.einsum("btij,btjr->btir", dM, H)
                    dH = np.einsum("btij,btir->btjr", dM, G)
                    map_backward(p, _pair_names("g", k, k2), maps[_pair_names("g", k, k2)],
                                 dG.reshape(B * T, -1), grads)
                    map_backward(p, _pair_names("h", k, k2), maps[_pair_names("h", k, k2)],
                                 dH.reshape(B * T, -1), grads)
                if T > 1:
                    R, S = factors["r", k, k2]
                    dM = np.einsum("tu,btuij->btij", kern, dp[:, :, k, :, k2, :Y[k], :Y[k2]])
                    dR = np.einsum("btij,btjr->btir", dM, S)
                    dS = np.einsum("btij,btir->btjr", dM, R)
                    map_backward(p, _pair_names("r", k, k2), maps[_pair_names("r", k, k2)],
                                 dR.reshape(B * T, -1), grads)
                    map_backward(p, _pair_names("s", k, k2), maps[_pair_names("s", k, k2)],
                                 dS.reshape(B * T, -1), grads)
    else:
        for k in range(K):
            for k2 in range(K):
                name = _pair_names("mu", k, k2)
                if name not in p:
                    continue
                if k != k2:
                    grads[name] += dp[:, ar, k, ar, k2, :Y[k], :Y[k2]].sum(axis=(0, 1))
                if model.mode is Mode.STEG and T > 1:
                    grads[name] += np.einsum("tu,btuij->ij", kern, dp[:, :, k, :, k2, :Y[k], :Y[k2]])
    if model.has_prior:
        u_list, v_list = cache["prior"]
        edges = model.edge_mask(T).reshape(T, K, T, K)
        du_list = [np.zeros(Y[k]) for k in range(K)]
        dv_list = [np.zeros(Y[k]) for k in range(K)]
        for k in range(K):
            for k2 in range(K):
                e = edges[:, k, :, k2]
                if not e.any():
                    continue
                dO = np.einsum("tu,btuij->ij", e.astype(float), dp[:, :, k, :, k2, :Y[k], :Y[k2]])
                du_list[k] += dO @ v_list[k2]
                dv_list[k2] += dO.T @ u_list[k]
        for k in range(K):
            map_backward(p, "u", maps[f"u@{k}"], du_list[k][:, None], grads)
            map_backward(p, "v", maps[f"v@{k}"], dv_list[k][:, None], grads)
    return grads


def instance_potentials(model: EnergyModel, inst: ObservationInstance) -> Potentials:
    _check_compatible(model, inst.spec)
    pot, _ = build_potentials(model, stack_features(inst.spec, [inst]))
    return pot


# ---------------------------------------------------------------------------
# single-instance API


@dataclass(frozen=True)
class TransitionMatrix:
    values: np.ndarray
    source: tuple[int, int]
    target: tuple[int, int]


def unary_energy(model: EnergyModel, inst: ObservationInstance, t: int, k: int) -> np.ndarray:
    """Energy vector ``w^k(x_{t,k})`` of node ``(t, k)``."""
    _check_compatible(model, inst.spec)
    inst.spec.node_index(t, k)
    x = inst.feature(t, k)
    if x.shape[0] != model.spec.feature_dims[k]:
        raise ShapeMismatch(f"feature dim mismatch at ({t},{k})")
    out, _ = map_forward(model.params, f"w/{k}", x[None, :])
    return out[0]


def pairwise_transition(model: EnergyModel, inst: ObservationInstance,
                        source: tuple[int, int], target: tuple[int, int]) -> TransitionMatrix:
    """Transition matrix ``phi_{source,target}`` of shape ``|Y^k| x |Y^k'|``."""
    (t, k), (t2, k2) = source, target
    if (t, k) == (t2, k2):
        raise EnergyError("source and target must differ")
    if not model.mode.has_pairwise:
        raise EnergyError("no pairwise terms in unary-only mode")
    if model.mode is Mode.SEG and t != t2:
        raise EnergyError("temporal edge in spatial-only mode")
    spec = inst.spec
    a, b = spec.node_index(t, k), spec.node_index(t2, k2)
    pot = instance_potentials(model, inst)
    vals = pot.pair[0, a, b, :spec.label_sizes[k], :spec.label_sizes[k2]].copy()
    return TransitionMatrix(vals, (t, k), (t2, k2))


def assignment_energy(pot: Potentials, labels: np.ndarray) -> np.ndarray:
    """Energies of many flat node-order assignments ``(S, N)`` on instance 0."""
    N = pot.num_nodes
    idx = np.arange(N)
    e = pot.unary[0][idx, labels].sum(axis=1)
    if pot.pair is not None:
        P = pot.pair[0]
        for a in range(N):
            for b in range(N):
                if a != b:
                    e = e + P[a, b][labels[:, a], labels[:, b]]
    return e


def total_energy(model: EnergyModel, inst: ObservationInstance, y: Assignment) -> float:
    """Sum of all unary terms plus every ordered pairwise term."""
    validate_instance(inst)
    if not isinstance(y, Assignment):
        y = Assignment(y)
    y.check(inst.spec)
    pot = instance_potentials(model, inst)
    return float(assignment_energy(pot, y.labels.reshape(1, -1))[0])
