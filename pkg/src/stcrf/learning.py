"""Cross-entropy training through unrolled mean-field inference.

The loss of one instance is ``-sum_{t,k} log q_{t,k}(gold_{t,k})`` where ``q``
are the marginals after a fixed number of mean-field passes.  Gradients are
exact: the forward run records every node update and
:func:`~stcrf.inference.mean_field_backward` replays it in reverse.
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .energy import EnergyModel, build_potentials, potentials_backward, stack_features
from .graph import ObservationInstance
from .inference import SEQUENTIAL, mean_field_backward, mean_field_forward
from .seeding import substream

SGD_MOMENTUM = "sgd_momentum"
ADAM = "adaptive_moment"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = ADAM
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    num_passes: int = 3
    seed: int = 0
    gradient_clip: float | None = None
    schedule: str = SEQUENTIAL
    damping: float = 0.0
    use_dropout: bool = False

    def __post_init__(self):
        if self.optimizer not in (SGD_MOMENTUM, ADAM):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("batch_size", "epochs", "num_passes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.gradient_clip is not None and not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be positive")


# defaults for the two benchmark configurations
IMAGENET_VIDEO = TrainConfig(ADAM, 0.001, 32, 30, 3)
CHARADES = TrainConfig(SGD_MOMENTUM, 0.005, 40, 5, 5)


def _group_by_shape(instances):
    groups = defaultdict(list)
    for i, inst in enumerate(instances):
        groups[inst.spec.num_steps].append(i)
    return [groups[t] for t in sorted(groups)]


def batch_loss_and_grad(model: EnergyModel, instances: Sequence[ObservationInstance],
                        num_passes: int = 3, schedule: str = SEQUENTIAL, damping: float = 0.0,
                        need_grad: bool = True, rng: np.random.Generator | None = None,
                        weight: float = 1.0):
    """Per-instance losses and the gradient of ``weight * sum(losses)``."""
    losses = np.zeros(len(instances))
    grads = {name: np.zeros_like(p) for name, p in model.params.items()} if need_grad else None
    for idx in _group_by_shape(instances):
        group = [instances[i] for i in idx]
        if any(inst.gold is None for inst in group):
            raise TrainingError("loss needs gold labels")
        spec = group[0].spec
        feats = stack_features(spec, group)
        pot, cache = build_potentials(model, feats, rng)
        C = pot.coupling()
        Q, tape = mean_field_forward(pot, num_passes, schedule, damping, record=need_grad, coupling=C)
        gold = np.stack([inst.gold.labels.reshape(-1) for inst in group])
        qg = np.take_along_axis(Q, gold[:, :, None], axis=2)[:, :, 0]
        with np.errstate(divide="ignore"):
            losses[idx] = -np.log(qg).sum(axis=1)
        if need_grad:
            dQ = np.zeros_like(Q)
            with np.errstate(divide="ignore"):
                np.put_along_axis(dQ, gold[:, :, None], (-weight / qg)[:, :, None], axis=2)
            d_unary, d_pair = mean_field_backward(pot, tape, dQ, C)
            g = potentials_backward(model, cache, d_unary, d_pair)
            for name in grads:
                grads[name] += g[name]
    return losses, grads


def loss(model: EnergyModel, inst: ObservationInstance, num_passes: int = 3,
         schedule: str = SEQUENTIAL, damping: float = 0.0) -> float:
    """Negative log-likelihood of the gold labels under the mean-field marginals."""
    if inst.gold is None:
        raise TrainingError("loss needs gold labels")
    losses, _ = batch_loss_and_grad(model, [inst], num_passes, schedule, damping, need_grad=False)
    return float(losses[0])


def gradients(model: EnergyModel, inst: ObservationInstance, num_passes: int = 3,
              schedule: str = SEQUENTIAL, damping: float = 0.0) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`loss` for every parameter tensor."""
    if inst.gold is None:
        raise TrainingError("loss needs gold labels")
    _, grads = batch_loss_and_grad(model, [inst], num_passes, schedule, damping)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    return grads


def finite_diff_check(model: EnergyModel, inst: ObservationInstance, epsilon: float = 1e-5,
                      num_passes: int = 3, schedule: str = SEQUENTIAL, damping: float = 0.0,
                      names: Sequence[str] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error of one scalar is ``|a - n| / max(1e-8, |a| + |n|)``.  ``names``
    restricts the check to some parameter tensors.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    analytic = gradients(model, inst, num_passes, schedule, damping)
    params = {k: v.copy() for k, v in model.params.items()}
    probe = model.with_params(params)
    worst = 0.0
    for name, p in probe.params.items():
        if names is not None and name not in names:
            continue
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss(probe, inst, num_passes, schedule, damping)
            flat[i] = orig - epsilon
            down = loss(probe, inst, num_passes, schedule, damping)
            flat[i] = orig
            n = (up - down) / (2 * epsilon)
            a = a_flat[i]
            err = abs(a - n) / max(1e-8, abs(a) + abs(n))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizers


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params, grads):
        self.step_count += 1
        for k in params:
            self.velocity[k] = self.momentum * self.velocity[k] + grads[k]
            params[k] = params[k] - self.lr * self.velocity[k]

    def state(self):
        return {"step": self.step_count, "velocity": self.velocity}


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params, grads):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = params[k] - self.lr * update

    def state(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == SGD_MOMENTUM:
        return SGDMomentum(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate)


@dataclass
class TrainResult:
    model: EnergyModel
    epoch_losses: list[float]
    log: list[dict] = field(default_factory=list)
    optimizer_state: dict = field(default_factory=dict)


def train(model: EnergyModel, dataset: Sequence[ObservationInstance], cfg: TrainConfig,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Minibatch training; the trajectory is a pure function of ``cfg.seed``.

    ``callback`` receives one record per batch
    (``epoch, batch, loss, grad_norm, wall_ms``).
    """
    if not dataset:
        raise TrainingError("dataset is empty")
    if any(inst.gold is None for inst in dataset):
        raise TrainingError("every training instance needs gold labels")
    shuffle_rng = substream(cfg.seed, "shuffle")
    dropout_rng = substream(cfg.seed, "dropout") if cfg.use_dropout and model.dropout > 0 else None
    params = {k: v.copy() for k, v in model.params.items()}
    opt = make_optimizer(cfg, params)
    current = model.with_params(params)
    epoch_losses = []
    log = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            tic = time.perf_counter()
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            losses, grads = batch_loss_and_grad(current, batch, cfg.num_passes, cfg.schedule,
                                                cfg.damping, rng=dropout_rng, weight=1.0 / len(batch))
            if not np.all(np.isfinite(losses)):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {b}")
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
            if not np.isfinite(norm):
                raise TrainingError(f"non-finite gradient in epoch {epoch}, batch {b}")
            if cfg.gradient_clip is not None and norm > cfg.gradient_clip:
                scale = cfg.gradient_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
            opt.step(params, grads)
            current = replace(current, params=params)
            total += float(losses.sum())
            rec = {"epoch": epoch, "batch": b, "loss": float(losses.mean()), "grad_norm": norm,
                   "wall_ms": (time.perf_counter() - tic) * 1e3}
            log.append(rec)
            if callback is not None:
                callback(rec)
        epoch_losses.append(total / n)
    return TrainResult(model.with_params(params), epoch_losses, log, opt.state())
