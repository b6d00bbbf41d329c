"""Affine / small-MLP projection maps with hand-written backward passes.

A map named ``name`` stores its layers in a flat parameter dict as
``name.W0, name.b0, name.W1, ...``.  Layer ``i`` computes ``x @ W_i + b_i``;
hidden layers are followed by a rectifier and optional dropout.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_map(rng: np.random.Generator, name: str, in_dim: int, out_dim: int,
             hidden: Sequence[int] = ()) -> dict[str, np.ndarray]:
    dims = [in_dim, *hidden, out_dim]
    params = {}
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{name}.W{i}"] = glorot_uniform(rng, fi, fo)
        params[f"{name}.b{i}"] = np.zeros(fo)
    return params


def map_depth(params: dict[str, np.ndarray], name: str) -> int:
    depth = 0
    while f"{name}.W{depth}" in params:
        depth += 1
    if depth == 0:
        raise KeyError(f"no projection map named {name!r}")
    return depth


def map_forward(params, name, x, dropout=0.0, rng=None):
    """Apply map ``name`` to the rows of ``x``; returns ``(out, cache)``.

    Dropout is applied only when ``rng`` is given and ``dropout > 0``.
    """
    depth = map_depth(params, name)
    cache = []
    h = x
    for i in range(depth):
        z = h @ params[f"{name}.W{i}"] + params[f"{name}.b{i}"]
        if i == depth - 1:
            cache.append((h, None, None))
            h = z
            break
        active = z > 0
        out = np.where(active, z, 0.0)
        drop = None
        if rng is not None and dropout > 0:
            drop = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
            out = out * drop
        cache.append((h, active, drop))
        h = out
    return h, cache


def map_backward(params, name, cache, dout, grads):
    """Accumulate parameter gradients of map ``name`` into ``grads``.

    Returns the gradient with respect to the map input.
    """
    g = dout
    for i in reversed(range(len(cache))):
        h, active, drop = cache[i]
        if active is not None:
            if drop is not None:
                g = g * drop
            g = np.where(active, g, 0.0)
        grads[f"{name}.W{i}"] += h.T @ g
        grads[f"{name}.b{i}"] += g.sum(axis=0)
        g = g @ params[f"{name}.W{i}"].T
    return g
