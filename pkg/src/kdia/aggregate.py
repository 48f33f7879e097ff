"""Teacher-side model registry and weighted parameter aggregation.

The registry holds one stored snapshot per client; a round replaces only the
snapshots of clients that participated, so stale entries keep contributing
old knowledge to the teacher. Aggregation itself is a plain convex
combination of every weight and bias, summed in ascending client order so
serial and parallel runs produce identical bits.
"""

from __future__ import annotations

import numpy as np

from .errors import ProtocolError, ShapeError
from .nn import ModelParams

WEIGHT_SUM_TOL = 1e-6


class ModelRegistry:
    """Stored per-client model snapshots, all shape-identical."""

    def __init__(self, theta0: ModelParams, n_clients: int):
        if n_clients < 1:
            raise ProtocolError(f"registry needs >= 1 clients, got {n_clients}")
        self.stored = [theta0.copy() for _ in range(n_clients)]

    @property
    def n_clients(self) -> int:
        return len(self.stored)

    def update(self, client_id: int, new_params: ModelParams) -> None:
        current = self.stored[client_id]
        if new_params.split_index != current.split_index or len(
            new_params.layers
        ) != len(current.layers):
            raise ShapeError("replacement snapshot has a different architecture")
        for i, ((w, b), (cw, cb)) in enumerate(
            zip(new_params.layers, current.layers)
        ):
            if w.shape != cw.shape or b.shape != cb.shape:
                raise ShapeError(f"layer {i}: snapshot shape mismatch")
        self.stored[client_id] = new_params.copy()


def weighted_aggregate(models, weights) -> ModelParams:
    """Convex combination of shape-identical models.

    ``weights`` must sum to 1 within 1e-6. Summation runs in input order,
    which callers fix to ascending client id.
    """
    models = list(models)
    weights = np.asarray(weights, dtype=np.float64)
    if len(models) != weights.shape[0]:
        raise ShapeError(f"{len(models)} models vs {weights.shape[0]} weights")
    if not models:
        raise ProtocolError("nothing to aggregate")
    if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ProtocolError(f"weights sum to {weights.sum():.9f}, expected 1")
    first = models[0]
    out = [
        (weights[0] * w, weights[0] * b) for w, b in first.layers
    ]
    for m, wt in zip(models[1:], weights[1:]):
        if len(m.layers) != len(first.layers) or m.split_index != first.split_index:
            raise ShapeError("models have different architectures")
        for i, (w, b) in enumerate(m.layers):
            if w.shape != out[i][0].shape:
                raise ShapeError(f"layer {i}: model shape mismatch")
            out[i] = (out[i][0] + wt * w, out[i][1] + wt * b)
    return ModelParams(out, first.split_index)


def aggregate_student(client_models, p) -> ModelParams:
    """Student aggregate over the selected clients' fresh updates."""
    return weighted_aggregate(client_models, p)


def aggregate_teacher(reg: ModelRegistry, teacher_weights) -> ModelParams:
    """Teacher aggregate over all stored snapshots."""
    teacher_weights = np.asarray(teacher_weights, dtype=np.float64)
    if teacher_weights.shape[0] != reg.n_clients:
        raise ShapeError(
            f"{teacher_weights.shape[0]} weights for {reg.n_clients} snapshots"
        )
    return weighted_aggregate(reg.stored, teacher_weights)
