"""Simulated greedy layer-to-worker assignment (no real communication).

Layers are sorted by parameter count, largest first, and each goes to the
currently least-loaded worker.  Ties on load resolve to the lowest worker
index; ties on size resolve to the lowest layer id.  The sync-cost report
reduces the distributed story to two numbers: the makespan (largest
per-worker load) and the total broadcast volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


@dataclass
class WorkerAssignment:
    layer_ids: list[int] = field(default_factory=list)
    load: int = 0


@dataclass
class Assignment:
    workers: list[WorkerAssignment]
    sizes: dict[int, int]

    @property
    def num_workers(self) -> int:
        return len(self.workers)


@dataclass(frozen=True)
class CostModel:
    compute_per_param: float = 1.0
    broadcast_per_param: float = 1.0


@dataclass(frozen=True)
class SyncCostReport:
    makespan: float
    broadcast_volume: float
    worker_loads: tuple[int, ...]


def greedy_balance(layer_sizes: Sequence[tuple[int, int]], workers: int) -> Assignment:
    """Assign each (layer_id, params) entry to the least-loaded worker."""
    if workers < 1:
        raise ValueError("need at least one worker")
    if not layer_sizes:
        raise ValueError("no layers to assign")
    for layer_id, params in layer_sizes:
        if params <= 0:
            raise ValueError(f"layer {layer_id} has non-positive parameter count {params}")
    ids = [layer_id for layer_id, _ in layer_sizes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate layer ids")
    ordered = sorted(layer_sizes, key=lambda item: (-item[1], item[0]))
    assignment = Assignment(workers=[WorkerAssignment() for _ in range(workers)], sizes=dict(layer_sizes))
    for layer_id, params in ordered:
        target = min(range(workers), key=lambda w: (assignment.workers[w].load, w))
        assignment.workers[target].layer_ids.append(layer_id)
        assignment.workers[target].load += params
    return assignment


def simulate_sync_cost(assignment: Assignment, cost_model: CostModel = CostModel()) -> SyncCostReport:
    loads = tuple(w.load for w in assignment.workers)
    total = sum(loads)
    return SyncCostReport(
        makespan=max(loads) * cost_model.compute_per_param,
        broadcast_volume=total * cost_model.broadcast_per_param,
        worker_loads=loads,
    )
