"""Split-decision optimization: pick (split layer, bit depth) minimizing total latency under an accuracy budget.

The decision space is the (N+1) x K grid of split layers 0..N (0 = upload the
encoded input, run everything in the cloud) and the table's bit depths. With
the one-choice constraint the integer program reduces to an argmin over
feasible cells; an optional branch-and-bound path must return the identical
decision and exists to cross-check the reference solver. Ties break toward
the larger split layer, then the larger bit depth (prefer more edge compute
and finer features at equal latency).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from edgesplit.latency import LatencyModel
    from edgesplit.profiles import ModelProfile
    from edgesplit.tables import LookupTables


class PlanError(ValueError):
    """Dimension mismatch, bad bandwidth, or an infeasible restricted grid."""


# bit_depth marker for split_layer == 0 decisions (no feature map crosses the wire)
UPLOAD_BIT_DEPTH = 0

SOLVERS = ("exhaustive", "bnb")


@dataclass(frozen=True, eq=False)
class DecisionGrid:
    """Cost and feasibility of every candidate (split layer, bit depth) at one bandwidth."""

    n_layers: int
    bit_depths: tuple[int, ...]
    cost: np.ndarray
    feasible: np.ndarray
    edge_s: np.ndarray
    trans_s: np.ndarray
    cloud_s: np.ndarray
    accuracy_loss: np.ndarray
    bandwidth: float
    accuracy_budget: float

    def bit_depth_at(self, col: int, split_layer: int) -> int:
        return UPLOAD_BIT_DEPTH if split_layer == 0 else self.bit_depths[col]


@dataclass(frozen=True)
class PlanDecision:
    """A chosen split with its predicted latency breakdown."""

    split_layer: int
    bit_depth: int
    edge_s: float
    trans_s: float
    cloud_s: float
    total_s: float
    predicted_accuracy_loss: float
    solver: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "split_layer": self.split_layer,
                "bit_depth": self.bit_depth,
                "edge_s": self.edge_s,
                "trans_s": self.trans_s,
                "cloud_s": self.cloud_s,
                "total_s": self.total_s,
                "predicted_accuracy_loss": self.predicted_accuracy_loss,
                "solver": self.solver,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PlanDecision":
        obj = json.loads(text)
        return cls(**{k: obj[k] for k in (
            "split_layer", "bit_depth", "edge_s", "trans_s", "cloud_s",
            "total_s", "predicted_accuracy_loss", "solver",
        )})

    def same_cell(self, other: "PlanDecision | None") -> bool:
        return other is not None and self.split_layer == other.split_layer and self.bit_depth == other.bit_depth


def build_grid(
    model: "ModelProfile",
    latency: "LatencyModel",
    tables: "LookupTables",
    bandwidth: float,
    accuracy_budget: float,
    *,
    min_split_layer: int = 0,
) -> DecisionGrid:
    """Evaluate cost = edge + transmission + cloud for every cell and mark budget-feasible ones.

    Row 0 always transmits the encoded input with zero accuracy loss, so the
    grid is never empty unless ``min_split_layer`` excludes it.
    """
    n = model.n_layers
    if tables.n_layers != n:
        raise PlanError(f"tables built for N={tables.n_layers} paired with model of N={n}")
    if latency.n_layers != n:
        raise PlanError(f"latency model has N={latency.n_layers}, model has N={n}")
    if bandwidth <= 0:
        raise PlanError(f"bandwidth must be > 0, got {bandwidth}")
    if accuracy_budget < 0:
        raise PlanError(f"accuracy budget must be >= 0, got {accuracy_budget}")
    if not 0 <= min_split_layer <= n:
        raise PlanError(f"min_split_layer {min_split_layer} outside [0, {n}]")
    k = len(tables.bit_depths)
    sizes = np.empty((n + 1, k))
    sizes[0, :] = tables.encoded_upload_bytes
    sizes[1:, :] = tables.expected_size
    loss = np.zeros((n + 1, k))
    loss[1:, :] = tables.accuracy_loss
    trans = sizes / bandwidth
    cost = (latency.edge_prefix[:, None] + trans) + latency.cloud_suffix[:, None]
    feasible = loss <= accuracy_budget
    if min_split_layer > 0:
        feasible[:min_split_layer, :] = False
    return DecisionGrid(
        n_layers=n,
        bit_depths=tables.bit_depths,
        cost=cost,
        feasible=feasible,
        edge_s=latency.edge_prefix.copy(),
        trans_s=trans,
        cloud_s=latency.cloud_suffix.copy(),
        accuracy_loss=loss,
        bandwidth=float(bandwidth),
        accuracy_budget=float(accuracy_budget),
    )


def _decision_from_cell(grid: DecisionGrid, i: int, k: int, solver: str) -> PlanDecision:
    return PlanDecision(
        split_layer=i,
        bit_depth=grid.bit_depth_at(k, i),
        edge_s=float(grid.edge_s[i]),
        trans_s=float(grid.trans_s[i, k]),
        cloud_s=float(grid.cloud_s[i]),
        total_s=float(grid.cost[i, k]),
        predicted_accuracy_loss=float(grid.accuracy_loss[i, k]),
        solver=solver,
    )


def _solve_exhaustive(grid: DecisionGrid) -> tuple[int, int]:
    masked = np.where(grid.feasible, grid.cost, np.inf)
    best = masked.min()
    if not np.isfinite(best):
        raise PlanError("no feasible cell in the decision grid")
    ties = np.argwhere(masked == best)
    i, k = max(map(tuple, ties))
    return int(i), int(k)


def _solve_bnb(grid: DecisionGrid) -> tuple[int, int]:
    """Row-wise branch and bound; prunes on the row's unconstrained lower bound."""
    row_lb = grid.cost.min(axis=1)
    order = np.argsort(row_lb, kind="stable")
    best: tuple[int, int] | None = None
    best_cost = np.inf
    for i in order:
        if best is not None and row_lb[i] > best_cost:
            continue
        for k in range(len(grid.bit_depths)):
            if not grid.feasible[i, k]:
                continue
            c = grid.cost[i, k]
            if (
                c < best_cost
                or (c == best_cost and best is not None and (i, k) > best)
            ):
                best = (int(i), int(k))
                best_cost = c
    if best is None:
        raise PlanError("no feasible cell in the decision grid")
    return best


def solve(grid: DecisionGrid, method: str = "exhaustive") -> PlanDecision:
    """Return the cheapest feasible cell under the documented tie-breaks."""
    if method == "exhaustive":
        i, k = _solve_exhaustive(grid)
    elif method == "bnb":
        i, k = _solve_bnb(grid)
    else:
        raise PlanError(f"unknown solver '{method}' (expected one of {SOLVERS})")
    return _decision_from_cell(grid, i, k, method)


class PlanController:
    """Serializes re-planning on bandwidth changes and hands out (decision, epoch) snapshots.

    The epoch increments only when the chosen cell changes; an unchanged cell
    returns None (the stored decision is still refreshed with the new
    bandwidth's predicted breakdown).
    """

    def __init__(
        self,
        model: "ModelProfile",
        latency: "LatencyModel",
        tables: "LookupTables",
        accuracy_budget: float,
        *,
        solver: str = "exhaustive",
        min_split_layer: int = 0,
    ):
        if solver not in SOLVERS:
            raise PlanError(f"unknown solver '{solver}' (expected one of {SOLVERS})")
        self._model = model
        self._latency = latency
        self._tables = tables
        self._budget = accuracy_budget
        self._solver = solver
        self._min_split_layer = min_split_layer
        self._lock = threading.Lock()
        self._decision: PlanDecision | None = None
        self._epoch = 0
        self._bandwidth: float | None = None

    @property
    def epoch(self) -> int:
        with self._lock:
            return self._epoch

    @property
    def decision(self) -> PlanDecision | None:
        with self._lock:
            return self._decision

    @property
    def bandwidth(self) -> float | None:
        with self._lock:
            return self._bandwidth

    def snapshot(self) -> tuple[PlanDecision | None, int]:
        with self._lock:
            return self._decision, self._epoch

    def force_epoch(self, epoch: int) -> None:
        """Fast-forward the epoch counter (recovery after talking to a newer peer)."""
        with self._lock:
            self._epoch = max(self._epoch, int(epoch))

    def replan(self, bandwidth: float) -> PlanDecision | None:
        """Re-solve for the given bandwidth; None means the decision cell is unchanged."""
        grid = build_grid(
            self._model,
            self._latency,
            self._tables,
            bandwidth,
            self._budget,
            min_split_layer=self._min_split_layer,
        )
        decision = solve(grid, self._solver)
        with self._lock:
            unchanged = decision.same_cell(self._decision)
            self._decision = decision
            self._bandwidth = float(bandwidth)
            if unchanged:
                return None
            self._epoch += 1
            return decision
