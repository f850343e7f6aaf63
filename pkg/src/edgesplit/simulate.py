"""Replay of inference request streams through a scenario, with baselines and sweeps.

Requests are sequential (no pipelining): request k departs at k * inter_arrival
and sees the bandwidth-trace value at its departure time. Two fidelity modes:

* ``table``   — transmission cost comes from the size tables, i.e. what the
  planner believes; baseline dominance is exact in this mode because both
  baselines are cells of the planner's own grid (encoded upload) or dominated
  by one (raw upload).
* ``payload`` — the split layer's feature map is actually generated, quantized,
  and size-counted, exposing predictor error next to the table estimate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from edgesplit.codec import encoded_size
from edgesplit.latency import model_from_devices
from edgesplit.planner import PlanController, PlanDecision
from edgesplit.profiles import Scenario, validate_scenario
from edgesplit.quantize import quantize
from edgesplit.synthetic import GeneratorSpec, gen_feature_map


class SimulationError(ValueError):
    """Invalid scenario, stream, or sweep arguments."""


@dataclass(frozen=True)
class RequestStream:
    """A sequential request load: count, spacing, and (optionally) a payload corpus."""

    count: int
    inter_arrival_s: float = 0.0
    corpus: GeneratorSpec | None = None

    def __post_init__(self):
        if self.count <= 0:
            raise SimulationError(f"request count must be > 0, got {self.count}")
        if self.inter_arrival_s < 0:
            raise SimulationError("inter_arrival_s must be >= 0")


@dataclass(frozen=True)
class RequestRecord:
    """One request's latency breakdown plus the plan it ran under."""

    index: int
    depart_s: float
    bandwidth: float
    epoch: int
    split_layer: int
    bit_depth: int
    edge_s: float
    trans_s: float
    cloud_s: float
    total_s: float
    origin2cloud_s: float
    encoded2cloud_s: float
    payload_bytes: int | None = None
    actual_trans_s: float | None = None
    actual_total_s: float | None = None


@dataclass(frozen=True)
class PlanEpoch:
    epoch: int
    first_request: int
    split_layer: int
    bit_depth: int


@dataclass(frozen=True, eq=False)
class RunReport:
    """Per-request breakdowns, aggregates, baselines, and speedups for one run."""

    mode: str
    requests: tuple[RequestRecord, ...]
    plan_epochs: tuple[PlanEpoch, ...]

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total_s for r in self.requests])

    @property
    def mean_total_s(self) -> float:
        return float(np.mean(self.totals))

    @property
    def p50_total_s(self) -> float:
        return float(np.percentile(self.totals, 50))

    @property
    def p95_total_s(self) -> float:
        return float(np.percentile(self.totals, 95))

    @property
    def origin2cloud_mean_s(self) -> float:
        return float(np.mean([r.origin2cloud_s for r in self.requests]))

    @property
    def encoded2cloud_mean_s(self) -> float:
        return float(np.mean([r.encoded2cloud_s for r in self.requests]))

    @property
    def speedup_vs_origin(self) -> float:
        return self.origin2cloud_mean_s / self.mean_total_s

    @property
    def speedup_vs_encoded(self) -> float:
        return self.encoded2cloud_mean_s / self.mean_total_s

    @property
    def actual_mean_total_s(self) -> float | None:
        vals = [r.actual_total_s for r in self.requests]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write per-request rows; returns the CSV text (floats via repr, bit-exact)."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        payload_mode = self.mode == "payload"
        header = [
            "request", "depart_s", "bandwidth_Bps", "epoch", "split_layer", "bit_depth",
            "edge_s", "trans_s", "cloud_s", "total_s", "origin2cloud_s", "encoded2cloud_s",
        ]
        if payload_mode:
            header += ["payload_bytes", "actual_trans_s", "actual_total_s"]
        writer.writerow(header)
        for r in self.requests:
            row = [
                r.index, repr(r.depart_s), repr(r.bandwidth), r.epoch, r.split_layer, r.bit_depth,
                repr(r.edge_s), repr(r.trans_s), repr(r.cloud_s), repr(r.total_s),
                repr(r.origin2cloud_s), repr(r.encoded2cloud_s),
            ]
            if payload_mode:
                row += [r.payload_bytes, repr(r.actual_trans_s), repr(r.actual_total_s)]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def plans_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "first_request", "split_layer", "bit_depth"])
        for p in self.plan_epochs:
            writer.writerow([p.epoch, p.first_request, p.split_layer, p.bit_depth])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> str:
        lines = [
            f"mode: {self.mode}",
            f"requests: {len(self.requests)}",
            f"adaptive mean latency: {self.mean_total_s:.6f} s (p50 {self.p50_total_s:.6f}, p95 {self.p95_total_s:.6f})",
            f"origin2cloud mean latency: {self.origin2cloud_mean_s:.6f} s",
            f"encoded2cloud mean latency: {self.encoded2cloud_mean_s:.6f} s",
            f"speedup vs origin2cloud: {self.speedup_vs_origin:.4f}x",
            f"speedup vs encoded2cloud: {self.speedup_vs_encoded:.4f}x",
        ]
        if self.actual_mean_total_s is not None:
            lines.append(f"payload-accurate mean latency: {self.actual_mean_total_s:.6f} s")
        lines.append("plans: " + "; ".join(
            f"epoch {p.epoch} from request {p.first_request}: split={p.split_layer} bits={p.bit_depth}"
            for p in self.plan_epochs
        ))
        return "\n".join(lines)


def bandwidth_at(trace: Sequence[tuple[float, float]], t: float) -> float:
    """Piecewise-constant trace value at time t; the last value persists."""
    if not trace:
        raise SimulationError("bandwidth trace is empty")
    current = trace[0][1]
    for start, value in trace:
        if t < start:
            break
        current = value
    return float(current)


def run(scenario: Scenario, stream: RequestStream, mode: str = "table", *, rtt_s: float = 0.0) -> RunReport:
    """Replay the stream through the scenario; see the module docstring for modes."""
    if mode not in ("table", "payload"):
        raise SimulationError(f"unknown mode '{mode}'")
    if mode == "payload":
        if stream.corpus is None:
            raise SimulationError("payload mode needs a RequestStream with a corpus")
        if stream.corpus.n_layers != scenario.model.n_layers:
            raise SimulationError(
                f"corpus has {stream.corpus.n_layers} layers, model has {scenario.model.n_layers}"
            )
    diags = validate_scenario(scenario)
    if diags:
        raise SimulationError("scenario failed validation: " + "; ".join(diags))
    lat = model_from_devices(scenario.model, scenario.edge, scenario.cloud)
    controller = PlanController(scenario.model, lat, scenario.tables, scenario.accuracy_budget)
    records = []
    epochs: list[PlanEpoch] = []
    raw_bytes = scenario.tables.raw_upload_bytes
    enc_bytes = scenario.tables.encoded_upload_bytes
    cloud_all = float(lat.cloud_suffix[0])
    for k in range(stream.count):
        t = k * stream.inter_arrival_s
        bw = bandwidth_at(scenario.bandwidth_trace, t)
        changed = controller.replan(bw)
        decision, epoch = controller.snapshot()
        if changed is not None:
            epochs.append(PlanEpoch(epoch, k, decision.split_layer, decision.bit_depth))
        # Baselines share the component summation order of the grid so that
        # dominance comparisons are exact in table mode.
        origin = (0.0 + (raw_bytes / bw + rtt_s)) + cloud_all
        encoded = (0.0 + (enc_bytes / bw + rtt_s)) + cloud_all
        trans = decision.trans_s + rtt_s
        total = (decision.edge_s + trans) + decision.cloud_s
        extra: dict = {}
        if mode == "payload":
            if decision.split_layer == 0:
                payload = enc_bytes
            else:
                fm = gen_feature_map(stream.corpus, decision.split_layer, k)
                qm = quantize(fm, decision.bit_depth)
                payload = encoded_size(qm, layer_index=decision.split_layer)
            actual_trans = payload / bw + rtt_s
            extra = {
                "payload_bytes": int(payload),
                "actual_trans_s": actual_trans,
                "actual_total_s": (decision.edge_s + actual_trans) + decision.cloud_s,
            }
        records.append(
            RequestRecord(
                index=k,
                depart_s=t,
                bandwidth=bw,
                epoch=epoch,
                split_layer=decision.split_layer,
                bit_depth=decision.bit_depth,
                edge_s=decision.edge_s,
                trans_s=trans,
                cloud_s=decision.cloud_s,
                total_s=total,
                origin2cloud_s=origin,
                encoded2cloud_s=encoded,
                **extra,
            )
        )
    return RunReport(mode=mode, requests=tuple(records), plan_epochs=tuple(epochs))


@dataclass(frozen=True)
class SweepRow:
    variable: str
    value: float
    mean_total_s: float
    split_layer: int
    bit_depth: int
    speedup_vs_origin: float
    speedup_vs_encoded: float


def _final_plan(report: RunReport) -> PlanEpoch:
    return report.plan_epochs[-1]


def sweep_accuracy(scenario: Scenario, budgets: Sequence[float], stream: RequestStream | None = None) -> list[SweepRow]:
    """Run the scenario once per accuracy budget; latency is non-increasing in the budget."""
    stream = stream or RequestStream(count=1)
    rows = []
    for budget in budgets:
        rep = run(scenario.with_budget(float(budget)), stream)
        plan = _final_plan(rep)
        rows.append(
            SweepRow("accuracy_budget", float(budget), rep.mean_total_s, plan.split_layer,
                     plan.bit_depth, rep.speedup_vs_origin, rep.speedup_vs_encoded)
        )
    return rows


def sweep_bandwidth(scenario: Scenario, bandwidths: Sequence[float], stream: RequestStream | None = None) -> list[SweepRow]:
    """Run the scenario once per constant bandwidth."""
    stream = stream or RequestStream(count=1)
    rows = []
    for bw in bandwidths:
        rep = run(scenario.with_constant_bandwidth(float(bw)), stream)
        plan = _final_plan(rep)
        rows.append(
            SweepRow("bandwidth_Bps", float(bw), rep.mean_total_s, plan.split_layer,
                     plan.bit_depth, rep.speedup_vs_origin, rep.speedup_vs_encoded)
        )
    return rows


def sweep_edge_power(scenario: Scenario, flops_list: Sequence[float], stream: RequestStream | None = None) -> list[SweepRow]:
    """Run the scenario once per edge throughput; requires an analytic edge profile."""
    if scenario.edge.mode != "analytic":
        raise SimulationError("edge power sweep requires an analytic edge profile")
    stream = stream or RequestStream(count=1)
    rows = []
    for flops in flops_list:
        rep = run(scenario.with_edge_flops(float(flops)), stream)
        plan = _final_plan(rep)
        rows.append(
            SweepRow("edge_flops_per_second", float(flops), rep.mean_total_s, plan.split_layer,
                     plan.bit_depth, rep.speedup_vs_origin, rep.speedup_vs_encoded)
        )
    return rows


def sweep_rows_csv(rows: Sequence[SweepRow], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variable", "value", "mean_total_s", "split_layer", "bit_depth",
                     "speedup_vs_origin", "speedup_vs_encoded"])
    for r in rows:
        writer.writerow([r.variable, repr(r.value), repr(r.mean_total_s), r.split_layer,
                         r.bit_depth, repr(r.speedup_vs_origin), repr(r.speedup_vs_encoded)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
