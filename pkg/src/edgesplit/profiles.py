"""Static descriptions of models, devices, and scenarios, plus their file formats.

All three profile kinds are JSON documents with a mandatory ``schema`` field:

``model-profile/1``
    ``model_name``, ``input_bytes_raw``, ``input_bytes_encoded``, and ``points``:
    an ordered list of decoupling points, each with ``index`` (1-based,
    contiguous), ``name``, ``flops`` (fused multiply-adds executed by the
    unit), and ``output_shape``. ``output_elements`` may be given and must
    then equal the product of ``output_shape``.

``device-profile/1``
    ``device_name`` plus ``mode``: ``analytic`` (requires ``flops_per_second``
    and ``fit_scale``) or ``measured`` (requires ``measured_prefix_latency``,
    a non-decreasing cumulative per-layer seconds vector for the paired model).

``scenario/1``
    paths to ``model``, ``edge``, ``cloud``, and ``tables`` files (relative to
    the scenario file), a ``bandwidth_trace`` of ``[time_s, bytes_per_second]``
    pairs, and an ``accuracy_budget`` fraction.

Branchy networks are flattened by the profile author into unit-granularity
points before ingestion; the tools only ever see a chain. A virtual split
point i=0 (run everything in the cloud, upload the input) is handled by the
planner and is never stored in a profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from edgesplit import tables as _tables

MODEL_SCHEMA = "model-profile/1"
DEVICE_SCHEMA = "device-profile/1"
SCENARIO_SCHEMA = "scenario/1"

# Raw feature maps are float32 when reporting sizes and amplification ratios.
FLOAT32_BYTES = 4


class ProfileError(ValueError):
    """A profile file is malformed or violates an invariant."""


def _require(obj: dict, field: str, context: str) -> Any:
    if field not in obj:
        raise ProfileError(f"{context}: missing field '{field}'")
    return obj[field]


def _check_schema(obj: dict, expected: str, context: str) -> None:
    schema = _require(obj, "schema", context)
    if schema != expected:
        raise ProfileError(f"{context}: schema '{schema}' is not '{expected}'")


def _load_json(path: str | Path, context: str) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProfileError(f"{context}: cannot read {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(
            f"{context}: parse error in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(obj, dict):
        raise ProfileError(f"{context}: top-level value in {path} must be an object")
    return obj


@dataclass(frozen=True)
class DecouplingPoint:
    """One position where execution may split: a layer in sequential nets, a unit in branchy ones."""

    index: int
    name: str
    flops: float
    output_elements: int
    output_shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "output_shape", tuple(int(d) for d in self.output_shape))
        if self.flops <= 0:
            raise ProfileError(f"point {self.index}: flops must be > 0")
        if self.output_elements <= 0:
            raise ProfileError(f"point {self.index}: output_elements must be > 0")
        if any(d <= 0 for d in self.output_shape):
            raise ProfileError(f"point {self.index}: output_shape dimensions must be > 0")
        if self.output_elements != math.prod(self.output_shape):
            raise ProfileError(
                f"point {self.index}: output_elements {self.output_elements} "
                f"!= product(output_shape) {math.prod(self.output_shape)}"
            )

    @property
    def feature_bytes_raw(self) -> int:
        return self.output_elements * FLOAT32_BYTES


@dataclass(frozen=True)
class ModelProfile:
    """An ordered chain of decoupling points plus the input payload sizes."""

    model_name: str
    input_bytes_raw: int
    input_bytes_encoded: int
    points: tuple[DecouplingPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ProfileError("model has no decoupling points")
        for pos, point in enumerate(self.points):
            if point.index != pos + 1:
                raise ProfileError(f"non-contiguous index at {point.index}")
        if self.input_bytes_raw <= 0:
            raise ProfileError("input_bytes_raw must be > 0")
        if self.input_bytes_encoded > self.input_bytes_raw:
            raise ProfileError(
                f"input_bytes_encoded {self.input_bytes_encoded} exceeds input_bytes_raw {self.input_bytes_raw}"
            )

    @property
    def n_layers(self) -> int:
        return len(self.points)

    def point(self, index: int) -> DecouplingPoint:
        if not 1 <= index <= self.n_layers:
            raise ProfileError(f"layer index {index} outside [1, {self.n_layers}]")
        return self.points[index - 1]

    def prefix_flops(self) -> np.ndarray:
        """Cumulative FMACs Q(1..i), length N+1 with Q(1..0) = 0."""
        out = np.zeros(self.n_layers + 1)
        np.cumsum([p.flops for p in self.points], out=out[1:])
        return out

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "model_name": self.model_name,
            "input_bytes_raw": self.input_bytes_raw,
            "input_bytes_encoded": self.input_bytes_encoded,
            "points": [
                {
                    "index": p.index,
                    "name": p.name,
                    "flops": p.flops,
                    "output_elements": p.output_elements,
                    "output_shape": list(p.output_shape),
                }
                for p in self.points
            ],
        }


@dataclass(frozen=True)
class DeviceProfile:
    """Per-device throughput (analytic mode) or cumulative per-layer timings (measured mode)."""

    device_name: str
    mode: str
    flops_per_second: float | None = None
    fit_scale: float | None = None
    measured_prefix_latency: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("analytic", "measured"):
            raise ProfileError(f"device '{self.device_name}': unknown mode '{self.mode}'")
        if self.mode == "analytic":
            if self.flops_per_second is None or self.flops_per_second <= 0:
                raise ProfileError(f"device '{self.device_name}': analytic mode requires flops_per_second > 0")
            if self.fit_scale is None or self.fit_scale <= 0:
                raise ProfileError(f"device '{self.device_name}': analytic mode requires fit_scale > 0")
        else:
            vec = self.measured_prefix_latency
            if vec is None or len(vec) == 0:
                raise ProfileError(f"device '{self.device_name}': measured mode requires measured_prefix_latency")
            vec = tuple(float(v) for v in vec)
            object.__setattr__(self, "measured_prefix_latency", vec)
            if any(v < 0 for v in vec):
                raise ProfileError(f"device '{self.device_name}': measured latencies must be >= 0")
            if any(b < a for a, b in zip(vec, vec[1:])):
                raise ProfileError(f"device '{self.device_name}': measured prefix vector must be non-decreasing")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"schema": DEVICE_SCHEMA, "device_name": self.device_name, "mode": self.mode}
        if self.mode == "analytic":
            out["flops_per_second"] = self.flops_per_second
            out["fit_scale"] = self.fit_scale
        else:
            out["measured_prefix_latency"] = list(self.measured_prefix_latency)
        return out


@dataclass(frozen=True)
class Scenario:
    """Everything a planning or simulation run needs, cross-references unchecked until validated."""

    model: ModelProfile
    edge: DeviceProfile
    cloud: DeviceProfile
    bandwidth_trace: tuple[tuple[float, float], ...]
    accuracy_budget: float
    tables: "_tables.LookupTables"

    def __post_init__(self):
        object.__setattr__(
            self, "bandwidth_trace", tuple((float(t), float(bw)) for t, bw in self.bandwidth_trace)
        )

    def with_budget(self, accuracy_budget: float) -> "Scenario":
        return replace(self, accuracy_budget=accuracy_budget)

    def with_constant_bandwidth(self, bytes_per_second: float) -> "Scenario":
        return replace(self, bandwidth_trace=((0.0, float(bytes_per_second)),))

    def with_edge_flops(self, flops_per_second: float) -> "Scenario":
        if self.edge.mode != "analytic":
            raise ProfileError("with_edge_flops requires an analytic edge profile")
        return replace(self, edge=replace(self.edge, flops_per_second=float(flops_per_second)))


def load_model_profile(path: str | Path) -> ModelProfile:
    """Load and validate a model profile file."""
    obj = _load_json(path, "model profile")
    _check_schema(obj, MODEL_SCHEMA, "model profile")
    raw_points = _require(obj, "points", "model profile")
    points = []
    for k, entry in enumerate(raw_points):
        ctx = f"model profile point #{k + 1}"
        shape = tuple(int(d) for d in _require(entry, "output_shape", ctx))
        elements = int(entry.get("output_elements", math.prod(shape)))
        points.append(
            DecouplingPoint(
                index=int(_require(entry, "index", ctx)),
                name=str(_require(entry, "name", ctx)),
                flops=float(_require(entry, "flops", ctx)),
                output_elements=elements,
                output_shape=shape,
            )
        )
    return ModelProfile(
        model_name=str(_require(obj, "model_name", "model profile")),
        input_bytes_raw=int(_require(obj, "input_bytes_raw", "model profile")),
        input_bytes_encoded=int(_require(obj, "input_bytes_encoded", "model profile")),
        points=tuple(points),
    )


def save_model_profile(model: ModelProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_device_profile(path: str | Path) -> DeviceProfile:
    """Load and validate a device profile file."""
    obj = _load_json(path, "device profile")
    _check_schema(obj, DEVICE_SCHEMA, "device profile")
    mode = str(_require(obj, "mode", "device profile"))
    kwargs: dict[str, Any] = {}
    if mode == "analytic":
        kwargs["flops_per_second"] = float(_require(obj, "flops_per_second", "device profile"))
        kwargs["fit_scale"] = float(_require(obj, "fit_scale", "device profile"))
    elif mode == "measured":
        kwargs["measured_prefix_latency"] = tuple(
            float(v) for v in _require(obj, "measured_prefix_latency", "device profile")
        )
    return DeviceProfile(device_name=str(_require(obj, "device_name", "device profile")), mode=mode, **kwargs)


def save_device_profile(device: DeviceProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(device.to_dict(), indent=2) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, resolving the referenced profile and table files."""
    path = Path(path)
    obj = _load_json(path, "scenario")
    _check_schema(obj, SCENARIO_SCHEMA, "scenario")
    base = path.parent

    def resolve(field: str) -> Path:
        return base / str(_require(obj, field, "scenario"))

    trace = tuple(
        (float(entry[0]), float(entry[1])) for entry in _require(obj, "bandwidth_trace", "scenario")
    )
    return Scenario(
        model=load_model_profile(resolve("model")),
        edge=load_device_profile(resolve("edge")),
        cloud=load_device_profile(resolve("cloud")),
        bandwidth_trace=trace,
        accuracy_budget=float(_require(obj, "accuracy_budget", "scenario")),
        tables=_tables.load_tables(resolve("tables")),
    )


def validate_scenario(scenario: Scenario) -> list[str]:
    """Return a list of cross-reference diagnostics; empty means consistent."""
    diags: list[str] = []
    n = scenario.model.n_layers
    t = scenario.tables
    if t.n_layers != n:
        diags.append(f"tables built for N={t.n_layers} paired with model of N={n}")
    if not t.bit_depths:
        diags.append("tables have no bit depths")
    for role, dev in (("edge", scenario.edge), ("cloud", scenario.cloud)):
        if dev.mode == "measured" and len(dev.measured_prefix_latency) != n:
            diags.append(
                f"{role} device '{dev.device_name}' measured vector length "
                f"{len(dev.measured_prefix_latency)} != model N={n}"
            )
    if scenario.accuracy_budget < 0:
        diags.append("accuracy budget must be >= 0")
    if not scenario.bandwidth_trace:
        diags.append("bandwidth trace is empty")
    else:
        times = [t_ for t_, _ in scenario.bandwidth_trace]
        if times[0] != 0.0:
            diags.append("bandwidth trace must start at time 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            diags.append("bandwidth trace times must be strictly increasing")
        if any(bw <= 0 for _, bw in scenario.bandwidth_trace):
            diags.append("bandwidth values must be > 0")
    if t.raw_upload_bytes != scenario.model.input_bytes_raw:
        diags.append(
            f"tables raw upload size {t.raw_upload_bytes} != model input_bytes_raw {scenario.model.input_bytes_raw}"
        )
    if t.encoded_upload_bytes != scenario.model.input_bytes_encoded:
        diags.append(
            f"tables encoded upload size {t.encoded_upload_bytes} "
            f"!= model input_bytes_encoded {scenario.model.input_bytes_encoded}"
        )
    return diags


def amplification_report(model: ModelProfile) -> list[dict]:
    """Per-point raw feature-map bytes versus the input payloads.

    Ratios above 1.0 mark points where naive splitting would upload more than
    the input itself (in-layer data amplification).
    """
    rows = []
    for p in model.points:
        rows.append(
            {
                "index": p.index,
                "name": p.name,
                "output_elements": p.output_elements,
                "feature_bytes_raw": p.feature_bytes_raw,
                "ratio_vs_input_raw": p.feature_bytes_raw / model.input_bytes_raw,
                "ratio_vs_input_encoded": p.feature_bytes_raw / model.input_bytes_encoded,
            }
        )
    return rows
