"""The three latency components of a split decision: edge prefix, cloud suffix, transmission.

Profiles store fused multiply-add (FMAC) counts; the analytic model converts
them to FLOPs with a fixed factor of 2 before dividing by device throughput:

    T_edge(i)  = fit_scale_e * 2 * Q(1..i)   / F_edge
    T_cloud(i) = fit_scale_c * 2 * Q(i+1..N) / F_cloud
    T_trans    = size_bytes / bandwidth

Measured mode skips the model entirely and cumulates profiled per-layer times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from edgesplit.profiles import DeviceProfile, ModelProfile

FLOPS_PER_FMAC = 2.0


class LatencyError(ValueError):
    """Inconsistent timing vectors or device modes."""


@dataclass(frozen=True, eq=False)
class LatencyModel:
    """edge_prefix[i] = time to run layers 1..i at the edge; cloud_suffix[i] = layers i+1..N in the cloud.

    Both vectors have length N+1 (index 0..N) with edge_prefix[0] == 0 and
    cloud_suffix[N] == 0 exactly.
    """

    edge_prefix: np.ndarray
    cloud_suffix: np.ndarray
    provenance: str

    def __post_init__(self):
        edge = np.asarray(self.edge_prefix, dtype=np.float64)
        cloud = np.asarray(self.cloud_suffix, dtype=np.float64)
        object.__setattr__(self, "edge_prefix", edge)
        object.__setattr__(self, "cloud_suffix", cloud)
        if edge.shape != cloud.shape or edge.ndim != 1 or edge.size < 2:
            raise LatencyError("edge and cloud vectors must share length N+1 >= 2")
        if edge[0] != 0.0:
            raise LatencyError("edge_prefix[0] must be exactly 0")
        if cloud[-1] != 0.0:
            raise LatencyError("cloud_suffix[N] must be exactly 0")
        if np.any(np.diff(edge) < 0):
            raise LatencyError("edge_prefix must be non-decreasing")
        if np.any(np.diff(cloud) > 0):
            raise LatencyError("cloud_suffix must be non-increasing")

    @property
    def n_layers(self) -> int:
        return int(self.edge_prefix.size - 1)

    def edge_time(self, split_layer: int) -> float:
        return float(self.edge_prefix[split_layer])

    def cloud_time(self, split_layer: int) -> float:
        return float(self.cloud_suffix[split_layer])

    def export_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split_layer", "edge_prefix_s", "cloud_suffix_s"])
            for i in range(self.n_layers + 1):
                writer.writerow([i, repr(float(self.edge_prefix[i])), repr(float(self.cloud_suffix[i]))])


def analytic_model(model: "ModelProfile", edge: "DeviceProfile", cloud: "DeviceProfile") -> LatencyModel:
    """Latency from FMAC counts and device throughput; both devices must be analytic."""
    for role, dev in (("edge", edge), ("cloud", cloud)):
        if dev.mode != "analytic":
            raise LatencyError(f"{role} device '{dev.device_name}' is not in analytic mode")
    prefix = model.prefix_flops()
    total = prefix[-1]
    edge_prefix = edge.fit_scale * FLOPS_PER_FMAC * prefix / edge.flops_per_second
    cloud_suffix = cloud.fit_scale * FLOPS_PER_FMAC * (total - prefix) / cloud.flops_per_second
    return LatencyModel(edge_prefix=edge_prefix, cloud_suffix=cloud_suffix, provenance="analytic")


def measured_model(
    model: "ModelProfile",
    edge_per_layer: Iterable[float],
    cloud_per_layer: Iterable[float],
) -> LatencyModel:
    """Latency from profiled per-layer execution times (seconds, length N each)."""
    n = model.n_layers
    vectors = []
    for role, per_layer in (("edge", edge_per_layer), ("cloud", cloud_per_layer)):
        vec = np.asarray(list(per_layer), dtype=np.float64)
        if vec.size != n:
            raise LatencyError(f"{role} per-layer vector length {vec.size} != model N={n}")
        if np.any(vec < 0):
            raise LatencyError(f"{role} per-layer vector has a negative entry")
        vectors.append(vec)
    edge_vec, cloud_vec = vectors
    edge_prefix = np.zeros(n + 1)
    np.cumsum(edge_vec, out=edge_prefix[1:])
    cloud_suffix = np.zeros(n + 1)
    cloud_suffix[:-1] = np.cumsum(cloud_vec[::-1])[::-1]
    return LatencyModel(edge_prefix=edge_prefix, cloud_suffix=cloud_suffix, provenance="measured")


def model_from_devices(model: "ModelProfile", edge: "DeviceProfile", cloud: "DeviceProfile") -> LatencyModel:
    """Build the latency model a scenario implies, whatever mode its devices use.

    Measured device profiles carry cumulative prefix vectors; they are
    differenced back to per-layer times so mixed measured/analytic pairs work.
    """
    if edge.mode == "analytic" and cloud.mode == "analytic":
        return analytic_model(model, edge, cloud)
    n = model.n_layers
    per_layer = {}
    for role, dev in (("edge", edge), ("cloud", cloud)):
        if dev.mode == "measured":
            prefix = np.asarray(dev.measured_prefix_latency, dtype=np.float64)
            if prefix.size != n:
                raise LatencyError(
                    f"{role} device '{dev.device_name}' measured vector length {prefix.size} != model N={n}"
                )
            per_layer[role] = np.diff(prefix, prepend=0.0)
        else:
            scaled = dev.fit_scale * FLOPS_PER_FMAC * np.asarray([p.flops for p in model.points])
            per_layer[role] = scaled / dev.flops_per_second
    mixed = measured_model(model, per_layer["edge"], per_layer["cloud"])
    provenance = "measured" if edge.mode == cloud.mode == "measured" else "mixed"
    return LatencyModel(edge_prefix=mixed.edge_prefix, cloud_suffix=mixed.cloud_suffix, provenance=provenance)


def transmission_time(size_bytes: float, bytes_per_second: float) -> float:
    """size / bandwidth, exactly."""
    if bytes_per_second <= 0:
        raise LatencyError(f"bandwidth must be > 0, got {bytes_per_second}")
    if size_bytes < 0:
        raise LatencyError(f"size must be >= 0, got {size_bytes}")
    return size_bytes / bytes_per_second
