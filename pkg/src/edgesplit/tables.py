"""Calibration-driven lookup tables: expected accuracy loss and compressed size per (layer, bits).

Calibration records live in a line-oriented CSV file with header

    sample_id,layer_index,bit_depth,compressed_bytes,correct_before,correct_after

(booleans as 0/1; lines starting with '#' are ignored). Built tables persist
as JSON with schema ``lookup-tables/1``. Cell statistics accumulate in exact
integer sums, so table construction is order-independent bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from edgesplit.profiles import ModelProfile

TABLES_SCHEMA = "lookup-tables/1"
RECORD_FIELDS = ("sample_id", "layer_index", "bit_depth", "compressed_bytes", "correct_before", "correct_after")


class TableError(ValueError):
    """Bad calibration data, missing cells, or out-of-grid lookups."""


@dataclass(frozen=True, slots=True)
class CalibrationRecord:
    """One (sample, layer, bit-depth) observation from a calibration pass."""

    sample_id: int
    layer_index: int
    bit_depth: int
    compressed_bytes: int
    correct_before: bool
    correct_after: bool


@dataclass(frozen=True, eq=False)
class LookupTables:
    """Accuracy-loss and expected-size grids over layers 1..N and an explicit bit-depth list."""

    n_layers: int
    bit_depths: tuple[int, ...]
    accuracy_loss: np.ndarray
    expected_size: np.ndarray
    sample_count: np.ndarray
    raw_upload_bytes: int
    encoded_upload_bytes: int
    size_stat: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "bit_depths", tuple(int(c) for c in self.bit_depths))
        if not self.bit_depths:
            raise TableError("bit_depths is empty")
        if any(b <= a for a, b in zip(self.bit_depths, self.bit_depths[1:])):
            raise TableError(f"bit_depths must be strictly increasing, got {self.bit_depths}")
        if any(not 1 <= c <= 32 for c in self.bit_depths):
            raise TableError(f"bit_depths must lie in [1, 32], got {self.bit_depths}")
        for name in ("accuracy_loss", "expected_size", "sample_count"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (self.n_layers, len(self.bit_depths)):
                raise TableError(
                    f"{name} shape {arr.shape} != ({self.n_layers}, {len(self.bit_depths)})"
                )
            object.__setattr__(self, name, arr)
        if np.any(self.expected_size <= 0):
            raise TableError("expected_size cells must be positive")

    @property
    def max_bits(self) -> int:
        return max(self.bit_depths)

    def _col(self, bit_depth: int) -> int:
        try:
            return self.bit_depths.index(bit_depth)
        except ValueError:
            raise TableError(f"bit depth {bit_depth} not in table grid {self.bit_depths}") from None

    def lookup_accuracy(self, layer_index: int, bit_depth: int) -> float:
        """Expected accuracy-loss fraction; the virtual layer 0 (all-cloud) loses nothing."""
        if layer_index == 0:
            return 0.0
        if not 1 <= layer_index <= self.n_layers:
            raise TableError(f"layer index {layer_index} outside grid [0, {self.n_layers}]")
        return float(self.accuracy_loss[layer_index - 1, self._col(bit_depth)])

    def lookup_size(self, layer_index: int, bit_depth: int) -> float:
        """Expected compressed bytes; layer 0 returns the encoded input upload size."""
        if layer_index == 0:
            return float(self.encoded_upload_bytes)
        if not 1 <= layer_index <= self.n_layers:
            raise TableError(f"layer index {layer_index} outside grid [0, {self.n_layers}]")
        return float(self.expected_size[layer_index - 1, self._col(bit_depth)])

    def upload_bytes(self, kind: str = "encoded") -> int:
        if kind == "raw":
            return self.raw_upload_bytes
        if kind == "encoded":
            return self.encoded_upload_bytes
        raise TableError(f"unknown upload kind '{kind}'")

    def to_dict(self) -> dict:
        return {
            "schema": TABLES_SCHEMA,
            "n_layers": self.n_layers,
            "bit_depths": list(self.bit_depths),
            "size_stat": self.size_stat,
            "raw_upload_bytes": self.raw_upload_bytes,
            "encoded_upload_bytes": self.encoded_upload_bytes,
            "accuracy_loss": self.accuracy_loss.tolist(),
            "expected_size": self.expected_size.tolist(),
            "sample_count": self.sample_count.tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def export_csv(self, accuracy_path: str | Path, size_path: str | Path) -> None:
        """Plot-ready long-format CSVs: layer_index, bit_depth, value."""
        for path, matrix, column in (
            (accuracy_path, self.accuracy_loss, "accuracy_loss"),
            (size_path, self.expected_size, "expected_bytes"),
        ):
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["layer_index", "bit_depth", column])
                for i in range(self.n_layers):
                    for k, c in enumerate(self.bit_depths):
                        writer.writerow([i + 1, c, repr(float(matrix[i, k]))])


def load_tables(path: str | Path) -> LookupTables:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TableError(f"tables file {path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise TableError(f"cannot read tables file {path}: {exc}") from exc
    if obj.get("schema") != TABLES_SCHEMA:
        raise TableError(f"tables file {path}: schema '{obj.get('schema')}' is not '{TABLES_SCHEMA}'")
    return LookupTables(
        n_layers=int(obj["n_layers"]),
        bit_depths=tuple(int(c) for c in obj["bit_depths"]),
        accuracy_loss=np.array(obj["accuracy_loss"], dtype=np.float64),
        expected_size=np.array(obj["expected_size"], dtype=np.float64),
        sample_count=np.array(obj["sample_count"], dtype=np.int64),
        raw_upload_bytes=int(obj["raw_upload_bytes"]),
        encoded_upload_bytes=int(obj["encoded_upload_bytes"]),
        size_stat=str(obj.get("size_stat", "mean")),
    )


def build_tables(
    records: Iterable[CalibrationRecord],
    model: "ModelProfile",
    c_set: Iterable[int],
    size_stat: str = "mean",
) -> LookupTables:
    """Aggregate a record stream into per-cell mean loss and expected size.

    ``size_stat="p95"`` switches the size statistic to the 95th percentile for
    conservative planning; accuracy loss is always the mean. Records for bit
    depths outside ``c_set`` are ignored; a cell with no records is an error.
    """
    if size_stat not in ("mean", "p95"):
        raise TableError(f"unknown size_stat '{size_stat}'")
    bit_depths = tuple(sorted(set(int(c) for c in c_set)))
    if not bit_depths:
        raise TableError("c_set is empty")
    n = model.n_layers
    cols = {c: k for k, c in enumerate(bit_depths)}
    count = np.zeros((n, len(bit_depths)), dtype=np.int64)
    before_sum = np.zeros_like(count)
    after_sum = np.zeros_like(count)
    bytes_sum = np.zeros_like(count)
    per_cell: list[list[list[int]]] | None = None
    if size_stat == "p95":
        per_cell = [[[] for _ in bit_depths] for _ in range(n)]
    for rec in records:
        if not 1 <= rec.layer_index <= n:
            raise TableError(f"record layer index {rec.layer_index} outside [1, {n}]")
        k = cols.get(rec.bit_depth)
        if k is None:
            continue
        if rec.compressed_bytes <= 0:
            raise TableError(f"record ({rec.layer_index}, {rec.bit_depth}): compressed_bytes must be > 0")
        i = rec.layer_index - 1
        count[i, k] += 1
        before_sum[i, k] += bool(rec.correct_before)
        after_sum[i, k] += bool(rec.correct_after)
        bytes_sum[i, k] += rec.compressed_bytes
        if per_cell is not None:
            per_cell[i][k].append(rec.compressed_bytes)
    if np.any(count == 0):
        missing = [
            (int(i) + 1, bit_depths[int(k)]) for i, k in zip(*np.nonzero(count == 0))
        ]
        raise TableError(f"no calibration records for cells {missing}")
    accuracy_loss = (before_sum - after_sum) / count
    if size_stat == "mean":
        expected_size = bytes_sum / count
    else:
        expected_size = np.array(
            [[np.percentile(np.sort(per_cell[i][k]), 95) for k in range(len(bit_depths))] for i in range(n)]
        )
    return LookupTables(
        n_layers=n,
        bit_depths=bit_depths,
        accuracy_loss=accuracy_loss,
        expected_size=expected_size,
        sample_count=count,
        raw_upload_bytes=model.input_bytes_raw,
        encoded_upload_bytes=model.input_bytes_encoded,
        size_stat=size_stat,
    )


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Per-cell divergence between tables built from two calibration corpora."""

    accuracy_delta: np.ndarray
    size_rel_delta: np.ndarray

    @property
    def max_abs_accuracy_delta(self) -> float:
        return float(np.max(np.abs(self.accuracy_delta)))

    @property
    def mean_abs_accuracy_delta(self) -> float:
        return float(np.mean(np.abs(self.accuracy_delta)))

    @property
    def max_rel_size_delta(self) -> float:
        return float(np.max(np.abs(self.size_rel_delta)))

    @property
    def mean_rel_size_delta(self) -> float:
        return float(np.mean(np.abs(self.size_rel_delta)))

    def summary(self) -> str:
        return (
            f"accuracy |delta|: max {self.max_abs_accuracy_delta:.6f}, mean {self.mean_abs_accuracy_delta:.6f}; "
            f"size rel |delta|: max {self.max_rel_size_delta:.6f}, mean {self.mean_rel_size_delta:.6f}"
        )


def stability_report(
    records_a: Iterable[CalibrationRecord],
    records_b: Iterable[CalibrationRecord],
    model: "ModelProfile",
    c_set: Iterable[int],
    size_stat: str = "mean",
) -> StabilityReport:
    """Rebuild the tables from two corpora and report per-cell divergence.

    Size divergence is symmetric relative: |a - b| / ((a + b) / 2).
    """
    ta = build_tables(records_a, model, c_set, size_stat=size_stat)
    tb = build_tables(records_b, model, c_set, size_stat=size_stat)
    acc_delta = ta.accuracy_loss - tb.accuracy_loss
    size_rel = (ta.expected_size - tb.expected_size) / ((ta.expected_size + tb.expected_size) / 2.0)
    return StabilityReport(accuracy_delta=acc_delta, size_rel_delta=size_rel)


def write_records(path: str | Path, records: Iterable[CalibrationRecord]) -> int:
    """Write records as CSV; returns the number written."""
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow(
                [
                    rec.sample_id,
                    rec.layer_index,
                    rec.bit_depth,
                    rec.compressed_bytes,
                    int(rec.correct_before),
                    int(rec.correct_after),
                ]
            )
            n += 1
    return n


def read_records(path: str | Path) -> list[CalibrationRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(header) != RECORD_FIELDS:
            raise TableError(f"calibration file {path}: expected header {','.join(RECORD_FIELDS)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RECORD_FIELDS):
                raise TableError(f"calibration file {path} line {line_no}: expected {len(RECORD_FIELDS)} columns")
            try:
                records.append(
                    CalibrationRecord(
                        sample_id=int(row[0]),
                        layer_index=int(row[1]),
                        bit_depth=int(row[2]),
                        compressed_bytes=int(row[3]),
                        correct_before=bool(int(row[4])),
                        correct_after=bool(int(row[5])),
                    )
                )
            except ValueError as exc:
                raise TableError(f"calibration file {path} line {line_no}: {exc}") from exc
    return records
