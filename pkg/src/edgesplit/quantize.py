"""Uniform affine quantization of float feature maps into small integer symbols.

The forward map sends a float map x into [0, 2^c) integer symbols. When
max(x) >= 2^c the full affine rescale applies; otherwise values are already
small and are only rounded and clamped (the passthrough branch). Rounding is
half-away-from-zero on the scaled value so symbol tables are reproducible
bit-for-bit. min/max are computed per map per inference and travel with the
payload, not as global calibration constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class QuantizeError(ValueError):
    """Invalid feature map or bit depth."""


MIN_BITS = 1
MAX_BITS = 32


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A finite float feature map stored flat in row-major order."""

    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        values = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        if not shape or any(d <= 0 for d in shape):
            raise QuantizeError(f"invalid shape {shape}")
        expected = math.prod(shape)
        if values.size != expected:
            raise QuantizeError(f"values length {values.size} != product(shape) {expected}")
        if not np.all(np.isfinite(values)):
            raise QuantizeError("feature map contains non-finite values")

    @property
    def element_count(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class QuantizedMap:
    """Integer symbols in [0, 2^bit_depth) plus the header fields needed to invert."""

    shape: tuple[int, ...]
    bit_depth: int
    v_min: float
    v_max: float
    passthrough: bool
    symbols: np.ndarray

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        symbols = np.asarray(self.symbols, dtype=np.int64).ravel()
        object.__setattr__(self, "symbols", symbols)
        if not MIN_BITS <= self.bit_depth <= MAX_BITS:
            raise QuantizeError(f"bit depth {self.bit_depth} outside [{MIN_BITS}, {MAX_BITS}]")
        expected = math.prod(shape)
        if symbols.size != expected:
            raise QuantizeError(f"symbols length {symbols.size} != product(shape) {expected}")
        if symbols.size and (symbols.min() < 0 or symbols.max() >= (1 << self.bit_depth)):
            raise QuantizeError(f"symbols outside [0, 2^{self.bit_depth})")
        if self.v_min > self.v_max:
            raise QuantizeError("v_min exceeds v_max")

    @property
    def element_count(self) -> int:
        return int(self.symbols.size)


def quantize(fm: FeatureMap, bit_depth: int) -> QuantizedMap:
    """Convert a float feature map into integer symbols at the given bit depth."""
    if not isinstance(bit_depth, (int, np.integer)) or not MIN_BITS <= bit_depth <= MAX_BITS:
        raise QuantizeError(f"bit depth {bit_depth} outside [{MIN_BITS}, {MAX_BITS}]")
    bit_depth = int(bit_depth)
    x = fm.values
    v_min = float(x.min())
    v_max = float(x.max())
    top = float((1 << bit_depth) - 1)
    if v_max == v_min:
        # Degenerate constant map: all symbols 0 with the affine inverse
        # returning v_min exactly, regardless of branch.
        symbols = np.zeros(x.size, dtype=np.int64)
        passthrough = False
    elif v_max >= float(1 << bit_depth):
        scaled = top * (x - v_min) / (v_max - v_min)
        symbols = np.floor(scaled + 0.5).astype(np.int64)
        passthrough = False
    else:
        symbols = np.floor(np.clip(x, 0.0, top) + 0.5).astype(np.int64)
        passthrough = True
    return QuantizedMap(
        shape=fm.shape,
        bit_depth=bit_depth,
        v_min=v_min,
        v_max=v_max,
        passthrough=passthrough,
        symbols=symbols,
    )


def dequantize(qm: QuantizedMap) -> FeatureMap:
    """Invert the quantization map. Passthrough symbols are returned as-is;
    otherwise the affine inverse bounds the per-element error by
    (v_max - v_min) / (2 * (2^bit_depth - 1))."""
    if qm.passthrough:
        values = qm.symbols.astype(np.float64)
    else:
        step = (qm.v_max - qm.v_min) / float((1 << qm.bit_depth) - 1)
        values = qm.v_min + qm.symbols * step
    return FeatureMap(shape=qm.shape, values=values)


def reconstruction_error_bound(qm: QuantizedMap) -> float:
    """Worst-case |dequantize(qm) - original| for non-passthrough maps."""
    if qm.passthrough:
        return 0.5
    return (qm.v_max - qm.v_min) / (2.0 * ((1 << qm.bit_depth) - 1))
