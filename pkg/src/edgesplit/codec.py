"""Lossless entropy coding of quantized symbol arrays into self-describing blocks.

A block is a canonical-Huffman-coded symbol array with a fixed header. All
multi-byte integers are little-endian; payload bits are packed MSB-first
within each byte. Layout:

    offset  size  field
    0       1     format_version (currently 1)
    1       1     flags: bit0 = passthrough quantization, bit1 = degenerate
    2       2     layer_index (u16)
    4       1     bit_depth c (u8, 1..16)
    5       1     ndim (u8)
    6       8     v_min (f64)
    14      8     v_max (f64)
    22      8     symbol_count (u64, must equal product of dims)
    30      4*n   dims (u32 each)

followed by one of:

    degenerate (single distinct symbol):
        4     the symbol value (u32); no table, no payload
    general:
        2^c   canonical code lengths, one byte per possible symbol (0 = absent)
        4     payload_byte_count (u32)
        ...   payload: Huffman codewords, MSB-first, zero-padded to a byte

Code lengths alone define the code: codewords are assigned in (length,
symbol) order, so identical symbol frequencies always produce identical
tables. Lengths are capped at 32 bits by a Kraft-preserving adjustment.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass

import numpy as np

from edgesplit.quantize import QuantizedMap

FORMAT_VERSION = 1
MAX_CODE_LENGTH = 32
MAX_BIT_DEPTH = 16

_FLAG_PASSTHROUGH = 0x01
_FLAG_DEGENERATE = 0x02
_FIXED_HEADER = struct.Struct("<BBHBBddQ")
_LUT_BITS = 12


class CodecError(ValueError):
    """Malformed block, corrupt payload, or unsupported alphabet."""


@dataclass(frozen=True, eq=False)
class EncodedBlock:
    """Parsed form of one coded feature-map block."""

    format_version: int
    layer_index: int
    bit_depth: int
    shape: tuple[int, ...]
    v_min: float
    v_max: float
    passthrough: bool
    symbol_count: int
    code_lengths: np.ndarray | None
    degenerate_symbol: int | None
    payload: bytes

    @property
    def degenerate(self) -> bool:
        return self.degenerate_symbol is not None

    @property
    def header_size(self) -> int:
        size = _FIXED_HEADER.size + 4 * len(self.shape)
        if self.degenerate:
            return size + 4
        return size + (1 << self.bit_depth) + 4

    def to_bytes(self) -> bytes:
        flags = (_FLAG_PASSTHROUGH if self.passthrough else 0) | (_FLAG_DEGENERATE if self.degenerate else 0)
        parts = [
            _FIXED_HEADER.pack(
                self.format_version,
                flags,
                self.layer_index,
                self.bit_depth,
                len(self.shape),
                self.v_min,
                self.v_max,
                self.symbol_count,
            ),
            struct.pack(f"<{len(self.shape)}I", *self.shape),
        ]
        if self.degenerate:
            parts.append(struct.pack("<I", self.degenerate_symbol))
        else:
            parts.append(self.code_lengths.astype(np.uint8).tobytes())
            parts.append(struct.pack("<I", len(self.payload)))
            parts.append(self.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedBlock":
        if len(data) < _FIXED_HEADER.size:
            raise CodecError("truncated header")
        version, flags, layer_index, bit_depth, ndim, v_min, v_max, symbol_count = _FIXED_HEADER.unpack_from(data, 0)
        if version != FORMAT_VERSION:
            raise CodecError(f"unsupported format version {version}")
        if flags & ~(_FLAG_PASSTHROUGH | _FLAG_DEGENERATE):
            raise CodecError(f"unknown flag bits 0x{flags:02x}")
        if not 1 <= bit_depth <= MAX_BIT_DEPTH:
            raise CodecError(f"bit depth {bit_depth} outside [1, {MAX_BIT_DEPTH}]")
        if ndim < 1:
            raise CodecError("ndim must be >= 1")
        pos = _FIXED_HEADER.size
        if len(data) < pos + 4 * ndim:
            raise CodecError("truncated header")
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        if any(d == 0 for d in shape):
            raise CodecError("zero dimension in shape")
        if symbol_count != math.prod(shape):
            raise CodecError(
                f"symbol-count mismatch: header says {symbol_count}, shape implies {math.prod(shape)}"
            )
        passthrough = bool(flags & _FLAG_PASSTHROUGH)
        if flags & _FLAG_DEGENERATE:
            if len(data) < pos + 4:
                raise CodecError("truncated header")
            (symbol,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if len(data) != pos:
                raise CodecError(f"{len(data) - pos} trailing bytes after degenerate block")
            if symbol >= (1 << bit_depth):
                raise CodecError(f"degenerate symbol {symbol} outside alphabet")
            return cls(
                format_version=version,
                layer_index=layer_index,
                bit_depth=bit_depth,
                shape=tuple(shape),
                v_min=v_min,
                v_max=v_max,
                passthrough=passthrough,
                symbol_count=symbol_count,
                code_lengths=None,
                degenerate_symbol=int(symbol),
                payload=b"",
            )
        alphabet = 1 << bit_depth
        if len(data) < pos + alphabet + 4:
            raise CodecError("truncated header")
        code_lengths = np.frombuffer(data, dtype=np.uint8, count=alphabet, offset=pos).copy()
        pos += alphabet
        (payload_bytes,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) < pos + payload_bytes:
            raise CodecError("truncated payload")
        if len(data) > pos + payload_bytes:
            raise CodecError(f"{len(data) - pos - payload_bytes} trailing bytes after payload")
        return cls(
            format_version=version,
            layer_index=layer_index,
            bit_depth=bit_depth,
            shape=tuple(shape),
            v_min=v_min,
            v_max=v_max,
            passthrough=passthrough,
            symbol_count=symbol_count,
            code_lengths=code_lengths,
            degenerate_symbol=None,
            payload=data[pos:],
        )


def _huffman_code_lengths(freqs: np.ndarray) -> np.ndarray:
    """Code length per symbol (0 for absent), deterministic and capped at MAX_CODE_LENGTH.

    Heap ties break on (frequency, creation order); leaves are created in
    symbol order, so equal-frequency inputs always yield the same lengths.
    """
    present = np.flatnonzero(freqs)
    if present.size < 2:
        raise CodecError("code construction needs at least two distinct symbols")
    # nodes: (left, right) children as node ids; leaves are ids < len(present)
    children: list[tuple[int, int]] = []
    heap = [(int(freqs[sym]), i) for i, sym in enumerate(present)]
    heapq.heapify(heap)
    next_id = present.size
    while len(heap) > 1:
        fa, a = heapq.heappop(heap)
        fb, b = heapq.heappop(heap)
        children.append((a, b))
        heapq.heappush(heap, (fa + fb, next_id))
        next_id += 1
    lengths = np.zeros(freqs.size, dtype=np.uint8)
    root = heap[0][1]
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        if node < present.size:
            lengths[present[node]] = depth
        else:
            left, right = children[node - present.size]
            stack.append((left, depth + 1))
            stack.append((right, depth + 1))
    if lengths.max() > MAX_CODE_LENGTH:
        lengths = _limit_lengths(lengths, MAX_CODE_LENGTH)
    return lengths


def _limit_lengths(lengths: np.ndarray, cap: int) -> np.ndarray:
    """Clamp code lengths to cap, restoring Kraft <= 1 by lengthening short codes."""
    present = np.flatnonzero(lengths)
    clamped = np.minimum(lengths[present], cap).astype(np.int64)
    counts = np.bincount(clamped, minlength=cap + 1)
    total = int(np.sum(counts[1:] << (cap - np.arange(1, cap + 1))))
    budget = 1 << cap
    while total > budget:
        # Lengthening one code from L to L+1 frees 2^(cap-L-1) units; start
        # from the deepest candidates so the adjustment is minimal.
        for depth in range(cap - 1, 0, -1):
            if counts[depth] > 0:
                counts[depth] -= 1
                counts[depth + 1] += 1
                total -= 1 << (cap - depth - 1)
                break
        else:
            raise CodecError("cannot satisfy code length cap")
    new_lengths = np.repeat(np.arange(cap + 1), counts)
    order = present[np.lexsort((present, lengths[present]))]
    out = np.zeros_like(lengths)
    out[order] = np.sort(new_lengths)
    return out.astype(np.uint8)


def _canonical_codes(code_lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assign canonical codewords from lengths; (symbols sorted by (length, symbol), codes)."""
    present = np.flatnonzero(code_lengths)
    if present.size == 0:
        raise CodecError("invalid code: empty code-length table")
    lens = code_lengths[present].astype(np.int64)
    order = np.lexsort((present, lens))
    symbols = present[order]
    lens = lens[order]
    max_len = int(lens[-1])
    if max_len > MAX_CODE_LENGTH:
        raise CodecError(f"invalid code: length {max_len} exceeds {MAX_CODE_LENGTH}")
    counts = np.bincount(lens, minlength=max_len + 1)
    code = 0
    first = np.zeros(max_len + 1, dtype=np.int64)
    for length in range(1, max_len + 1):
        code = (code + int(counts[length - 1])) << 1
        first[length] = code
        if code + int(counts[length]) > (1 << length):
            raise CodecError("invalid code: Kraft sum exceeds 1")
    # rank of each symbol within its length group
    ranks = np.arange(symbols.size) - np.concatenate(([0], np.cumsum(counts)))[lens]
    codes = first[lens] + ranks
    return symbols, codes


def _kraft_sum_exceeds_one(code_lengths: np.ndarray) -> bool:
    present = code_lengths[code_lengths > 0].astype(np.int64)
    if present.size == 0:
        return False
    # Exact integer arithmetic in units of 2^-MAX_CODE_LENGTH.
    total = int(np.sum(1 << (MAX_CODE_LENGTH - present)))
    return total > (1 << MAX_CODE_LENGTH)


def _pack_payload(symbols: np.ndarray, code_lengths: np.ndarray) -> bytes:
    sym_sorted, codes_sorted = _canonical_codes(code_lengths)
    code_of = np.zeros(code_lengths.size, dtype=np.int64)
    code_of[sym_sorted] = codes_sorted
    lens = code_lengths.astype(np.int64)[symbols]
    if np.any(lens == 0):
        raise CodecError("symbol without a codeword")
    codes = code_of[symbols]
    total_bits = int(lens.sum())
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    src = np.repeat(np.arange(symbols.size), lens)
    pos_in_code = np.arange(total_bits) - np.repeat(starts, lens)
    shifts = lens[src] - 1 - pos_in_code
    bits = ((codes[src] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits).tobytes()


class _CanonicalDecoder:
    """Table-driven canonical decoder built from a code-length array."""

    def __init__(self, code_lengths: np.ndarray):
        if code_lengths.size and int(code_lengths.max()) > MAX_CODE_LENGTH:
            raise CodecError(f"invalid code: length {int(code_lengths.max())} exceeds {MAX_CODE_LENGTH}")
        if _kraft_sum_exceeds_one(code_lengths):
            raise CodecError("invalid code: Kraft sum exceeds 1")
        self.symbols, codes = _canonical_codes(code_lengths)
        lens = code_lengths[self.symbols].astype(np.int64)
        self.max_len = int(lens[-1])
        counts = np.bincount(lens, minlength=self.max_len + 1)
        self.counts = counts
        self.first = np.zeros(self.max_len + 1, dtype=np.int64)
        self.base = np.zeros(self.max_len + 1, dtype=np.int64)
        code = 0
        idx = 0
        for length in range(1, self.max_len + 1):
            code = (code + int(counts[length - 1])) << 1
            self.first[length] = code
            self.base[length] = idx
            idx += int(counts[length])
        self.lut_bits = min(self.max_len, _LUT_BITS)
        size = 1 << self.lut_bits
        self.lut_sym = np.zeros(size, dtype=np.int64)
        self.lut_len = np.zeros(size, dtype=np.uint8)
        for i in range(self.symbols.size):
            length = int(lens[i])
            if length > self.lut_bits:
                break
            start = int(codes[i]) << (self.lut_bits - length)
            end = start + (1 << (self.lut_bits - length))
            self.lut_sym[start:end] = self.symbols[i]
            self.lut_len[start:end] = length

    def decode(self, payload: bytes, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        lut_bits = self.lut_bits
        lut_sym = self.lut_sym
        lut_len = self.lut_len
        first = self.first
        counts = self.counts
        base = self.base
        symbols = self.symbols
        max_len = self.max_len
        buf = 0
        nbits = 0
        pos = 0
        n = len(payload)
        for k in range(count):
            while nbits < 40 and pos < n:
                buf = (buf << 8) | payload[pos]
                pos += 1
                nbits += 8
            if nbits == 0:
                raise CodecError("truncated payload")
            if nbits >= lut_bits:
                window = (buf >> (nbits - lut_bits)) & ((1 << lut_bits) - 1)
            else:
                window = (buf << (lut_bits - nbits)) & ((1 << lut_bits) - 1)
            length = lut_len[window]
            if length:
                sym = lut_sym[window]
            else:
                # Code longer than the lookup table; walk lengths bit by bit.
                acc = 0
                length = 0
                sym = -1
                while length < max_len:
                    if length >= nbits:
                        raise CodecError("truncated payload")
                    acc = (acc << 1) | ((buf >> (nbits - 1 - length)) & 1)
                    length += 1
                    if counts[length] and first[length] <= acc < first[length] + counts[length]:
                        sym = symbols[base[length] + acc - first[length]]
                        break
                if sym < 0:
                    raise CodecError("invalid codeword in payload")
            if length > nbits:
                raise CodecError("truncated payload")
            nbits -= int(length)
            buf &= (1 << nbits) - 1
            out[k] = sym
        if (n - pos) * 8 + nbits >= 8:
            raise CodecError("trailing payload bytes after final symbol")
        return out


def encode(qm: QuantizedMap, layer_index: int = 0) -> EncodedBlock:
    """Entropy-code a quantized map into a self-describing block."""
    if qm.bit_depth > MAX_BIT_DEPTH:
        raise CodecError(f"alphabet 2^{qm.bit_depth} too large for the header format (max c={MAX_BIT_DEPTH})")
    if not 0 <= layer_index <= 0xFFFF:
        raise CodecError(f"layer index {layer_index} outside u16 range")
    freqs = np.bincount(qm.symbols, minlength=1 << qm.bit_depth)
    distinct = int(np.count_nonzero(freqs))
    common = dict(
        format_version=FORMAT_VERSION,
        layer_index=layer_index,
        bit_depth=qm.bit_depth,
        shape=qm.shape,
        v_min=qm.v_min,
        v_max=qm.v_max,
        passthrough=qm.passthrough,
        symbol_count=qm.element_count,
    )
    if distinct == 1:
        return EncodedBlock(
            code_lengths=None,
            degenerate_symbol=int(np.flatnonzero(freqs)[0]),
            payload=b"",
            **common,
        )
    code_lengths = _huffman_code_lengths(freqs)
    payload = _pack_payload(qm.symbols, code_lengths)
    return EncodedBlock(code_lengths=code_lengths, degenerate_symbol=None, payload=payload, **common)


def decode(block: EncodedBlock | bytes) -> QuantizedMap:
    """Exact inverse of encode."""
    if isinstance(block, (bytes, bytearray, memoryview)):
        block = EncodedBlock.from_bytes(bytes(block))
    if block.degenerate:
        symbols = np.full(block.symbol_count, block.degenerate_symbol, dtype=np.int64)
    else:
        decoder = _CanonicalDecoder(block.code_lengths)
        symbols = decoder.decode(block.payload, block.symbol_count)
    return QuantizedMap(
        shape=block.shape,
        bit_depth=block.bit_depth,
        v_min=block.v_min,
        v_max=block.v_max,
        passthrough=block.passthrough,
        symbols=symbols,
    )


def encoded_size(qm: QuantizedMap, layer_index: int = 0) -> int:
    """Byte length of encode(qm).to_bytes() without packing the payload."""
    if qm.bit_depth > MAX_BIT_DEPTH:
        raise CodecError(f"alphabet 2^{qm.bit_depth} too large for the header format (max c={MAX_BIT_DEPTH})")
    fixed = _FIXED_HEADER.size + 4 * len(qm.shape)
    freqs = np.bincount(qm.symbols, minlength=1 << qm.bit_depth)
    if int(np.count_nonzero(freqs)) == 1:
        return fixed + 4
    code_lengths = _huffman_code_lengths(freqs)
    payload_bits = int(np.sum(freqs * code_lengths.astype(np.int64)))
    return fixed + (1 << qm.bit_depth) + 4 + (payload_bits + 7) // 8
