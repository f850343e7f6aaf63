"""Seeded generators for feature-map corpora and calibration records.

Stand-ins for real network activations: maps are sparse and non-negative with
heavy-tailed nonzero values, and each layer carries a loss curve that decays
as the bit depth grows (near zero at the last layer), so planner behavior on
synthetic tables resembles calibration against a real model.

Correctness flags are stratified per block of samples: within each block the
number of correct-before samples, and the number of those flipped wrong after
quantization, are exact dithered counts rather than independent coin flips.
Expected cell loss still equals the target curve, while tables built from
moderately sized corpus halves stay tightly aligned (the stability the
lookup-table approach relies on).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator

import numpy as np

from edgesplit.codec import encoded_size
from edgesplit.quantize import FeatureMap, quantize
from edgesplit.tables import CalibrationRecord

if TYPE_CHECKING:
    from edgesplit.profiles import ModelProfile

GENSPEC_SCHEMA = "generator-spec/1"

_BEFORE_TAG = 1
_FLIP_TAG = 2
_VALUES_TAG = 3


class SyntheticError(ValueError):
    """Malformed generator spec or spec/model mismatch."""


@dataclass(frozen=True)
class LayerGen:
    """Per-layer generation parameters."""

    shape: tuple[int, ...]
    sparsity: float
    loss_amp: float
    value_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if not 0.0 <= self.sparsity < 1.0:
            raise SyntheticError(f"sparsity {self.sparsity} outside [0, 1)")
        if self.loss_amp < 0:
            raise SyntheticError(f"loss_amp {self.loss_amp} must be >= 0")
        if self.value_scale <= 0:
            raise SyntheticError(f"value_scale {self.value_scale} must be > 0")


@dataclass(frozen=True)
class GeneratorSpec:
    """Deterministic corpus description: everything derives from (seed, layer, sample)."""

    seed: int
    layers: tuple[LayerGen, ...]
    base_accuracy: float = 0.75
    value_sigma: float = 1.0
    block: int = 50

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise SyntheticError("generator spec has no layers")
        if not 0.0 < self.base_accuracy <= 1.0:
            raise SyntheticError(f"base_accuracy {self.base_accuracy} outside (0, 1]")
        if self.block < 1:
            raise SyntheticError("block must be >= 1")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, layer_index: int) -> LayerGen:
        if not 1 <= layer_index <= self.n_layers:
            raise SyntheticError(f"layer index {layer_index} outside [1, {self.n_layers}]")
        return self.layers[layer_index - 1]

    def to_dict(self) -> dict:
        return {
            "schema": GENSPEC_SCHEMA,
            "seed": self.seed,
            "base_accuracy": self.base_accuracy,
            "value_sigma": self.value_sigma,
            "block": self.block,
            "layers": [
                {
                    "shape": list(l.shape),
                    "sparsity": l.sparsity,
                    "loss_amp": l.loss_amp,
                    "value_scale": l.value_scale,
                }
                for l in self.layers
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_model(
        cls,
        model: "ModelProfile",
        seed: int,
        *,
        sparsity: float = 0.9,
        first_loss_amp: float = 0.4,
        last_loss_amp: float = 0.004,
    ) -> "GeneratorSpec":
        """Spec aligned to a model profile: shapes copied, loss amplitude decaying
        geometrically so the last layer is nearly lossless."""
        n = model.n_layers
        if n == 1:
            amps = [last_loss_amp]
        else:
            ratio = (last_loss_amp / first_loss_amp) ** (1.0 / (n - 1))
            amps = [first_loss_amp * ratio**i for i in range(n)]
        layers = [
            LayerGen(shape=p.output_shape, sparsity=sparsity, loss_amp=amps[i])
            for i, p in enumerate(model.points)
        ]
        return cls(seed=seed, layers=tuple(layers))


def load_generator_spec(path: str | Path) -> GeneratorSpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SyntheticError(f"generator spec {path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise SyntheticError(f"cannot read generator spec {path}: {exc}") from exc
    if obj.get("schema") != GENSPEC_SCHEMA:
        raise SyntheticError(f"generator spec {path}: schema '{obj.get('schema')}' is not '{GENSPEC_SCHEMA}'")
    layers = tuple(
        LayerGen(
            shape=tuple(entry["shape"]),
            sparsity=float(entry["sparsity"]),
            loss_amp=float(entry["loss_amp"]),
            value_scale=float(entry.get("value_scale", 1.0)),
        )
        for entry in obj["layers"]
    )
    return GeneratorSpec(
        seed=int(obj["seed"]),
        layers=layers,
        base_accuracy=float(obj.get("base_accuracy", 0.75)),
        value_sigma=float(obj.get("value_sigma", 1.0)),
        block=int(obj.get("block", 50)),
    )


def loss_fraction(spec: GeneratorSpec, layer_index: int, bit_depth: int) -> float:
    """Target accuracy-loss fraction for (layer, bits): amp * 2^(1-c), capped so a
    flip probability <= 0.95 of the base accuracy always exists."""
    amp = spec.layer(layer_index).loss_amp
    return min(amp * 2.0 ** (1 - bit_depth), 0.95 * spec.base_accuracy)


def _rng(spec: GeneratorSpec, *key: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed & 0x7FFFFFFF, *key])


def _dither_round(x: float, rng: np.random.Generator) -> int:
    base = int(np.floor(x))
    return base + int(rng.random() < (x - base))


def gen_feature_map(spec: GeneratorSpec, layer_index: int, sample_id: int) -> FeatureMap:
    """One synthetic activation map, deterministic in (seed, layer, sample)."""
    layer = spec.layer(layer_index)
    rng = _rng(spec, _VALUES_TAG, layer_index, sample_id)
    n = int(np.prod(layer.shape))
    values = rng.lognormal(mean=0.0, sigma=spec.value_sigma, size=n) * layer.value_scale
    if layer.sparsity > 0.0:
        values[rng.random(n) < layer.sparsity] = 0.0
    return FeatureMap(shape=layer.shape, values=values)


def _before_flags(spec: GeneratorSpec, n_samples: int) -> np.ndarray:
    """Correct-before flags, shared by every (layer, bits) cell; exact per-block counts."""
    flags = np.zeros(n_samples, dtype=bool)
    for start in range(0, n_samples, spec.block):
        size = min(spec.block, n_samples - start)
        rng = _rng(spec, _BEFORE_TAG, start)
        count = _dither_round(size * spec.base_accuracy, rng)
        flags[start + rng.permutation(size)[:count]] = True
    return flags


def _after_flags(
    spec: GeneratorSpec, layer_index: int, bit_depth: int, before: np.ndarray
) -> np.ndarray:
    """Correct-after flags: flip an exact dithered share of each block's correct samples."""
    loss = loss_fraction(spec, layer_index, bit_depth)
    flip_fraction = loss / spec.base_accuracy
    after = before.copy()
    n_samples = before.size
    for start in range(0, n_samples, spec.block):
        size = min(spec.block, n_samples - start)
        correct_idx = start + np.flatnonzero(before[start : start + size])
        rng = _rng(spec, _FLIP_TAG, layer_index, bit_depth, start)
        flips = _dither_round(correct_idx.size * flip_fraction, rng)
        if flips:
            after[rng.permutation(correct_idx)[:flips]] = False
    return after


def gen_calibration_corpus(
    spec: GeneratorSpec,
    model: "ModelProfile",
    c_set: Iterable[int],
    n_samples: int,
) -> Iterator[CalibrationRecord]:
    """Stream calibration records for every (sample, layer, bits) triple.

    Compressed sizes come from actually quantizing and entropy-coding the
    generated maps; correctness flags realize the spec's loss curves.
    """
    if n_samples <= 0:
        raise SyntheticError(f"n_samples must be > 0, got {n_samples}")
    if spec.n_layers != model.n_layers:
        raise SyntheticError(f"generator spec has {spec.n_layers} layers, model has {model.n_layers}")
    for i, (gen_layer, point) in enumerate(zip(spec.layers, model.points), start=1):
        if int(np.prod(gen_layer.shape)) != point.output_elements:
            raise SyntheticError(
                f"layer {i}: generator shape {gen_layer.shape} does not match "
                f"model output_elements {point.output_elements}"
            )
    depths = sorted(set(int(c) for c in c_set))
    before = _before_flags(spec, n_samples)
    after = {
        (layer, c): _after_flags(spec, layer, c, before)
        for layer in range(1, spec.n_layers + 1)
        for c in depths
    }
    for sample in range(n_samples):
        for layer in range(1, spec.n_layers + 1):
            fm = gen_feature_map(spec, layer, sample)
            for c in depths:
                qm = quantize(fm, c)
                yield CalibrationRecord(
                    sample_id=sample,
                    layer_index=layer,
                    bit_depth=c,
                    compressed_bytes=encoded_size(qm, layer_index=layer),
                    correct_before=bool(before[sample]),
                    correct_after=bool(after[(layer, c)][sample]),
                )
