import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesplit.quantize import FeatureMap, QuantizeError, QuantizedMap, dequantize, quantize


def fm(values):
    arr = np.asarray(values, dtype=float)
    return FeatureMap(shape=(arr.size,), values=arr)


class TestQuantize:
    def test_affine_branch_example(self):
        qm = quantize(fm([0.0, 7.5, 15.0]), 2)
        assert qm.symbols.tolist() == [0, 2, 3]  # 3*7.5/15 = 1.5 rounds half-up to 2
        assert (qm.v_min, qm.v_max) == (0.0, 15.0)
        assert not qm.passthrough

    def test_passthrough_branch_keeps_small_values(self):
        qm = quantize(fm([0.0, 3.0]), 2)
        assert qm.passthrough
        assert qm.symbols.tolist() == [0, 3]

    def test_passthrough_rounds_and_clamps(self):
        qm = quantize(fm([-1.5, 0.4, 2.6, 3.0]), 2)
        assert qm.passthrough
        assert qm.symbols.tolist() == [0, 0, 3, 3]

    def test_constant_map_is_all_zero_for_any_depth(self):
        for c in (1, 4, 8, 32):
            qm = quantize(fm([5.0, 5.0]), c)
            assert qm.symbols.tolist() == [0, 0]
            assert qm.v_min == qm.v_max == 5.0
            assert not qm.passthrough

    def test_invalid_bit_depth(self):
        with pytest.raises(QuantizeError):
            quantize(fm([1.0]), 0)
        with pytest.raises(QuantizeError):
            quantize(fm([1.0]), 33)

    def test_non_finite_values_rejected(self):
        with pytest.raises(QuantizeError, match="non-finite"):
            FeatureMap(shape=(2,), values=np.array([1.0, np.nan]))
        with pytest.raises(QuantizeError, match="non-finite"):
            FeatureMap(shape=(1,), values=np.array([np.inf]))

    def test_symbol_range_validated(self):
        with pytest.raises(QuantizeError):
            QuantizedMap(shape=(1,), bit_depth=2, v_min=0, v_max=1, passthrough=False,
                         symbols=np.array([4]))


class TestDequantize:
    def test_affine_inverse_example(self):
        back = dequantize(quantize(fm([0.0, 7.5, 15.0]), 2))
        assert back.values.tolist() == [0.0, 10.0, 15.0]
        assert np.max(np.abs(back.values - [0.0, 7.5, 15.0])) <= 15.0 / (2 * 3)

    def test_passthrough_exact(self):
        back = dequantize(quantize(fm([0.0, 3.0]), 2))
        assert back.values.tolist() == [0.0, 3.0]

    def test_constant_map_recovers_v_min_exactly(self):
        back = dequantize(quantize(fm([5.0, 5.0, 5.0]), 8))
        assert back.values.tolist() == [5.0, 5.0, 5.0]


@settings(max_examples=150, deadline=None)
@given(
    data=st.data(),
    c=st.integers(min_value=1, max_value=16),
)
def test_reconstruction_error_bound_property(data, c):
    n = data.draw(st.integers(min_value=1, max_value=200))
    values = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False),
                min_size=n,
                max_size=n,
            )
        )
    )
    qm = quantize(FeatureMap(shape=(n,), values=values), c)
    if qm.passthrough:
        return
    back = dequantize(qm).values
    spread = values.max() - values.min()
    bound = spread / (2 * ((1 << c) - 1)) + 1e-9 * max(1.0, abs(values).max())
    assert np.max(np.abs(back - values)) <= bound


@settings(max_examples=100, deadline=None)
@given(
    data=st.data(),
    c=st.integers(min_value=1, max_value=12),
)
def test_monotonicity_preserved(data, c):
    n = data.draw(st.integers(min_value=2, max_value=100))
    values = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False),
                min_size=n,
                max_size=n,
            )
        )
    )
    qm = quantize(FeatureMap(shape=(n,), values=values), c)
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(qm.symbols[order]) >= 0)


def test_symbol_range_exhaustive_random():
    rng = np.random.default_rng(5)
    for _ in range(300):
        c = int(rng.integers(1, 17))
        n = int(rng.integers(1, 500))
        values = rng.normal(0, rng.lognormal(0, 2), n)
        qm = quantize(FeatureMap(shape=(n,), values=values), c)
        assert qm.symbols.min() >= 0
        assert qm.symbols.max() < (1 << c)


def test_sparsity_preserved_when_min_is_zero():
    rng = np.random.default_rng(11)
    values = rng.lognormal(0, 1, 1000)
    values[rng.random(1000) < 0.7] = 0.0
    for c in (1, 4, 8):
        qm = quantize(FeatureMap(shape=(1000,), values=values), c)
        assert np.all(qm.symbols[values == 0.0] == 0)
