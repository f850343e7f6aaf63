import numpy as np
import pytest

from edgesplit.latency import (
    FLOPS_PER_FMAC,
    LatencyError,
    LatencyModel,
    analytic_model,
    measured_model,
    model_from_devices,
    transmission_time,
)
from edgesplit.profiles import DecouplingPoint, DeviceProfile, ModelProfile


def make_model(flops_list):
    points = tuple(
        DecouplingPoint(i + 1, f"l{i + 1}", f, 4, (4,)) for i, f in enumerate(flops_list)
    )
    return ModelProfile("m", 100, 50, points)


def analytic_device(name, flops, scale):
    return DeviceProfile(name, "analytic", flops_per_second=flops, fit_scale=scale)


class TestAnalytic:
    def test_reference_constants_arithmetic(self):
        # 1e9 FMACs through a 300 GFLOPS edge at scale 1.1176 is about 7.45 ms
        model = make_model([1e9])
        edge = analytic_device("e", 300e9, 1.1176)
        cloud = analytic_device("c", 12e12, 2.1761)
        lat = analytic_model(model, edge, cloud)
        assert lat.edge_prefix[1] == pytest.approx(1.1176 * 2e9 / 300e9, rel=1e-12)
        assert lat.edge_prefix[1] == pytest.approx(7.45e-3, rel=1e-2)

    def test_boundary_values_exact(self):
        model = make_model([1e9, 2e9, 3e9])
        lat = analytic_model(model, analytic_device("e", 1e12, 1.0), analytic_device("c", 1e12, 1.0))
        assert lat.edge_prefix[0] == 0.0
        assert lat.cloud_suffix[3] == 0.0

    def test_doubling_flops_halves_exactly(self):
        model = make_model([3e9, 7e9, 1e9])
        cloud = analytic_device("c", 12e12, 2.1761)
        lat1 = analytic_model(model, analytic_device("e", 250e9, 1.1176), cloud)
        lat2 = analytic_model(model, analytic_device("e", 500e9, 1.1176), cloud)
        assert np.array_equal(lat2.edge_prefix, lat1.edge_prefix / 2.0)

    def test_measured_device_rejected(self):
        model = make_model([1e9])
        measured = DeviceProfile("m", "measured", measured_prefix_latency=(0.1,))
        with pytest.raises(LatencyError, match="analytic"):
            analytic_model(model, measured, analytic_device("c", 1e12, 1.0))


class TestMeasured:
    def test_prefix_sum(self):
        model = make_model([1.0] * 10)
        lat = measured_model(model, [0.001] * 10, [0.002] * 10)
        assert lat.edge_prefix[5] == pytest.approx(0.005)

    def test_suffix_sum(self):
        model = make_model([1.0] * 10)
        lat = measured_model(model, [0.001] * 10, [0.002] * 10)
        # layers 5..10 on the cloud
        assert lat.cloud_suffix[4] == pytest.approx(0.012)

    def test_zero_vectors_valid(self):
        model = make_model([1.0] * 4)
        lat = measured_model(model, [0.0] * 4, [0.0] * 4)
        assert np.all(lat.edge_prefix == 0.0)
        assert np.all(lat.cloud_suffix == 0.0)

    def test_length_mismatch(self):
        model = make_model([1.0] * 4)
        with pytest.raises(LatencyError, match="length"):
            measured_model(model, [0.1] * 3, [0.1] * 4)

    def test_negative_entry(self):
        model = make_model([1.0] * 2)
        with pytest.raises(LatencyError, match="negative"):
            measured_model(model, [0.1, -0.1], [0.1, 0.1])


class TestFromDevices:
    def test_measured_devices_use_prefix_vectors(self, toy_model, fixtures_dir):
        from edgesplit.profiles import load_device_profile

        edge = load_device_profile(fixtures_dir / "devices" / "toy_edge_measured.device")
        cloud = load_device_profile(fixtures_dir / "devices" / "toy_cloud_measured.device")
        lat = model_from_devices(toy_model, edge, cloud)
        assert lat.provenance == "measured"
        assert lat.edge_prefix[4] == pytest.approx(0.011)
        # cloud suffix from i: total cloud prefix minus prefix through i
        assert lat.cloud_suffix[0] == pytest.approx(0.0021)
        assert lat.cloud_suffix[2] == pytest.approx(0.0021 - 0.0017)

    def test_mixed_modes_allowed(self, toy_model, fixtures_dir):
        from edgesplit.profiles import load_device_profile

        edge = load_device_profile(fixtures_dir / "devices" / "toy_edge_measured.device")
        cloud = load_device_profile(fixtures_dir / "devices" / "toy_cloud.device")
        lat = model_from_devices(toy_model, edge, cloud)
        assert lat.provenance == "mixed"
        assert lat.edge_prefix[-1] == pytest.approx(0.011)

    def test_wrong_vector_length_rejected(self, toy_model):
        edge = DeviceProfile("e", "measured", measured_prefix_latency=(0.1, 0.2))
        cloud = DeviceProfile("c", "analytic", flops_per_second=1e12, fit_scale=1.0)
        with pytest.raises(LatencyError, match="length"):
            model_from_devices(toy_model, edge, cloud)


class TestInvariants:
    def test_vectors_validated(self):
        with pytest.raises(LatencyError, match="non-decreasing"):
            LatencyModel(edge_prefix=[0.0, 2.0, 1.0], cloud_suffix=[3.0, 1.0, 0.0], provenance="x")
        with pytest.raises(LatencyError, match="non-increasing"):
            LatencyModel(edge_prefix=[0.0, 1.0, 2.0], cloud_suffix=[1.0, 2.0, 0.0], provenance="x")
        with pytest.raises(LatencyError, match="exactly 0"):
            LatencyModel(edge_prefix=[0.1, 1.0], cloud_suffix=[1.0, 0.0], provenance="x")

    def test_all_edge_and_all_cloud_totals(self, toy_model):
        lat = analytic_model(
            toy_model,
            analytic_device("e", 200e9, 1.1176),
            analytic_device("c", 1e12, 2.1761),
        )
        total_fmacs = toy_model.prefix_flops()[-1]
        assert lat.edge_prefix[-1] == pytest.approx(1.1176 * FLOPS_PER_FMAC * total_fmacs / 200e9)
        assert lat.cloud_suffix[0] == pytest.approx(2.1761 * FLOPS_PER_FMAC * total_fmacs / 1e12)

    def test_csv_export(self, toy_model, tmp_path):
        lat = analytic_model(
            toy_model, analytic_device("e", 200e9, 1.0), analytic_device("c", 1e12, 1.0)
        )
        lat.export_csv(tmp_path / "lat.csv")
        lines = (tmp_path / "lat.csv").read_text().strip().splitlines()
        assert lines[0] == "split_layer,edge_prefix_s,cloud_suffix_s"
        assert len(lines) == toy_model.n_layers + 2


class TestTransmission:
    def test_examples(self):
        assert transmission_time(300_000, 300_000) == 1.0
        assert transmission_time(0, 123.0) == 0.0
        assert transmission_time(1_000_000, 1_000_000) == 1.0

    def test_linearity(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            size = float(rng.integers(1, 10**9))
            bw = float(rng.integers(1, 10**8))
            assert transmission_time(2 * size, bw) == 2 * (size / bw)
            assert transmission_time(size, 2 * bw) == (size / bw) / 2

    def test_non_positive_bandwidth(self):
        with pytest.raises(LatencyError, match="bandwidth"):
            transmission_time(10, 0)
        with pytest.raises(LatencyError, match="bandwidth"):
            transmission_time(10, -5)
