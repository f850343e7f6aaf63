import random

import numpy as np
import pytest

from edgesplit.synthetic import gen_calibration_corpus
from edgesplit.tables import (
    CalibrationRecord,
    LookupTables,
    TableError,
    build_tables,
    load_tables,
    read_records,
    stability_report,
    write_records,
)


def rec(sample, layer, c, nbytes, before, after):
    return CalibrationRecord(sample, layer, c, nbytes, before, after)


@pytest.fixture()
def tiny_model():
    from edgesplit.profiles import DecouplingPoint, ModelProfile

    return ModelProfile(
        "tiny",
        input_bytes_raw=100,
        input_bytes_encoded=60,
        points=(
            DecouplingPoint(1, "a", 10.0, 4, (4,)),
            DecouplingPoint(2, "b", 10.0, 2, (2,)),
        ),
    )


class TestBuildTables:
    def test_zero_loss_when_nothing_changes(self, tiny_model):
        records = [rec(s, i, 4, 100, True, True) for s in range(5) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4])
        assert np.all(t.accuracy_loss == 0.0)

    def test_mean_size(self, tiny_model):
        records = [
            rec(0, 1, 4, 100, True, True),
            rec(1, 1, 4, 300, True, True),
            rec(0, 2, 4, 50, True, True),
            rec(1, 2, 4, 50, True, True),
        ]
        t = build_tables(records, tiny_model, [4])
        assert t.expected_size[0, 0] == 200.0
        assert t.expected_size[1, 0] == 50.0

    def test_loss_is_before_minus_after_mean(self, tiny_model):
        records = [
            rec(0, 1, 4, 10, True, True),
            rec(1, 1, 4, 10, True, False),
            rec(2, 1, 4, 10, True, False),
            rec(3, 1, 4, 10, False, False),
            rec(0, 2, 4, 10, True, True),
        ]
        t = build_tables(records, tiny_model, [4])
        assert t.accuracy_loss[0, 0] == pytest.approx((3 - 1) / 4)

    def test_missing_cells_listed(self, tiny_model):
        records = [rec(0, 1, 4, 10, True, True)]
        with pytest.raises(TableError, match=r"\(2, 4\)"):
            build_tables(records, tiny_model, [4])

    def test_out_of_range_layer_rejected(self, tiny_model):
        with pytest.raises(TableError, match="layer index 3"):
            build_tables([rec(0, 3, 4, 10, True, True)], tiny_model, [4])

    def test_records_outside_grid_ignored(self, tiny_model):
        records = [rec(0, i, 4, 10, True, True) for i in (1, 2)]
        records += [rec(0, i, 6, 99999, True, False) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4])
        assert t.bit_depths == (4,)
        assert np.all(t.sample_count == 1)

    def test_order_independence_exact(self, tiny_model, toy_model, toy_genspec):
        records = list(gen_calibration_corpus(toy_genspec, toy_model, [2, 4], 40))
        shuffled = records[:]
        random.Random(99).shuffle(shuffled)
        a = build_tables(records, toy_model, [2, 4])
        b = build_tables(shuffled, toy_model, [2, 4])
        assert np.array_equal(a.accuracy_loss, b.accuracy_loss)
        assert np.array_equal(a.expected_size, b.expected_size)

    def test_matches_independent_per_cell_means(self, toy_model, toy_genspec):
        records = list(gen_calibration_corpus(toy_genspec, toy_model, [2, 8], 60))
        t = build_tables(records, toy_model, [2, 8])
        # independent one-pass recompute with plain dicts
        sums = {}
        for r in records:
            cell = sums.setdefault((r.layer_index, r.bit_depth), [0, 0, 0, 0])
            cell[0] += 1
            cell[1] += int(r.correct_before)
            cell[2] += int(r.correct_after)
            cell[3] += r.compressed_bytes
        for (i, c), (n, before, after, total) in sums.items():
            k = t.bit_depths.index(c)
            assert t.accuracy_loss[i - 1, k] == (before - after) / n
            assert t.expected_size[i - 1, k] == total / n

    def test_p95_size_stat(self, tiny_model):
        records = [rec(s, i, 4, 100 + s, True, True) for s in range(100) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4], size_stat="p95")
        assert t.expected_size[0, 0] >= 190
        assert t.size_stat == "p95"


class TestLookup:
    def test_layer_zero_maps_to_upload(self, tiny_model):
        records = [rec(0, i, 4, 10, True, True) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4])
        assert t.lookup_accuracy(0, 4) == 0.0
        assert t.lookup_size(0, 4) == 60.0
        assert t.upload_bytes("raw") == 100
        assert t.upload_bytes("encoded") == 60

    def test_stored_cell_returned(self, tiny_model):
        records = [rec(0, i, 8, 123, True, False) for i in (1, 2)]
        t = build_tables(records, tiny_model, [8])
        assert t.lookup_accuracy(1, 8) == 1.0
        assert t.lookup_size(2, 8) == 123.0

    def test_out_of_grid_errors(self, tiny_model):
        records = [rec(0, i, 4, 10, True, True) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4])
        with pytest.raises(TableError, match="outside grid"):
            t.lookup_accuracy(3, 4)
        with pytest.raises(TableError, match="not in table grid"):
            t.lookup_size(1, 5)


class TestStability:
    def test_identical_corpora_zero_divergence(self, toy_model, toy_genspec):
        records = list(gen_calibration_corpus(toy_genspec, toy_model, [4], 50))
        rep = stability_report(records, list(records), toy_model, [4])
        assert rep.max_abs_accuracy_delta == 0.0
        assert rep.max_rel_size_delta == 0.0

    def test_disjoint_halves_stay_close(self, toy_model, toy_genspec):
        records = list(gen_calibration_corpus(toy_genspec, toy_model, [2, 4, 8], 800))
        half = len(records) // 2
        rep = stability_report(records[:half], records[half:], toy_model, [2, 4, 8])
        assert rep.max_abs_accuracy_delta < 0.05
        assert rep.max_rel_size_delta < 0.10
        assert "accuracy" in rep.summary()


class TestPersistence:
    def test_tables_round_trip(self, toy_model, toy_genspec, tmp_path):
        records = list(gen_calibration_corpus(toy_genspec, toy_model, [2, 4], 30))
        t = build_tables(records, toy_model, [2, 4])
        t.save(tmp_path / "t.tables")
        again = load_tables(tmp_path / "t.tables")
        assert np.array_equal(again.accuracy_loss, t.accuracy_loss)
        assert np.array_equal(again.expected_size, t.expected_size)
        assert again.bit_depths == t.bit_depths

    def test_records_round_trip(self, tmp_path):
        records = [rec(0, 1, 4, 10, True, False), rec(1, 2, 8, 20, False, False)]
        write_records(tmp_path / "r.csv", records)
        assert read_records(tmp_path / "r.csv") == records

    def test_records_bad_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("nope\n1,2,3\n")
        with pytest.raises(TableError, match="header"):
            read_records(tmp_path / "r.csv")

    def test_csv_export(self, tiny_model, tmp_path):
        records = [rec(0, i, 4, 10, True, True) for i in (1, 2)]
        t = build_tables(records, tiny_model, [4])
        t.export_csv(tmp_path / "a.csv", tmp_path / "s.csv")
        lines = (tmp_path / "a.csv").read_text().strip().splitlines()
        assert lines[0] == "layer_index,bit_depth,accuracy_loss"
        assert len(lines) == 3


def test_unsorted_bit_depths_rejected():
    with pytest.raises(TableError, match="strictly increasing"):
        LookupTables(
            n_layers=1,
            bit_depths=(8, 4),
            accuracy_loss=np.zeros((1, 2)),
            expected_size=np.ones((1, 2)),
            sample_count=np.ones((1, 2), dtype=int),
            raw_upload_bytes=10,
            encoded_upload_bytes=5,
        )
