import json
import os

import numpy as np
import pytest

from icc import Dataset, LoadResult, SeedSpec, load_csv, save_csv
from icc.data import (
    default_workers,
    parallel_map,
    read_report,
    report_dict,
    write_report,
)


def small_dataset(n=40, d_a=1, d_z=3, d_w=2, d_x=1, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        y=rng.standard_normal(n),
        a=rng.standard_normal((n, d_a)),
        z=rng.standard_normal((n, d_z)),
        w=rng.standard_normal((n, d_w)),
        x=rng.standard_normal((n, d_x)),
    )


class TestDataset:
    def test_shapes_and_counts(self):
        ds = small_dataset()
        assert (ds.n, ds.d_a, ds.d_z, ds.d_w, ds.d_x) == (40, 1, 3, 2, 1)

    def test_row_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError, match="rows"):
            Dataset(y=rng.standard_normal(30), a=rng.standard_normal((29, 1)),
                    z=rng.standard_normal((30, 2)))

    def test_missing_required_block_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="at least one column"):
            Dataset(y=rng.standard_normal(30), a=np.empty((30, 0)),
                    z=rng.standard_normal((30, 2)))

    def test_nonfinite_rejected(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((30, 1))
        a[4, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(y=rng.standard_normal(30), a=a, z=rng.standard_normal((30, 2)))

    def test_too_few_rows_rejected(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="rows"):
            Dataset(y=rng.standard_normal(4), a=rng.standard_normal((4, 1)),
                    z=rng.standard_normal((4, 3)))

    def test_arrays_frozen(self):
        ds = small_dataset()
        with pytest.raises(ValueError):
            ds.z[0, 0] = 5.0

    def test_take_resamples_rows(self):
        ds = small_dataset()
        idx = np.arange(ds.n)[::-1]
        flipped = ds.take(idx)
        np.testing.assert_array_equal(flipped.y, ds.y[::-1])
        np.testing.assert_array_equal(flipped.z, ds.z[::-1])

    def test_w_and_x_may_be_empty(self):
        rng = np.random.default_rng(5)
        ds = Dataset(y=rng.standard_normal(30), a=rng.standard_normal((30, 1)),
                     z=rng.standard_normal((30, 2)), w=np.empty((30, 0)))
        assert ds.d_w == 0 and ds.d_x == 0


class TestSeedSpec:
    def test_rng_deterministic(self):
        s = SeedSpec(7, 3)
        x1 = s.rng().standard_normal(5)
        x2 = SeedSpec(7, 3).rng().standard_normal(5)
        np.testing.assert_array_equal(x1, x2)

    def test_extra_entropy_changes_stream(self):
        s = SeedSpec(7, 3)
        assert not np.allclose(s.rng(1).standard_normal(5), s.rng(2).standard_normal(5))

    def test_replicates_disjoint(self):
        s = SeedSpec(11, 2)
        kids = {s.replicate(b) for b in range(100)}
        assert len(kids) == 100
        assert all(k != s for k in kids)

    def test_validation(self):
        with pytest.raises(ValueError):
            SeedSpec(-1)
        with pytest.raises(ValueError):
            SeedSpec(2**64)
        with pytest.raises(ValueError):
            SeedSpec(1.5)  # type: ignore[arg-type]

    def test_to_dict(self):
        assert SeedSpec(5, 9).to_dict() == {"master_seed": 5, "stream_id": 9}


class TestCsvRoundTrip:
    def test_save_then_load_recovers_blocks(self, tmp_path):
        ds = small_dataset(seed=10)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        res = load_csv(path, schema)
        assert isinstance(res, LoadResult)
        assert res.n_dropped == 0 and res.n_read == ds.n
        np.testing.assert_allclose(res.dataset.y, ds.y, atol=1e-12)
        np.testing.assert_allclose(res.dataset.z, ds.z, atol=1e-12)
        np.testing.assert_allclose(res.dataset.w, ds.w, atol=1e-12)
        assert res.columns["z"] == ["z1", "z2", "z3"]

    def test_listwise_deletion_counted(self, tmp_path):
        ds = small_dataset(seed=11)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[3].split(",")
        parts[2] = ""
        lines[3] = ",".join(parts)
        parts = lines[7].split(",")
        parts[0] = ""
        lines[7] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        res = load_csv(path, schema)
        assert res.n_read == ds.n
        assert res.n_dropped == 2
        assert res.dataset.n == ds.n - 2

    def test_missing_schema_column_rejected(self, tmp_path):
        ds = small_dataset(seed=12)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        schema["nope"] = "z"
        with pytest.raises(ValueError, match="absent"):
            load_csv(path, schema)

    def test_unassigned_column_rejected(self, tmp_path):
        ds = small_dataset(seed=13)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        del schema["x1"]
        with pytest.raises(ValueError, match="without a role"):
            load_csv(path, schema)

    def test_ignore_role_drops_column(self, tmp_path):
        ds = small_dataset(seed=14)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        schema["x1"] = "ignore"
        res = load_csv(path, schema)
        assert res.dataset.d_x == 0

    def test_two_outcomes_rejected(self, tmp_path):
        ds = small_dataset(seed=15)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        schema["x1"] = "y"
        with pytest.raises(ValueError, match="one outcome"):
            load_csv(path, schema)

    def test_non_numeric_cell_reported(self, tmp_path):
        ds = small_dataset(seed=16)
        path = tmp_path / "d.csv"
        schema = save_csv(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[5].split(",")
        parts[1] = "oops"
        lines[5] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_csv(path, schema)


class TestReports:
    def test_round_trip_byte_identical(self, tmp_path):
        payload = {"kind": "demo", "value": 1 / 3, "arr": [1.0, 2.5e-7], "n": 3}
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        write_report(payload, p1)
        write_report(read_report(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_echoed_and_kind_tagged(self, tmp_path):
        from icc.estimators import EstimateResult

        res = EstimateResult(method="ols", beta=np.array([1.0]), se=np.array([0.1]),
                             t_coef=np.empty(0), t_se=np.empty(0),
                             vcov=np.eye(1), coef_names=["a1"], n=50, r_used=0,
                             first_stage_cond=1.0, se_boot=None)
        d = report_dict(res, seed=SeedSpec(3, 4))
        assert d["kind"] == "estimate_result"
        assert d["seed"] == {"master_seed": 3, "stream_id": 4}
        path = tmp_path / "est.json"
        write_report(res, path, seed=SeedSpec(3, 4))
        assert read_report(path)["beta"] == [1.0]

    def test_float_repr_survives(self, tmp_path):
        x = 0.1 + 0.2
        path = tmp_path / "f.json"
        write_report({"kind": "demo", "x": x}, path)
        assert read_report(path)["x"] == x


def _square(v):
    return v * v


def _draw(s):
    return float(s.rng().standard_normal())


class TestParallelMap:
    def test_order_preserved(self):
        out = parallel_map(_square, range(20), workers=4)
        assert out == [v * v for v in range(20)]

    def test_serial_matches_parallel(self):
        items = [SeedSpec(1, 0).replicate(b) for b in range(8)]
        assert parallel_map(_draw, items, workers=1) == parallel_map(_draw, items, workers=3)

    def test_default_workers_env(self, monkeypatch):
        monkeypatch.setenv("ICC_WORKERS", "6")
        assert default_workers() == 6
        monkeypatch.setenv("ICC_WORKERS", "junk")
        assert default_workers() == 1
        monkeypatch.delenv("ICC_WORKERS")
        assert default_workers() == 1
