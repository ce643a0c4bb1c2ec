import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastohm.aca import DenseOracle
from elastohm.hmatrix import assemble
from elastohm.report import MB, read_csv, read_json, storage_report, table_csv, table_json, write_table
from meshgen import point_problem

rows_strategy = st.lists(
    st.fixed_dictionaries({
        "name": st.text(alphabet="abcxyz_", min_size=1, max_size=8),
        "count": st.integers(-10**6, 10**6),
        "value": st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False),
    }),
    min_size=1, max_size=10,
)


@given(rows_strategy)
def test_csv_round_trip(rows):
    back = read_csv(table_csv(rows))
    assert [r["name"] for r in back] == [r["name"] for r in rows]
    assert [r["count"] for r in back] == [r["count"] for r in rows]
    assert np.allclose([float(r["value"]) for r in back], [r["value"] for r in rows], rtol=1e-6, atol=0)


@given(rows_strategy)
def test_json_round_trip(rows):
    assert read_json(table_json(rows)) == rows


def test_numpy_values_are_serialised():
    rows = [{"a": np.float64(1.5), "b": np.int64(3), "c": np.arange(2)}]
    assert read_json(table_json(rows)) == [{"a": 1.5, "b": 3, "c": [0, 1]}]
    assert table_csv(rows).splitlines()[1].startswith("1.500000e+00,3,")
    assert table_csv([]) == ""


def test_storage_report():
    a, part = point_problem(150, 0)
    h = assemble(DenseOracle(a), part, eps=1e-6, name="A")
    (row,) = storage_report([h])
    assert row["operator"] == "A" and (row["rows"], row["cols"]) == a.shape
    assert row["storage_mb"] == pytest.approx(h.storage_bytes() / MB, abs=1e-6)
    assert row["lowrank_mb"] + row["near_mb"] == pytest.approx(row["storage_mb"], abs=2e-6)
    assert row["dense_mb"] == pytest.approx(8 * a.size / MB, abs=1e-6)
    assert row["percent_of_dense"] == pytest.approx(100 * h.storage_bytes() / (8 * a.size), abs=1e-4)


def test_write_table(tmp_path):
    rows = [{"x": 1, "y": 2.0}]
    paths = write_table(tmp_path / "out", "t", rows)
    assert [p.name for p in paths] == ["t.csv", "t.json"]
    assert read_csv(paths[0].read_text()) == [{"x": 1, "y": 2.0}]
