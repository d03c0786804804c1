"""Binary matrix format, CSV fallback, and event tables."""

import re
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from neuropgm import (BadMagic, DataFormatError, NonNumericCell,
                      TruncatedFile, read_events, read_matrix, write_events,
                      write_matrix)
from neuropgm.matio import MAGIC


def test_roundtrip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.standard_normal((7, 5))
    path = tmp_path / "m.f64mat"
    write_matrix(path, m)
    back = read_matrix(path)
    assert back.shape == m.shape
    assert back.tobytes() == m.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=1, max_dims=3, min_side=1,
                                       max_side=5),
              elements=st.floats(allow_nan=False, allow_infinity=False,
                                 width=64)))
def test_roundtrip_is_lossless_for_any_finite_array(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("rt") / "m.f64mat"
    write_matrix(path, m)
    back = read_matrix(path)
    assert back.shape == m.shape
    assert back.tobytes() == m.tobytes()


def test_headered_csv_parses_to_the_expected_matrix(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n1,2\n3,4\n", encoding="utf-8")
    assert np.array_equal(read_matrix(path), [[1.0, 2.0], [3.0, 4.0]])


def test_csv_write_then_read_recovers_values(tmp_path):
    m = np.array([[1.5, -2.25], [0.0, 1e-17]])
    path = tmp_path / "m.csv"
    write_matrix(path, m)
    assert np.array_equal(read_matrix(path), m)


def test_truncated_payload_reports_expected_and_actual_byte_counts(tmp_path):
    path = tmp_path / "m.f64mat"
    write_matrix(path, np.ones((3, 4)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-9])
    with pytest.raises(TruncatedFile) as err:
        read_matrix(path)
    counts = [int(n) for n in re.findall(r"\d+", str(err.value))]
    assert len(raw) in counts and len(raw) - 9 in counts


def test_truncated_header_raises(tmp_path):
    path = tmp_path / "m.f64mat"
    path.write_bytes(MAGIC + b"\x01\x00")
    with pytest.raises(TruncatedFile):
        read_matrix(path)


def test_wrong_magic_on_binary_extension_raises_bad_magic(tmp_path):
    path = tmp_path / "m.f64mat"
    path.write_bytes(b"XGMF" + b"\x00" * 20)
    with pytest.raises(BadMagic) as err:
        read_matrix(path)
    assert "XGMF" in str(err.value)


def test_unsupported_version_is_rejected(tmp_path):
    path = tmp_path / "m.f64mat"
    write_matrix(path, np.ones(2))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        read_matrix(path)


def test_trailing_bytes_are_rejected(tmp_path):
    path = tmp_path / "m.f64mat"
    write_matrix(path, np.ones(2))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(DataFormatError):
        read_matrix(path)


def test_non_finite_entries_are_refused_on_write(tmp_path):
    with pytest.raises(DataFormatError):
        write_matrix(tmp_path / "m.f64mat", np.array([1.0, np.nan]))


def test_non_numeric_csv_cell_names_row_and_column(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n1,2\n3,oops\n", encoding="utf-8")
    with pytest.raises(NonNumericCell) as err:
        read_matrix(path)
    msg = str(err.value)
    assert "row 3" in msg and "column 2" in msg and "oops" in msg


def test_ragged_csv_row_is_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n1,2\n3\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_matrix(path)


def test_header_only_csv_is_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_matrix(path)


def test_event_table_roundtrip(tmp_path):
    events = [(0.5, 1.5, 1.0, "faces"), (3.25, 1.5, 0.75, "houses")]
    path = tmp_path / "events.csv"
    write_events(path, events)
    assert read_events(path) == events


def test_event_header_columns_accepted_in_any_order(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("condition,amplitude,duration,onset\nfaces,1,2,0.5\n",
                    encoding="utf-8")
    assert read_events(path) == [(0.5, 2.0, 1.0, "faces")]


def test_event_header_with_extra_column_is_rejected(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("onset,duration,amplitude,condition,weight\n",
                    encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_events(path)


def test_non_numeric_event_onset_names_the_row(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text("onset,duration,amplitude,condition\nsoon,1,1,c0\n",
                    encoding="utf-8")
    with pytest.raises(NonNumericCell) as err:
        read_events(path)
    assert "row 2" in str(err.value)
