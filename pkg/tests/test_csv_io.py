"""Tests for the item and response CSV codecs."""

from pathlib import Path

import numpy as np
import pytest

from grmfit.core.errors import ParseError
from grmfit.services.types import ResponseMatrix
from grmfit.utils.csv_io import (
    read_item_csv,
    read_response_csv,
    write_item_csv,
    write_response_csv,
)

ITEM_HEADER = "item,a,b1,b2,b3,b4\n"
RESPONSE_HEADER = "subject,item,response\n"


def write(tmp_path: Path, name: str, text: str) -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestItemCsv:
    def test_written_values_read_back_exactly(self, tmp_path: Path, random_items) -> None:
        items = random_items(7, 42)
        path = write_item_csv(items, tmp_path / "items.csv")
        assert path.read_text().splitlines()[0] == "item,a,b1,b2,b3,b4"
        assert read_item_csv(path) == items

    def test_seventeen_digit_values_are_bit_exact(self, tmp_path: Path) -> None:
        b1 = -1.3486098598083553
        path = write(tmp_path, "items.csv", ITEM_HEADER + f"0,1.2345678901234567,{b1!r},0,1,2\n")
        (item,) = read_item_csv(path)
        assert item.b[0] == b1
        assert item.a == 1.2345678901234567

    def test_bad_number_reports_line_and_field(self, tmp_path: Path) -> None:
        path = write(tmp_path, "items.csv", ITEM_HEADER + "0,1.0,-1,0,1,2\n1,abc,-1,0,1,2\n")
        with pytest.raises(ParseError) as info:
            read_item_csv(path)
        assert info.value.line == 3
        assert info.value.field == "a"
        assert f"{path}:3" in str(info.value)

    def test_unordered_thresholds(self, tmp_path: Path) -> None:
        path = write(tmp_path, "items.csv", ITEM_HEADER + "0,1.0,-1,0.5,0.2,2\n")
        with pytest.raises(ParseError) as info:
            read_item_csv(path)
        assert info.value.line == 2
        assert info.value.field == "b"

    def test_non_positive_slope(self, tmp_path: Path) -> None:
        path = write(tmp_path, "items.csv", ITEM_HEADER + "0,0,-1,0,1,2\n")
        with pytest.raises(ParseError) as info:
            read_item_csv(path)
        assert info.value.field == "a"

    def test_duplicate_ids(self, tmp_path: Path) -> None:
        path = write(tmp_path, "items.csv", ITEM_HEADER + "0,1,-1,0,1,2\n0,1,-1,0,1,2\n")
        with pytest.raises(ParseError) as info:
            read_item_csv(path)
        assert info.value.line == 3

    def test_missing_column(self, tmp_path: Path) -> None:
        path = write(tmp_path, "items.csv", "item,a,b1,b2,b3\n0,1,-1,0,1\n")
        with pytest.raises(ParseError) as info:
            read_item_csv(path)
        assert info.value.line == 1
        assert info.value.field == "b4"

    def test_empty_file(self, tmp_path: Path) -> None:
        with pytest.raises(ParseError):
            read_item_csv(write(tmp_path, "items.csv", ""))


class TestResponseCsv:
    def test_long_form_layout(self, tmp_path: Path) -> None:
        data = ResponseMatrix(np.array([[0, 4], [2, 1]]), item_ids=np.array([3, 8]))
        path = write_response_csv(data, tmp_path / "data.csv")
        assert path.read_text().splitlines() == [
            "subject,item,response",
            "0,3,0",
            "0,8,4",
            "1,3,2",
            "1,8,1",
        ]
        back = read_response_csv(path)
        np.testing.assert_array_equal(back.responses, data.responses)
        np.testing.assert_array_equal(back.item_ids, [3, 8])

    def test_rows_in_any_order(self, tmp_path: Path) -> None:
        path = write(tmp_path, "data.csv", RESPONSE_HEADER + "1,1,3\n0,1,2\n1,0,4\n0,0,0\n")
        data = read_response_csv(path)
        np.testing.assert_array_equal(data.responses, [[0, 2], [4, 3]])

    def test_response_out_of_range(self, tmp_path: Path) -> None:
        path = write(tmp_path, "data.csv", RESPONSE_HEADER + "0,0,1\n0,1,5\n")
        with pytest.raises(ParseError) as info:
            read_response_csv(path)
        assert info.value.line == 3
        assert info.value.field == "response"

    def test_non_integer_response(self, tmp_path: Path) -> None:
        path = write(tmp_path, "data.csv", RESPONSE_HEADER + "0,0,1.5\n")
        with pytest.raises(ParseError) as info:
            read_response_csv(path)
        assert (info.value.line, info.value.field) == (2, "response")

    def test_incomplete_grid(self, tmp_path: Path) -> None:
        path = write(tmp_path, "data.csv", RESPONSE_HEADER + "0,0,1\n0,1,2\n1,0,3\n")
        with pytest.raises(ParseError, match="incomplete grid"):
            read_response_csv(path)

    def test_duplicate_cell(self, tmp_path: Path) -> None:
        path = write(tmp_path, "data.csv", RESPONSE_HEADER + "0,0,1\n0,0,2\n")
        with pytest.raises(ParseError) as info:
            read_response_csv(path)
        assert info.value.line == 3
