"""Item-parameter and long-form response CSV codecs."""

from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from grmfit.core.errors import ParseError
from grmfit.models.schemas import N_CATEGORIES, ItemParameters
from grmfit.services.types import ResponseMatrix

ITEM_COLUMNS = ["item", "a", "b1", "b2", "b3", "b4"]
RESPONSE_COLUMNS = ["subject", "item", "response"]
FLOAT_FORMAT = "%.17g"


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _read_raw(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc).strip(), path=str(path)) from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ParseError(
            f"header must contain {','.join(columns)}", path=str(path), line=1, field=missing[0]
        )
    return frame[list(columns)]


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _numeric(frame: pd.DataFrame, column: str, path: Path, integer: bool) -> np.ndarray:
    """Parse one column, reporting the first bad cell by file line (header is line 1)."""
    # float() is correctly rounded; pd.to_numeric can be off by one ulp
    values = frame[column].map(_to_float).to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if integer:
        bad |= values != np.round(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        kind = "an integer" if integer else "a number"
        raise ParseError(
            f"expected {kind}, got {frame[column].iloc[row]!r}",
            path=str(path),
            line=row + 2,
            field=column,
        )
    return values.astype(np.int64) if integer else values


def read_item_csv(path: Path) -> List[ItemParameters]:
    path = Path(path)
    frame = _read_raw(path, ITEM_COLUMNS)
    if frame.empty:
        raise ParseError("no item rows", path=str(path), line=2)
    parsed = {c: _numeric(frame, c, path, integer=(c == "item")) for c in ITEM_COLUMNS}

    items: List[ItemParameters] = []
    seen: set[int] = set()
    for row in range(len(frame)):
        item_id = int(parsed["item"][row])
        if item_id in seen:
            raise ParseError(f"duplicate item id {item_id}", path=str(path), line=row + 2, field="item")
        seen.add(item_id)
        try:
            items.append(
                ItemParameters(
                    item_id=item_id,
                    a=float(parsed["a"][row]),
                    b=tuple(float(parsed[f"b{k}"][row]) for k in range(1, 5)),
                )
            )
        except ValidationError as exc:
            error = exc.errors()[0]
            field = str(error["loc"][0]) if error["loc"] else None
            raise ParseError(error["msg"], path=str(path), line=row + 2, field=field) from exc
    return items


def write_item_csv(items: Sequence[ItemParameters], path: Path) -> Path:
    frame = pd.DataFrame([item.to_row() for item in items], columns=ITEM_COLUMNS)
    return write_frame(frame, path)


def read_response_csv(path: Path) -> ResponseMatrix:
    """Long-form `subject,item,response` rows -> complete N x M matrix."""
    path = Path(path)
    frame = _read_raw(path, RESPONSE_COLUMNS)
    if frame.empty:
        raise ParseError("no response rows", path=str(path), line=2)
    subject = _numeric(frame, "subject", path, integer=True)
    item = _numeric(frame, "item", path, integer=True)
    response = _numeric(frame, "response", path, integer=True)

    for name, values in (("subject", subject), ("item", item)):
        if values.min() < 0:
            row = int(np.argmin(values))
            raise ParseError("ids must be >= 0", path=str(path), line=row + 2, field=name)
    out_of_range = (response < 0) | (response >= N_CATEGORIES)
    if out_of_range.any():
        row = int(np.flatnonzero(out_of_range)[0])
        raise ParseError(
            f"response must be in 0..{N_CATEGORIES - 1}, got {response[row]}",
            path=str(path),
            line=row + 2,
            field="response",
        )

    keys = pd.DataFrame({"subject": subject, "item": item})
    duplicated = keys.duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        raise ParseError(
            f"duplicate response for subject {subject[row]} item {item[row]}",
            path=str(path),
            line=row + 2,
        )

    subjects, subject_index = np.unique(subject, return_inverse=True)
    item_ids, item_index = np.unique(item, return_inverse=True)
    if len(frame) != subjects.size * item_ids.size:
        raise ParseError(
            f"incomplete grid: {len(frame)} rows for {subjects.size} subjects "
            f"x {item_ids.size} items (missing responses are not supported)",
            path=str(path),
        )
    grid = np.empty((subjects.size, item_ids.size), dtype=np.int64)
    grid[subject_index, item_index] = response
    return ResponseMatrix(grid, item_ids)


def write_response_csv(data: ResponseMatrix, path: Path) -> Path:
    n, m = data.responses.shape
    frame = pd.DataFrame(
        {
            "subject": np.repeat(np.arange(n), m),
            "item": np.tile(data.item_ids, n),
            "response": data.responses.reshape(-1),
        }
    )
    return write_frame(frame, path)
