"""CSV ingestion and the bundled bodyweight dataset.

A dataset file is UTF-8 CSV with a header row. One column holds the group
label, one the response, and every remaining column except an optional id
column is a covariate (order preserved). Numbers are parsed with
:func:`float`, so only a dot is accepted as decimal separator, whatever the
process locale.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError
from .model import AncovaData

__all__ = [
    "BUNDLED",
    "KNOWN_LAYOUTS",
    "ColumnSpec",
    "DatasetParseError",
    "load_bodyweight",
    "parse_dataset",
    "read_dataset",
    "resolve_path",
]

BUNDLED = ("bodyweight.csv",)


@dataclass(frozen=True)
class ColumnSpec:
    group: str = "group"
    response: str = "y"
    id: str | None = None


# header (as a tuple) -> column roles, for files that do not use group/y
KNOWN_LAYOUTS = {
    ("animal", "dose", "baseline", "week4"): ColumnSpec(group="dose", response="week4", id="animal"),
}


class DatasetParseError(InvalidInputError):
    """A dataset file could not be parsed; ``line`` is 1-based (header = 1)."""

    def __init__(self, message: str, line: int | None = None, source: str = "<input>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def resolve_path(name: str | Path) -> Path:
    """``name`` itself if it exists, else the bundled file of that name."""
    p = Path(name)
    if p.exists():
        return p
    if p.name in BUNDLED and str(name) == p.name:
        return Path(str(resources.files("hetancova") / "data" / p.name))
    raise FileNotFoundError(f"no such file: {name}")


def _number(text: str, column: str, line: int, source: str) -> float:
    t = text.strip()
    try:
        v = float(t)
    except ValueError:
        raise DatasetParseError(f"column {column!r}: {text!r} is not a number", line, source) from None
    if t.lower() in ("nan", "inf", "-inf", "+inf", "infinity", "-infinity", "+infinity"):
        raise DatasetParseError(f"column {column!r}: non-finite value {text!r}", line, source)
    return v


def parse_dataset(text: str, columns: ColumnSpec | None = None, *, control=None,
                  source: str = "<input>") -> AncovaData:
    """Parse CSV text into :class:`AncovaData`.

    Without ``columns`` the header is looked up in :data:`KNOWN_LAYOUTS`,
    falling back to ``group`` and ``y``. Group labels are kept as strings;
    the first label seen becomes group 1 unless ``control`` is given.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetParseError("file is empty", 1, source) from None
    header = [h.strip() for h in header]
    if columns is None:
        key = tuple(h.lower() for h in header)
        if key in KNOWN_LAYOUTS:
            columns, header = KNOWN_LAYOUTS[key], list(key)
        else:
            columns = ColumnSpec()
    for role, name in (("group", columns.group), ("response", columns.response)):
        if name not in header:
            raise DatasetParseError(f"{role} column {name!r} not in header {header}", 1, source)
    if len(set(header)) != len(header):
        raise DatasetParseError("duplicate column names in header", 1, source)
    gi = header.index(columns.group)
    yi = header.index(columns.response)
    skip = {gi, yi}
    if columns.id is not None:
        if columns.id not in header:
            raise DatasetParseError(f"id column {columns.id!r} not in header", 1, source)
        skip.add(header.index(columns.id))
    cov_idx = [j for j in range(len(header)) if j not in skip]
    cov_names = tuple(header[j] for j in cov_idx)

    labels, ys, rows = [], [], []
    for line, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(rec)}", line, source)
        if any(not c.strip() for c in rec):
            raise DatasetParseError("missing value", line, source)
        labels.append(rec[gi].strip())
        ys.append(_number(rec[yi], header[yi], line, source))
        rows.append([_number(rec[j], header[j], line, source) for j in cov_idx])
    if not ys:
        raise DatasetParseError("no data rows", None, source)
    M = np.asarray(rows, dtype=float).reshape(len(ys), len(cov_idx))
    return AncovaData.from_arrays(np.asarray(ys), labels, M, control=control,
                                  covariate_names=cov_names)


def read_dataset(path, columns: ColumnSpec | None = None, *, control=None) -> AncovaData:
    p = resolve_path(path)
    try:
        text = p.read_bytes().decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DatasetParseError(f"not valid UTF-8 ({exc.reason})", None, str(path)) from None
    return parse_dataset(text, columns, control=control, source=str(path))


def load_bodyweight(response: str = "week4") -> AncovaData:
    """The bundled bodyweight data: 13 control and 39 treated animals.

    ``response`` is ``"week4"`` (covariate: baseline) or ``"baseline"``
    (no covariate).
    """
    if response == "week4":
        spec = ColumnSpec(group="dose", response="week4", id="animal")
        return read_dataset("bodyweight.csv", spec)
    if response == "baseline":
        text = resolve_path("bodyweight.csv").read_text(encoding="utf-8")
        rows = list(csv.DictReader(io.StringIO(text)))
        body = "dose,baseline\n" + "".join(f"{r['dose']},{r['baseline']}\n" for r in rows)
        return parse_dataset(body, ColumnSpec(group="dose", response="baseline"))
    raise ValueError("response must be 'week4' or 'baseline'")
