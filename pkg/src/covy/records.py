"""Result tables, CSV/JSON export and line-delimited record files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

SCHEMA_VERSION = 1
SIG_DIGITS = 6


def fmt_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{SIG_DIGITS}g}"


def round_sig(x: float) -> float:
    """Round to the export precision (6 significant digits)."""
    if not math.isfinite(x):
        return x
    return float(fmt_float(x))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if isinstance(v, float):
        return round_sig(v) if math.isfinite(v) else None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):        # numpy scalar
        return _jsonable(v.item())
    return str(v)


@dataclass
class ResultTable:
    """Named rows with a fixed column order, plus a free-form summary."""

    kind: str
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, **row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)}")
        self.rows.append(row)


def export(table: ResultTable, fmt: str, path) -> Path:
    """Write ``table`` as CSV or JSON with a schema-version header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}; kind: {table.kind}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_cell(row.get(c)) for c in table.columns])
    elif fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "kind": table.kind, "columns": list(table.columns),
               "rows": [{c: _jsonable(r.get(c)) for c in table.columns} for r in table.rows],
               "summary": _jsonable(table.summary)}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return path


def parse_cell(text: str):
    """Inverse of the CSV cell encoding: empty -> None, booleans, ints, floats."""
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_table(path) -> ResultTable:
    """Inverse of :func:`export`; CSV cells are parsed back with :func:`parse_cell`."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        doc = json.loads(text)
        return ResultTable(doc["kind"], doc["columns"], doc["rows"], doc.get("summary", {}))
    lines = text.splitlines()
    head = lines[0]
    kind = head.split("kind:")[-1].strip() if "kind:" in head else ""
    reader = csv.reader(lines[1:])
    columns = next(reader)
    rows = [{c: parse_cell(v) for c, v in zip(columns, r)} for r in reader]
    return ResultTable(kind, columns, rows)


def write_jsonl(records: Iterable[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True))
            fh.write("\n")
    return path


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def error_record(exc: BaseException, command: Optional[str] = None) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if command:
        rec["command"] = command
    fld = getattr(exc, "field", None)
    if fld:
        rec["field"] = fld
    extra = getattr(exc, "record", None)
    if extra:
        rec["detail"] = extra
    return rec
