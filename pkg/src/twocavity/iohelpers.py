"""CSV and JSON writers shared by the result types and the CLI."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path


def _fmt(x) -> str:
    if hasattr(x, "item"):          # numpy scalar
        x = x.item()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows, comment: str | None = None):
    """Write rows with ``repr`` float formatting so reruns are byte-identical.

    ``path`` may be a filesystem path or an open text stream.
    """
    if hasattr(path, "write"):
        _write(path, header, rows, comment)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        _write(fh, header, rows, comment)


def _write(fh, header, rows, comment):
    if comment is not None:
        fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Return ``(header, rows)``, skipping ``#`` comment lines."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("".join(lines)))
    header = next(reader)
    return header, [r for r in reader]


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
