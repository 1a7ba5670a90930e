"""CSV and manifest emission.

CSV files are UTF-8 with LF line endings and '.' decimals.  Each begins with
``# key: value`` metadata lines (values JSON-encoded), followed by a header row.
Every run also writes a JSON manifest holding the config, seed, package
versions, wall time and, on failure, an error record.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

OUT_ENV = "CIRCLEDIFF_OUT"


def to_jsonable(x):
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [to_jsonable(x.real), to_jsonable(x.imag)]
    return x


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{float(v.real)!r}{float(v.imag):+.17g}j"
    return str(v)


def rows_to_csv(rows: list[dict], meta: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {json.dumps(to_jsonable(v), sort_keys=True)}\n")
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def read_csv(source: str | Path) -> tuple[dict, list[dict]]:
    """Inverse of :func:`rows_to_csv` on CSV text or a file path; cells come back as strings."""
    text = source.read_text(encoding="utf-8") if isinstance(source, Path) else source
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            k, v = line[2:].split(":", 1)
            meta[k.strip()] = json.loads(v)
        elif line:
            body.append(line)
    return meta, list(csv.DictReader(body))


def versions() -> dict:
    import scipy
    from . import __version__
    return {"circlediff": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0], "platform": platform.platform()}


def output_dir(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get(OUT_ENV) or "circlediff-out")


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_manifest(path: Path, config: dict, seed, wall_time: float, outputs: list[str],
                   summary: dict | None = None, error: dict | None = None) -> None:
    doc = {"config": config, "seed": seed, "versions": versions(), "wall_time_seconds": wall_time,
           "outputs": outputs, "summary": summary or {}, "error": error}
    write_text(path, json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")
