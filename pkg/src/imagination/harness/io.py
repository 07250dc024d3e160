"""CSV and manifest emission.

Floats are written with 17 significant digits so a parsed file reproduces
the in-memory values bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .. import __version__


class SchemaError(ValueError):
    pass


def format_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def emit_csv(path: str | Path, rows: Iterable[Mapping[str, Any]], schema: Sequence[str]) -> Path:
    """Write ``rows`` with exactly the columns in ``schema``.

    Every row must have the schema's keys and no others.  An empty row
    set produces a header-only file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(schema)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, row in enumerate(rows):
            if set(row) != set(cols):
                missing, extra = sorted(set(cols) - set(row)), sorted(set(row) - set(cols))
                raise SchemaError(f"row {i} does not match schema (missing {missing}, extra {extra})")
            w.writerow([format_value(row[c]) for c in cols])
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(x: Any) -> Any:
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, Path):
        return str(x)
    return x


def code_fingerprint() -> str:
    """SHA-256 over the package's source files, in sorted path order."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(path: str | Path, config: Mapping, outputs: Mapping[str, Sequence[str]], **extra: Any) -> Path:
    """Deterministic JSON manifest: resolved config, code version, seed and
    the schema of each emitted CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "package_version": __version__,
        "code_sha256": code_fingerprint(),
        "seed": config.get("seed"),
        "config": config,
        "outputs": {name: list(cols) for name, cols in sorted(outputs.items())},
        **extra,
    }
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
