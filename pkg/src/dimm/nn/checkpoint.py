"""Line-oriented text checkpoint for named parameter arrays.

Layout::

    dimm-params v1
    meta <json object on one line>
    count <N>
    <name> <shape> <v0> <v1> ...      (N records)
    end

``shape`` is dimensions joined by ``x`` (``-`` for a 0-d array).  Values are
written with 17 significant digits, so a save/load round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataFormatError

MAGIC = "dimm-params v1"


def _shape_str(shape):
    return "x".join(str(d) for d in shape) if shape else "-"


def save_params(path, params: dict, meta: dict | None = None) -> None:
    lines = [MAGIC, "meta " + json.dumps(meta or {}, sort_keys=True), f"count {len(params)}"]
    for name, value in params.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        a = np.asarray(value, dtype=np.float64)
        vals = " ".join(format(float(x), ".17g") for x in a.ravel())
        lines.append(f"{name} {_shape_str(a.shape)} {vals}".rstrip())
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path):
    """Returns ``(params, meta)``; ``params`` keeps file order."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise DataFormatError(f"expected header {MAGIC!r}", line=1)
    if len(text) < 3 or not text[1].startswith("meta "):
        raise DataFormatError("missing meta record", line=2)
    try:
        meta = json.loads(text[1][5:])
    except json.JSONDecodeError as e:
        raise DataFormatError(f"bad meta json: {e}", line=2) from None
    if not text[2].startswith("count "):
        raise DataFormatError("missing count record", line=3)
    n = int(text[2].split()[1])
    params = {}
    for i in range(n):
        ln = 4 + i
        if ln > len(text):
            raise DataFormatError(f"file ends after {i} of {n} records", line=ln)
        parts = text[ln - 1].split()
        if len(parts) < 2:
            raise DataFormatError("record needs a name and a shape", line=ln)
        name, shp = parts[0], parts[1]
        try:
            shape = () if shp == "-" else tuple(int(d) for d in shp.split("x"))
            vals = np.array([float(x) for x in parts[2:]], dtype=np.float64)
        except ValueError as e:
            raise DataFormatError(str(e), line=ln) from None
        if vals.size != int(np.prod(shape)):
            raise DataFormatError(f"{name}: {vals.size} values for shape {shape}", line=ln)
        params[name] = vals.reshape(shape)
    if len(text) < 4 + n or text[3 + n].strip() != "end":
        raise DataFormatError("missing end marker", line=4 + n)
    return params, meta
