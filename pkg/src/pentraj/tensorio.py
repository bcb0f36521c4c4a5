"""Model persistence: a JSON manifest of named float64 tensors.

Each tensor is stored as ``{"shape": [...], "values": [flat floats]}``.
JSON float serialization uses shortest round-trip text, so saving and
loading reproduce every float64 bit-exactly.  Scalars go in a separate
``scalars`` table.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_tensors(path, tensors: dict, scalars: dict | None = None, kind: str = "model"):
    doc = {
        "kind": kind,
        "scalars": {k: v for k, v in (scalars or {}).items()},
        "tensors": {
            name: {
                "shape": list(np.asarray(value).shape),
                "values": [float(v) for v in np.asarray(value, dtype=np.float64).ravel()],
            }
            for name, value in tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_tensors(path, kind: str | None = None):
    """Return (tensors, scalars); tensors are float64 arrays with saved shapes."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} file, found {doc.get('kind')!r} in {path}")
    tensors = {
        name: np.asarray(spec["values"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in doc["tensors"].items()
    }
    return tensors, doc.get("scalars", {})
