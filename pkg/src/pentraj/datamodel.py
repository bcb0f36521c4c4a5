"""Value types and on-disk formats for recorded activation trials.

A *trial* is one synthesis run's record for a single recurrent layer: a
T x q matrix of unit activations (rows = timesteps) plus the condition
(style, text, seed) that produced it and, optionally, the attention
weights over character positions.  Bundles group trials under a JSON
manifest with one little-endian binary file per matrix, chosen so that
write -> read round-trips are bit-exact.

Binary trial format: magic ``NTRJ`` (4 bytes), version uint32=1 LE,
T uint32 LE, q uint32 LE, then T*q float64 LE values, row-major with
timestep rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NTRJ"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def float_text(x) -> str:
    """Decimal text with 17 significant digits (round-trip-safe for float64)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ConditionLabel:
    """One cell of the priming-style x target-text grid.

    style_id 0 means unprimed sampling; 1..S index the priming styles.
    seed is the uint64 RNG seed of the sampling run.
    """

    style_id: int
    text_id: int
    seed: int


@dataclass
class TrialRecord:
    """Per-layer activation recording of one synthesis run.

    activations is T x q (timestep rows, unit columns); attention_trace,
    when present, is T x U with the window weight per character position.
    """

    id: str
    condition: ConditionLabel
    layer_index: int
    activations: np.ndarray
    attention_trace: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.activations.shape[0]

    @property
    def q(self) -> int:
        return self.activations.shape[1]

    def validate(self):
        if not self.id or "/" in self.id or "\\" in self.id:
            raise ValueError(f"invalid trial id {self.id!r}")
        if self.layer_index not in (0, 1, 2):
            raise ValueError(f"layer_index must be in {{0,1,2}}, got {self.layer_index}")
        a = self.activations
        if a.ndim != 2:
            raise ValueError("activations must be a 2-D matrix")
        if a.shape[0] < 2 or a.shape[1] < 1:
            raise ValueError(f"activations need T >= 2 and q >= 1, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite values in activations of trial {self.id!r}")
        w = self.attention_trace
        if w is not None:
            if w.ndim != 2 or w.shape[0] != a.shape[0]:
                raise ValueError(f"attention trace of trial {self.id!r} must have the same T")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"non-finite values in attention trace of trial {self.id!r}")
            if np.any(w < 0):
                raise ValueError(f"negative attention weights in trial {self.id!r}")
        if self.condition.style_id < 0 or self.condition.text_id < 0:
            raise ValueError("style_id and text_id must be nonnegative")


@dataclass
class TrialBundle:
    """A set of trials plus the text and style tables their labels index."""

    texts: list
    styles: list
    trials: list

    def validate(self):
        n_styles = len(self.styles)
        n_texts = len(self.texts)
        seen = set()
        for trial in self.trials:
            trial.validate()
            c = trial.condition
            if c.style_id > n_styles:
                raise ValueError(f"style_id {c.style_id} out of range [0, {n_styles}]")
            if c.text_id >= n_texts:
                raise ValueError(f"text_id {c.text_id} out of range [0, {n_texts})")
            key = (c.style_id, c.text_id, c.seed, trial.layer_index)
            if key in seen:
                raise ValueError(f"duplicate trial for condition {key}")
            seen.add(key)
        ids = [t.id for t in self.trials]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate trial ids in bundle")


def write_matrix(path, values: np.ndarray):
    """Write one T x q float64 matrix in the NTRJ binary format."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("only 2-D matrices are supported")
    t, q = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, t, q))
        fh.write(values.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    """Read an NTRJ binary matrix, validating magic, version and length."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"truncated trial file {path}")
    magic, version, t, q = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic in {path}: {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version} in {path}")
    expected = _HEADER.size + t * q * 8
    if len(raw) < expected:
        raise ValueError(f"truncated trial payload in {path}: {len(raw)} < {expected} bytes")
    if len(raw) > expected:
        raise ValueError(f"trailing bytes after trial payload in {path}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return data.reshape(t, q).copy()


def write_trial_bundle(bundle: TrialBundle, path):
    """Write manifest.json plus one binary file per trial matrix under path.

    Re-reading the directory yields an equal bundle with byte-identical
    activation payloads.
    """
    bundle.validate()
    root = Path(path)
    (root / "trials").mkdir(parents=True, exist_ok=True)
    entries = []
    for trial in bundle.trials:
        rel = f"trials/{trial.id}.ntrj"
        write_matrix(root / rel, trial.activations)
        entry = {
            "id": trial.id,
            "style_id": trial.condition.style_id,
            "text_id": trial.condition.text_id,
            "seed": int(trial.condition.seed),
            "layer_index": trial.layer_index,
            "T": trial.T,
            "q": trial.q,
            "path": rel,
        }
        if trial.attention_trace is not None:
            rel_attn = f"trials/{trial.id}.attn.ntrj"
            write_matrix(root / rel_attn, trial.attention_trace)
            entry["attention_path"] = rel_attn
        entries.append(entry)
    manifest = {"texts": list(bundle.texts), "styles": list(bundle.styles), "trials": entries}
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_trial_bundle(path) -> TrialBundle:
    """Read a bundle directory, rejecting manifest/header disagreements."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ValueError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    trials = []
    for entry in manifest["trials"]:
        fpath = root / entry["path"]
        if not fpath.is_file():
            raise ValueError(f"missing trial file {entry['path']} for trial {entry['id']!r}")
        activations = read_matrix(fpath)
        if activations.shape != (entry["T"], entry["q"]):
            raise ValueError(
                f"shape mismatch for trial {entry['id']!r}: manifest says "
                f"({entry['T']}, {entry['q']}), header says {activations.shape}"
            )
        attention = None
        if "attention_path" in entry:
            apath = root / entry["attention_path"]
            if not apath.is_file():
                raise ValueError(f"missing trial file {entry['attention_path']}")
            attention = read_matrix(apath)
        trials.append(
            TrialRecord(
                id=entry["id"],
                condition=ConditionLabel(entry["style_id"], entry["text_id"], entry["seed"]),
                layer_index=entry["layer_index"],
                activations=activations,
                attention_trace=attention,
            )
        )
    bundle = TrialBundle(texts=manifest["texts"], styles=manifest["styles"], trials=trials)
    bundle.validate()
    return bundle


def export_csv(trial: TrialRecord) -> str:
    """Render a trial's activations as CSV text.

    Header row is ``t,u0,...,u{q-1}``; one row per timestep; values use 17
    significant digits so parsing the text recovers the float64 matrix
    exactly.
    """
    a = trial.activations
    q = a.shape[1]
    lines = ["t," + ",".join(f"u{j}" for j in range(q))]
    for t in range(a.shape[0]):
        lines.append(f"{t}," + ",".join(float_text(v) for v in a[t]))
    return "\n".join(lines) + "\n"
