"""File formats, report serialization and run manifests.

Every report is written as JSON with floats at 17 significant digits and
keys in declaration order. Values that plain JSON cannot hold (tuples,
arrays, dicts with non-string keys, certlab records) carry a small tag so
:func:`decode` rebuilds exactly what :func:`encode` was given.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import io as _stdio
import json
import math
import os
from pathlib import Path

import numpy as np

from certlab import __version__
from certlab.errors import CertlabIOError, InvariantViolation, ParseError
from certlab.linalg import DEFAULT_TOL, DensityMatrix, Spectrum, density_from_json

TYPE_KEY = "__type__"
FLOAT_FORMAT = "%.17g"
MANIFEST_SUFFIX = ".manifest.json"


# --------------------------------------------------------------------------
# parsing inputs
# --------------------------------------------------------------------------

def _read_json(path) -> object:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CertlabIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def parse_density(path, tol: float = DEFAULT_TOL) -> DensityMatrix:
    obj = _read_json(path)
    if not isinstance(obj, dict) or "matrix" not in obj:
        raise ParseError(f"{path}: expected an object with fields 'dim' and 'matrix'")
    return density_from_json(obj, tol)


def parse_spectrum(path, tol: float = DEFAULT_TOL) -> Spectrum:
    """A spectrum file ``{"values": [...]}`` or the descending eigenvalues of a density file."""
    obj = _read_json(path)
    if isinstance(obj, dict) and "values" in obj:
        vals = obj["values"]
        if not isinstance(vals, list):
            raise ParseError(f"{path}: field 'values' must be a list")
        for k, v in enumerate(vals):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(f"{path}: field 'values'[{k}] is not a number: {v!r}")
        try:
            return Spectrum(tuple(float(v) for v in vals))
        except InvariantViolation as exc:
            raise InvariantViolation(f"{path}: field 'values': {exc}", exc.magnitude) from exc
    if isinstance(obj, dict) and "matrix" in obj:
        return density_from_json(obj, tol).spectrum()
    raise ParseError(f"{path}: expected a spectrum {{'values': [...]}} or a density matrix {{'dim', 'matrix'}}")


def parse_state_or_spectrum(path, tol: float = DEFAULT_TOL) -> DensityMatrix:
    """A density file as is, or a spectrum file as the diagonal state it describes."""
    obj = _read_json(path)
    if isinstance(obj, dict) and "matrix" in obj:
        return density_from_json(obj, tol)
    spectrum = parse_spectrum(path, tol)
    return DensityMatrix(np.diag(spectrum.array()).astype(complex))


# --------------------------------------------------------------------------
# tagged encoding
# --------------------------------------------------------------------------

def _registry() -> dict[str, type]:
    from certlab import bucketing, certifier, complexity, corpus, divergence, haar, instances, linalg, verify

    out = {}
    for mod in (linalg, haar, bucketing, instances, divergence, complexity, certifier, corpus, verify):
        for name in dir(mod):
            obj = getattr(mod, name)
            if isinstance(obj, type) and dataclasses.is_dataclass(obj) and obj.__module__ == mod.__name__:
                out[name] = obj
    out["RunManifest"] = RunManifest
    return out


def _encode_array(a: np.ndarray) -> dict:
    if np.iscomplexobj(a):
        data = [[float(z.real), float(z.imag)] for z in a.ravel()]
        kind = "complex"
    elif a.dtype == bool:
        data, kind = [bool(x) for x in a.ravel()], "bool"
    elif np.issubdtype(a.dtype, np.integer):
        data, kind = [int(x) for x in a.ravel()], "int"
    else:
        data, kind = [float(x) for x in a.ravel()], "float"
    return {TYPE_KEY: "ndarray", "dtype": kind, "shape": list(a.shape), "data": data}


def encode(obj):
    """JSON-ready structure that :func:`decode` turns back into ``obj``."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return {TYPE_KEY: "complex", "value": [obj.real, obj.imag]}
    if isinstance(obj, np.ndarray):
        return _encode_array(obj)
    if isinstance(obj, DensityMatrix):
        m = obj.matrix
        return {TYPE_KEY: "DensityMatrix", "dim": int(m.shape[0]),
                "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in m]}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {TYPE_KEY: type(obj).__name__}
        for f in dataclasses.fields(obj):
            if f.init and not f.metadata.get("volatile"):
                out[f.name] = encode(getattr(obj, f.name))
        return out
    if isinstance(obj, tuple):
        return {TYPE_KEY: "tuple", "items": [encode(x) for x in obj]}
    if isinstance(obj, list):
        return [encode(x) for x in obj]
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            if TYPE_KEY in obj:
                return {TYPE_KEY: "dict", "items": [[k, encode(v)] for k, v in obj.items()]}
            return {k: encode(v) for k, v in obj.items()}
        return {TYPE_KEY: "dict", "items": [[encode(k), encode(v)] for k, v in obj.items()]}
    raise ParseError(f"cannot serialize a {type(obj).__name__}")


def decode(obj, registry: dict[str, type] | None = None):
    if isinstance(obj, list):
        return [decode(x, registry) for x in obj]
    if not isinstance(obj, dict):
        return obj
    tag = obj.get(TYPE_KEY)
    if tag is None:
        return {k: decode(v, registry) for k, v in obj.items()}
    registry = _registry() if registry is None else registry
    if tag == "tuple":
        return tuple(decode(x, registry) for x in obj["items"])
    if tag == "dict":
        return {_hashable(decode(k, registry)): decode(v, registry) for k, v in obj["items"]}
    if tag == "complex":
        return complex(*obj["value"])
    if tag == "ndarray":
        shape = tuple(obj["shape"])
        if obj["dtype"] == "complex":
            flat = np.array([complex(r, i) for r, i in obj["data"]], dtype=complex)
        else:
            flat = np.array(obj["data"], dtype={"bool": bool, "int": np.int64, "float": float}[obj["dtype"]])
        return flat.reshape(shape)
    if tag == "DensityMatrix":
        m = np.array([[complex(r, i) for r, i in row] for row in obj["matrix"]], dtype=complex)
        return DensityMatrix(m.reshape(int(obj["dim"]), int(obj["dim"])))
    cls = registry.get(tag)
    if cls is None:
        raise ParseError(f"unknown record type {tag!r}")
    kwargs = {k: decode(v, registry) for k, v in obj.items() if k != TYPE_KEY}
    return cls(**kwargs)


def _hashable(x):
    return tuple(_hashable(v) for v in x) if isinstance(x, list) else x


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = FLOAT_FORMAT % x
    return s if any(c in s for c in ".en") else s + ".0"


def dumps(obj, indent: int = 0) -> str:
    """JSON text for an already-encoded structure, floats at 17 significant digits."""
    pad = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        return "[" + ", ".join(dumps(x, indent + 1) for x in obj) + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + "  " * indent + "}"
    raise ParseError(f"cannot write a {type(obj).__name__} as JSON")


def loads(text: str):
    return decode(json.loads(text))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def _plain(obj):
    """Untagged view for tables: records become dicts, arrays become lists."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.init and not f.metadata.get("volatile")}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _flatten(row: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in row.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, list):
        return dumps(encode(v))
    return str(v)


def csv_text(rows) -> str:
    """CSV with a header row; nested fields become dotted column names."""
    flat = [_flatten(_plain(r)) for r in rows]
    if not flat:
        raise ParseError("no rows to write")
    header = list(flat[0])
    for r in flat[1:]:
        header.extend(k for k in r if k not in header)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in flat:
        w.writerow([_cell(r.get(k)) for k in header])
    return buf.getvalue()


def report_text(report, fmt: str = "json") -> str:
    if fmt == "json":
        return dumps(encode(report)) + "\n"
    if fmt == "csv":
        return csv_text(report if isinstance(report, list) else [report])
    raise ParseError(f"unknown format {fmt!r}; use json or csv")


def write_text(path, text: str) -> Path:
    p = Path(path)
    try:
        with open(p, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CertlabIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return p


def emit_report(report, fmt: str, path) -> Path:
    """Write ``report`` as JSON or CSV to ``path``."""
    return write_text(path, report_text(report, fmt))


def load_report(path):
    """Inverse of JSON :func:`emit_report`."""
    try:
        return loads(Path(path).read_text())
    except OSError as exc:
        raise CertlabIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 16), b""):
                h.update(block)
    except OSError as exc:
        raise CertlabIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return h.hexdigest()


@dataclasses.dataclass(frozen=True)
class RunManifest:
    """What was run, with which seed and inputs, and what it produced."""

    command: tuple[str, ...]
    seed: int
    version: str
    inputs: dict[str, str]
    timestamp: str
    outputs: dict[str, str]

    @classmethod
    def build(cls, argv, seed: int, inputs, outputs) -> "RunManifest":
        return cls(
            command=tuple(argv),
            seed=int(seed),
            version=__version__,
            inputs={str(p): file_digest(p) for p in inputs},
            timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
            outputs={str(p): file_digest(p) for p in outputs},
        )

    def write(self, path) -> Path:
        return write_text(path, dumps(encode(self)) + "\n")


def manifest_path(output) -> Path:
    return Path(str(output) + MANIFEST_SUFFIX)


def read_manifest(path) -> RunManifest:
    m = load_report(path)
    if not isinstance(m, RunManifest):
        raise ParseError(f"{path} is not a run manifest")
    return m


@dataclasses.dataclass(frozen=True)
class ReplayResult:
    identical: bool
    exit_code: int
    mismatches: tuple[str, ...]


def replay(path, workdir) -> ReplayResult:
    """Re-run a manifest's command with outputs redirected into ``workdir``.

    Inputs must still match their recorded digests; the result is identical
    when every redirected output has the recorded digest.
    """
    from certlab.cli import main

    m = read_manifest(path)
    for p, digest in m.inputs.items():
        if file_digest(p) != digest:
            raise InvariantViolation(f"input {p} changed since the manifest was written")
    argv = list(m.command)
    if "--out" not in argv:
        raise ParseError("manifest command has no --out; nothing to compare")
    k = argv.index("--out")
    original = argv[k + 1]
    target = os.path.join(str(workdir), Path(original).name)
    argv[k + 1] = target
    argv += ["--seed", str(m.seed)]
    code = main(argv)
    mismatches = []
    recorded = m.outputs.get(original)
    if recorded is None or not Path(target).exists() or file_digest(target) != recorded:
        mismatches.append(original)
    return ReplayResult(not mismatches, code, tuple(mismatches))
