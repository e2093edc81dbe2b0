"""Serialization of domain values and run manifests.

JSON documents look like ``{"version": 1, "type": <tag>, "data": {...}}``.
Floats are written with Python's shortest round-trip repr, so arrays come
back bit-identical. Readers are strict: unknown keys, wrong shapes and
non-finite numbers are rejected with a message naming the offending path.

CSV layouts (header row mandatory, '.' decimal):

* ObjectSet     ``x, y[, z]`` (``x0 .. x{d-1}`` beyond 3D), then ``f0 .. f{dx-1}``
* FieldSamples  position columns as above, ``rho``, ``f0 ..``, ``w``
* bench report  see :data:`setfield.bench.CSV_COLUMNS`
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import CSV_COLUMNS, BenchConfig
from .decode import DecodeOptions, DecodeResult
from .decode1d import Bursts, FieldConfig1D, FrbPrior, GridField1D, LightcurveResult
from .encode import FieldSamples, ObjectSet
from .errors import SetFieldError, SchemaError
from .kernels import KernelSpec
from .optimize import LbfgsConfig
from .sampling import SamplerConfig

VERSION = 1


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# validation helpers


def _keys(d, path: str, required=(), optional=()):
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: expected an object")
    unknown = sorted(set(d) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"{path}.{unknown[0]}: unknown field")
    for k in required:
        if k not in d:
            raise SchemaError(f"{path}.{k}: missing field")


def _array(value, path: str, ndim: int, cols: Optional[int] = None, finite: bool = True) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected a rectangular numeric array") from None
    if ndim == 2 and a.ndim == 1 and a.size == 0:
        a = a.reshape(0, cols or 0)
    if a.ndim != ndim:
        raise SchemaError(f"{path}: expected a {ndim}-dimensional array, got {a.ndim} dimensions")
    if ndim == 2 and cols is not None and a.shape[1] != cols:
        raise SchemaError(f"{path}: expected {cols} columns, got {a.shape[1]}")
    if finite and not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise SchemaError(f"{path}[{']['.join(str(int(i)) for i in bad)}]: non-finite value")
    return a


def _int(value, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SchemaError(f"{path}: expected an integer >= {minimum}")
    return value


def _config(cls, d, path: str, reader=None):
    names = [f.name for f in dataclasses.fields(cls)]
    _keys(d, path, optional=names)
    try:
        return reader(d) if reader else cls(**d)
    except SchemaError:
        raise
    except (SetFieldError, TypeError, KeyError, ValueError) as err:
        raise SchemaError(f"{path}: {err}") from None


def _plain(x):
    """numpy scalars/arrays to JSON types; non-finite floats become null."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    return x


# ---------------------------------------------------------------------------
# per-type codecs: value -> data dict, data dict -> value


def _enc_objects(o: ObjectSet) -> dict:
    return {"dim": o.dim, "n_features": o.n_features, "positions": o.positions.tolist(),
            "features": o.features.tolist()}


def _dec_objects(d, path) -> ObjectSet:
    _keys(d, path, ("dim", "n_features", "positions", "features"))
    dim = _int(d["dim"], f"{path}.dim", 1)
    dx = _int(d["n_features"], f"{path}.n_features")
    pos = _array(d["positions"], f"{path}.positions", 2, dim)
    feats = _array(d["features"], f"{path}.features", 2, dx)
    if feats.shape[0] != pos.shape[0]:
        raise SchemaError(f"{path}.features: {feats.shape[0]} rows for {pos.shape[0]} positions")
    return ObjectSet(pos, feats)


def _enc_samples(s: FieldSamples) -> dict:
    return {"dim": s.dim, "n_features": s.features.shape[1], "scheme": s.scheme,
            "points": s.points.tolist(), "density": s.density.tolist(),
            "features": s.features.tolist(), "weights": s.weights.tolist(),
            "proposal_meta": _plain(s.proposal_meta)}


def _dec_samples(d, path) -> FieldSamples:
    _keys(d, path, ("dim", "n_features", "scheme", "points", "density", "features", "weights"),
          ("proposal_meta",))
    dim = _int(d["dim"], f"{path}.dim", 1)
    dx = _int(d["n_features"], f"{path}.n_features")
    pts = _array(d["points"], f"{path}.points", 2, dim)
    m = pts.shape[0]
    rho = _array(d["density"], f"{path}.density", 1)
    feats = _array(d["features"], f"{path}.features", 2, dx)
    w = _array(d["weights"], f"{path}.weights", 1)
    for name, a in (("density", rho), ("features", feats), ("weights", w)):
        if a.shape[0] != m:
            raise SchemaError(f"{path}.{name}: {a.shape[0]} rows for {m} points")
    if np.any(w < 0):
        raise SchemaError(f"{path}.weights[{int(np.argmax(w < 0))}]: negative weight")
    try:
        return FieldSamples(pts, rho, feats, w, d["scheme"], dict(d.get("proposal_meta", {})))
    except SetFieldError as err:
        raise SchemaError(f"{path}.scheme: {err}") from None


def _dec_kernel(d, path) -> KernelSpec:
    _keys(d, path, ("family", "sigma", "dim", "normalized"))
    return _config(KernelSpec, d, path)


def _dec_sampler(d, path) -> SamplerConfig:
    return _config(SamplerConfig, d, path, SamplerConfig.from_dict)


def _dec_options(d, path) -> DecodeOptions:
    if isinstance(d, dict) and isinstance(d.get("lbfgs"), dict):
        _config(LbfgsConfig, d["lbfgs"], f"{path}.lbfgs")
    if isinstance(d, dict) and isinstance(d.get("feature_spec"), dict):
        _dec_kernel(d["feature_spec"], f"{path}.feature_spec")
    return _config(DecodeOptions, d, path, DecodeOptions.from_dict)


def _enc_result(r: DecodeResult) -> dict:
    return {
        "count": r.count, "raw_mass": r.raw_mass, "dim": r.centers.shape[1],
        "n_features": r.features.shape[1], "centers": r.centers.tolist(),
        "features": r.features.tolist(), "amplitude": r.amplitude, "residual": r.residual,
        "gram_condition": _plain(r.gram_condition), "fallback_used": r.fallback_used,
        "categorical_labels": None if r.categorical_labels is None else r.categorical_labels.tolist(),
        "diagnostics": _plain(r.diagnostics),
    }


def _dec_result(d, path) -> DecodeResult:
    _keys(d, path, ("count", "raw_mass", "dim", "n_features", "centers", "features"),
          ("amplitude", "residual", "gram_condition", "fallback_used", "categorical_labels", "diagnostics"))
    dim = _int(d["dim"], f"{path}.dim", 1)
    cond = d.get("gram_condition", 1.0)
    labels = d.get("categorical_labels")
    return DecodeResult(
        _int(d["count"], f"{path}.count"),
        float(d["raw_mass"]),
        _array(d["centers"], f"{path}.centers", 2, dim),
        _array(d["features"], f"{path}.features", 2, _int(d["n_features"], f"{path}.n_features")),
        float(d.get("amplitude", 1.0)),
        float(d.get("residual", 0.0)),
        math.inf if cond is None else float(cond),
        bool(d.get("fallback_used", False)),
        None if labels is None else np.array(labels, dtype=int),
        dict(d.get("diagnostics", {})),
    )


def _dec_bursts(d, path) -> Bursts:
    _keys(d, path, ("t0", "amplitude", "rise", "skew"))
    arrs = [_array(d[k], f"{path}.{k}", 1) for k in ("t0", "amplitude", "rise", "skew")]
    try:
        return Bursts(*arrs)
    except SetFieldError as err:
        raise SchemaError(f"{path}: {err}") from None


def _dec_grid(d, path) -> GridField1D:
    _keys(d, path, ("times", "density", "feature_channels", "sigma_rho", "sigma_feat"), ("log_channels",))
    times = _array(d["times"], f"{path}.times", 1)
    chans = _array(d["feature_channels"], f"{path}.feature_channels", 2)
    try:
        return GridField1D(times, _array(d["density"], f"{path}.density", 1), chans,
                           float(d["sigma_rho"]), float(d["sigma_feat"]),
                           tuple(d.get("log_channels", (True, True, False))))
    except SetFieldError as err:
        raise SchemaError(f"{path}: {err}") from None


def _dec_lightcurve(d, path) -> LightcurveResult:
    _keys(d, path, ("count", "raw_mass", "onsets", "log_features"),
          ("bursts", "shortfall", "edge_flags", "subpixel_flags", "gram_condition"))
    cond = d.get("gram_condition", 1.0)
    feats = _array(d["log_features"], f"{path}.log_features", 2)
    return LightcurveResult(
        _int(d["count"], f"{path}.count"), float(d["raw_mass"]),
        _array(d["onsets"], f"{path}.onsets", 1), feats,
        None if d.get("bursts") is None else _dec_bursts(d["bursts"], f"{path}.bursts"),
        bool(d.get("shortfall", False)),
        np.array(d.get("edge_flags", []), dtype=bool),
        np.array(d.get("subpixel_flags", []), dtype=bool),
        math.inf if cond is None else float(cond),
    )


def _enc_config(c) -> dict:
    return _plain(c.to_dict())


@dataclass
class RunManifest:
    """Everything needed to replay a CLI invocation.

    ``hash`` covers the command, its arguments, configs, seeds, tool version
    and input hashes; output hashes are recorded separately so a replay can
    be checked against them.
    """

    command: str
    args: dict
    seed: Optional[int] = None
    kernel: Optional[dict] = None
    sampler: Optional[dict] = None
    decode: Optional[dict] = None
    tool_version: str = field(default_factory=tool_version)
    input_hashes: dict = field(default_factory=dict)
    output_hashes: dict = field(default_factory=dict)

    def identity(self) -> dict:
        return {
            "command": self.command, "args": _plain(self.args), "seed": self.seed,
            "kernel": self.kernel, "sampler": self.sampler, "decode": self.decode,
            "tool_version": self.tool_version, "input_hashes": dict(sorted(self.input_hashes.items())),
        }

    @property
    def hash(self) -> str:
        return sha256_bytes(canonical_json(self.identity()).encode())

    def to_dict(self) -> dict:
        return {**self.identity(), "output_hashes": dict(sorted(self.output_hashes.items())),
                "manifest_hash": self.hash}


def _dec_manifest(d, path) -> RunManifest:
    names = ("command", "args", "seed", "kernel", "sampler", "decode", "tool_version",
             "input_hashes", "output_hashes")
    _keys(d, path, ("command", "args"), names[2:] + ("manifest_hash",))
    m = RunManifest(**{k: d[k] for k in names if k in d})
    if "manifest_hash" in d and d["manifest_hash"] != m.hash:
        raise SchemaError(f"{path}.manifest_hash: does not match the manifest contents")
    return m


@dataclass
class Report:
    """Free-form summary produced by a CLI command (numbers, strings, lists)."""

    kind: str
    values: dict


def _dec_report(d, path) -> Report:
    _keys(d, path, ("kind", "values"))
    if not isinstance(d["kind"], str) or not isinstance(d["values"], dict):
        raise SchemaError(f"{path}: kind must be a string and values an object")
    return Report(d["kind"], d["values"])


_CODECS = {
    "ObjectSet": (ObjectSet, _enc_objects, _dec_objects),
    "FieldSamples": (FieldSamples, _enc_samples, _dec_samples),
    "KernelSpec": (KernelSpec, _enc_config, _dec_kernel),
    "SamplerConfig": (SamplerConfig, _enc_config, _dec_sampler),
    "DecodeOptions": (DecodeOptions, _enc_config, _dec_options),
    "DecodeResult": (DecodeResult, _enc_result, _dec_result),
    "Bursts": (Bursts, lambda b: b.to_dict(), _dec_bursts),
    "GridField1D": (GridField1D, lambda g: g.to_dict(), _dec_grid),
    "LightcurveResult": (LightcurveResult, lambda r: _plain(r.to_dict()), _dec_lightcurve),
    "FieldConfig1D": (FieldConfig1D, _enc_config, lambda d, p: _config(FieldConfig1D, d, p, FieldConfig1D.from_dict)),
    "FrbPrior": (FrbPrior, _enc_config, lambda d, p: _config(FrbPrior, d, p, FrbPrior.from_dict)),
    "BenchConfig": (BenchConfig, _enc_config, lambda d, p: _config(BenchConfig, d, p)),
    "RunManifest": (RunManifest, lambda m: m.to_dict(), _dec_manifest),
    "Report": (Report, lambda r: {"kind": r.kind, "values": _plain(r.values)}, _dec_report),
}


# ---------------------------------------------------------------------------
# JSON


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def to_document(value, extra: Optional[dict] = None) -> dict:
    for tag, (cls, enc, _) in _CODECS.items():
        if type(value) is cls:
            doc = {"version": VERSION, "type": tag, "data": enc(value)}
            if extra:
                doc.update(extra)
            return doc
    raise SchemaError(f"$: no serializer for {type(value).__name__}")


def dumps(value, extra: Optional[dict] = None) -> str:
    try:
        return json.dumps(to_document(value, extra), separators=(",", ":"), allow_nan=False) + "\n"
    except ValueError as err:
        raise SchemaError(f"$: {err}") from None


def from_document(doc, expected: Optional[str] = None, extra_keys=()):
    _keys(doc, "$", ("version", "type", "data"), tuple(extra_keys))
    if doc["version"] != VERSION:
        raise SchemaError(f"$.version: unsupported schema version {doc['version']!r} (expected {VERSION})")
    tag = doc["type"]
    if tag not in _CODECS:
        raise SchemaError(f"$.type: unknown document type {tag!r}")
    if expected is not None and tag != expected:
        raise SchemaError(f"$.type: expected {expected}, got {tag}")
    return _CODECS[tag][2](doc["data"], "$.data")


def _reject_constant(name):
    raise SchemaError(f"non-finite literal {name} is not allowed")


def loads(text: str, expected: Optional[str] = None, extra_keys=()):
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as err:
        raise SchemaError(f"line {err.lineno}: malformed JSON ({err.msg})") from None
    return from_document(doc, expected, extra_keys)


def write_json(value, path, extra: Optional[dict] = None) -> str:
    """Write ``value`` to ``path``; returns the sha256 of the bytes written."""
    data = dumps(value, extra).encode()
    Path(path).write_bytes(data)
    return sha256_bytes(data)


def read_json(path, expected: Optional[str] = None, extra_keys=("manifest_hash",)):
    return loads(Path(path).read_text(encoding="utf-8"), expected, extra_keys)


# ---------------------------------------------------------------------------
# CSV


def position_columns(dim: int) -> list:
    return ["x", "y", "z"][:dim] if dim <= 3 else [f"x{i}" for i in range(dim)]


def _fmt(v: float) -> str:
    if not math.isfinite(v):
        raise SchemaError("non-finite value cannot be written")
    return repr(float(v))


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_table(path):
    """Header plus a float matrix; errors carry the 1-based line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(csv.reader(fh))
    start = 0
    while start < len(lines) and lines[start] and lines[start][0].startswith("#"):
        start += 1
    if start >= len(lines) or not lines[start]:
        raise SchemaError(f"line {start + 1}: missing header row")
    header = [h.strip() for h in lines[start]]
    rows = []
    for ln, row in enumerate(lines[start + 1:], start=start + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"line {ln}: expected {len(header)} columns, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise SchemaError(f"line {ln}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise SchemaError(f"line {ln}: non-finite value")
        rows.append(vals)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _split_header(header, trailing=()):
    feats = []
    body = list(header)
    for name in reversed(trailing):
        if not body or body[-1] != name:
            raise SchemaError(f"line 1: expected column {name!r}")
        body.pop()
    while body and body[-1].startswith("f") and body[-1][1:].isdigit():
        feats.insert(0, body.pop())
    if feats != [f"f{i}" for i in range(len(feats))]:
        raise SchemaError("line 1: feature columns must be f0, f1, ...")
    if not body or body != position_columns(len(body)):
        raise SchemaError(f"line 1: unexpected position columns {body}")
    return len(body), len(feats)


def write_objects_csv(objects: ObjectSet, path) -> None:
    header = position_columns(objects.dim) + [f"f{i}" for i in range(objects.n_features)]
    _write_rows(path, header, np.hstack([objects.positions, objects.features]))


def read_objects_csv(path) -> ObjectSet:
    header, tab = _read_table(path)
    dim, dx = _split_header(header)
    return ObjectSet(tab[:, :dim], tab[:, dim:dim + dx])


def write_samples_csv(samples: FieldSamples, path) -> None:
    dx = samples.features.shape[1]
    header = position_columns(samples.dim) + ["rho"] + [f"f{i}" for i in range(dx)] + ["w"]
    _write_rows(path, header, np.hstack([samples.points, samples.density[:, None], samples.features,
                                         samples.weights[:, None]]))


def read_samples_csv(path, scheme: str = "importance") -> FieldSamples:
    header, tab = _read_table(path)
    if "rho" not in header:
        raise SchemaError("line 1: missing column 'rho'")
    j = header.index("rho")
    dim, _ = _split_header(header[:j])
    dx = len(header) - j - 2
    if header[j + 1:] != [f"f{i}" for i in range(dx)] + ["w"]:
        raise SchemaError("line 1: expected rho, f0 .. f{dx-1}, w")
    if np.any(tab[:, -1] < 0):
        raise SchemaError(f"line {int(np.argmax(tab[:, -1] < 0)) + 2}: negative weight")
    return FieldSamples(tab[:, :dim], tab[:, j], tab[:, j + 1:j + 1 + dx], tab[:, -1], scheme)


def read_bench_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.readlines()
    skip = 0
    while skip < len(lines) and lines[skip].startswith("#"):
        skip += 1
    reader = csv.DictReader(lines[skip:])
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
        raise SchemaError(f"line {skip + 1}: expected columns {', '.join(CSV_COLUMNS)}")
    rows = []
    for ln, r in enumerate(reader, start=skip + 2):
        if None in r or any(v is None for v in r.values()):
            raise SchemaError(f"line {ln}: expected {len(CSV_COLUMNS)} columns")
        try:
            rows.append({
                "seed": int(r["seed"]), "n_true": int(r["n_true"]), "n_pred": int(r["n_pred"]),
                "correct": bool(int(r["correct"])), "max_pair_dist": float(r["max_pair_dist"]),
                "decode_ms": None if r["decode_ms"] == "" else float(r["decode_ms"]),
            })
        except ValueError:
            raise SchemaError(f"line {ln}: malformed value") from None
    return rows


def ensure_parent(path) -> Path:
    p = Path(path)
    if p.parent and not p.parent.exists():
        os.makedirs(p.parent, exist_ok=True)
    return p

