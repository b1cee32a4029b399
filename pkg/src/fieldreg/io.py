"""Deterministic readers and writers.

Volumes travel as MetaImage header/raw pairs (plain text header, flat
binary payload, x fastest on disk); landmarks as whitespace-separated
index triples, one per line; transforms and reports as versioned JSON;
profiles and per-point errors as two-column CSV. All writers emit
byte-identical files for identical inputs: fixed key order, fixed float
formatting, explicit newlines. Values are converted to 64-bit reals on
read regardless of the stored element type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .grid import GridGeometry, LabelVolume, ScalarVolume, VectorField
from .transforms import (
    AffineTransform,
    BSplineTransform,
    CompositeTransform,
    TranslationTransform,
)

_ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype(np.uint8),
    "MET_SHORT": np.dtype(np.int16),
    "MET_USHORT": np.dtype(np.uint16),
    "MET_FLOAT": np.dtype(np.float32),
    "MET_DOUBLE": np.dtype(np.float64),
}
_TYPE_ALIASES = {
    "uint8": "MET_UCHAR",
    "int16": "MET_SHORT",
    "uint16": "MET_USHORT",
    "float32": "MET_FLOAT",
    "float64": "MET_DOUBLE",
}

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class VolumeHeader:
    """Parsed MetaImage header: geometry plus storage description."""

    dims: tuple
    spacing: tuple
    origin: tuple
    element_type: str
    n_channels: int
    big_endian: bool
    data_file: str

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise DataFormatError(f"non-positive dims {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise DataFormatError(f"non-positive spacing {self.spacing}")
        if self.n_channels < 1:
            raise DataFormatError(f"channel count must be >= 1, got {self.n_channels}")


def _fmt(x):
    return f"{x:.17g}"


def _parse_header_text(text, path):
    fields = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def read_metaimage_header(path):
    path = Path(path)
    fields = _parse_header_text(path.read_text(), path)
    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in fields:
            raise DataFormatError(f"{path}: missing required header key {key}")
    try:
        ndims = int(fields["NDims"])
        dims = tuple(int(t) for t in fields["DimSize"].split())
    except ValueError as err:
        raise DataFormatError(f"{path}: bad NDims/DimSize: {err}") from None
    if ndims not in (2, 3) or len(dims) != ndims:
        raise DataFormatError(f"{path}: NDims={ndims} with DimSize {fields['DimSize']!r}")

    def _floats(key, default):
        if key not in fields:
            return default
        vals = tuple(float(t) for t in fields[key].split())
        if len(vals) != ndims:
            raise DataFormatError(f"{path}: {key} needs {ndims} entries, got {len(vals)}")
        return vals

    spacing = _floats("ElementSpacing", (1.0,) * ndims)
    origin = _floats("Offset", (0.0,) * ndims)
    element_type = fields["ElementType"]
    if element_type not in _ELEMENT_TYPES:
        raise DataFormatError(f"{path}: unsupported ElementType {element_type}")
    n_channels = int(fields.get("ElementNumberOfChannels", "1"))
    if fields.get("CompressedData", "False").lower() == "true":
        raise DataFormatError(f"{path}: compressed payloads are not supported")
    if fields.get("BinaryData", "True").lower() != "true":
        raise DataFormatError(f"{path}: only binary payloads are supported")
    big_endian = fields.get("BinaryDataByteOrderMSB", "False").lower() == "true"
    data_file = fields["ElementDataFile"]
    if data_file in ("LOCAL", "LIST"):
        raise DataFormatError(f"{path}: ElementDataFile={data_file} is not supported")
    return VolumeHeader(
        dims=dims,
        spacing=spacing,
        origin=origin,
        element_type=element_type,
        n_channels=n_channels,
        big_endian=big_endian,
        data_file=data_file,
    )


def read_metaimage(path, labels=False):
    """Read a header/raw pair into a volume on its stated grid.

    One channel yields a ScalarVolume (or, with ``labels=True`` and an
    integer element type, a LabelVolume); a channel per axis yields a
    VectorField. The raw payload stores the first axis fastest; arrays
    here index axes in header order.
    """
    path = Path(path)
    header = read_metaimage_header(path)
    dims = header.dims
    n = len(dims)
    dtype = _ELEMENT_TYPES[header.element_type]
    dtype = dtype.newbyteorder(">" if header.big_endian else "<")
    raw_path = path.parent / header.data_file
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * header.n_channels * dtype.itemsize
    if len(payload) != expected:
        raise DataFormatError(
            f"{raw_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    geometry = GridGeometry(dims, header.spacing, header.origin)
    if header.n_channels == 1:
        values = flat.reshape(dims[::-1]).transpose(tuple(reversed(range(n))))
        if labels:
            if dtype.kind not in "iu":
                raise DataFormatError(
                    f"{path}: label volumes need an integer element type, "
                    f"got {header.element_type}"
                )
            return LabelVolume(geometry, values.astype(np.int32))
        return ScalarVolume(geometry, values.astype(np.float64))
    if labels:
        raise DataFormatError(f"{path}: label volumes must have one channel")
    if header.n_channels != n:
        raise DataFormatError(
            f"{path}: {header.n_channels} channels on a {n}-d grid; only one channel "
            f"per axis is supported for vector data"
        )
    values = flat.reshape(dims[::-1] + (n,)).transpose(tuple(reversed(range(n))) + (n,))
    return VectorField(geometry, values.astype(np.float64))


def write_metaimage(path, volume, element_type=None):
    """Write a volume as a header/raw pair next to each other.

    Defaults: MET_DOUBLE for scalar volumes and vector fields,
    MET_SHORT for label volumes. ``element_type`` accepts either the
    MET_* names or uint8/int16/uint16/float32/float64.
    """
    path = Path(path)
    geometry = volume.geometry
    n = geometry.ndim
    met = "MET_SHORT" if isinstance(volume, LabelVolume) else "MET_DOUBLE"
    values = volume.values
    if element_type is not None:
        met = _TYPE_ALIASES.get(element_type, element_type)
        if met not in _ELEMENT_TYPES:
            raise DataFormatError(f"unsupported element type {element_type!r}")
    dtype = _ELEMENT_TYPES[met].newbyteorder("<")
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        if values.min() < info.min or values.max() > info.max:
            raise DataFormatError(
                f"values outside the range of {met}: "
                f"[{values.min()}, {values.max()}] vs [{info.min}, {info.max}]"
            )
    n_channels = values.shape[-1] if isinstance(volume, VectorField) else 1
    if isinstance(volume, VectorField):
        on_disk = values.transpose(tuple(reversed(range(n))) + (n,))
    else:
        on_disk = values.transpose(tuple(reversed(range(n))))
    raw_name = path.with_suffix(".raw").name
    lines = [
        "ObjectType = Image",
        f"NDims = {n}",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"DimSize = {' '.join(str(d) for d in geometry.dims)}",
        f"ElementSpacing = {' '.join(_fmt(s) for s in geometry.spacing)}",
        f"Offset = {' '.join(_fmt(o) for o in geometry.origin)}",
    ]
    if n_channels > 1:
        lines.append(f"ElementNumberOfChannels = {n_channels}")
    lines.append(f"ElementType = {met}")
    lines.append(f"ElementDataFile = {raw_name}")
    path.write_text("\n".join(lines) + "\n", newline="\n")
    (path.parent / raw_name).write_bytes(np.ascontiguousarray(on_disk, dtype=dtype).tobytes())


def read_landmarks_dirlab(path, geometry, index_base=0):
    """Read whitespace-separated voxel-index rows into world coordinates.

    Each non-empty line must hold exactly one number per axis.
    ``index_base`` states the file's indexing origin (1 for the usual
    DIR-Lab distribution); indices are shifted accordingly before the
    grid converts them to world millimeters. An empty file is a valid
    empty set.
    """
    from .evaluation import LandmarkSet

    path = Path(path)
    n = geometry.ndim
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != n:
            raise DataFormatError(
                f"{path}:{lineno}: expected {n} numbers per line, got {len(parts)}"
            )
        try:
            rows.append([float(t) for t in parts])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric entry in {line!r}") from None
    idx = np.asarray(rows, dtype=np.float64).reshape(len(rows), n)
    return LandmarkSet.from_indices(idx - float(index_base), geometry)


_CONFIG_KEYS = (
    "transform",
    "metric",
    "representation",
    "gamma",
    "kernel_radius",
    "levels",
    "iterations",
    "grid_spacing",
    "mask",
)


def _parse_int_list(value, key):
    try:
        return tuple(int(t) for t in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key} must be a list of integers, got {value!r}") from None


def read_config(path):
    """Parse a stage-list config into StageConfig objects.

    Grammar: one `[stage]` header per stage followed by `key = value`
    lines; `#` starts a comment. Allowed keys: transform, metric,
    representation, gamma, kernel_radius, levels, iterations,
    grid_spacing, mask (a MetaImage path relative to the config file).
    Absent keys fall back to the StageConfig defaults.
    """
    from .engine import StageConfig

    path = Path(path)
    raw_stages = []
    current = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[stage]":
                raise ConfigError(f"{path}:{lineno}: unknown section {line}")
            current = {}
            raw_stages.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [stage] section")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in current:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} in this stage")
        current[key] = value
    if not raw_stages:
        raise ConfigError(f"{path}: no [stage] sections found")

    stages = []
    for i, fields in enumerate(raw_stages):
        if "transform" not in fields:
            raise ConfigError(f"{path}: stage {i + 1} is missing the transform key")
        kwargs = {"transform": fields["transform"]}
        if "metric" in fields:
            kwargs["metric"] = fields["metric"]
        if "representation" in fields:
            kwargs["representation"] = fields["representation"]
        try:
            if "gamma" in fields:
                kwargs["gamma"] = float(fields["gamma"])
            if "kernel_radius" in fields:
                kwargs["kernel_radius"] = int(fields["kernel_radius"])
            if "grid_spacing" in fields:
                kwargs["grid_spacing"] = float(fields["grid_spacing"])
        except ValueError as err:
            raise ConfigError(f"{path}: stage {i + 1}: {err}") from None
        if "levels" in fields:
            kwargs["levels"] = _parse_int_list(fields["levels"], "levels")
        if "iterations" in fields:
            its = _parse_int_list(fields["iterations"], "iterations")
            kwargs["iterations"] = its[0] if len(its) == 1 else its
        if "mask" in fields:
            mask_path = path.parent / fields["mask"]
            kwargs["mask"] = read_metaimage(mask_path, labels=True)
        stages.append(StageConfig(**kwargs))
    return stages


def _transform_to_obj(t):
    if isinstance(t, TranslationTransform):
        return {"kind": "translation", "offset": t.offset.tolist()}
    if isinstance(t, AffineTransform):
        return {
            "kind": "affine",
            "matrix": t.matrix.tolist(),
            "offset": t.offset.tolist(),
            "center": t.center.tolist(),
        }
    if isinstance(t, BSplineTransform):
        g = t.control_grid
        return {
            "kind": "bspline",
            "grid": {
                "dims": list(g.dims),
                "spacing": list(g.spacing),
                "origin": list(g.origin),
            },
            "coefficients": t.coefficients.tolist(),
        }
    if isinstance(t, CompositeTransform):
        return {"kind": "composite", "transforms": [_transform_to_obj(s) for s in t.transforms]}
    raise DataFormatError(f"cannot serialize transform of type {type(t).__name__}")


def _transform_from_obj(obj):
    try:
        kind = obj["kind"]
        if kind == "translation":
            return TranslationTransform(np.asarray(obj["offset"], dtype=np.float64))
        if kind == "affine":
            return AffineTransform(
                np.asarray(obj["matrix"], dtype=np.float64),
                offset=np.asarray(obj["offset"], dtype=np.float64),
                center=np.asarray(obj["center"], dtype=np.float64),
            )
        if kind == "bspline":
            g = obj["grid"]
            grid = GridGeometry(tuple(g["dims"]), tuple(g["spacing"]), tuple(g["origin"]))
            return BSplineTransform(grid, np.asarray(obj["coefficients"], dtype=np.float64))
        if kind == "composite":
            return CompositeTransform(
                tuple(_transform_from_obj(s) for s in obj["transforms"])
            )
    except (KeyError, TypeError) as err:
        raise DataFormatError(f"malformed transform document: {err}") from None
    raise DataFormatError(f"unknown transform kind {kind!r}")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text(text + "\n", newline="\n")


def write_transform(path, t):
    _write_json(path, {"schema_version": SCHEMA_VERSION, "transform": _transform_to_obj(t)})


def read_transform(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{path}: not valid JSON: {err}") from None
    if not isinstance(doc, dict) or "transform" not in doc:
        raise DataFormatError(f"{path}: missing transform field")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}: unsupported schema_version {doc.get('schema_version')!r}"
        )
    return _transform_from_obj(doc["transform"])


def write_report(path, payload):
    """Write a JSON report with a schema version, keys sorted."""
    doc = dict(payload)
    doc.setdefault("schema_version", SCHEMA_VERSION)
    _write_json(path, doc)


def write_profile_csv(path, profile):
    lines = ["shift,value"]
    for s, v in zip(profile.shifts, profile.values):
        lines.append(f"{int(s)},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def write_tre_csv(path, result):
    lines = ["index,distance_mm"]
    for i, d in enumerate(result.distances_mm):
        lines.append(f"{i},{float(d)!r}")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
