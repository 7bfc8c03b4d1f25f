"""UHM container: JSON manifest + raw little-endian blobs, for models and regressors.

Layout (documented byte-exactly in docs/formats.md):
  bytes 0..4   little-endian uint32, manifest length M
  bytes 4..4+M UTF-8 JSON manifest (sorted keys, no trailing newline)
  remainder    field blobs concatenated in manifest order
The manifest records dtype, shape, offset and byte length per field plus a
CRC32 of the whole blob region, so truncated or corrupted files are rejected.
"""

import json
import struct
import zlib

import numpy as np

from .model import HandModel, validate_model

MAGIC_FORMAT = "UHM"
VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    """Malformed, truncated or corrupted container file."""


def write_container(path, fields, meta):
    """Write named arrays plus a metadata dict. Fields is a list of (name, array)."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in fields:
        arr = np.asarray(arr)
        code = "i4" if np.issubdtype(arr.dtype, np.integer) else "f4"
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({
            "name": name,
            "dtype": code,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": MAGIC_FORMAT,
        "version": VERSION,
        "fields": entries,
        "payload_bytes": len(payload),
        "checksum": zlib.crc32(payload),
        "meta": meta,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        fh.write(payload)


def read_container(path):
    """Read a container; returns (dict name -> float64/int array, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ContainerError(f"{path}: too short to hold a manifest header")
    (mlen,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + mlen:
        raise ContainerError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[4:4 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad manifest JSON ({exc})") from exc
    if manifest.get("format") != MAGIC_FORMAT:
        raise ContainerError(f"{path}: not a {MAGIC_FORMAT} container")
    payload = raw[4 + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise ContainerError(
            f"{path}: payload is {len(payload)} bytes, manifest declares "
            f"{manifest['payload_bytes']} (truncated?)"
        )
    if zlib.crc32(payload) != manifest["checksum"]:
        raise ContainerError(f"{path}: checksum mismatch")
    arrays = {}
    for entry in manifest["fields"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload):
            raise ContainerError(f"{path}: field {entry['name']} overruns payload")
        arr = np.frombuffer(payload[lo:lo + n], dtype=_DTYPES[entry["dtype"]])
        expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if arr.size != expected:
            raise ContainerError(
                f"{path}: field {entry['name']} has {arr.size} elements, "
                f"shape {entry['shape']} needs {expected}"
            )
        arr = arr.reshape(entry["shape"])
        if entry["dtype"] == "f4":
            arr = arr.astype(np.float64)
        else:
            arr = arr.astype(np.int64)
        arrays[entry["name"]] = arr
    return arrays, manifest["meta"]


_MODEL_FIELDS = [
    "template_vertices", "faces", "shape_basis", "skinning_weights",
    "kinematic_tree", "joint_regressor", "fingertip_vertex_ids",
]


def save_model(model, path):
    """Serialize a HandModel; save/load round-trips bit-exactly."""
    fields = [(name, getattr(model, name)) for name in _MODEL_FIELDS]
    meta = {
        "kind": "hand_model",
        "name": model.name,
        "joint_names": list(model.joint_names),
        "vertex_count": model.vertex_count,
        "joint_count": model.joint_count,
        "shape_dim": model.shape_dim,
    }
    write_container(path, fields, meta)


def load_model(path):
    """Load and validate a HandModel from a UHM container."""
    arrays, meta = read_container(path)
    if meta.get("kind") != "hand_model":
        raise ContainerError(f"{path}: container holds {meta.get('kind')!r}, not a hand model")
    missing = [f for f in _MODEL_FIELDS if f not in arrays]
    if missing:
        raise ContainerError(f"{path}: missing fields {missing}")
    model = HandModel(
        **{name: arrays[name] for name in _MODEL_FIELDS},
        joint_names=meta.get("joint_names"),
        name=meta.get("name", "hand"),
    )
    return validate_model(model)


def save_regressor(regressor, path):
    """Serialize an MlpRegressor into the same container format as models."""
    fields = []
    for i, (w, b) in enumerate(zip(regressor.weights, regressor.biases)):
        fields.append((f"w{i}", w))
        fields.append((f"b{i}", b))
    if regressor.skip is not None:
        fields.append(("skip", regressor.skip))
    meta = {
        "kind": "mlp_regressor",
        "layers": len(regressor.weights),
        "activation": regressor.activation,
        "target_convention": regressor.target_convention,
        "metadata": _jsonable(regressor.metadata),
    }
    write_container(path, fields, meta)


def load_regressor(path):
    from .unified import MlpRegressor

    arrays, meta = read_container(path)
    if meta.get("kind") != "mlp_regressor":
        raise ContainerError(f"{path}: container holds {meta.get('kind')!r}, not a regressor")
    layers = meta["layers"]
    try:
        weights = [arrays[f"w{i}"] for i in range(layers)]
        biases = [arrays[f"b{i}"] for i in range(layers)]
    except KeyError as exc:
        raise ContainerError(f"{path}: missing layer field {exc}") from exc
    return MlpRegressor(
        weights=weights,
        biases=biases,
        skip=arrays.get("skip"),
        activation=meta.get("activation", "relu"),
        target_convention=meta.get("target_convention", ""),
        metadata=meta.get("metadata", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
