"""On-disk formats: binary embedding files, JSON manifests, 8-bit RGB PNGs.

Embedding file layout (little-endian throughout):

    offset  size  field
    0       4     magic  b"EMB1"
    4       4     n      uint32, record count
    8       4     d      uint32, dimension
    12      1     tag    uint8 element width: 4 = float32, 8 = float64
    13      n*d*tag      payload, row-major floats

The header is validated before the payload is touched, and every format
error names the offending field and byte offset. See FORMATS.md for the
normative description.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .imgproc import from_uint8, to_uint8, validate_image
from .metrics import ManifestRecord, RetrievalManifest

EMBEDDING_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIB")  # magic, n, d, tag
_TAG_TO_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class FileFormatError(ValueError):
    """Raised when a file violates one of the formats above."""


def write_embeddings(path, embeddings: np.ndarray, dtype: str = "f8") -> None:
    """Write an n x d float matrix; dtype 'f4' or 'f8' selects the element width."""
    arr = np.asarray(embeddings)
    if arr.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {arr.shape}")
    if dtype not in ("f4", "f8"):
        raise ValueError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    tag = 4 if dtype == "f4" else 8
    payload = np.ascontiguousarray(arr, dtype=_TAG_TO_DTYPE[tag])
    header = _HEADER.pack(EMBEDDING_MAGIC, arr.shape[0], arr.shape[1], tag)
    Path(path).write_bytes(header + payload.tobytes())


def read_embeddings(path) -> np.ndarray:
    """Read an embedding file back as the matrix it stores (float32 or float64)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FileFormatError(
            f"{path}: truncated header, need {_HEADER.size} bytes, found {len(raw)}"
        )
    magic, n, d, tag = _HEADER.unpack_from(raw, 0)
    if magic != EMBEDDING_MAGIC:
        raise FileFormatError(f"{path}: bad magic at offset 0: expected {EMBEDDING_MAGIC!r}, found {magic!r}")
    if tag not in _TAG_TO_DTYPE:
        raise FileFormatError(f"{path}: bad element tag at offset 12: expected 4 or 8, found {tag}")
    expected = n * d * tag
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload at offset {_HEADER.size} must be {expected} bytes"
            f" (n={n}, d={d}, element size {tag}), found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=_TAG_TO_DTYPE[tag]).reshape(n, d).copy()


def write_manifest(path, manifest: RetrievalManifest) -> None:
    rows = [
        {"key": r.key, "id": r.person_id, "cam": r.camera_id, "modality": r.modality}
        for r in manifest.records
    ]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def read_manifest(path) -> RetrievalManifest:
    try:
        rows = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise FileFormatError(f"{path}: top level must be a JSON array of records")
    records = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise FileFormatError(f"{path}: record {i} must be an object")
        for fieldname in ("key", "id", "cam", "modality"):
            if fieldname not in row:
                raise FileFormatError(f"{path}: record {i}: missing field {fieldname!r}")
        try:
            records.append(
                ManifestRecord(
                    key=str(row["key"]),
                    person_id=int(row["id"]),
                    camera_id=int(row["cam"]),
                    modality=str(row["modality"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: record {i}: {exc}") from exc
    try:
        return RetrievalManifest(tuple(records))
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def load_image_rgb(path) -> np.ndarray:
    """Read an image file into the float (3, H, W) representation in [0, 1]."""
    try:
        with PilImage.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"{path}: cannot read as an RGB image: {exc}") from exc
    return from_uint8(np.transpose(arr, (2, 0, 1)))


def save_image_rgb(path, image: np.ndarray) -> None:
    """Write a float (3, H, W) image in [0, 1] as an 8-bit RGB PNG."""
    img = validate_image(image)
    hwc = np.transpose(to_uint8(img), (1, 2, 0))
    PilImage.fromarray(hwc, mode="RGB").save(path, format="PNG")
