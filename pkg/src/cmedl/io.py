"""On-disk formats: raw tensor container, 16-bit PNG slices, checkpoint archive.

Formats
-------
Raw tensor container (``.cmdl``): 16-byte header
``{magic b"CMDL", dtype code u8, rank u8, 2 pad bytes, 4 x u16 dims}``
followed by the little-endian payload. Rank <= 4, dims <= 65535.

Slice image: 16-bit grayscale PNG plus a JSON sidecar holding the affine
intensity mapping (``value = png / 65535 * scale + offset``), modality,
spacing and indexing metadata. Label masks are 8-bit PNGs.

Checkpoint archive (``.ckpt``): ``b"CMCK"``, u64 header length, JSON header
(metadata plus a tensor index with dtype/shape/offset), then the raw
little-endian tensor payloads in index order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

TENSOR_MAGIC = b"CMDL"
CHECKPOINT_MAGIC = b"CMCK"

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("|u1"): 2,
    np.dtype("<i4"): 3,
    np.dtype("<u2"): 4,
    np.dtype("<i8"): 5,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype for tensor container: {arr.dtype}")
    if arr.ndim > 4:
        raise ValueError(f"tensor container supports rank <= 4, got {arr.ndim}")
    if any(d > 0xFFFF for d in arr.shape):
        raise ValueError(f"dims exceed u16 range: {arr.shape}")
    dims = list(arr.shape) + [0] * (4 - arr.ndim)
    header = TENSOR_MAGIC + struct.pack("<BBxx4H", _DTYPE_CODES[dtype], arr.ndim, *dims)
    assert len(header) == 16
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(dtype, copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if header[:4] != TENSOR_MAGIC:
            raise ValueError(f"{path}: bad magic {header[:4]!r}")
        code, rank, d0, d1, d2, d3 = struct.unpack("<BBxx4H", header[4:])
        shape = (d0, d1, d2, d3)[:rank]
        arr = np.frombuffer(fh.read(), dtype=_CODE_DTYPES[code])
    return arr.reshape(shape).copy()


def write_image16(path, image: np.ndarray, sidecar: dict) -> dict:
    """Store a float image as 16-bit PNG; returns the sidecar actually written.

    The sidecar gains ``offset``/``scale`` so the float values round-trip to
    within 1/65535 of the image's dynamic range.
    """
    image = np.asarray(image, dtype=np.float64)
    lo = float(image.min()) if image.size else 0.0
    hi = float(image.max()) if image.size else 0.0
    scale = hi - lo
    if scale == 0.0:
        quant = np.zeros(image.shape, dtype=np.uint16)
        scale = 1.0
    else:
        quant = np.round((image - lo) / scale * 65535.0).astype(np.uint16)
    Image.fromarray(quant).save(path)
    sidecar = dict(sidecar, offset=lo, scale=scale)
    Path(path).with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return sidecar


def read_image16(path) -> tuple[np.ndarray, dict]:
    quant = np.asarray(Image.open(path), dtype=np.float64)
    sidecar = json.loads(Path(path).with_suffix(".json").read_text())
    return quant / 65535.0 * sidecar["scale"] + sidecar["offset"], sidecar


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > 255:
        raise ValueError("mask labels must fit in 8 bits")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int64)


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    index = {}
    payloads = []
    offset = 0
    for key in sorted(tensors):
        arr = np.ascontiguousarray(tensors[key])
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        index[key] = {"dtype": dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint archive")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        blob = fh.read()
    tensors = {}
    for key, entry in header["tensors"].items():
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[key] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return header["meta"], tensors


def write_manifest(path, splits: dict[str, list[str]]) -> None:
    Path(path).write_text(json.dumps({"splits": splits}, indent=1, sort_keys=True))


def read_manifest(path) -> dict[str, list[str]]:
    return json.loads(Path(path).read_text())["splits"]
