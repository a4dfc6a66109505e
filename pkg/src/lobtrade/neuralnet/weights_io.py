"""Weight file container.

Layout (all integers little-endian):

    magic   4 bytes  ``BDW1``
    version u32      (currently 1)
    digest  32 bytes sha256 of the canonical model config JSON
    cfg_len u32      length of the embedded config JSON
    cfg     utf-8 JSON (lets tools rebuild the model without a side file)
    count   u32      number of tensors
    per tensor:
        name_len u16, name utf-8, ndim u8, dims u32[ndim],
        data float64 little-endian row-major

Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ShapeError, Weights, weight_shapes

_MAGIC = b"BDW1"
_VERSION = 1


class WeightsFormatError(ValueError):
    """Weight file is corrupt, truncated or from an unknown version."""


def save_weights(path: Path, w: Weights, cfg: ModelConfig) -> None:
    w.validate_finite()
    cfg_blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(cfg.digest())
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(w.names())))
        for name, arr in w.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise WeightsFormatError(f"{self.path}: truncated file")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path: Path, cfg: ModelConfig | None = None) -> tuple[Weights, ModelConfig]:
    """Load weights and the embedded config.

    When `cfg` is given, the stored tensors must match its shapes (the
    first mismatching layer is named) and the config digests must agree.
    """
    r = _Reader(Path(path).read_bytes(), Path(path))
    if r.take(4) != _MAGIC:
        raise WeightsFormatError(f"{path}: bad magic")
    version = r.u32()
    if version != _VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    digest = r.take(32)
    cfg_blob = r.take(r.u32())
    try:
        stored_cfg = ModelConfig.from_dict(json.loads(cfg_blob.decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise WeightsFormatError(f"{path}: bad embedded config ({exc})") from exc
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = tuple(r.u32() for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(8 * n_items), dtype="<f8").reshape(shape)
        arrays[name] = data.copy()
    if r.off != len(r.blob):
        raise WeightsFormatError(f"{path}: {len(r.blob) - r.off} trailing bytes")

    w = Weights(arrays)
    if cfg is not None:
        expected = weight_shapes(cfg)
        for lname, shape in expected.items():
            if lname not in w:
                raise ShapeError(f"missing tensor '{lname}' in {path}")
            if w[lname].shape != shape:
                raise ShapeError(
                    f"layer '{lname}': file has shape {w[lname].shape}, config wants {shape}"
                )
        extra = set(w.names()) - set(expected)
        if extra:
            raise ShapeError(f"unexpected tensors {sorted(extra)} in {path}")
        if digest != cfg.digest():
            raise WeightsFormatError(f"{path}: config digest mismatch")
    w.validate_finite()
    return w, stored_cfg
