"""Flat little-endian binary container for bulk tensors (magic ``FMYC``).

Layout: magic (4 bytes) | version u16 | records. Each record is a tag
(u32 length + UTF-8 bytes), a u64 payload length, and the payload. Floats
are stored as f32 and widened to float64 on load; covariance solves and
eigendecompositions need the 64-bit headroom in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .errors import SchemaError, TruncationError, ValidationError

MAGIC = b"FMYC"
CONTAINER_VERSION = 1

TAG_HEAD = "head"
TAG_FEATURE_MAP = "feature_map"


@dataclass
class HeadWeights:
    """Final linear layer: logits = W @ z + b."""

    W: np.ndarray  # (|C|, d)
    b: np.ndarray  # (|C|,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValidationError(
                f"head shapes inconsistent: W {self.W.shape}, b {self.b.shape}"
            )

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class FeatureMapRecord:
    image_id: str
    layer_name: str
    data: np.ndarray  # (N_c, H, W) float64 in memory
    spatial_scale: float  # image pixels -> feature coordinates

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValidationError(f"feature map must be (N_c, H, W), got {self.data.shape}")
        if not (np.isfinite(self.spatial_scale) and self.spatial_scale > 0):
            raise ValidationError(
                f"spatial_scale must be finite and positive, got {self.spatial_scale}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# payload primitives


class PayloadWriter:
    def __init__(self):
        self._buf = bytearray()

    def u8(self, v: int):
        self._buf += struct.pack("<B", v)

    def u16(self, v: int):
        self._buf += struct.pack("<H", v)

    def u32(self, v: int):
        self._buf += struct.pack("<I", v)

    def u64(self, v: int):
        self._buf += struct.pack("<Q", v)

    def f32(self, v: float):
        self._buf += struct.pack("<f", v)

    def str_field(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self._buf += raw

    def f32_array(self, a: np.ndarray):
        self._buf += np.ascontiguousarray(a, dtype="<f4").tobytes()

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class PayloadReader:
    def __init__(self, data: bytes, context: str):
        self._data = data
        self._pos = 0
        self._context = context

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncationError(
                f"{self._context}: payload truncated "
                f"(need {n} bytes at offset {self._pos}, have {len(self._data) - self._pos})"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def str_field(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        raw = self._take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def expect_exhausted(self):
        if self._pos != len(self._data):
            raise TruncationError(
                f"{self._context}: {len(self._data) - self._pos} unread payload bytes"
            )


# ---------------------------------------------------------------------------
# container framing


def open_writer(path: str) -> BinaryIO:
    fh = open(path, "wb")
    fh.write(MAGIC)
    fh.write(struct.pack("<H", CONTAINER_VERSION))
    return fh


def append_record(fh: BinaryIO, tag: str, payload: bytes) -> None:
    raw = tag.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def iter_records(path: str) -> Iterator[tuple[str, bytes]]:
    """Stream (tag, payload) pairs without reading the whole file."""
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) < 6 or head[:4] != MAGIC:
            raise SchemaError(f"{path}: not a FMYC container")
        version = struct.unpack("<H", head[4:6])[0]
        if version != CONTAINER_VERSION:
            raise SchemaError(f"{path}: unsupported container version {version}")
        while True:
            lenbytes = fh.read(4)
            if lenbytes == b"":
                return
            if len(lenbytes) < 4:
                raise TruncationError(f"{path}: truncated record tag length")
            (taglen,) = struct.unpack("<I", lenbytes)
            tag = fh.read(taglen)
            if len(tag) < taglen:
                raise TruncationError(f"{path}: truncated record tag")
            plenbytes = fh.read(8)
            if len(plenbytes) < 8:
                raise TruncationError(f"{path}: truncated payload length")
            (plen,) = struct.unpack("<Q", plenbytes)
            payload = fh.read(plen)
            if len(payload) < plen:
                raise TruncationError(
                    f"{path}: payload truncated (declared {plen}, got {len(payload)})"
                )
            yield tag.decode("utf-8"), payload


# ---------------------------------------------------------------------------
# head weights


def save_head(path: str, head: HeadWeights) -> None:
    w = PayloadWriter()
    w.u32(head.num_classes)
    w.u32(head.feature_dim)
    w.f32_array(head.W)
    w.f32_array(head.b)
    with open_writer(path) as fh:
        append_record(fh, TAG_HEAD, w.getvalue())


def load_head(path: str) -> HeadWeights:
    for tag, payload in iter_records(path):
        if tag != TAG_HEAD:
            raise SchemaError(f"{path}: expected a {TAG_HEAD!r} record, found {tag!r}")
        r = PayloadReader(payload, f"{path} [head]")
        n_classes = r.u32()
        dim = r.u32()
        W = r.f32_array(n_classes * dim).reshape(n_classes, dim)
        b = r.f32_array(n_classes)
        r.expect_exhausted()
        return HeadWeights(W, b)
    raise SchemaError(f"{path}: container holds no records")


# ---------------------------------------------------------------------------
# feature maps


def append_feature_map(fh: BinaryIO, record: FeatureMapRecord) -> None:
    w = PayloadWriter()
    w.str_field(record.image_id)
    w.str_field(record.layer_name)
    n_c, h, wd = record.shape
    w.u32(n_c)
    w.u32(h)
    w.u32(wd)
    w.f32(record.spatial_scale)
    w.f32_array(record.data)
    append_record(fh, TAG_FEATURE_MAP, w.getvalue())


def save_feature_maps(path: str, records: list[FeatureMapRecord]) -> None:
    with open_writer(path) as fh:
        for rec in records:
            append_feature_map(fh, rec)


def load_feature_maps(path: str) -> Iterator[FeatureMapRecord]:
    """Stream records in file order; one map resident at a time."""
    for tag, payload in iter_records(path):
        if tag != TAG_FEATURE_MAP:
            raise SchemaError(f"{path}: expected {TAG_FEATURE_MAP!r} records, found {tag!r}")
        r = PayloadReader(payload, f"{path} [feature_map]")
        image_id = r.str_field()
        layer_name = r.str_field()
        n_c, h, wd = r.u32(), r.u32(), r.u32()
        scale = r.f32()
        data = r.f32_array(n_c * h * wd).reshape(n_c, h, wd)
        r.expect_exhausted()
        yield FeatureMapRecord(image_id, layer_name, data, scale)
