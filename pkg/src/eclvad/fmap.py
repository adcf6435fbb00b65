"""Feature-map containers and the FMAP binary wire format.

A feature map is one image's backbone activations as a C x H x W float32
grid.  Maps are stored on disk in the FMAP format, a little-endian layout
chosen so that files are bit-exact across platforms:

    magic      4 bytes ASCII "FMAP"
    version    u16 LE, currently 1
    C, H, W    u32 LE each
    label      u8   (0 normal, 1 anomalous, 2 unlabeled)
    mask flag  u8   (0 absent, 1 present)
    image_id   u16 LE byte length, then UTF-8 bytes
    data       C*H*W float32 LE, channel-major
    mask       only if flagged: H_img, W_img as u32 LE, then each mask row
               bit-packed MSB-first and padded to a byte boundary

Records are self-delimiting, so a multi-layer stack for one image is just
several records concatenated in one file; the mask, when present, rides on
the first record only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, TruncationError

MAGIC = b"FMAP"
VERSION = 1

LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1
LABEL_UNLABELED = 2

_LABEL_NAMES = {LABEL_NORMAL: "normal", LABEL_ANOMALOUS: "anomalous", LABEL_UNLABELED: "unlabeled"}


def label_name(label: int) -> str:
    return _LABEL_NAMES[label]


@dataclass
class FeatureMap:
    """One image's activations from a single extraction layer."""

    image_id: str
    channels: int
    height: int
    width: int
    data: np.ndarray  # float32, shape (C*H*W,), channel-major
    label: int = LABEL_NORMAL
    mask: np.ndarray | None = None  # uint8 {0,1}, shape (H_img, W_img)

    def validate(self) -> None:
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise DataError(f"non-positive dims C={self.channels} H={self.height} W={self.width}")
        expected = self.channels * self.height * self.width
        if self.data.size != expected:
            raise DataError(f"data length {self.data.size} != C*H*W = {expected}")
        finite = np.isfinite(self.data)
        if not finite.all():
            idx = int(np.flatnonzero(~finite)[0])
            raise DataError(f"non-finite value at data index {idx}")
        if self.label not in _LABEL_NAMES:
            raise DataError(f"unknown label {self.label}")
        if self.mask is not None:
            if self.mask.ndim != 2:
                raise DataError("mask must be a 2-D grid")
            if self.label == LABEL_UNLABELED:
                raise DataError("mask present on an unlabeled map")
            if self.label == LABEL_NORMAL and self.mask.any():
                raise DataError("normal map carries a non-zero mask")

    def grid(self) -> np.ndarray:
        """Data reshaped to (C, H, W)."""
        return self.data.reshape(self.channels, self.height, self.width)


@dataclass
class LayerStack:
    """Ordered per-layer feature maps for one image."""

    image_id: str
    layers: list[FeatureMap] = field(default_factory=list)

    @property
    def label(self) -> int:
        return self.layers[0].label

    @property
    def mask(self) -> np.ndarray | None:
        return self.layers[0].mask

    def validate(self) -> None:
        if not self.layers:
            raise DataError(f"stack {self.image_id!r} has no layers")
        for layer in self.layers:
            layer.validate()
            if layer.image_id != self.image_id:
                raise DataError(
                    f"stack {self.image_id!r} contains a layer for {layer.image_id!r}"
                )

    def feature_bytes(self) -> int:
        """Raw float payload size, the unit used for replay accounting."""
        return 4 * sum(m.channels * m.height * m.width for m in self.layers)


def pack_mask(mask: np.ndarray) -> bytes:
    """Bit-pack mask rows MSB-first, each row padded to a byte boundary."""
    rows = np.asarray(mask, dtype=np.uint8)
    return b"".join(np.packbits(row, bitorder="big").tobytes() for row in rows)


def unpack_mask(blob: bytes, height: int, width: int) -> np.ndarray:
    row_bytes = (width + 7) // 8
    out = np.empty((height, width), dtype=np.uint8)
    for r in range(height):
        chunk = np.frombuffer(blob, dtype=np.uint8, count=row_bytes, offset=r * row_bytes)
        out[r] = np.unpackbits(chunk, bitorder="big")[:width]
    return out


def write_fmap(fmap: FeatureMap, sink) -> None:
    """Serialize one record to a binary sink."""
    fmap.validate()
    header = bytearray()
    header += MAGIC
    header += VERSION.to_bytes(2, "little")
    header += fmap.channels.to_bytes(4, "little")
    header += fmap.height.to_bytes(4, "little")
    header += fmap.width.to_bytes(4, "little")
    header.append(fmap.label)
    header.append(0 if fmap.mask is None else 1)
    ident = fmap.image_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise DataError(f"image_id longer than 65535 bytes: {len(ident)}")
    header += len(ident).to_bytes(2, "little")
    header += ident
    written = 0

    def emit(blob: bytes) -> None:
        nonlocal written
        try:
            sink.write(blob)
        except OSError as exc:
            raise OSError(f"sink failed at byte offset {written}: {exc}") from exc
        written += len(blob)

    emit(bytes(header))
    emit(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())
    if fmap.mask is not None:
        h, w = fmap.mask.shape
        emit(int(h).to_bytes(4, "little"))
        emit(int(w).to_bytes(4, "little"))
        emit(pack_mask(fmap.mask))


def _read_exact(source, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise TruncationError(what, n, len(buf))
    return buf


def read_fmap(source) -> FeatureMap:
    """Read one record; raises FormatError / TruncationError / DataError."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = int.from_bytes(_read_exact(source, 2, "version"), "little")
    if version != VERSION:
        raise FormatError(f"unsupported FMAP version {version}")
    channels = int.from_bytes(_read_exact(source, 4, "channels"), "little")
    height = int.from_bytes(_read_exact(source, 4, "height"), "little")
    width = int.from_bytes(_read_exact(source, 4, "width"), "little")
    label = _read_exact(source, 1, "label")[0]
    mask_flag = _read_exact(source, 1, "mask flag")[0]
    id_len = int.from_bytes(_read_exact(source, 2, "image_id length"), "little")
    image_id = _read_exact(source, id_len, "image_id").decode("utf-8")
    count = channels * height * width
    raw = _read_exact(source, 4 * count, "data payload")
    data = np.frombuffer(raw, dtype="<f4").copy()
    mask = None
    if mask_flag == 1:
        mh = int.from_bytes(_read_exact(source, 4, "mask height"), "little")
        mw = int.from_bytes(_read_exact(source, 4, "mask width"), "little")
        blob = _read_exact(source, mh * ((mw + 7) // 8), "mask payload")
        mask = unpack_mask(blob, mh, mw)
    elif mask_flag != 0:
        raise FormatError(f"bad mask flag {mask_flag}")
    fmap = FeatureMap(image_id, channels, height, width, data, label, mask)
    fmap.validate()
    return fmap


def write_stack(stack: LayerStack, sink) -> None:
    """Write all layers of one image back to back; mask on the first only."""
    stack.validate()
    for i, layer in enumerate(stack.layers):
        if i > 0 and layer.mask is not None:
            layer = FeatureMap(
                layer.image_id, layer.channels, layer.height, layer.width,
                layer.data, layer.label, None,
            )
        write_fmap(layer, sink)


def read_stack(source) -> LayerStack:
    """Read records until EOF; all must share one image_id."""
    layers = [read_fmap(source)]
    while True:
        probe = source.read(1)
        if not probe:
            break
        layers.append(read_fmap(_Chained(probe, source)))
    stack = LayerStack(layers[0].image_id, layers)
    stack.validate()
    return stack


class _Chained:
    """Byte source that replays a prefix before the underlying stream."""

    def __init__(self, prefix: bytes, source):
        self._prefix = prefix
        self._source = source

    def read(self, n: int) -> bytes:
        out = b""
        if self._prefix:
            out, self._prefix = self._prefix[:n], self._prefix[n:]
            n -= len(out)
        if n > 0:
            out += self._source.read(n)
        return out


def save_stack(stack: LayerStack, path) -> None:
    with open(path, "wb") as f:
        write_stack(stack, f)


def load_stack(path) -> LayerStack:
    with open(path, "rb") as f:
        return read_stack(f)
