"""Standalone FMAP record writer.

This mirrors the published wire format and deliberately shares no code
with the consumer package: format conformance is the whole contract.

    magic "FMAP" | version u16=1 | C,H,W u32 | label u8 | mask flag u8
    | image_id u16-len + UTF-8 | C*H*W float32 | [H_img,W_img u32 +
    bit-packed mask rows, MSB first, byte-aligned per row]

All integers and floats little-endian.  A multi-layer stack is several
records back to back in one file; the mask rides on the first record.
"""

from __future__ import annotations

import struct

import numpy as np

LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1


def pack_mask_rows(mask: np.ndarray) -> bytes:
    rows = np.asarray(mask, dtype=np.uint8)
    return b"".join(np.packbits(row, bitorder="big").tobytes() for row in rows)


def write_record(sink, image_id: str, array: np.ndarray, label: int,
                 mask: np.ndarray | None = None) -> None:
    """Write one C x H x W float32 record."""
    c, h, w = array.shape
    data = np.ascontiguousarray(array, dtype="<f4")
    if not np.isfinite(data).all():
        raise ValueError(f"{image_id}: non-finite activation")
    ident = image_id.encode("utf-8")
    sink.write(b"FMAP")
    sink.write(struct.pack("<HIII", 1, c, h, w))
    sink.write(struct.pack("<BB", label, 0 if mask is None else 1))
    sink.write(struct.pack("<H", len(ident)))
    sink.write(ident)
    sink.write(data.tobytes())
    if mask is not None:
        mh, mw = mask.shape
        sink.write(struct.pack("<II", mh, mw))
        sink.write(pack_mask_rows(mask))


def write_stack_file(path, image_id: str, layers: list[np.ndarray], label: int,
                     mask: np.ndarray | None = None) -> None:
    with open(path, "wb") as sink:
        for i, layer in enumerate(layers):
            write_record(sink, image_id, layer, label, mask if i == 0 else None)
