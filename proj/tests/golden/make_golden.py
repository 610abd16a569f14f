#!/usr/bin/env python3
"""Regenerate the golden payload fixtures from the wire format definition.

Layout: magic "SDRP" | version u8 | label u16 BE | residual_step u16 BE |
d u32 BE | bits_per_element u8 | schedule digest 8 bytes BE | payload bits
packed MSB-first in element index order. Independent of the C++ encoder on
purpose: the byte layout is written out by hand here.
"""

import math
import struct


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def schedule_digest() -> int:
    # Canonical config text of the golden schedule: linear, T=8, 0.05..0.30.
    text = (
        "kind = linear\n"
        "steps = 8\n"
        "beta_start = %.17g\n" % 0.05
        + "beta_end = %.17g\n" % 0.30
    )
    return fnv1a64(text.encode())


LATENT = [0.5, -1.25, 2.0, -0.0078125]
LABEL = 3
RESIDUAL = 7
CLIP = 4.0


def header(bpe: int) -> bytes:
    out = b"SDRP" + bytes([1])
    out += struct.pack(">H", LABEL)
    out += struct.pack(">H", RESIDUAL)
    out += struct.pack(">I", len(LATENT))
    out += bytes([bpe])
    out += struct.pack(">Q", schedule_digest())
    return out


def body_f32() -> bytes:
    return b"".join(struct.pack(">f", v) for v in LATENT)


def body_q8() -> bytes:
    step = 2.0 * CLIP / 256.0
    out = bytearray()
    for v in LATENT:
        q = math.floor((min(max(v, -CLIP), CLIP) + CLIP) / step)
        out.append(min(max(q, 0), 255))
    return bytes(out)


if __name__ == "__main__":
    with open("payload_v1.bin", "wb") as f:
        f.write(header(32) + body_f32())
    with open("payload_q8.bin", "wb") as f:
        f.write(header(8) + body_q8())
    print("digest = 0x%016x" % schedule_digest())
