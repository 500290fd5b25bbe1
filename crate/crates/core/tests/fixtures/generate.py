"""Writes the golden WAV/LRC fixtures and their expected decodings.

Uses only the Python standard library so the expected values do not share
code with the Rust decoder. Run from this directory: python3 generate.py
"""

import hashlib
import json
import math
import struct

RATE = 8000


def chunk(tag, body):
    pad = b"\0" if len(body) % 2 else b""
    return tag + struct.pack("<I", len(body)) + body + pad


def riff(fmt, data, extra=b""):
    body = b"WAVE" + chunk(b"fmt ", fmt) + extra + chunk(b"data", data)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def fmt_chunk(tag, channels, bits, extensible_subtype=None):
    block = channels * bits // 8
    base = struct.pack("<HHIIHH", tag, channels, RATE, RATE * block, block, bits)
    if extensible_subtype is None:
        return base
    guid = struct.pack("<H", extensible_subtype) + bytes.fromhex("000000001000800000aa00389b71")
    return base + struct.pack("<HHI", 22, bits, 0) + guid


def pcm16_mono():
    ints = [0, 1, -1, 32767, -32768, 12345, -23456, 100]
    ints += [round(20000 * math.sin(2 * math.pi * 440 * i / RATE)) for i in range(64)]
    data = b"".join(struct.pack("<h", v) for v in ints)
    junk = chunk(b"LIST", b"INFOISFT\x05\0\0\0test\0")
    return riff(fmt_chunk(1, 1, 16), data, junk), [v / 32768 for v in ints]


def pcm24_stereo():
    left = [0, 8388607, -8388608, 1, -1, 4000000]
    right = [0, 8388607, 8388607, -1, -3, -4000000]
    left += [round(3e6 * math.sin(0.1 * i)) for i in range(40)]
    right += [round(2e6 * math.cos(0.07 * i)) for i in range(40)]
    data = b""
    expected = []
    for a, b in zip(left, right):
        data += struct.pack("<i", a)[:3] + struct.pack("<i", b)[:3]
        expected.append((a / 8388608 + b / 8388608) / 2)
    return riff(fmt_chunk(1, 2, 24), data), expected


def float32_mono():
    values = [0.0, 0.5, -0.5, 1.0, -1.0, 0.1, 1e-7, -0.333333]
    values += [0.8 * math.sin(0.05 * i) for i in range(50)]
    stored = [struct.unpack("<f", struct.pack("<f", v))[0] for v in values]
    data = b"".join(struct.pack("<f", v) for v in values)
    return riff(fmt_chunk(3, 1, 32), data), stored


def pcm16_extensible_stereo():
    left = [100, -200, 32767, -32768, 0]
    right = [300, 200, 32767, 0, -1]
    data = b"".join(struct.pack("<hh", a, b) for a, b in zip(left, right))
    expected = [(a / 32768 + b / 32768) / 2 for a, b in zip(left, right)]
    return riff(fmt_chunk(0xFFFE, 2, 16, extensible_subtype=1), data), expected


LRC = """[ti:Golden]
[ar:Fixture Band]
[length:02:10]

[00:00.50]first light
[00:03.25][00:41.00]chorus line
this line has no timestamp
[00:07]plain seconds
[01:02.75]  padded words  
[00:12.50]
[00:20.125]millis
"""

LRC_EXPECTED = [
    [0.5, "first light"],
    [3.25, "chorus line"],
    [7.0, "plain seconds"],
    [20.125, "millis"],
    [41.0, "chorus line"],
    [62.75, "padded words"],
]


def text_features(text, buckets=256):
    """Signed hashed bag of words: the whole string plus lowercase tokens."""
    f = [0.0] * buckets

    def add(raw):
        d = hashlib.sha256(raw).digest()
        idx = int.from_bytes(d[:8], "little") % buckets
        f[idx] += 1.0 if d[8] % 2 == 0 else -1.0

    add(text.encode())
    for tok in text.split():
        add(tok.lower().encode())
    return f


def main():
    expected = {}
    for name, make in [
        ("pcm16_mono", pcm16_mono),
        ("pcm24_stereo", pcm24_stereo),
        ("float32_mono", float32_mono),
        ("pcm16_extensible_stereo", pcm16_extensible_stereo),
    ]:
        blob, samples = make()
        with open(f"{name}.wav", "wb") as fh:
            fh.write(blob)
        expected[name] = {"sample_rate": RATE, "samples": samples}
    with open("wav_expected.json", "w") as fh:
        json.dump(expected, fh, indent=1)
    with open("golden.lrc", "w") as fh:
        fh.write(LRC)
    with open("lrc_expected.json", "w") as fh:
        json.dump(LRC_EXPECTED, fh, indent=1)
    feats = {t: text_features(t) for t in ["a", "", "Be My Weasel", "be  my weasel"]}
    with open("text_features.json", "w") as fh:
        json.dump(feats, fh)


if __name__ == "__main__":
    main()
