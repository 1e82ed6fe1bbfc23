"""Grayscale image files and epitome rendering.

Binary PGM (P5, maxval 255) is always available; 8-bit grayscale PNG goes
through Pillow.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .core import EpitomeSet


class ImageFormatError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(raw: bytes) -> np.ndarray:
    if raw[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    for _ in range(3):
        match = _TOKEN.match(raw, pos)
        if match is None:
            raise ImageFormatError("truncated PGM header")
        try:
            fields.append(int(match.group(1)))
        except ValueError:
            raise ImageFormatError(f"malformed PGM header field {match.group(1)!r}") from None
        pos = match.end()
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}; only 8-bit (255) is supported")
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PGM size {width}x{height}")
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PGM header")
    data = raw[pos + 1:pos + 1 + width * height]
    if len(data) != width * height:
        raise ImageFormatError(f"PGM payload has {len(data)} bytes, expected {width * height}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64)


def to_uint8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"P5":
        return parse_pgm(raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "P", "RGB", "RGBA", "LA"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.float64)
    raise ImageFormatError(f"{path}: unrecognised image format (expected P5 PGM or PNG)")


def write_image(img, path) -> None:
    """Write clipped and rounded 8-bit pixels; format chosen by suffix."""
    path = Path(path)
    data = to_uint8(img)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(data, mode="L").save(path)
        return
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def render_epitome(E: EpitomeSet, separator: float = 255.0) -> np.ndarray:
    """Map the epitome range affinely onto [0, 255] and tile the epitomes.

    Epitomes are laid out row-major on a near-square grid with one-pixel
    separators.  A constant epitome renders as mid-gray 128.
    """
    px = E.pixels
    lo, hi = float(px.min()), float(px.max())
    scaled = np.full_like(px, 128.0) if hi == lo else (px - lo) * (255.0 / (hi - lo))
    n, h, w = px.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    out = np.full((rows * h + rows - 1, cols * w + cols - 1), separator)
    for i in range(n):
        r, c = divmod(i, cols)
        out[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = scaled[i]
    return out
