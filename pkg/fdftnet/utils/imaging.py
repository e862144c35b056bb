"""Image decoding, encoding and resizing.

Portable any-maps (P2, P3, P5, P6; 8- or 16-bit) are parsed directly. PNG,
JPEG, BMP and GIF go through Pillow. Decoded images are float32 [3,H,W] in
[0,1]; grayscale sources are replicated across the three channels.
"""

import io
import logging
from typing import List, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import MalformedImageError, UnsupportedImageFormatError

log = logging.getLogger(__name__)

PNM_MAGICS = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}
PILLOW_SIGNATURES = (b"\x89PNG\r\n\x1a\n", b"\xff\xd8\xff", b"BM", b"GIF87a", b"GIF89a")
_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments."""
    tokens: List[bytes] = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        while pos < n:
            if data[pos] in _WHITESPACE:
                pos += 1
            elif data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = n if end < 0 else end + 1
            else:
                break
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedImageError(f"malformed header: expected {count} fields, found {len(tokens)}")
        tokens.append(data[start:pos])
    return tokens, pos


def _decode_pnm(data: bytes) -> np.ndarray:
    channels, binary = PNM_MAGICS[data[:2]]
    tokens, pos = _header_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedImageError(f"malformed header: non-numeric field in {tokens!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise MalformedImageError(f"malformed header: width={width} height={height} maxval={maxval}")
    count = width * height * channels

    if binary:
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(data) or data[pos] not in _WHITESPACE:
            raise MalformedImageError("malformed header: missing raster separator")
        raster = data[pos + 1:]
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        needed = count * dtype.itemsize
        if len(raster) < needed:
            raise MalformedImageError(f"malformed raster: expected {needed} bytes, found {len(raster)}")
        values = np.frombuffer(raster[:needed], dtype=dtype).astype(np.float64)
    else:
        fields = data[pos:].split()
        if len(fields) < count:
            raise MalformedImageError(f"malformed raster: expected {count} samples, found {len(fields)}")
        try:
            values = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError:
            raise MalformedImageError("malformed raster: non-numeric sample") from None
    if values.max(initial=0) > maxval:
        raise MalformedImageError(f"malformed raster: sample exceeds maxval {maxval}")

    pixels = (values / maxval).reshape(height, width, channels).transpose(2, 0, 1)
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=0)
    return pixels.astype(np.float32)


def _decode_pillow(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32)
    except (UnidentifiedImageError, Image.DecompressionBombError, OSError, SyntaxError, ValueError) as e:
        raise MalformedImageError(f"malformed image: {e}") from e
    return (arr / 255.0).transpose(2, 0, 1).copy()


def decode_image(data: bytes) -> np.ndarray:
    """Decode raw file bytes into a float32 [3,H,W] array in [0,1]."""
    if data[:2] in PNM_MAGICS:
        return _decode_pnm(data)
    if data.startswith(PILLOW_SIGNATURES):
        return _decode_pillow(data)
    raise UnsupportedImageFormatError(f"unsupported image format (leading bytes {data[:8]!r})")


def encode_ppm(image: np.ndarray) -> bytes:
    """Binary P6 with maxval 255 from a [3,H,W] array in [0,1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"encode_ppm expects a [3,H,W] array, got {image.shape}")
    _, height, width = image.shape
    raster = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (width, height) + raster.tobytes()


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize over the last two axes, half-pixel centers (align_corners=False).

    Every output is a convex combination of inputs, so the value range is preserved.
    """
    in_h, in_w = image.shape[-2:]
    if (in_h, in_w) == (height, width):
        return image.copy()

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(image.dtype)

    y0, y1, wy = axis_weights(in_h, height)
    x0, x1, wx = axis_weights(in_w, width)
    rows = image[..., y0, :] * (1 - wy)[:, None] + image[..., y1, :] * wy[:, None]
    return rows[..., x0] * (1 - wx) + rows[..., x1] * wx
