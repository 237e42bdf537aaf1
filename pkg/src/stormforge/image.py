"""Image values, lossless PNG I/O, and the pixel arithmetic shared by every stage.

An image is a ``float64`` array of shape ``(h, w, 3)`` with every intensity in
``[0, 1]``; a gray map is a ``float64`` array of shape ``(h, w)`` with no range
restriction until it is clamped. Intensities keep full double precision inside
the pipeline; quantization happens only at the PNG boundary. All operations
are pure: inputs are never mutated, so arrays can be shared freely between
concurrent jobs.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngDecodeError(Exception):
    """The file is not a well-formed PNG stream."""


class UnsupportedPngError(Exception):
    """The PNG is valid but uses a bit depth or layout outside the contract."""


def check_image(img) -> np.ndarray:
    """Validate and return an image as a float64 ``(h, w, 3)`` array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (h, w, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image has zero area")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def check_gray(gray) -> np.ndarray:
    """Validate and return a gray map as a float64 ``(h, w)`` array."""
    arr = np.asarray(gray, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"gray map must have shape (h, w), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("gray map has zero area")
    if not np.all(np.isfinite(arr)):
        raise ValueError("gray map contains non-finite values")
    return arr


def blend(a, b, w: float) -> np.ndarray:
    """Linear mix ``(1 - w) * a + w * b``, clamped to [0, 1].

    ``w = 0`` returns ``a`` exactly and ``w = 1`` returns ``b`` exactly.
    """
    a = check_image(a)
    b = check_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {w}")
    if w == 0.0:
        return a.copy()
    if w == 1.0:
        return b.copy()
    return np.clip((1.0 - w) * a + w * b, 0.0, 1.0)


def apply_gain(img, gain) -> np.ndarray:
    """Multiply each pixel by a per-pixel gain, broadcast over channels.

    The product is clamped to [0, 1], matching sensor saturation.
    """
    img = check_image(img)
    gain = check_gray(gain)
    if img.shape[:2] != gain.shape:
        raise ValueError(f"dimension mismatch: {img.shape[:2]} vs {gain.shape}")
    return np.clip(img * gain[:, :, None], 0.0, 1.0)


# --- PNG codec -------------------------------------------------------------
#
# Reads non-interlaced 8/16-bit RGB and RGBA PNGs (color types 2 and 6) and
# writes 8-bit RGB. Implemented directly on zlib so the error taxonomy stays
# precise and 16-bit samples are read at full precision.


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit RGB(A) PNG, scaled to [0, 1], alpha discarded.

    Raises ``FileNotFoundError``, ``PngDecodeError`` for malformed streams,
    and ``UnsupportedPngError`` for valid PNGs outside the 8/16-bit RGB(A),
    non-interlaced contract.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_png(data)


def save_png(img, path) -> None:
    """Write an image as an 8-bit RGB PNG, quantizing by ``round(x * 255)``."""
    data = encode_png(img)
    with open(path, "wb") as fh:
        fh.write(data)


def decode_png(data: bytes) -> np.ndarray:
    """Decode in-memory PNG bytes (see ``load_png``)."""
    if len(data) < 8 or data[:8] != _PNG_SIGNATURE:
        raise PngDecodeError("missing PNG signature")
    chunks = _iter_chunks(data)

    ctype, cdata = next(chunks, (None, None))
    if ctype != b"IHDR" or len(cdata) != 13:
        raise PngDecodeError("first chunk is not a valid IHDR")
    width, height, bit_depth, color_type, compression, filter_method, interlace = (
        struct.unpack(">IIBBBBB", cdata)
    )
    if width < 1 or height < 1:
        raise PngDecodeError("zero-area image")
    if compression != 0 or filter_method != 0:
        raise PngDecodeError("unknown compression or filter method")
    if color_type not in (2, 6):
        raise UnsupportedPngError(f"unsupported color type {color_type}, need RGB(A)")
    if bit_depth not in (8, 16):
        raise UnsupportedPngError(f"unsupported bit depth {bit_depth}")
    if interlace != 0:
        raise UnsupportedPngError("interlaced PNGs are not supported")

    idat = bytearray()
    for ctype, cdata in chunks:
        if ctype == b"IDAT":
            idat.extend(cdata)
        elif ctype == b"IEND":
            break
    if not idat:
        raise PngDecodeError("no IDAT chunk")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise PngDecodeError(f"IDAT decompression failed: {exc}") from exc

    channels = 3 if color_type == 2 else 4
    sample_bytes = bit_depth // 8
    pixels = _unfilter(raw, height, width, channels, sample_bytes)

    if bit_depth == 8:
        arr = pixels[:, :, :, 0].astype(np.float64) / 255.0
    else:
        hi = pixels[:, :, :, 0].astype(np.uint16) << 8
        lo = pixels[:, :, :, 1].astype(np.uint16)
        arr = (hi | lo).astype(np.float64) / 65535.0
    return arr[:, :, :3]


def encode_png(img, *, filter_id: int = 0) -> bytes:
    """Encode an image to 8-bit RGB PNG bytes."""
    img = check_image(img)
    quantized = np.round(img * 255.0).astype(np.uint8)
    return _encode_raw(quantized, bit_depth=8, filter_id=filter_id)


def _iter_chunks(data: bytes):
    pos = 8
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        end = pos + 8 + length
        if end + 4 > len(data):
            raise PngDecodeError(f"truncated {ctype!r} chunk")
        cdata = data[pos + 8 : end]
        (crc,) = struct.unpack(">I", data[end : end + 4])
        if zlib.crc32(ctype + cdata) & 0xFFFFFFFF != crc:
            raise PngDecodeError(f"CRC mismatch in {ctype!r} chunk")
        yield ctype, cdata
        pos = end + 4


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, width: int, channels: int, sample_bytes: int) -> np.ndarray:
    """Reverse per-scanline filtering; returns uint8 of shape (h, w, ch, sample_bytes)."""
    bpp = channels * sample_bytes
    stride = width * bpp
    if len(raw) != height * (stride + 1):
        raise PngDecodeError("pixel data does not match declared dimensions")
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.intp)
    for row in range(height):
        offset = row * (stride + 1)
        ftype = raw[offset]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=offset + 1).astype(np.intp)
        if ftype == 0:
            recon = line
        elif ftype == 1:
            recon = line.copy()
            for i in range(bpp, stride):
                recon[i] = (recon[i] + recon[i - bpp]) & 0xFF
        elif ftype == 2:
            recon = (line + prev) & 0xFF
        elif ftype == 3:
            recon = line.copy()
            for i in range(stride):
                left = recon[i - bpp] if i >= bpp else 0
                recon[i] = (recon[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            recon = line.copy()
            for i in range(stride):
                left = recon[i - bpp] if i >= bpp else 0
                up_left = prev[i - bpp] if i >= bpp else 0
                recon[i] = (recon[i] + _paeth(int(left), int(prev[i]), int(up_left))) & 0xFF
        else:
            raise PngDecodeError(f"unknown scanline filter {ftype}")
        out[row] = recon.astype(np.uint8)
        prev = recon
    return out.reshape(height, width, channels, sample_bytes)


def _chunk(ctype: bytes, cdata: bytes) -> bytes:
    return (
        struct.pack(">I", len(cdata))
        + ctype
        + cdata
        + struct.pack(">I", zlib.crc32(ctype + cdata) & 0xFFFFFFFF)
    )


def _filter_row(line: np.ndarray, prev: np.ndarray, bpp: int, filter_id: int) -> np.ndarray:
    line = line.astype(np.intp)
    prev = prev.astype(np.intp)
    left = np.zeros_like(line)
    left[bpp:] = line[:-bpp]
    if filter_id == 0:
        filtered = line
    elif filter_id == 1:
        filtered = line - left
    elif filter_id == 2:
        filtered = line - prev
    elif filter_id == 3:
        filtered = line - ((left + prev) >> 1)
    elif filter_id == 4:
        up_left = np.zeros_like(prev)
        up_left[bpp:] = prev[:-bpp]
        pred = np.array(
            [_paeth(int(a), int(b), int(c)) for a, b, c in zip(left, prev, up_left)],
            dtype=np.intp,
        )
        filtered = line - pred
    else:
        raise ValueError(f"unknown filter id {filter_id}")
    return (filtered & 0xFF).astype(np.uint8)


def _encode_raw(pixels: np.ndarray, *, bit_depth: int, filter_id: int = 0, color_type: int = 2) -> bytes:
    """Encode integer samples; 16-bit and filtered output exist for round-trip tests."""
    height, width, channels = pixels.shape
    if bit_depth == 8:
        rows = pixels.astype(np.uint8).reshape(height, width * channels)
    else:
        samples = pixels.astype(">u2")
        rows = samples.view(np.uint8).reshape(height, width * channels * 2)
    bpp = channels * (bit_depth // 8)

    body = bytearray()
    prev = np.zeros(rows.shape[1], dtype=np.uint8)
    for row in range(height):
        body.append(filter_id)
        body.extend(_filter_row(rows[row], prev, bpp, filter_id).tobytes())
        prev = rows[row]

    ihdr = struct.pack(">IIBBBBB", width, height, bit_depth, color_type, 0, 0, 0)
    return (
        _PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(bytes(body), 6))
        + _chunk(b"IEND", b"")
    )
