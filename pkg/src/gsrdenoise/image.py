"""Grayscale images as float64 arrays: binary PGM I/O, AWGN synthesis and PSNR.

An image is a 2-D ``numpy.ndarray`` of dtype float64, indexed ``[row, col]``,
with a nominal intensity range of [0, 255]. Values are only quantized when
written to disk.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PgmError",
    "PgmMagicError",
    "PgmHeaderError",
    "PgmMaxvalError",
    "PgmTruncatedError",
    "as_image",
    "load_pgm",
    "save_pgm",
    "quantize",
    "add_awgn",
    "psnr",
]


class PgmError(ValueError):
    """Base class for PGM parse failures."""


class PgmMagicError(PgmError):
    pass


class PgmHeaderError(PgmError):
    pass


class PgmMaxvalError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


def as_image(data) -> np.ndarray:
    img = np.array(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D array, got shape {img.shape}")
    return img


def _header_tokens(buf: bytes, count: int):
    pos = 0
    tokens = []
    for _ in range(count):
        # comments may sit between any two header tokens
        while True:
            while pos < len(buf) and buf[pos : pos + 1].isspace():
                pos += 1
            if buf[pos : pos + 1] == b"#":
                nl = buf.find(b"\n", pos)
                if nl < 0:
                    raise PgmHeaderError("unterminated comment in header")
                pos = nl + 1
                continue
            break
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PgmHeaderError("header ended early")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PgmHeaderError("missing whitespace after maxval")
    return tokens, pos + 1


def load_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255 into a float64 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise PgmMagicError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    tokens, offset = _header_tokens(buf[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmHeaderError(f"{path}: non-integer header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise PgmHeaderError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise PgmMaxvalError(f"{path}: maxval {maxval} (only 255 is supported)")
    raster = buf[offset : offset + width * height]
    if len(raster) < width * height:
        raise PgmTruncatedError(
            f"{path}: raster has {len(raster)} bytes, expected {width * height}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)


def quantize(img) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero, returning uint8."""
    clipped = np.clip(np.asarray(img, dtype=np.float64), 0.0, 255.0)
    return np.floor(clipped + 0.5).astype(np.uint8)


def save_pgm(img, path) -> None:
    img = as_image(img)
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantize(img).tobytes())


def add_awgn(img, sigma: float, seed: int) -> np.ndarray:
    """Return ``img + sigma * g`` with g drawn from PCG64 seeded by `seed`.

    The result is not clamped. ``sigma == 0`` returns an exact copy.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    img = as_image(img)
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(img.shape)
    if sigma == 0:
        return img.copy()
    return img + sigma * noise


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio in dB with peak 255; ``inf`` for identical images."""
    ref = np.clip(as_image(reference), 0.0, 255.0)
    out = np.clip(as_image(test), 0.0, 255.0)
    if ref.shape != out.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {out.shape}")
    mse = np.mean((ref - out) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(255.0**2 / mse))
