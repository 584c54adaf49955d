"""Grayscale image I/O: binary PGM (8/16 bit) and float PFM.

Images are exchanged as float arrays; PGM pixel values are divided by
the declared maximum on read and quantized on write. PFM scanlines are
stored bottom-to-top with a scale line whose sign encodes endianness,
per the format definition.
"""

from __future__ import annotations

import numpy as np


def read_image(path):
    """Load a PGM or PFM file by magic number; returns a float 2D array."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    if magic == b"Pf":
        return read_pfm(path)
    raise ValueError(f"{path}: unsupported image format (expected P5 or Pf)")


def _read_tokens(fh, count):
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        text = line.split(b"#", 1)[0]
        tokens.extend(text.split())
    return tokens


def read_pgm(path):
    with open(path, "rb") as fh:
        magic, width, height, maxval = _read_tokens(fh, 4)
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM file")
        width, height, maxval = int(width), int(height), int(maxval)
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = np.frombuffer(fh.read(width * height * dtype.itemsize), dtype=dtype)
        if data.size != width * height:
            raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(height, width).astype(float) / maxval


def write_pgm(path, image, maxval=65535):
    """Quantize [0, 1] values to 8 or 16 bit and write binary PGM."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("expected a 2D image")
    levels = np.clip(np.rint(np.clip(image, 0.0, 1.0) * maxval), 0, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode())
        fh.write(levels.astype(dtype).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        magic, width, height, scale = _read_tokens(fh, 4)
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        width, height, scale = int(width), int(height), float(scale)
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        data = np.frombuffer(fh.read(width * height * 4), dtype=dtype)
        if data.size != width * height:
            raise ValueError(f"{path}: truncated pixel data")
    # PFM rows run bottom-to-top
    return data.reshape(height, width)[::-1].astype(float)


def write_pfm(path, image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("expected a 2D image")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{image.shape[1]} {image.shape[0]}\n-1.0\n".encode())
        fh.write(image[::-1].astype("<f4").tobytes())
