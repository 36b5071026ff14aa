"""Portable float map (PFM) I/O.

Layout: ``Pf`` (gray) or ``PF`` (RGB), then ``width height``, then the scale
``-1.0`` (negative means little-endian), each line ending in ``\\n``, followed
by 32-bit floats with rows stored bottom-to-top.  ``image[0]`` is the top row.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(image, path) -> None:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs a 2D gray or HxWx3 color image, got shape {img.shape}")
    height, width = img.shape[:2]
    if height == 0 or width == 0:
        raise ValueError("PFM image must have positive dimensions")
    header = tag + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    data = np.ascontiguousarray(np.flipud(img)).astype("<f4").tobytes()
    path = Path(path)
    try:
        with path.open("wb") as fh:
            fh.write(header)
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write PFM {path}: {exc}") from exc


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise ValueError(f"{path} is not a PFM file")
        width, height = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if tag == b"PF" else 1
        data = np.frombuffer(fh.read(width * height * channels * 4), dtype=dtype)
    img = data.reshape(height, width, channels) if channels == 3 else data.reshape(height, width)
    return np.flipud(img).astype(np.float32)
