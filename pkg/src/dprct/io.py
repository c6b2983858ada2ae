"""Binary file containers for images and sinograms, plus PGM export.

Image files: 8-byte magic ``DPRIMG01``, a UTF-8 header line
``width height pixel_size\n``, then width*height little-endian float32
values in row-major order.

Sinogram files: magic ``DPRSIN01``, header ``n_views n_detectors\n``,
then n_views little-endian float64 view angles, then the data as float32.
"""

from __future__ import annotations

import contextlib
import os
import sys
import tempfile
from typing import BinaryIO

import numpy as np

from .errors import FormatError
from .grid import ImageGrid, Sinogram

__all__ = [
    "IMAGE_MAGIC",
    "SINOGRAM_MAGIC",
    "read_image",
    "write_image",
    "read_sinogram",
    "write_sinogram",
    "write_pgm",
    "open_input",
    "open_output",
]

IMAGE_MAGIC = b"DPRIMG01"
SINOGRAM_MAGIC = b"DPRSIN01"

_MAX_HEADER = 256  # header lines are tiny; anything longer is garbage


@contextlib.contextmanager
def open_input(path):
    """Binary input stream; '-' means stdin."""
    if path == "-":
        yield sys.stdin.buffer
    else:
        with open(path, "rb") as f:
            yield f


@contextlib.contextmanager
def open_output(path):
    """Binary output stream; '-' means stdout. File targets are written to a
    temp file in the same directory and renamed into place on success."""
    if path == "-":
        yield sys.stdout.buffer
        sys.stdout.buffer.flush()
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes of {what}, got {len(buf)}")
    return buf


def _read_header_line(f: BinaryIO) -> str:
    chars = bytearray()
    while True:
        c = f.read(1)
        if not c:
            raise FormatError("truncated file: unterminated header line")
        if c == b"\n":
            break
        chars += c
        if len(chars) > _MAX_HEADER:
            raise FormatError("header line too long")
    try:
        return chars.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"header is not valid UTF-8: {e}") from None


def _check_magic(f: BinaryIO, magic: bytes):
    got = _read_exact(f, len(magic), "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")


def write_image(path, img: ImageGrid):
    with open_output(path) as f:
        _write_image_stream(f, img)


def _write_image_stream(f: BinaryIO, img: ImageGrid):
    f.write(IMAGE_MAGIC)
    f.write(f"{img.width} {img.height} {img.pixel_size!r}\n".encode())
    f.write(img.data.astype("<f4").tobytes())


def read_image(path) -> ImageGrid:
    with open_input(path) as f:
        return _read_image_stream(f)


def _read_image_stream(f: BinaryIO) -> ImageGrid:
    _check_magic(f, IMAGE_MAGIC)
    fields = _read_header_line(f).split()
    if len(fields) != 3:
        raise FormatError(f"image header needs 3 fields, got {len(fields)}")
    try:
        w, h, px = int(fields[0]), int(fields[1]), float(fields[2])
    except ValueError as e:
        raise FormatError(f"malformed image header: {e}") from None
    if w < 1 or h < 1 or not px > 0:
        raise FormatError(f"bad image header values {w} {h} {px}")
    raw = _read_exact(f, 4 * w * h, "pixel data")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w)
    try:
        return ImageGrid(w, h, px, data)
    except ValueError as e:
        raise FormatError(str(e)) from None


def write_sinogram(path, sino: Sinogram):
    with open_output(path) as f:
        _write_sinogram_stream(f, sino)


def _write_sinogram_stream(f: BinaryIO, sino: Sinogram):
    f.write(SINOGRAM_MAGIC)
    f.write(f"{sino.n_views} {sino.n_detectors}\n".encode())
    f.write(sino.angles.astype("<f8").tobytes())
    f.write(sino.data.astype("<f4").tobytes())


def read_sinogram(path) -> Sinogram:
    with open_input(path) as f:
        return _read_sinogram_stream(f)


def _read_sinogram_stream(f: BinaryIO) -> Sinogram:
    _check_magic(f, SINOGRAM_MAGIC)
    fields = _read_header_line(f).split()
    if len(fields) != 2:
        raise FormatError(f"sinogram header needs 2 fields, got {len(fields)}")
    try:
        nv, nd = int(fields[0]), int(fields[1])
    except ValueError as e:
        raise FormatError(f"malformed sinogram header: {e}") from None
    if nv < 1 or nd < 1:
        raise FormatError(f"bad sinogram header values {nv} {nd}")
    angles = np.frombuffer(_read_exact(f, 8 * nv, "angles"), dtype="<f8")
    data = np.frombuffer(_read_exact(f, 4 * nv * nd, "projection data"), dtype="<f4")
    try:
        return Sinogram(nv, nd, angles.copy(), data.astype(np.float64).reshape(nv, nd))
    except ValueError as e:
        raise FormatError(str(e)) from None


def write_pgm(path, buf: np.ndarray):
    """Write an 8-bit grayscale buffer as binary PGM (P5, maxval 255)."""
    arr = np.asarray(buf)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError("PGM export expects a 2D uint8 array")
    h, w = arr.shape
    with open_output(path) as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())
