"""Binary PPM (P6) and PGM (P5) reading and writing.

Images travel as float64 arrays in [0, 1]: PPM files as (3, H, W), 8-bit
PGM masks as (H, W) in {0, 1}. Label maps use 16-bit PGM with maxval
65535 and big-endian samples, as the PGM standard requires. Parse errors
carry the byte offset where reading failed.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ContractError, PnmError
from .ioutil import atomic_write_bytes

_WS = b" \t\r\n"


def _parse_header(data: bytes, magic: bytes, path: str) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, raster offset)."""
    if data[:2] != magic:
        raise PnmError(f"{path}: expected magic {magic.decode()} at byte 0, "
                       f"found {data[:2]!r}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1] in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PnmError(f"{path}: malformed header token at byte {pos}")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise PnmError(f"{path}: missing whitespace before raster at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PnmError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise PnmError(f"{path}: maxval {maxval} out of range")
    return width, height, maxval, pos


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a P6 file into a (3, H, W) float64 array scaled to [0, 1]."""
    data = open(path, "rb").read()
    width, height, maxval, pos = _parse_header(data, b"P6", str(path))
    if maxval > 255:
        raise PnmError(f"{path}: 16-bit PPM not supported (maxval {maxval})")
    need = width * height * 3
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise PnmError(f"{path}: raster truncated at byte {pos + len(raster)} "
                       f"(need {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    return arr.reshape(height, width, 3).transpose(2, 0, 1).copy()


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1] as a maxval-255 P6 file."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"write_ppm expects (3, H, W), got {image.shape}")
    quant = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape[1], image.shape[2]
    header = f"P6\n{w} {h}\n255\n".encode()
    atomic_write_bytes(path, header + quant.transpose(1, 2, 0).tobytes())


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a P5 file; returns (samples as (H, W) int array, maxval)."""
    data = open(path, "rb").read()
    width, height, maxval, pos = _parse_header(data, b"P5", str(path))
    bytes_per = 2 if maxval > 255 else 1
    need = width * height * bytes_per
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise PnmError(f"{path}: raster truncated at byte {pos + len(raster)} "
                       f"(need {need} bytes)")
    if bytes_per == 2:
        arr = np.frombuffer(raster, dtype=">u2").astype(np.int64)
    else:
        arr = np.frombuffer(raster, dtype=np.uint8).astype(np.int64)
    return arr.reshape(height, width).copy(), maxval


def write_pgm8(path: str | os.PathLike, samples: np.ndarray) -> None:
    """Write an (H, W) array of 0..255 ints as a maxval-255 P5 file."""
    if samples.ndim != 2:
        raise ContractError(f"write_pgm8 expects (H, W), got {samples.shape}")
    if samples.min() < 0 or samples.max() > 255:
        raise ContractError("write_pgm8 sample out of 0..255 range")
    h, w = samples.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    atomic_write_bytes(path, header + samples.astype(np.uint8).tobytes())


def write_pgm16(path: str | os.PathLike, samples: np.ndarray) -> None:
    """Write an (H, W) array of 0..65535 ints as a big-endian 16-bit P5 file."""
    if samples.ndim != 2:
        raise ContractError(f"write_pgm16 expects (H, W), got {samples.shape}")
    if samples.min() < 0 or samples.max() > 65535:
        raise ContractError("write_pgm16 sample out of 0..65535 range")
    h, w = samples.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    atomic_write_bytes(path, header + samples.astype(">u2").tobytes())
