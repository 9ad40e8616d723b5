"""
IDX Adapter - Read and write big-endian IDX image/label files

Layout (big endian):
    u8 0 | u8 0 | u8 type (0x08 = unsigned byte) | u8 ndim
    i32 x ndim | dimensions
    u8[]       | payload, row-major
"""

import struct
from pathlib import Path
from typing import Tuple

import numpy as np
from exceptions import BadMagicError, CountMismatchError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxAdapter:
    """
    Adapter between IDX files and numpy arrays.

    Responsibilities:
    - Validate magic numbers and payload length
    - Convert image files to N x H x W x 1 uint8 arrays
    - Write arrays back as IDX
    """

    @staticmethod
    def _read(
        path: Path, expected_magic: int, allow_short: bool = False
    ) -> Tuple[Tuple[int, ...], bytes]:
        data = Path(path).read_bytes()
        if len(data) < 4:
            raise TruncatedFileError(f"{path}: file too short for an IDX header")
        (magic,) = struct.unpack(">I", data[:4])
        if magic != expected_magic:
            raise BadMagicError(
                f"{path}: magic number 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
        ndim = expected_magic & 0xFF
        header = 4 + 4 * ndim
        if len(data) < header:
            raise TruncatedFileError(f"{path}: header ends after {len(data)} bytes")
        dims = struct.unpack(f">{ndim}I", data[4:header])
        payload = data[header:]
        expected = int(np.prod(dims))
        if len(payload) < expected and not allow_short:
            raise TruncatedFileError(
                f"{path}: payload has {len(payload)} bytes, header promises {expected}"
            )
        return dims, payload[:expected]

    @staticmethod
    def read_images(path) -> np.ndarray:
        """N x H x W x 1 uint8 images."""
        dims, payload = IdxAdapter._read(path, IMAGES_MAGIC)
        count, rows, cols = dims
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols, 1)
        return images.copy()

    @staticmethod
    def read_labels(path) -> np.ndarray:
        (count,), payload = IdxAdapter._read(path, LABELS_MAGIC)
        return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    @staticmethod
    def read_pair(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
        """Images and labels; a short label payload counts as missing labels."""
        images = IdxAdapter.read_images(images_path)
        (declared,), payload = IdxAdapter._read(labels_path, LABELS_MAGIC, allow_short=True)
        present = min(declared, len(payload))
        if present != images.shape[0] or declared != images.shape[0]:
            raise CountMismatchError(
                f"{images_path} holds {images.shape[0]} images but "
                f"{labels_path} holds {present} labels (header declares {declared})"
            )
        return images, np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    @staticmethod
    def write_images(path, images: np.ndarray) -> None:
        images = np.asarray(images)
        if images.ndim == 4:
            if images.shape[3] != 1:
                raise ValueError("IDX images must have a single channel")
            images = images[..., 0]
        count, rows, cols = images.shape
        header = struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols)
        Path(path).write_bytes(header + images.astype(np.uint8).tobytes())

    @staticmethod
    def write_labels(path, labels: np.ndarray) -> None:
        labels = np.asarray(labels)
        header = struct.pack(">II", LABELS_MAGIC, labels.shape[0])
        Path(path).write_bytes(header + labels.astype(np.uint8).tobytes())
