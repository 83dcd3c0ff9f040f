"""CIFAR-10 binary-format ingestion.

Each record in ``data_batch_{1..5}.bin`` / ``test_batch.bin`` is one label
byte followed by 3072 pixel bytes (1024 R, 1024 G, 1024 B, row-major).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


class IngestionError(ValueError):
    """Malformed or missing dataset file."""

    def __init__(self, path, offset: int, reason: str):
        super().__init__(f"{path}: byte offset {offset}: {reason}")
        self.path = Path(path)
        self.offset = offset


@dataclass
class ImageStore:
    """Images as float32 ``(N, 3, 32, 32)`` arrays scaled to ``[0, 1]``."""

    train: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray
    test_labels: np.ndarray


def read_batch_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except FileNotFoundError:
        raise IngestionError(path, 0, "file not found") from None
    n_full, rest = divmod(raw.size, RECORD_BYTES)
    if rest:
        raise IngestionError(path, n_full * RECORD_BYTES, f"truncated record ({rest} trailing bytes)")
    if n_full == 0:
        raise IngestionError(path, 0, "no records")
    records = raw.reshape(n_full, RECORD_BYTES)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IngestionError(path, int(bad[0]) * RECORD_BYTES, f"label byte {labels[bad[0]]} out of range 0-9")
    images = records[:, 1:].reshape(n_full, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels.astype(np.int64)


def find_root(path: str | Path) -> Path:
    """Accept either the batch directory or its parent."""
    path = Path(path)
    for cand in (path, path / "cifar-10-batches-bin"):
        if (cand / TEST_FILE).exists() or (cand / TRAIN_FILES[0]).exists():
            return cand
    raise IngestionError(path, 0, "no CIFAR-10 binary batch files found")


def _subset(images, labels, limit, rng):
    if not limit or limit >= len(images):
        return images, labels
    pick = np.sort(rng.permutation(len(images))[:limit])
    return images[pick], labels[pick]


def _empty():
    return np.zeros((0, 3, 32, 32), dtype=np.float32), np.zeros(0, dtype=np.int64)


def ingest_dataset(
    path: str | Path,
    limit: int | None = None,
    test_limit: int | None = None,
    seed: int = 0,
    splits: tuple[str, ...] = ("train", "test"),
) -> ImageStore:
    """Load the train and test splits.

    ``limit``/``test_limit`` select a seeded random subset of each split;
    the same seed always picks the same images. Splits not named in
    ``splits`` come back empty.
    """
    root = find_root(path)
    train, train_labels = _empty()
    test, test_labels = _empty()
    if "train" in splits:
        parts = [read_batch_file(root / name) for name in TRAIN_FILES if (root / name).exists()]
        if not parts:
            raise IngestionError(root, 0, "no training batches found")
        train = np.concatenate([p[0] for p in parts])
        train_labels = np.concatenate([p[1] for p in parts])
    if "test" in splits:
        if not (root / TEST_FILE).exists():
            raise IngestionError(root / TEST_FILE, 0, "file not found")
        test, test_labels = read_batch_file(root / TEST_FILE)
    train, train_labels = _subset(train, train_labels, limit, np.random.default_rng([seed, 0]))
    test, test_labels = _subset(test, test_labels, test_limit, np.random.default_rng([seed, 1]))
    return ImageStore(train, test, train_labels, test_labels)


def write_batch_file(path: str | Path, images_uint8: np.ndarray, labels: np.ndarray) -> Path:
    """Write images ``(N, 3, 32, 32)`` uint8 in the CIFAR-10 binary layout."""
    path = Path(path)
    images_uint8 = np.asarray(images_uint8, dtype=np.uint8).reshape(len(labels), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_uint8], axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)
    return path


def image_entropy(image: np.ndarray) -> float:
    """Entropy in bits of the 256-bin grayscale histogram of a ``(3, H, W)`` image in [0, 1]."""
    gray = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    levels = np.clip(np.round(gray * 255.0), 0, 255).astype(np.int64)
    counts = np.bincount(levels.reshape(-1), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())
