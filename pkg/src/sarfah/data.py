"""Image I/O, corpus ingestion, patch extraction with dihedral augmentation,
and a procedural grayscale corpus for experiments without external data."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .speckle import DomainError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")


class CorpusError(DomainError):
    """The corpus is unusable (for example, it holds no readable image)."""


class CorpusWarning(UserWarning):
    """A corpus file or image was skipped."""


# ---------------------------------------------------------------------------
# single images


def read_image(path) -> np.ndarray:
    """Load an 8-bit grayscale PGM/PNG (or a 2D ``.npy``) as float64."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        arr = np.load(path, allow_pickle=False)
        if arr.ndim != 2:
            raise DomainError(f"{path}: expected a 2D array, got shape {arr.shape}")
        return arr.astype(np.float64)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I;16", "I"):
                raise DomainError(f"{path}: not a grayscale image (mode {im.mode})")
            return np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DomainError(f"{path}: unreadable image ({exc})") from exc


def write_image(path, img) -> Path:
    """Write PGM/PNG as 8-bit (rounded and clipped to [0, 255]) or ``.npy`` as float64."""
    path = Path(path)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DomainError(f"expected a 2D image, got shape {arr.shape}")
    if path.suffix.lower() == ".npy":
        np.save(path, arr)
    else:
        Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8), mode="L").save(path)
    return path


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class CorpusEntry:
    path: Path
    sha256: str

    def load(self) -> np.ndarray:
        return read_image(self.path)


class Corpus:
    """Lazily decoded images in lexicographic file-name order."""

    def __init__(self, entries: list[CorpusEntry]):
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> np.ndarray:
        return self.entries[i].load()

    def __iter__(self) -> Iterator[np.ndarray]:
        return (e.load() for e in self.entries)

    def subset(self, indices) -> Corpus:
        return Corpus([self.entries[i] for i in indices])

    def checksums(self) -> list[str]:
        return [e.sha256 for e in self.entries]


def ingest_corpus(directory) -> Corpus:
    """Index the grayscale PGM/PNG files of ``directory``.

    Each file is validated once; unreadable or non-grayscale files are
    skipped with a :class:`CorpusWarning`.  An empty result is fatal.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"{directory} is not a directory")
    entries = []
    for path in sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        try:
            read_image(path)
        except DomainError as exc:
            warnings.warn(f"skipping {exc}", CorpusWarning, stacklevel=2)
            continue
        entries.append(CorpusEntry(path, hashlib.sha256(path.read_bytes()).hexdigest()))
    if not entries:
        raise CorpusError(f"no readable grayscale images in {directory} (found 0)")
    log.info("ingested %d images from %s", len(entries), directory)
    return Corpus(entries)


# ---------------------------------------------------------------------------
# patches


def dihedral(patch: np.ndarray, k: int) -> np.ndarray:
    """Element ``k`` (0..7) of the dihedral group: ``k % 4`` quarter turns,
    then a horizontal flip when ``k >= 4``."""
    out = np.rot90(patch, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def grid_patches(img: np.ndarray, patch_size: int) -> list[np.ndarray]:
    """Non-overlapping patches in row-major grid order."""
    h, w = img.shape
    return [
        img[r : r + patch_size, c : c + patch_size]
        for r in range(0, h - patch_size + 1, patch_size)
        for c in range(0, w - patch_size + 1, patch_size)
    ]


def make_patches(dataset, patch_size: int, augment: bool = False, seed=None) -> Iterator[np.ndarray]:
    """Stream grid patches of every image, each optionally transformed by a
    random dihedral element.  Undersized images are skipped with a warning."""
    if patch_size < 1:
        raise DomainError(f"patch size must be positive, got {patch_size}")
    rng = np.random.default_rng(seed) if augment else None
    for i, img in enumerate(dataset):
        img = np.asarray(img, dtype=np.float64)
        if min(img.shape) < patch_size:
            warnings.warn(f"image {i} of size {img.shape} is smaller than patch {patch_size}; skipped",
                          CorpusWarning, stacklevel=2)
            continue
        for p in grid_patches(img, patch_size):
            yield dihedral(p, int(rng.integers(8))) if augment else p.copy()


# ---------------------------------------------------------------------------
# procedural corpus


def synthetic_image(size: int = 256, seed=None, lo: float = 20.0, hi: float = 235.0) -> np.ndarray:
    """A clean test scene: piecewise-constant polygons and discs over a smooth
    gradient, with a band of oriented stripes.  Intensities lie in [lo, hi]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, 2 * np.pi)
    img = 0.5 + 0.3 * (np.cos(theta) * xx + np.sin(theta) * yy - 0.5)
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.05, 0.25)
        level = rng.uniform(0, 1)
        if rng.random() < 0.5:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < rng.uniform(0.05, 0.25))
        img[mask] = level
    # oriented stripes in one rectangle
    x0, y0 = rng.uniform(0, 0.6, 2)
    box = (xx > x0) & (xx < x0 + 0.35) & (yy > y0) & (yy < y0 + 0.35)
    phi = rng.uniform(0, np.pi)
    freq = rng.uniform(8, 24)
    stripes = 0.5 + 0.4 * np.sign(np.sin(2 * np.pi * freq * (np.cos(phi) * xx + np.sin(phi) * yy)))
    img[box] = stripes[box]
    img = np.clip(img, 0.0, 1.0)
    return lo + (hi - lo) * img


def write_synthetic_corpus(directory, count: int = 20, size: int = 256, seed: int = 0) -> list[Path]:
    """Write ``count`` procedural images as 8-bit PGM files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [write_image(directory / f"scene_{i:03d}.pgm", synthetic_image(size, s)) for i, s in enumerate(seeds)]
