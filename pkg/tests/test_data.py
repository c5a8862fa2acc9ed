import warnings

import numpy as np
import pytest

from sarfah.data import (Corpus, CorpusError, CorpusWarning, dihedral, grid_patches, ingest_corpus, make_patches,
                         read_image, synthetic_image, write_image, write_synthetic_corpus)
from sarfah.speckle import DomainError


def _write(path, arr):
    return write_image(path, arr)


def test_empty_directory(tmp_path):
    with pytest.raises(CorpusError, match="found 0"):
        ingest_corpus(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(CorpusError):
        ingest_corpus(tmp_path / "nope")


def test_corrupt_file_skipped(tmp_path, rng):
    for i in range(3):
        _write(tmp_path / f"img{i}.png", rng.uniform(0, 255, (8, 8)))
    (tmp_path / "bad.pgm").write_bytes(b"not an image")
    (tmp_path / "notes.txt").write_text("ignored")
    with pytest.warns(CorpusWarning, match="bad.pgm"):
        corpus = ingest_corpus(tmp_path)
    assert len(corpus) == 3


def test_color_image_skipped(tmp_path, rng):
    from PIL import Image
    Image.fromarray(rng.integers(0, 255, (8, 8, 3), dtype=np.uint8), "RGB").save(tmp_path / "c.png")
    _write(tmp_path / "g.png", rng.uniform(0, 255, (8, 8)))
    with pytest.warns(CorpusWarning):
        assert len(ingest_corpus(tmp_path)) == 1


def test_reingest_deterministic(tmp_path):
    write_synthetic_corpus(tmp_path, count=4, size=32, seed=5)
    a, b = ingest_corpus(tmp_path), ingest_corpus(tmp_path)
    assert [e.path.name for e in a.entries] == sorted(p.name for p in tmp_path.iterdir())
    assert a.checksums() == b.checksums()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_image_round_trip(tmp_path, rng):
    img = np.rint(rng.uniform(0, 255, (9, 7)))
    for name in ("a.pgm", "a.png", "a.npy"):
        np.testing.assert_array_equal(read_image(write_image(tmp_path / name, img)), img)
    raw = rng.normal(size=(4, 4))
    np.testing.assert_array_equal(read_image(write_image(tmp_path / "r.npy", raw)), raw)
    np.testing.assert_array_equal(read_image(write_image(tmp_path / "c.png", raw * 1000)),
                                  np.clip(np.rint(raw * 1000), 0, 255))
    with pytest.raises(DomainError):
        write_image(tmp_path / "x.png", np.zeros((2, 2, 2)))


def test_patch_grid_count(rng):
    img = rng.uniform(size=(70, 130))
    patches = grid_patches(img, 32)
    assert len(patches) == (70 // 32) * (130 // 32)
    np.testing.assert_array_equal(patches[1], img[:32, 32:64])
    assert len(list(make_patches([img, img[:40, :40]], 32))) == 8 + 1


def test_undersized_image_warns(rng):
    with pytest.warns(CorpusWarning):
        assert list(make_patches([rng.uniform(size=(16, 40))], 32)) == []


def test_augmentation_is_dihedral_and_seeded(rng):
    img = rng.uniform(size=(64, 64))
    plain = list(make_patches([img], 32))
    aug1 = list(make_patches([img], 32, augment=True, seed=3))
    aug2 = list(make_patches([img], 32, augment=True, seed=3))
    for p, q, r in zip(plain, aug1, aug2):
        assert np.array_equal(q, r)
        assert any(np.array_equal(q, dihedral(p, k)) for k in range(8))


def test_dihedral_group_exhaustive():
    p = np.arange(12.0).reshape(3, 4)
    images = [dihedral(p, k) for k in range(8)]
    keys = {(im.shape, im.tobytes()) for im in images}
    assert len(keys) == 8
    sq = np.arange(9.0).reshape(3, 3)
    for k in range(8):
        # closed under composition
        for j in range(8):
            comp = dihedral(dihedral(sq, k), j)
            assert any(np.array_equal(comp, dihedral(sq, m)) for m in range(8))
        assert sorted(dihedral(sq, k).ravel()) == sorted(sq.ravel())


def test_synthetic_corpus(tmp_path):
    paths = write_synthetic_corpus(tmp_path, count=3, size=64, seed=0)
    assert [p.name for p in paths] == ["scene_000.pgm", "scene_001.pgm", "scene_002.pgm"]
    img = read_image(paths[0])
    assert img.shape == (64, 64) and img.min() >= 20 and img.max() <= 235
    assert np.array_equal(synthetic_image(64, 9), synthetic_image(64, 9))


def test_corpus_subset(tmp_path):
    write_synthetic_corpus(tmp_path, count=3, size=16)
    c = ingest_corpus(tmp_path)
    s = c.subset([2, 0])
    assert isinstance(s, Corpus) and len(s) == 2
    np.testing.assert_array_equal(s[0], c[2])
