import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from sarfah.autodiff import Parameter
from sarfah.data import ingest_corpus, make_patches, write_synthetic_corpus
from sarfah.model import SARFAH
from sarfah.speckle import DomainError
from sarfah.train import (PRESETS, Adam, TrainConfig, TrainingDiverged, build_train_config, cosine_lr, evaluate,
                          noisy_patch, train, validation_set)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_synthetic_corpus(d, count=4, size=64, seed=0)
    return ingest_corpus(d)


@pytest.fixture(scope="module")
def smoke_run(corpus, tmp_path_factory):
    cfg = replace(PRESETS["smoke"], out_dir=str(tmp_path_factory.mktemp("run")))
    return cfg, train(cfg, corpus)


def test_cosine_lr():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3
    assert cosine_lr(100, 100, 1e-3, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert cosine_lr(50, 100, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2)
    vals = [cosine_lr(s, 40, 1e-3, 1e-6) for s in range(41)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        cosine_lr(101, 100, 1e-3, 1e-6)


def test_adam_matches_scalar_reference(rng):
    p = Parameter(rng.normal(size=5))
    opt = Adam([p])
    ref = p.data.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 101):
        g = np.sin(t * np.arange(1, 6)) + ref
        p.grad = g.copy()
        lr = cosine_lr(t - 1, 100, 1e-2, 1e-4)
        opt.step(lr)
        for i in range(5):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            mh = m[i] / (1 - 0.9**t)
            vh = v[i] / (1 - 0.999**t)
            ref[i] -= lr * mh / (math.sqrt(vh) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=0, atol=1e-12)


def test_build_train_config():
    cfg = build_train_config({"preset": "smoke", "epochs": "3", "channels_C": "4", "ode_N": "3", "shared_hfde": "true"})
    assert cfg.epochs == 3 and cfg.patch_size == 32
    assert cfg.model.channels_C == 4 and cfg.model.ode.N == 3 and cfg.model.shared_hfde
    assert build_train_config({"max_patches": "none"}).max_patches is None
    for bad in ({"bogus": "1"}, {"preset": "huge"}):
        with pytest.raises(DomainError):
            build_train_config(bad)
    with pytest.raises(ValueError):
        TrainConfig(lr_start=1e-6, lr_end=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(patch_size=30)


def test_full_preset():
    p = PRESETS["full"]
    assert (p.model.channels_C, p.model.ode.N, p.model.ode.T, p.epochs, p.patch_size) == (128, 4, 1.0, 20, 128)
    assert (p.lr_start, p.lr_end) == (1e-3, 1e-6)


def test_noise_differs_per_epoch_and_is_reproducible(rng):
    clean = rng.uniform(20, 235, (16, 16))
    a = noisy_patch(clean, 1.0, seed=0, epoch=1, index=3)
    b = noisy_patch(clean, 1.0, seed=0, epoch=1, index=3)
    c = noisy_patch(clean, 1.0, seed=0, epoch=2, index=3)
    assert np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])
    assert not np.array_equal(noisy_patch(clean, 1.0, 0, 1, 4)[1], a[1])


def test_smoke_run_outputs(smoke_run):
    cfg, res = smoke_run
    assert res.final_checkpoint.exists() and res.best_checkpoint.exists()
    with res.log_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == list(range(cfg.epochs + 1))
    assert float(rows[0]["lr"]) == cfg.lr_start
    assert float(rows[-1]["lr"]) == pytest.approx(cfg.lr_end)


def test_smoke_run_descends(smoke_run):
    _, res = smoke_run
    h = res.history
    assert h[-1]["train_l1"] < h[0]["train_l1"]
    assert h[-1]["val_l1"] < h[0]["val_l1"]


def test_training_is_deterministic(smoke_run, corpus, tmp_path):
    cfg, res = smoke_run
    again = train(replace(cfg, out_dir=str(tmp_path)), corpus)
    assert again.history == res.history
    a = res.model.state_dict()
    b = again.model.state_dict()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_checkpoint_reproduces_validation_loss(smoke_run, corpus):
    cfg, res = smoke_run
    val = corpus.subset(range(len(corpus) - cfg.val_images, len(corpus)))
    patches = list(make_patches(val, cfg.patch_size))[: cfg.max_val_patches]
    clean, noisy = validation_set(patches, cfg.looks, cfg.seed)
    final = SARFAH.load(res.final_checkpoint)
    l1, ps = evaluate(final, clean, noisy, cfg.batch_size)
    assert l1 == pytest.approx(res.history[-1]["val_l1"], abs=1e-12)
    best = SARFAH.load(res.best_checkpoint)
    assert evaluate(best, clean, noisy)[0] == pytest.approx(min(r["val_l1"] for r in res.history[1:]), abs=1e-12)


def test_divergence_is_reported(corpus, tmp_path):
    cfg = replace(PRESETS["smoke"], out_dir=str(tmp_path), epochs=1)
    model = SARFAH(cfg.model)
    model.cfre.project.bias.data[:] = np.nan
    with pytest.raises(TrainingDiverged, match=r"step 0 .*lr 0\.001.*grad-norm"):
        train(cfg, corpus, model=model)


def test_holdout_requires_enough_images(corpus, tmp_path):
    cfg = replace(PRESETS["smoke"], out_dir=str(tmp_path), val_images=len(corpus))
    with pytest.raises(DomainError):
        train(cfg, corpus)
