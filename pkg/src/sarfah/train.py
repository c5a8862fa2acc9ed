"""Training: on-the-fly speckle synthesis, L1 objective, Adam with cosine
annealing, per-epoch validation and checkpointing."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .data import Corpus, dihedral, make_patches
from .lfsp import ODEConfig
from .metrics import psnr
from .model import SARFAH, ModelConfig, _parse_value, loss_l1
from .speckle import DomainError, speckle_field

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "step", "lr", "train_l1", "val_l1", "val_psnr")
VAL_STREAM = 2**31 - 1  # seed-sequence key reserved for validation noise


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    batch_size: int = 2
    patch_size: int = 64
    looks: float = 1.0
    seed: int = 0
    max_patches: int | None = None
    val_images: int = 2
    max_val_patches: int = 16
    out_dir: str = "runs/latest"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise DomainError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.patch_size < 4 or self.patch_size % 4:
            raise DomainError(f"patch size must be a positive multiple of 4, got {self.patch_size}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if not self.looks > 0:
            raise DomainError(f"looks must be positive, got {self.looks}")

    def as_dict(self) -> dict[str, str]:
        out = {f.name: str(getattr(self, f.name)) for f in fields(self) if f.name != "model"}
        out.update(self.model.to_header())
        return out


PRESETS = {
    "desk": TrainConfig(),
    "smoke": TrainConfig(epochs=2, patch_size=32, batch_size=8, max_patches=16, val_images=1, max_val_patches=4,
                         model=ModelConfig(channels_C=8, ode=ODEConfig(N=2))),
    "full": TrainConfig(epochs=20, patch_size=128, batch_size=8,
                         model=ModelConfig(channels_C=128, ode=ODEConfig(T=1.0, N=4))),
}


def build_train_config(values: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Overlay flat ``key=value`` settings on ``base`` (default: the desk preset).

    Keys are TrainConfig or ModelConfig field names; ODE settings use the
    ``ode_`` prefix (``ode_T``, ``ode_N``, ``ode_randomized``).
    """
    base = base or PRESETS["desk"]
    if "preset" in values:
        name = values["preset"]
        if name not in PRESETS:
            raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[name]
    train_types = {f.name: f.type for f in fields(TrainConfig) if f.name != "model"}
    model_keys = {f.name for f in fields(ModelConfig) if f.name != "ode"} | {f"ode_{f.name}" for f in fields(ODEConfig)}
    train_kw, model_kw = {}, {}
    for key, value in values.items():
        if key == "preset":
            continue
        if key in train_types:
            typ = train_types[key]
            if key == "max_patches":
                train_kw[key] = None if value.strip().lower() in ("", "none") else int(value)
            else:
                train_kw[key] = _parse_value(value, typ)
        elif key in model_keys:
            model_kw[key] = value
        else:
            raise DomainError(f"unknown configuration key {key!r}")
    model = base.model
    if model_kw:
        header = model.to_header()
        header.update(model_kw)
        model = ModelConfig.from_header(header)
    return replace(base, model=model, **train_kw)


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """``lr_end + (lr_start - lr_end)(1 + cos(pi step / total)) / 2``."""
    if total_steps <= 0:
        return lr_start
    if not 0 <= step <= total_steps:
        raise DomainError(f"step {step} outside [0, {total_steps}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Adam with bias correction; the learning rate is passed per step."""

    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def patch_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Generator owned by one patch in one epoch."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def noisy_patch(clean: np.ndarray, looks: float, seed: int, epoch: int, index: int, augment: bool = True):
    """Dihedral transform and speckle for patch ``index`` in ``epoch``; returns (clean, noisy)."""
    rng = patch_rng(seed, epoch, index)
    x = dihedral(clean, int(rng.integers(8))) if augment else clean
    return x, x * speckle_field(x.shape, looks, rng)


def validation_set(patches: list[np.ndarray], looks: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = [noisy_patch(p, looks, seed, VAL_STREAM, i, augment=False) for i, p in enumerate(patches)]
    return np.stack([c for c, _ in pairs])[:, None], np.stack([n for _, n in pairs])[:, None]


def evaluate(model: SARFAH, clean: np.ndarray, noisy: np.ndarray, batch_size: int = 8) -> tuple[float, float]:
    """Mean L1 and mean per-patch PSNR of the eval-mode network output."""
    was = model.training
    model.eval()
    l1, ps = [], []
    try:
        with no_grad():
            for i in range(0, len(clean), batch_size):
                out = model(noisy[i : i + batch_size]).data
                ref = clean[i : i + batch_size]
                l1.extend(np.mean(np.abs(out - ref), axis=(1, 2, 3)))
                ps.extend(psnr(o, r) for o, r in zip(out, ref))
    finally:
        model.train(was)
    return float(np.mean(l1)), float(np.mean(ps))


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    history: list[dict[str, float]]
    model: SARFAH


def _split(corpus: Corpus, val_corpus: Corpus | None, val_images: int) -> tuple[Corpus, Corpus | None]:
    if val_corpus is not None or val_images <= 0:
        return corpus, val_corpus
    if len(corpus) <= val_images:
        raise DomainError(f"corpus of {len(corpus)} images cannot hold out {val_images} for validation")
    n = len(corpus)
    return corpus.subset(range(n - val_images)), corpus.subset(range(n - val_images, n))


def train(cfg: TrainConfig, corpus: Corpus, val_corpus: Corpus | None = None, model: SARFAH | None = None) -> TrainResult:
    """Fit the network to speckle-corrupted patches of ``corpus``.

    Without ``val_corpus`` the last ``cfg.val_images`` images are held out.
    Writes ``final.sfah``, ``best.sfah`` (lowest validation L1) and
    ``train_log.csv`` under ``cfg.out_dir``.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set = _split(corpus, val_corpus, cfg.val_images)

    patches = list(make_patches(train_set, cfg.patch_size))
    if not patches:
        raise DomainError("no training patches could be extracted")
    if cfg.max_patches is not None and len(patches) > cfg.max_patches:
        keep = np.random.default_rng(np.random.SeedSequence([cfg.seed, VAL_STREAM - 1])).choice(
            len(patches), cfg.max_patches, replace=False)
        patches = [patches[i] for i in np.sort(keep)]
    val_clean = val_noisy = None
    if val_set is not None:
        vp = list(make_patches(val_set, cfg.patch_size))[: cfg.max_val_patches]
        if vp:
            val_clean, val_noisy = validation_set(vp, cfg.looks, cfg.seed)

    model = model or SARFAH(cfg.model)
    model.train()
    params = model.parameters()
    opt = Adam(params)
    steps_per_epoch = math.ceil(len(patches) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    header = cfg.as_dict()
    log.info("training on %d patches, %d steps, %d parameters", len(patches), total, model.num_parameters())

    history: list[dict[str, float]] = []
    log_path = out_dir / "train_log.csv"
    best_path, final_path = out_dir / "best.sfah", out_dir / "final.sfah"
    best_val = math.inf
    step = 0

    def record(epoch, train_l1):
        nonlocal best_val
        val_l1, val_psnr = evaluate(model, val_clean, val_noisy, cfg.batch_size) if val_clean is not None else (math.nan, math.nan)
        lr = cosine_lr(step, total, cfg.lr_start, cfg.lr_end)
        row = dict(epoch=epoch, step=step, lr=lr, train_l1=train_l1, val_l1=val_l1, val_psnr=val_psnr)
        history.append(row)
        with log_path.open("a" if history[:-1] else "w", newline="") as fh:
            w = csv.writer(fh)
            if len(history) == 1:
                w.writerow(LOG_FIELDS)
            w.writerow([row[k] for k in LOG_FIELDS])
        log.info("epoch %d step %d lr %.3g train_l1 %.4f val_l1 %.4f val_psnr %.3f", epoch, step, lr, train_l1, val_l1, val_psnr)
        if epoch > 0 and val_l1 < best_val:
            best_val = val_l1
            model.save(best_path, {**header, "epoch": str(epoch)})

    def batch(epoch, order, b):
        idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        pairs = [noisy_patch(patches[i], cfg.looks, cfg.seed, epoch, int(i)) for i in idx]
        return np.stack([c for c, _ in pairs])[:, None], np.stack([n for _, n in pairs])[:, None]

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(patches))
        losses = []
        for b in range(steps_per_epoch):
            t0 = time.perf_counter()
            clean, noisy = batch(epoch, order, b)
            model.zero_grad()
            loss = loss_l1(model(noisy), clean)
            value = loss.item()
            loss.backward()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at step {step} (epoch {epoch}), "
                    f"lr {cosine_lr(step, total, cfg.lr_start, cfg.lr_end):.3g}, grad-norm {grad_norm(params):.6g}"
                )
            if step == 0:
                record(0, value)
            opt.step(cosine_lr(step, total, cfg.lr_start, cfg.lr_end))
            step += 1
            losses.append(value)
            log.debug("step %d loss %.4f (%.2fs)", step, value, time.perf_counter() - t0)
        record(epoch, float(np.mean(losses)))

    model.save(final_path, {**header, "epoch": str(cfg.epochs)})
    if not best_path.exists():
        model.save(best_path, {**header, "epoch": str(cfg.epochs)})
    model.eval()
    return TrainResult(final_path, best_path, log_path, history, model)
