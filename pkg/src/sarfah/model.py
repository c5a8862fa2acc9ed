"""The full despeckling network: Haar split, per-band lifting, LFSP-ODE on
the approximation band, HFDE on the detail bands, cross-frequency fusion
and inverse Haar synthesis."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import F, Module, Tensor, no_grad
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.nn import BatchNorm2d, Conv2d, ConvBNReLU
from .hfde import HFDE, DeformPlacement
from .lfsp import LFSPODE, ODEConfig
from .speckle import DomainError
from .wavelet import SubBands, dwt2_haar, idwt2_haar

SCALE = 255.0


@dataclass(frozen=True)
class ModelConfig:
    channels_C: int = 16
    ode: ODEConfig = field(default_factory=lambda: ODEConfig(T=1.0, N=2))
    shared_hfde: bool = False
    deforconv_placement: str = "decoder"
    dass_in_lfsp: bool = True
    dass_in_hfde: bool = True
    use_dynamic: bool = True
    use_node: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.channels_C < 2 or self.channels_C % 2:
            raise DomainError(f"channels_C must be a positive even integer, got {self.channels_C}")
        DeformPlacement(self.deforconv_placement)

    def to_header(self) -> dict[str, str]:
        """Flat ``key=value`` form; ODE fields are prefixed ``ode_``."""
        out = {}
        for k, v in asdict(self).items():
            if k == "ode":
                out.update({f"ode_{kk}": str(vv) for kk, vv in v.items()})
            else:
                out[k] = str(v)
        return out

    @classmethod
    def from_header(cls, header: dict[str, str]) -> ModelConfig:
        ode_kw, kw = {}, {}
        ode_types = {f.name: f.type for f in fields(ODEConfig)}
        own_types = {f.name: f.type for f in fields(cls)}
        for key, value in header.items():
            if key.startswith("ode_") and key[4:] in ode_types:
                ode_kw[key[4:]] = _parse_value(value, ode_types[key[4:]])
            elif key in own_types and key != "ode":
                kw[key] = _parse_value(value, own_types[key])
        return cls(ode=ODEConfig(**ode_kw), **kw)


def _parse_value(text: str, typ):
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if name == "int":
        return int(text)
    if name == "float":
        return float(text)
    return text


def _haar_analysis(x: np.ndarray) -> np.ndarray:
    return dwt2_haar(x).stack()[..., 0, :, :, :]


def _haar_synthesis(coeffs) -> Tensor:
    """Differentiable inverse Haar transform of (N, 4, h, w) coefficients.

    The transform is orthonormal, so its adjoint is the forward transform.
    """

    def fwd(c):
        return idwt2_haar(SubBands(c[:, 0], c[:, 1], c[:, 2], c[:, 3]))[:, None]

    def bwd(g, c):
        return (dwt2_haar(g[:, 0]).stack(),)

    return F.custom_op(fwd, bwd, coeffs)


class CFRE(Module):
    """Cross-frequency fusion: 1x1 conv over the 4C concatenation, one
    residual block (Conv-BN-ReLU-Conv-BN plus identity, then ReLU) and a 1x1
    projection to the four sub-band planes."""

    def __init__(self, channels: int, rng=None):
        rng = np.random.default_rng(rng)
        c4 = 4 * channels
        self.fuse = Conv2d(c4, channels, 1, rng=rng)
        self.res1 = ConvBNReLU(channels, channels, rng=rng)
        self.res2_conv = Conv2d(channels, channels, 3, bias=False, rng=rng)
        self.res2_bn = BatchNorm2d(channels)
        self.project = Conv2d(channels, 4, 1, rng=rng, init="linear")

    def forward(self, x):
        f = self.fuse(x)
        f = F.relu(f + self.res2_bn(self.res2_conv(self.res1(f))))
        return self.project(f)


class SARFAH(Module):
    """Frequency-adaptive despeckler for (N, 1, H, W) intensity images in
    [0, 255] with H and W divisible by 4."""

    BANDS = ("ll", "lh", "hl", "hh")

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels_C
        self.cfg = cfg
        self.lift_ll = Conv2d(1, c, 3, rng=rng)
        self.lift_lh = Conv2d(1, c, 3, rng=rng)
        self.lift_hl = Conv2d(1, c, 3, rng=rng)
        self.lift_hh = Conv2d(1, c, 3, rng=rng)
        self.lfsp = LFSPODE(c, cfg.ode, use_dass=cfg.dass_in_lfsp, use_dynamic=cfg.use_dynamic,
                            use_node=cfg.use_node, rng=rng)
        make = lambda: HFDE(c, cfg.deforconv_placement, use_dass=cfg.dass_in_hfde,  # noqa: E731
                            use_dynamic=cfg.use_dynamic, rng=rng)
        self.hfde_lh = make()
        self.hfde_hl = self.hfde_lh if cfg.shared_hfde else make()
        self.hfde_hh = self.hfde_lh if cfg.shared_hfde else make()
        self.cfre = CFRE(c, rng=rng)

    def forward(self, noisy):
        x = noisy.data if isinstance(noisy, Tensor) else np.asarray(noisy, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise DomainError(f"expected (N, 1, H, W) input, got shape {x.shape}")
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise DomainError(f"image size {h}x{w} must be divisible by 4")
        bands = _haar_analysis(x / SCALE)  # (N, 4, h/2, w/2)
        planes = [bands[:, i : i + 1] for i in range(4)]
        ll = self.lfsp(self.lift_ll(planes[0]))
        lh = self.hfde_lh(self.lift_lh(planes[1]))
        hl = self.hfde_hl(self.lift_hl(planes[2]))
        hh = self.hfde_hh(self.lift_hh(planes[3]))
        coeffs = self.cfre(F.concat([ll, lh, hl, hh], axis=1))
        return _haar_synthesis(coeffs) * SCALE

    # -- persistence ---------------------------------------------------------
    def save(self, path, extra_header: dict[str, str] | None = None) -> Path:
        header = self.cfg.to_header()
        header.update(extra_header or {})
        return save_checkpoint(path, self.state_dict(), header)

    @classmethod
    def load(cls, path) -> SARFAH:
        tensors, header = load_checkpoint(path)
        model = cls(ModelConfig.from_header(header))
        model.load_state_dict(tensors)
        return model.eval()


def loss_l1(pred, clean) -> Tensor:
    """Mean absolute deviation over all pixels and batch items."""
    p = pred if isinstance(pred, Tensor) else Tensor(pred)
    c = clean if isinstance(clean, Tensor) else Tensor(clean)
    if p.shape != c.shape:
        raise DomainError(f"shape mismatch {p.shape} vs {c.shape}")
    return F.l1_loss(p, c)


def param_count(cfg: ModelConfig) -> int:
    """Number of trainable scalars of the network built from ``cfg``."""
    return SARFAH(cfg).num_parameters()


def despeckle(model: SARFAH, image: np.ndarray, floor: float | None = 1.0) -> np.ndarray:
    """Run the network in eval mode on a single (H, W) image.

    The estimate is clamped below at ``floor`` (one gray level by default)
    so it is a valid positive intensity; ``floor=None`` returns the raw
    network output.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DomainError(f"expected a 2D image, got shape {img.shape}")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(img[None, None]).data[0, 0]
    finally:
        model.train(was_training)
    return out if floor is None else np.maximum(out, floor)


__all__ = ["ModelConfig", "SARFAH", "CFRE", "loss_l1", "param_count", "despeckle"]
