"""Full-reference (PSNR, SSIM, GSSIM, MAE, IICC) and no-reference (ENL, MoI,
MoR, EPD-ROA) despeckling quality indices on the [0, 255] intensity scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate, correlate1d

from .speckle import DomainError

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

__all__ = [
    "Region",
    "MetricReport",
    "MetricError",
    "psnr",
    "ssim",
    "gssim",
    "mae",
    "iicc",
    "enl",
    "moi",
    "mor",
    "epd_roa",
    "sobel_magnitude",
    "gaussian_window",
]


class MetricError(DomainError):
    """A metric is undefined for the given input."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned pixel box: columns ``x0..x0+width``, rows ``y0..y0+height``."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.width < 1 or self.height < 1:
            raise DomainError(f"invalid region {self}")

    @classmethod
    def parse(cls, text: str) -> Region:
        """Parse ``x0,y0,w,h``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise DomainError(f"region must be 'x0,y0,w,h', got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError as exc:
            raise DomainError(f"region must be 'x0,y0,w,h', got {text!r}") from exc

    @classmethod
    def full(cls, img) -> Region:
        h, w = np.shape(img)[-2:]
        return cls(0, 0, w, h)

    def crop(self, img) -> np.ndarray:
        a = np.asarray(img, dtype=np.float64)
        h, w = a.shape[-2:]
        if self.x0 + self.width > w or self.y0 + self.height > h:
            raise DomainError(f"region {self} exceeds {w}x{h} image")
        return a[..., self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width]

    def __str__(self):
        return f"{self.x0},{self.y0},{self.width},{self.height}"


@dataclass
class MetricReport:
    """Metric values by name; ``regions`` records the box each one used."""

    values: dict[str, float] = field(default_factory=dict)
    regions: dict[str, Region] = field(default_factory=dict)

    def add(self, name: str, value: float, region: Region | None = None):
        self.values[name] = float(value)
        if region is not None:
            self.regions[name] = region

    def unbounded(self) -> list[str]:
        return [k for k, v in self.values.items() if math.isinf(v)]

    def rows(self, image: str = "") -> list[tuple[str, str, str, str]]:
        """CSV rows ``image, metric, region, value``; infinities print as 'inf'."""
        out = []
        for name, v in self.values.items():
            reg = self.regions.get(name)
            out.append((image, name, str(reg) if reg else "", format_value(v)))
        return out


def format_value(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DomainError("empty image")
    return a, b


def psnr(a, b, peak: float = PEAK) -> float:
    """``10 log10(peak^2 / MSE)``; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1D Gaussian taps."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only fully covered window positions."""
    r = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=-2, mode="constant"), g, axis=-1, mode="constant")
    return y[..., r : x.shape[-2] - r, r : x.shape[-1] - r]


def ssim_map(a, b, peak: float = PEAK) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise DomainError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a, b, peak: float = PEAK) -> float:
    """Mean local SSIM (Gaussian window 11x11, sigma 1.5, K1=0.01, K2=0.03)."""
    return float(np.mean(ssim_map(a, b, peak)))


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_magnitude(img) -> np.ndarray:
    """Gradient magnitude from 3x3 Sobel responses (edges replicated)."""
    x = np.asarray(img, dtype=np.float64)
    gx = correlate(x, _SOBEL_X, mode="nearest")
    gy = correlate(x, _SOBEL_X.T, mode="nearest")
    return np.hypot(gx, gy)


def gssim(a, b, peak: float = PEAK) -> float:
    """SSIM of the Sobel gradient-magnitude maps."""
    a, b = _pair(a, b)
    return ssim(sobel_magnitude(a), sobel_magnitude(b), peak)


def iicc(a, b) -> float:
    """Pearson correlation of the two pixel populations."""
    a, b = _pair(a, b)
    da = a.ravel() - a.mean()
    db = b.ravel() - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise MetricError("correlation undefined for a constant image")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def enl(img, region: Region | None = None) -> float:
    """``mean^2 / variance`` over the region; ``inf`` for a constant region."""
    x = (region or Region.full(img)).crop(img)
    var = float(x.var())
    if var == 0:
        return math.inf
    m = float(x.mean())
    return m * m / var


def moi(denoised, noisy, region: Region | None = None) -> float:
    """Ratio of region means, denoised over noisy."""
    d, n = _pair(denoised, noisy)
    reg = region or Region.full(d)
    den = float(reg.crop(n).mean())
    if den == 0:
        raise MetricError("noisy region has zero mean")
    return float(reg.crop(d).mean()) / den


def mor(denoised, noisy) -> float:
    """Mean of the ratio image ``noisy / denoised`` over the full frame."""
    d, n = _pair(denoised, noisy)
    if (d <= 0).any():
        raise MetricError(f"denoised image must be strictly positive ({np.count_nonzero(d <= 0)} pixels are not)")
    return float(np.mean(n / d))


def epd_roa(denoised, noisy, region: Region | None = None, direction: str = "HD") -> float:
    """Edge preservation: ``sum |d1/d2| / sum |n1/n2|`` over adjacent pairs.

    ``HD`` pairs horizontally adjacent pixels (neighbouring columns), ``VD``
    vertically adjacent ones (neighbouring rows).
    """
    d, n = _pair(denoised, noisy)
    reg = region or Region.full(d)
    d, n = reg.crop(d), reg.crop(n)
    axis = {"HD": -1, "VD": -2}.get(direction.upper())
    if axis is None:
        raise DomainError(f"direction must be HD or VD, got {direction!r}")
    if d.shape[axis] < 2:
        raise DomainError("region needs at least 2 pixels along the chosen direction")
    if (d == 0).any() or (n == 0).any():
        raise MetricError("zero-valued pixel in a ratio denominator")
    if axis == -1:
        rd, rn = d[..., :-1] / d[..., 1:], n[..., :-1] / n[..., 1:]
    else:
        rd, rn = d[..., :-1, :] / d[..., 1:, :], n[..., :-1, :] / n[..., 1:, :]
    return float(np.abs(rd).sum() / np.abs(rn).sum())
