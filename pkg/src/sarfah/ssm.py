"""Selective state-space machinery: ZOH discretisation, the linear recurrence
scan, the four-direction 2D scan and the visual state-space block.

The state matrix is diagonal, so ``exp(delta * A)`` and the ZOH input matrix
act entrywise on the state dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import exprel

from .autodiff import F, Module, Parameter, Tensor
from .autodiff.nn import Conv2d, LayerNorm2d
from .autodiff.tensor import ShapeError

ZOH_EPS = 1e-8


def zoh_discretize(A, B, delta):
    """Zero-order-hold discretisation of ``h' = A h + B x`` with diagonal ``A``.

    Returns ``(A_bar, B_bar)`` with ``A_bar = exp(delta A)`` and
    ``B_bar = (delta A)^-1 (exp(delta A) - 1) delta B``; entries with
    ``|delta A| < 1e-8`` use the limit ``B_bar = delta B``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ShapeError("delta must be positive")
    z = delta * A
    small = np.abs(z) < ZOH_EPS
    safe = np.where(small, 1.0, z)
    ratio = np.where(small, 1.0, np.expm1(safe) / safe)
    return np.exp(z), ratio * delta * B


def _exprel_grad(z: np.ndarray, exp_z: np.ndarray, exprel_z: np.ndarray) -> np.ndarray:
    """d/dz of (e^z - 1)/z, i.e. (e^z - exprel(z))/z, with a Taylor branch near 0."""
    small = np.abs(z) < 1e-3
    direct = (exp_z - exprel_z) / np.where(small, 1.0, z)
    series = 0.5 + z * (1 / 3 + z * (1 / 8 + z / 30))
    return np.where(small, series, direct)


def _scan_forward(u, delta, A, B, C, D):
    """Shapes: u, delta (M, Dm, L); A (M, Dm, S); B, C (M, S, L); D (M, Dm)."""
    M, Dm, L = u.shape
    S = A.shape[-1]
    # time-major layout keeps each step contiguous
    dt = delta.transpose(2, 0, 1)[..., None]  # (L, M, Dm, 1)
    z = dt * A[None]  # (L, M, Dm, S)
    a_bar = np.exp(z)
    phi = exprel(z)
    phi *= dt  # (exp(z) - 1) / A
    Bt = B.transpose(2, 0, 1)[:, :, None, :]  # (L, M, 1, S)
    hs = phi * Bt
    hs *= u.transpose(2, 0, 1)[..., None]
    for s in range(1, L):
        hs[s] += a_bar[s] * hs[s - 1]
    y = np.einsum("lmds,msl->mdl", hs, C) + D[..., None] * u
    return y, (z, a_bar, phi, hs)


def selective_scan(u, delta, A, B, C, D) -> Tensor:
    """Differentiable batched recurrence ``h_s = A_bar_s h_{s-1} + B_bar_s u_s``,
    ``y_s = C_s . h_s + D u_s`` with per-step ZOH discretisation.

    Shapes: ``u, delta`` (M, Dm, L); ``A`` (M, Dm, S); ``B, C`` (M, S, L);
    ``D`` (M, Dm).
    """
    ts = [t if isinstance(t, Tensor) else Tensor(t) for t in (u, delta, A, B, C, D)]
    ud, dd, Ad, Bd, Cd, Dd = (t.data for t in ts)
    M, Dm, L = ud.shape
    if dd.shape != ud.shape or Ad.shape[:2] != (M, Dm) or Bd.shape[::2] != (M, L) or Cd.shape != Bd.shape:
        raise ShapeError("inconsistent selective-scan operand shapes")
    y, (z, a_bar, phi, hs) = _scan_forward(ud, dd, Ad, Bd, Cd, Dd)

    def backward(gy):
        gyt = gy.transpose(2, 0, 1)  # (L, M, Dm)
        gC = np.einsum("lmds,lmd->msl", hs, gyt)
        gD = (gy * ud).sum(-1)
        # adjoint recurrence for the states
        dh = gyt[..., None] * Cd.transpose(2, 0, 1)[:, :, None, :]
        for s in range(L - 2, -1, -1):
            dh[s] += a_bar[s + 1] * dh[s + 1]
        dz = np.empty_like(dh)  # through A_bar = exp(z)
        dz[0] = 0.0
        np.multiply(dh[1:], hs[:-1], out=dz[1:])
        dz *= a_bar
        Bl = Bd.transpose(2, 0, 1)  # (L, M, S)
        gu = np.einsum("lmds,lmds,lms->mdl", dh, phi, Bl) + Dd[..., None] * gy
        d_bbar = dh  # gradient w.r.t. phi * B, scaled by u below
        d_bbar *= ud.transpose(2, 0, 1)[..., None]
        gB = np.einsum("lmds,lmds->msl", d_bbar, phi)
        d_phi = d_bbar
        d_phi *= Bl[:, :, None, :]
        dtl = dd.transpose(2, 0, 1)  # (L, M, Dm)
        gdelta = np.einsum("lmds,mds->lmd", dz, Ad) + np.einsum("lmds,lmds->lmd", d_phi, a_bar)
        g_rel = _exprel_grad(z, a_bar, phi / dtl[..., None])
        gA = np.einsum("lmds,lmd->mds", dz, dtl) + np.einsum("lmds,lmds,lmd->mds", d_phi, g_rel, dtl * dtl)
        return gu, gdelta.transpose(1, 2, 0), gA, gB, gC, gD

    return Tensor._from_op(y, ts, backward)


@dataclass
class SSMParams:
    """Parameters of a single-channel scan.

    ``A`` is the diagonal of the state matrix (length S); ``B`` and ``C`` are
    (L, S) per-step projections or (S,) constants; ``delta`` is per-step
    (length L) or scalar; ``D`` is the scalar skip.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    delta: np.ndarray | float

    def __post_init__(self):
        self.A = np.atleast_1d(np.asarray(self.A, dtype=np.float64))
        if self.A.size < 1:
            raise ShapeError("state dimension must be >= 1")
        if np.any(np.asarray(self.delta) <= 0):
            raise ShapeError("delta must be positive")


def ssm_scan(x, params: SSMParams) -> np.ndarray:
    """Run the discretised recurrence over a 1D sequence (``h_0 = 0``)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    L = x.size
    if L == 0:
        raise ShapeError("empty sequence")
    S = params.A.size
    B = np.broadcast_to(np.asarray(params.B, dtype=np.float64), (L, S))
    C = np.broadcast_to(np.asarray(params.C, dtype=np.float64), (L, S))
    delta = np.broadcast_to(np.asarray(params.delta, dtype=np.float64), (L,))
    y, _ = _scan_forward(
        x.reshape(1, 1, L),
        delta.reshape(1, 1, L),
        params.A.reshape(1, 1, S),
        B.T.reshape(1, S, L),
        C.T.reshape(1, S, L),
        np.array([[float(params.D)]]),
    )
    return y.ravel()


# ---------------------------------------------------------------------------
# 2D scanning

DIRECTIONS = ("row", "row_reversed", "col", "col_reversed")


def to_sequences(x) -> Tensor:
    """(N, C, H, W) -> (N, 4, C, H*W): row-major, reversed row-major,
    column-major, reversed column-major."""
    n, c, h, w = x.shape
    rows = x.reshape(n, c, h * w)
    cols = F.transpose(x, (0, 1, 3, 2)).reshape(n, c, h * w)
    return F.stack([rows, F.flip(rows, -1), cols, F.flip(cols, -1)], axis=1)


def from_sequences(y, h: int, w: int) -> Tensor:
    """Undo each traversal of :func:`to_sequences` and sum the four maps."""
    n, _, c, _ = y.shape
    rows = y[:, 0] + F.flip(y[:, 1], -1)
    cols = y[:, 2] + F.flip(y[:, 3], -1)
    cols = F.transpose(cols.reshape(n, c, w, h), (0, 1, 3, 2))
    return rows.reshape(n, c, h, w) + cols


class SS2D(Module):
    """Four directional selective scans with direction-specific parameters.

    Per token, ``B`` and ``C`` are linear projections of the input and
    ``delta = softplus(W x + b)``; ``A = -exp(a_log)`` keeps the diagonal
    state matrix negative.
    """

    def __init__(self, channels: int, state: int = 8, rng=None):
        rng = np.random.default_rng(rng)
        K = len(DIRECTIONS)
        scale = 1.0 / np.sqrt(channels)
        self.w_b = Parameter(rng.normal(0.0, scale, (K, state, channels)))
        self.w_c = Parameter(rng.normal(0.0, scale, (K, state, channels)))
        self.w_dt = Parameter(rng.normal(0.0, 0.1 * scale, (K, channels, channels)))
        dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), (K, channels)))
        self.b_dt = Parameter(dt0 + np.log(-np.expm1(-dt0)))  # softplus^-1
        self.a_log = Parameter(np.log(np.tile(np.arange(1, state + 1, dtype=np.float64), (K, channels, 1))))
        self.d = Parameter(np.ones((K, channels)))
        self.channels = channels
        self.state = state

    def forward(self, x):
        n, c, h, w = x.shape
        K, S = len(DIRECTIONS), self.state
        xs = to_sequences(x)  # (N, K, C, L)
        L = h * w
        B = F.einsum("ksc,nkcl->nksl", self.w_b, xs)
        C = F.einsum("ksc,nkcl->nksl", self.w_c, xs)
        dt = F.softplus(F.einsum("kec,nkcl->nkel", self.w_dt, xs) + self.b_dt.reshape(1, K, c, 1))
        A = F.broadcast_to(-F.exp(self.a_log), (n, K, c, S)).reshape(n * K, c, S)
        D = F.broadcast_to(self.d, (n, K, c)).reshape(n * K, c)
        y = selective_scan(
            xs.reshape(n * K, c, L), dt.reshape(n * K, c, L), A,
            B.reshape(n * K, S, L), C.reshape(n * K, S, L), D,
        )
        return from_sequences(y.reshape(n, K, c, L), h, w)


class VSSBlock(Module):
    """Visual state-space block.

    ``m = LN(Conv1x1(f) + pos)``; gate ``SiLU(FC(m))``; scan branch
    ``LN(SS2D(SiLU(FC(DWConv(m)))))``; ``v = FC(gate * scan) + m``;
    output ``v + FFN(v)`` with a GELU FFN.  The positional embedding lives on
    a fixed ``embed_size`` grid and is bilinearly resized to the input.
    """

    def __init__(self, channels: int, state: int = 8, embed_size: int = 8, ffn_ratio: int = 2, rng=None):
        rng = np.random.default_rng(rng)
        c = channels
        self.proj = Conv2d(c, c, 1, rng=rng, init="linear")
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, (1, c, embed_size, embed_size)))
        self.norm_in = LayerNorm2d(c)
        self.gate = Conv2d(c, c, 1, rng=rng, init="linear")
        self.dwconv = Conv2d(c, c, 3, groups=c, rng=rng, init="linear")
        self.scan_in = Conv2d(c, c, 1, rng=rng, init="linear")
        self.ss2d = SS2D(c, state, rng=rng)
        self.norm_scan = LayerNorm2d(c)
        self.out_proj = Conv2d(c, c, 1, rng=rng, init="zeros")
        self.ffn_in = Conv2d(c, ffn_ratio * c, 1, rng=rng, init="linear")
        self.ffn_out = Conv2d(ffn_ratio * c, c, 1, rng=rng, init="zeros")

    def forward(self, f):
        h, w = f.shape[-2:]
        m = self.norm_in(self.proj(f) + F.resize_bilinear(self.pos_embed, (h, w)))
        gate = F.silu(self.gate(m))
        scan = self.norm_scan(self.ss2d(F.silu(self.scan_in(self.dwconv(m)))))
        v = self.out_proj(gate * scan) + m
        return v + self.ffn_out(F.gelu(self.ffn_in(v)))
