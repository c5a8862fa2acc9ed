"""Low-frequency denoiser: a learned vector field integrated by a
fixed-step Euler solver with jittered evaluation times during training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import F, Module, ModuleList
from .autodiff.nn import ConvBNReLU, Identity
from .attention import DASS
from .speckle import DomainError


@dataclass(frozen=True)
class ODEConfig:
    """Horizon ``T``, step count ``N`` and whether training jitters the
    field-evaluation time inside each step."""

    T: float = 1.0
    N: int = 4
    randomized: bool = True

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"ODE horizon must be positive, got T={self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"ODE step count must be a positive integer, got N={self.N}")


def ode_solve(u0, field, cfg: ODEConfig, seed=None, randomized: bool | None = None):
    """Integrate ``du/dt = field(u, t)`` from 0 to ``T`` with ``N`` Euler steps.

    Step ``i`` evaluates the field at ``tau_i = t_i + xi_i h`` with
    ``xi_i ~ U[0, 1)`` when randomized, else at ``t_i``.  ``u0`` may be an
    ndarray or a Tensor; with Tensors the unrolled steps are differentiable.
    ``randomized`` overrides ``cfg.randomized``.
    """
    if cfg.N < 1:
        raise DomainError("ODE step count must be >= 1")
    jitter = cfg.randomized if randomized is None else randomized
    rng = np.random.default_rng(seed) if jitter else None
    h = cfg.T / cfg.N
    u = u0
    for i in range(cfg.N):
        tau = i * h + (rng.random() * h if jitter else 0.0)
        u = u + h * field(u, tau)
    return u


class LFSPField(Module):
    """Seven Conv-BN-ReLU blocks on ``[u || t]`` with DASS after blocks 3 and 6.

    The last block omits the ReLU so the derivative estimate can take
    either sign.
    """

    DASS_AFTER = (3, 6)

    def __init__(self, channels: int, use_dass: bool = True, use_dynamic: bool = True, blocks: int = 7, rng=None):
        rng = np.random.default_rng(rng)
        layers = []
        for i in range(1, blocks + 1):
            layers.append(ConvBNReLU(channels + 1 if i == 1 else channels, channels, relu=i < blocks, rng=rng))
            if i in self.DASS_AFTER:
                layers.append(DASS(channels, use_dynamic=use_dynamic, rng=rng) if use_dass else Identity())
        self.layers = ModuleList(layers)

    def forward(self, u, t: float):
        n, _, h, w = u.shape
        x = F.concat([u, np.full((n, 1, h, w), float(t))], axis=1)
        for layer in self.layers:
            x = layer(x)
        return x


class LFSPODE(Module):
    """Neural-ODE block ``u(T) = u(0) + int_0^T field(u, t) dt``.

    With ``use_node=False`` the field is applied once, ``field(u, 0)``, as a
    plain feed-forward denoiser.
    """

    def __init__(self, channels: int, ode: ODEConfig = ODEConfig(), use_dass: bool = True,
                 use_dynamic: bool = True, use_node: bool = True, rng=None):
        rng = np.random.default_rng(rng)
        self.field = LFSPField(channels, use_dass=use_dass, use_dynamic=use_dynamic, rng=rng)
        self.ode = ode
        self.use_node = use_node
        self._jitter_rng = np.random.default_rng(rng.integers(2**63))

    def forward(self, u):
        if not self.use_node:
            return self.field(u, 0.0)
        jitter = self.ode.randomized and self.training
        seed = self._jitter_rng.integers(2**63) if jitter else None
        return ode_solve(u, self.field, self.ode, seed=seed, randomized=jitter)
