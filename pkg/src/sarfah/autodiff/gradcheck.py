"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a| + |n|, floor)`` on the vectors of checked entries."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


def check_gradients(
    loss_fn,
    tensors: dict[str, Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng=None,
) -> list[GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` takes no arguments and must recompute the scalar loss from
    the current contents of ``tensors``.  At most ``max_entries`` randomly
    chosen entries per tensor are perturbed.
    """
    rng = np.random.default_rng(rng)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    results = []
    for name, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric[j] = (up - down) / (2 * h)
        results.append(GradCheckResult(name, rel_error(analytic.reshape(-1)[idx], numeric), len(idx)))
    return results
