"""Central finite-difference gradient checks.

``f`` must be deterministic: the numeric derivative re-evaluates it twice per
checked coordinate, and any randomness inside ``f`` makes the result meaningless.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import ContractError, Tensor, backward, no_grad


def _default_eps(dtype) -> float:
    return 1e-6 if np.dtype(dtype) == np.float64 else 1e-3


def _analytic(f: Callable[..., Tensor], xs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in xs:
        x.requires_grad = True
        x.grad = None
    loss = f(*xs)
    if loss.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
    backward(loss)
    out = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]
    for x in xs:
        x.grad = None
    return out


def _worst(analytic: list[np.ndarray], f: Callable[..., Tensor], xs: Sequence[Tensor],
           eps: float | None, max_coords: int | None, seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, ga in zip(xs, analytic):
        step = _default_eps(x.dtype) if eps is None else eps
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = ga.reshape(-1)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                hi = flat[i]
                up = float(f(*xs).data)
                flat[i] = orig - step
                lo = flat[i]
                down = float(f(*xs).data)
            flat[i] = orig
            # divide by the step actually realized in this dtype
            numeric = (up - down) / float(hi - lo)
            err = abs(float(gflat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def grad_check(f: Callable[..., Tensor], *xs: Tensor, eps: float | None = None,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic − numeric| / max(1, |numeric|).

    ``xs`` are perturbed in place (and restored); ``f(*xs)`` must return a
    scalar tensor. With ``max_coords`` only that many randomly chosen
    coordinates per input are checked.
    """
    if not xs:
        raise ContractError("grad_check needs at least one input tensor")
    return _worst(_analytic(f, xs), f, xs, eps, max_coords, seed)


def grad_check_reference(f: Callable[..., Tensor], xs: Sequence[Tensor], f_ref: Callable[..., Tensor],
                         xs_ref: Sequence[Tensor], eps: float | None = None, max_coords: int | None = None,
                         seed: int = 0) -> float:
    """Analytic gradients of ``f`` at ``xs`` against central differences of ``f_ref`` at ``xs_ref``.

    Meant for low-precision graphs: ``f_ref``/``xs_ref`` are a float64 copy of
    the same computation, so the numeric side can use a tiny step without
    drowning in rounding noise. Shapes must correspond one to one.
    """
    if len(xs) != len(xs_ref) or any(a.shape != b.shape for a, b in zip(xs, xs_ref)):
        raise ContractError("reference inputs must mirror the checked inputs")
    return _worst(_analytic(f, xs), f_ref, xs_ref, eps, max_coords, seed)
