"""Central finite-difference gradient checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``.

    The floor covers gradients that are identically zero (for instance an
    attention key bias, which softmax cancels), where finite differences
    return rounding noise of order 1e-12.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(build: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-4,
                    projection_seed: int = 0) -> list[float]:
    """Relative error of the analytic gradient of ``sum(w * build(*inputs))`` for
    each input, with ``w`` a fixed random projection."""
    with Tape() as probe:
        out = build(*inputs)
    w = np.random.default_rng(projection_seed).normal(size=out.shape)

    def scalar() -> float:
        return float(np.sum(w * build(*inputs).values))

    for t in inputs:
        t.grad = None
    probe.backward(out, w)
    errors = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        errors.append(relative_error(analytic, numeric_grad(scalar, t.values, h)))
    return errors
