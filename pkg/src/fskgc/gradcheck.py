"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import NonFiniteError, Tensor, debug_mode, precision


@dataclass
class GradCheckReport:
    max_rel_errors: list
    tol: float
    worst_index: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_errors)

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_errors) if self.max_rel_errors else 0.0

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e})"


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-6,
    analytic: Sequence[np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    ``f`` is a closure over ``inputs``; each input is perturbed in place.  The
    relative error uses ``max(|a|, |n|, 1)`` as denominator so that entries
    with tiny gradients are compared absolutely.  ``analytic`` overrides the
    backward pass (used for negative controls).
    """
    for x in inputs:
        if x.data.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit inputs")
    with precision(np.float64):
        if analytic is None:
            for x in inputs:
                x.requires_grad = True
                x.grad = None
            with debug_mode():
                out = f()
            if out.size != 1:
                raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
            out.backward()
            analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

        errors, worst = [], []
        for x, a in zip(inputs, analytic):
            numeric = np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            nflat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                try:
                    with debug_mode():
                        fp = float(f().data)
                    flat[i] = orig - eps
                    with debug_mode():
                        fm = float(f().data)
                except NonFiniteError as exc:
                    raise NonFiniteError(exc.op, f"non-finite intermediate in op '{exc.op}' during grad_check") from exc
                finally:
                    flat[i] = orig
                nflat[i] = (fp - fm) / (2 * eps)
            err = _rel_err(np.asarray(a), numeric)
            errors.append(float(err.max()) if err.size else 0.0)
            worst.append(int(err.argmax()) if err.size else -1)
    return GradCheckReport(errors, tol, worst)
