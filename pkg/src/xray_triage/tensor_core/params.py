"""Trainable parameters and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteGradientError, ShapeError


@dataclass
class AdamHyper:
    """Adam hyperparameters; beta/eps defaults are the standard ones."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0,1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class Parameter:
    """A named trainable tensor with its gradient slot and Adam moments.

    ``value``, ``grad``, ``adam_m`` and ``adam_v`` always share one shape.
    ``frozen`` parameters are skipped by the optimizer and the gradient checker.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0
    frozen: bool = False

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        for label, arr in (("grad", self.grad), ("adam_m", self.adam_m), ("adam_v", self.adam_v)):
            if arr.shape != self.value.shape:
                raise ShapeError(
                    f"parameter {self.name!r}: {label} shape {arr.shape} "
                    f"!= value shape {self.value.shape}"
                )

    def zero_grad(self):
        self.grad[...] = 0

    def clone(self, dtype=None) -> "Parameter":
        dt = dtype or self.value.dtype
        return Parameter(
            name=self.name,
            value=self.value.astype(dt),
            grad=self.grad.astype(dt),
            adam_m=self.adam_m.astype(dt),
            adam_v=self.adam_v.astype(dt),
            step_count=self.step_count,
            frozen=self.frozen,
        )


def adam_step(param: Parameter, hyper: AdamHyper) -> Parameter:
    """Apply one bias-corrected Adam update to ``param.value`` in place.

    The gradient is left untouched; the caller zeroes it. Frozen parameters
    are returned unchanged.
    """
    if param.frozen:
        return param
    if not np.isfinite(param.grad).all():
        raise NonFiniteGradientError(param.name, float(np.abs(param.grad).max()))
    param.step_count += 1
    t = param.step_count
    g = param.grad
    param.adam_m[...] = hyper.beta1 * param.adam_m + (1 - hyper.beta1) * g
    param.adam_v[...] = hyper.beta2 * param.adam_v + (1 - hyper.beta2) * (g * g)
    m_hat = param.adam_m / (1 - hyper.beta1**t)
    v_hat = param.adam_v / (1 - hyper.beta2**t)
    param.value[...] = param.value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return param
