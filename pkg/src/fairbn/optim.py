"""Parameter-update rules: SGD and AdamW with decoupled weight decay.

Optimizers own their moment buffers and step counter; gradients are left
untouched so the training loop stays in charge of zeroing them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from fairbn.tensor import Tensor


class MissingGradError(RuntimeError):
    """A parameter reached the optimizer without a populated gradient."""


@dataclass
class AdamWConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step_count: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.step_count < 0:
            raise ValueError(f"step_count must be nonnegative, got {self.step_count}")


@dataclass
class OptimizerState:
    """Per-parameter first/second moment buffers, keyed by parameter path."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _require_grad(name: str, p: Tensor) -> np.ndarray:
    if p.grad is None:
        raise MissingGradError(f"parameter '{name}' has no gradient; run backward first")
    return p.grad


def adamw_step(
    named_params: Sequence[tuple[str, Tensor]],
    state: OptimizerState,
    cfg: AdamWConfig,
    decay_exempt: Iterable[str] = (),
) -> None:
    """One AdamW update: bias-corrected adaptive step plus decoupled decay.

    The decay term theta <- theta * (1 - lr * wd) uses the pre-update
    parameter value and is skipped for paths in `decay_exempt`.
    """
    cfg.validate()
    exempt = set(decay_exempt)
    cfg.step_count += 1
    t = cfg.step_count
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name, p in named_params:
        g = _require_grad(name, p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        else:
            v = state.v[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if cfg.weight_decay != 0.0 and name not in exempt:
            p.values -= cfg.learning_rate * cfg.weight_decay * p.values
        p.values -= update


def sgd_step(named_params: Sequence[tuple[str, Tensor]], learning_rate: float) -> None:
    """Plain gradient descent: theta <- theta - lr * grad."""
    for name, p in named_params:
        g = _require_grad(name, p)
        p.values -= learning_rate * g


class AdamW:
    """AdamW over a fixed set of named parameters.

    Normalization affine parameters are conventionally exempt from weight
    decay; pass their paths via `decay_exempt`.
    """

    def __init__(
        self,
        named_params: Sequence[tuple[str, Tensor]],
        cfg: AdamWConfig | None = None,
        decay_exempt: Iterable[str] = (),
    ):
        self.named_params = list(named_params)
        self.cfg = cfg if cfg is not None else AdamWConfig()
        self.cfg.validate()
        self.state = OptimizerState()
        self.decay_exempt = set(decay_exempt)

    def step(self) -> None:
        adamw_step(self.named_params, self.state, self.cfg, self.decay_exempt)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "step_count": np.asarray(float(self.cfg.step_count))
        }
        for name, _ in self.named_params:
            if name in self.state.m:
                out[f"m.{name}"] = self.state.m[name].copy()
                out[f"v.{name}"] = self.state.v[name].copy()
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        self.cfg.step_count = int(arrays["step_count"].reshape(()))
        for name, p in self.named_params:
            key = f"m.{name}"
            if key in arrays:
                if arrays[key].shape != p.values.shape:
                    raise ValueError(
                        f"moment shape mismatch for '{name}': "
                        f"{arrays[key].shape} vs {p.values.shape}"
                    )
                self.state.m[name] = arrays[key].copy()
                self.state.v[name] = arrays[f"v.{name}"].copy()


class SGD:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], learning_rate: float):
        self.named_params = list(named_params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        sgd_step(self.named_params, self.learning_rate)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()
