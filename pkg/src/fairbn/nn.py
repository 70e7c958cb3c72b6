"""Neural-network layers and a model builder with a norm-swap policy.

Layers cover dense affine maps, ReLU, standard batch normalization, and a
per-subgroup adaptive batch normalization that keeps separate affine
parameters and running statistics for every value of a binary sensitive
attribute while all other weights stay shared.  Models are MLP stacks with
optional residual blocks; under the adaptive policy the main-path norms
are swapped while the residual-branch norm stays standard unless
explicitly requested.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from fairbn import tensor as T
from fairbn.tensor import Tensor

NORM_POLICIES = ("none", "batch_norm", "fair_adabn")


@dataclass
class BatchNormParams:
    """Affine parameters and running statistics for one normalization layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, features: int, epsilon: float = 1e-5, momentum: float = 0.1):
        if features <= 0:
            raise ValueError(f"feature count must be positive, got {features}")
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        if not (0.0 < momentum <= 1.0):
            raise ValueError(f"momentum must lie in (0, 1], got {momentum}")
        return cls(
            gamma=Tensor(np.ones(features)),
            beta=Tensor(np.zeros(features)),
            running_mean=np.zeros(features),
            running_var=np.ones(features),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def features(self) -> int:
        return self.gamma.values.shape[0]


@dataclass
class GroupNormState:
    """One BatchNormParams per sensitive-attribute value."""

    per_group: dict[int, BatchNormParams]

    @classmethod
    def create(cls, features, attribute_values, epsilon=1e-5, momentum=0.1):
        return cls(
            per_group={
                int(a): BatchNormParams.create(features, epsilon, momentum)
                for a in sorted(attribute_values)
            }
        )


_batch_std_trace: list | None = None


def trace_batch_stds() -> "_BatchStdTrace":
    """Context manager recording the min batch std seen by train-mode norms.

    Near-degenerate batch variances amplify gradients by 1/std, which makes
    finite-difference verification ill-conditioned; the trace lets a test
    harness reject such draws.
    """
    return _BatchStdTrace()


class _BatchStdTrace:
    def __enter__(self):
        global _batch_std_trace
        self._prev = _batch_std_trace
        _batch_std_trace = []
        return self

    def __exit__(self, *exc):
        global _batch_std_trace
        self.stds = _batch_std_trace
        _batch_std_trace = self._prev
        return False

    def min_std(self) -> float:
        return min(self.stds) if self.stds else float("inf")


def batch_norm_forward(x: Tensor, params: BatchNormParams, train: bool) -> Tensor:
    """Normalize per feature by batch statistics (train) or running stats (eval).

    Train mode uses the biased batch variance, updates running stats as
    running <- (1 - momentum) * running + momentum * batch_stat, and lets
    gradients flow through the batch statistics.
    """
    if x.values.ndim != 2:
        raise T.ShapeError(f"batch norm expects [batch, features], got {x.values.shape}")
    if x.values.shape[1] != params.features:
        raise T.ShapeError(
            f"feature mismatch: input has {x.values.shape[1]} features, "
            f"params have {params.features}"
        )
    if train:
        if x.values.shape[0] < 2:
            raise ValueError(
                "train-mode batch norm needs a batch of at least 2 samples "
                f"(got {x.values.shape[0]}); the batch variance is undefined otherwise"
            )
        mu = x.mean(axis=0)
        var = (x - mu).square().mean(axis=0)
        std = (var + params.epsilon).sqrt()
        if _batch_std_trace is not None:
            _batch_std_trace.append(float(std.values.min()))
        out = params.gamma * ((x - mu) / std) + params.beta
        m = params.momentum
        params.running_mean = (1.0 - m) * params.running_mean + m * mu.values
        params.running_var = (1.0 - m) * params.running_var + m * var.values
        return out
    std = np.sqrt(params.running_var + params.epsilon)
    x_hat = (x - params.running_mean) / Tensor(std)
    return params.gamma * x_hat + params.beta


def fair_adabn_forward(
    x: Tensor, attrs, state: GroupNormState, train: bool
) -> Tensor:
    """Normalize each attribute subgroup with its own parameters and stats.

    The batch is partitioned by attribute value, each present partition is
    batch-normalized independently, and rows are reassembled in their
    original order.  Groups absent from the batch keep their running stats
    untouched.
    """
    attrs = np.asarray(attrs, dtype=int)
    if attrs.shape[0] != x.values.shape[0]:
        raise T.ShapeError(
            f"attribute count {attrs.shape[0]} does not match batch size {x.values.shape[0]}"
        )
    unknown = set(np.unique(attrs)) - set(state.per_group)
    if unknown:
        raise ValueError(
            f"unseen attribute value(s) {sorted(unknown)}; "
            f"known values are {sorted(state.per_group)}"
        )
    pieces = []
    order = []
    for a in sorted(state.per_group):
        idx = np.flatnonzero(attrs == a)
        if idx.size == 0:
            continue
        if train and idx.size < 2:
            raise ValueError(
                f"group {a} has a single sample in this train-mode batch; "
                "use stratified batching to guarantee at least 2 per group"
            )
        pieces.append(batch_norm_forward(T.take_rows(x, idx), state.per_group[a], train))
        order.append(idx)
    merged = T.concat(pieces, axis=0) if len(pieces) > 1 else pieces[0]
    perm = np.concatenate(order)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return T.take_rows(merged, inverse)


# -- model configuration and layers ------------------------------------------------


@dataclass
class ModelConfig:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    num_classes: int = 2
    norm_policy: str = "batch_norm"
    use_residual_blocks: bool = False
    swap_residual_branch_norm: bool = False
    epsilon: float = 1e-5
    momentum: float = 0.1

    def validate(self) -> None:
        if self.input_dim <= 0:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.norm_policy not in NORM_POLICIES:
            raise ValueError(
                f"unknown norm_policy '{self.norm_policy}'; choose from {NORM_POLICIES}"
            )
        if self.use_residual_blocks and not self.hidden_dims:
            raise ValueError("residual blocks require at least one hidden dim")


class Dense:
    """Affine map x @ W + b; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Tensor(np.zeros(out_dim))

    def forward(self, x: Tensor, attrs, train: bool) -> Tensor:
        return T.matmul(x, self.weight) + self.bias

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix: str):
        return iter(())


class Relu:
    def forward(self, x: Tensor, attrs, train: bool) -> Tensor:
        return T.relu(x)

    def named_parameters(self, prefix: str):
        return iter(())

    def named_buffers(self, prefix: str):
        return iter(())


class BatchNorm:
    def __init__(self, features: int, epsilon=1e-5, momentum=0.1):
        self.params = BatchNormParams.create(features, epsilon, momentum)

    def forward(self, x: Tensor, attrs, train: bool) -> Tensor:
        return batch_norm_forward(x, self.params, train)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.gamma", self.params.gamma
        yield f"{prefix}.beta", self.params.beta

    def named_buffers(self, prefix: str):
        yield f"{prefix}.running_mean", self.params
        yield f"{prefix}.running_var", self.params


class FairAdaBN:
    """Adaptive batch norm: one parameter/statistics set per subgroup."""

    def __init__(self, features: int, attribute_values, epsilon=1e-5, momentum=0.1):
        if not attribute_values:
            raise ValueError("adaptive batch norm requires a nonempty attribute-value set")
        self.state = GroupNormState.create(features, attribute_values, epsilon, momentum)

    def forward(self, x: Tensor, attrs, train: bool) -> Tensor:
        if attrs is None:
            raise ValueError("adaptive batch norm requires per-sample attribute values")
        return fair_adabn_forward(x, attrs, self.state, train)

    def named_parameters(self, prefix: str):
        for a, p in sorted(self.state.per_group.items()):
            yield f"{prefix}.g{a}.gamma", p.gamma
            yield f"{prefix}.g{a}.beta", p.beta

    def named_buffers(self, prefix: str):
        for a, p in sorted(self.state.per_group.items()):
            yield f"{prefix}.g{a}.running_mean", p
            yield f"{prefix}.g{a}.running_var", p


class ResidualBlock:
    """relu(norm(dense(h)) + shortcut(h)) with a projection shortcut.

    The shortcut branch keeps a standard norm under the adaptive policy
    unless `swap_residual_branch_norm` was set at build time.
    """

    def __init__(self, main_dense, main_norm, shortcut_dense, shortcut_norm):
        self.main_dense = main_dense
        self.main_norm = main_norm
        self.shortcut_dense = shortcut_dense
        self.shortcut_norm = shortcut_norm

    def forward(self, x: Tensor, attrs, train: bool) -> Tensor:
        main = self.main_dense.forward(x, attrs, train)
        if self.main_norm is not None:
            main = self.main_norm.forward(main, attrs, train)
        short = self.shortcut_dense.forward(x, attrs, train)
        if self.shortcut_norm is not None:
            short = self.shortcut_norm.forward(short, attrs, train)
        return T.relu(main + short)

    def named_parameters(self, prefix: str):
        yield from self.main_dense.named_parameters(f"{prefix}.main_dense")
        if self.main_norm is not None:
            yield from self.main_norm.named_parameters(f"{prefix}.main_norm")
        yield from self.shortcut_dense.named_parameters(f"{prefix}.shortcut_dense")
        if self.shortcut_norm is not None:
            yield from self.shortcut_norm.named_parameters(f"{prefix}.shortcut_norm")

    def named_buffers(self, prefix: str):
        if self.main_norm is not None:
            yield from self.main_norm.named_buffers(f"{prefix}.main_norm")
        if self.shortcut_norm is not None:
            yield from self.shortcut_norm.named_buffers(f"{prefix}.shortcut_norm")


class Model:
    """Ordered layer stack with a train/eval mode flag."""

    def __init__(self, layers: list, attribute_values: frozenset):
        self.layers = layers
        self.attribute_values = attribute_values
        self.training = True

    def train_mode(self) -> "Model":
        self.training = True
        return self

    def eval_mode(self) -> "Model":
        self.training = False
        return self

    def has_adaptive_norm(self) -> bool:
        return any(isinstance(l, FairAdaBN) for l in self._all_layers())

    def _all_layers(self):
        for layer in self.layers:
            if isinstance(layer, ResidualBlock):
                yield layer.main_dense
                if layer.main_norm is not None:
                    yield layer.main_norm
                yield layer.shortcut_dense
                if layer.shortcut_norm is not None:
                    yield layer.shortcut_norm
            else:
                yield layer

    def forward(self, x: Tensor, attrs=None) -> Tensor:
        if self.has_adaptive_norm() and attrs is None:
            raise ValueError(
                "this model contains adaptive batch norm layers; "
                "per-sample attribute values are required"
            )
        h = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers:
            h = layer.forward(h, attrs, self.training)
        return h

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"layers.{i}"))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def norm_affine_paths(self) -> set[str]:
        """Parameter paths of normalization gamma/beta (weight-decay exempt)."""
        return {
            name
            for name, _ in self.named_parameters()
            if name.endswith(".gamma") or name.endswith(".beta")
        }

    # -- serialization ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            out[name] = p.values.copy()
        for i, layer in enumerate(self.layers):
            for name, params in layer.named_buffers(f"layers.{i}"):
                stat = name.rsplit(".", 1)[1]
                out[name] = getattr(params, stat).copy()
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(arrays)
        if missing:
            raise ValueError(f"state dict is missing entries: {sorted(missing)}")
        for name, p in self.named_parameters():
            if arrays[name].shape != p.values.shape:
                raise ValueError(
                    f"shape mismatch for '{name}': {arrays[name].shape} vs {p.values.shape}"
                )
            p.values = arrays[name].copy()
        for i, layer in enumerate(self.layers):
            for name, params in layer.named_buffers(f"layers.{i}"):
                stat = name.rsplit(".", 1)[1]
                setattr(params, stat, arrays[name].copy())

    def parameter_count(self, include_stats: bool = False) -> int:
        n = sum(p.values.size for _, p in self.named_parameters())
        if include_stats:
            n += sum(
                arr.size
                for name, arr in self.state_dict().items()
                if name.endswith("running_mean") or name.endswith("running_var")
            )
        return n


def _make_norm(features: int, config: ModelConfig, attribute_values, adaptive: bool):
    if config.norm_policy == "none":
        return None
    if adaptive:
        return FairAdaBN(features, attribute_values, config.epsilon, config.momentum)
    return BatchNorm(features, config.epsilon, config.momentum)


def build_model(config: ModelConfig, attribute_values, seed: int = 0) -> Model:
    """Construct dense -> norm -> relu stacks plus a linear classifier head.

    With residual blocks each hidden stage computes
    relu(norm(dense(h)) + shortcut(h)); under the adaptive policy only the
    main-path norms are swapped, the shortcut norm staying standard unless
    `swap_residual_branch_norm` is set.
    """
    config.validate()
    attribute_values = frozenset(int(a) for a in attribute_values)
    if config.norm_policy == "fair_adabn" and not attribute_values:
        raise ValueError("fair_adabn policy requires a nonempty attribute-value set")
    rng = np.random.default_rng(seed)
    adaptive = config.norm_policy == "fair_adabn"
    layers: list = []
    prev = config.input_dim
    for h in config.hidden_dims:
        if config.use_residual_blocks:
            main_dense = Dense(prev, h, rng)
            main_norm = _make_norm(h, config, attribute_values, adaptive)
            shortcut_dense = Dense(prev, h, rng)
            shortcut_norm = _make_norm(
                h,
                config,
                attribute_values,
                adaptive and config.swap_residual_branch_norm,
            )
            layers.append(
                ResidualBlock(main_dense, main_norm, shortcut_dense, shortcut_norm)
            )
        else:
            layers.append(Dense(prev, h, rng))
            norm = _make_norm(h, config, attribute_values, adaptive)
            if norm is not None:
                layers.append(norm)
            layers.append(Relu())
        prev = h
    layers.append(Dense(prev, config.num_classes, rng))
    return Model(layers, attribute_values)


def model_forward(model: Model, x: Tensor, attrs=None) -> Tensor:
    """Raw logits; softmax is left to loss/metric consumers."""
    return model.forward(x, attrs)
