"""Experiment orchestration: train, select on validation, evaluate, repeat.

Methods:

* vanilla     - shared model, standard norms, no disparity penalty
* resampling  - vanilla on a train split rebalanced across attribute groups
* ind         - one independent model per group, predictions pooled for
                evaluation
* fairadabn   - shared model with adaptive norms and the disparity penalty

Each seed owns its model, optimizer, batching stream, and split, so runs
are bitwise reproducible and methods sharing a seed see the same split.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from fairbn import losses
from fairbn.config import DataSourceConfig, ExperimentConfig
from fairbn.data import (
    Dataset,
    generate_synthetic,
    load_table,
    resample_balanced,
    split,
    stratified_batches,
)
from fairbn.fairness import (
    FateConfig,
    FateReport,
    MetricsReport,
    accuracy_gap,
    confusion,
    fairness_criteria,
    fate,
    utility_metrics,
)
from fairbn.nn import Model, ModelConfig, build_model
from fairbn.optim import AdamW
from fairbn.tensor import Tensor

logger = logging.getLogger(__name__)

# Seed-stream tags so each consumer of a run seed draws independently.
_TAG_SPLIT = 11
_TAG_MODEL = 23
_TAG_BATCH = 37
_TAG_RESAMPLE = 41


@dataclass
class SeedRunRecord:
    seed: int
    metrics: MetricsReport
    best_epoch: int
    train_loss_curve: list[float]
    val_acc_curve: list[float]
    test_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    test_preds: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    test_attrs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    test_probs: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))


@dataclass
class RunResult:
    method: str
    label: str
    records: list[SeedRunRecord]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    provenance: str = ""

    def aggregate(self) -> None:
        keys = self.records[0].metrics.as_dict().keys()
        for k in keys:
            vals = np.array([r.metrics.as_dict()[k] for r in self.records])
            self.mean[k] = float(vals.mean())
            self.std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0


@dataclass
class EvalOutcome:
    metrics: MetricsReport
    preds: np.ndarray
    probs: np.ndarray


def build_dataset(data_cfg: DataSourceConfig) -> Dataset:
    if data_cfg.source == "synthetic":
        return generate_synthetic(data_cfg.synthetic)
    if data_cfg.table_path is None or data_cfg.table_schema is None:
        raise ValueError("table source requires data.table.path and data.table.features")
    ds, _ = load_table(
        data_cfg.table_path, data_cfg.table_schema, data_cfg.table_num_classes
    )
    return ds


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(model: Model, ds: Dataset, need_attrs: bool) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode predictions and probabilities for a whole dataset."""
    model.eval_mode()
    logits = model.forward(Tensor(ds.X), ds.a if need_attrs else None)
    probs = _softmax_rows(logits.values)
    return probs.argmax(axis=1), probs


def evaluate_arrays(
    preds, labels, attrs, probs, num_classes: int, eodd_aggregation: str = "max"
) -> MetricsReport:
    """Assemble a MetricsReport from raw prediction arrays."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    attrs = np.asarray(attrs, dtype=int)
    util = utility_metrics(preds, labels, num_classes)
    crit = fairness_criteria(confusion(preds, labels, attrs, num_classes), eodd_aggregation)
    n0 = int(np.sum(attrs == 0))
    n1 = int(np.sum(attrs == 1))
    sd_soft = 0.0
    if probs is not None and n0 > 0 and n1 > 0:
        m0 = probs[attrs == 0].mean(axis=0)
        m1 = probs[attrs == 1].mean(axis=0)
        sd_soft = float(((m0 - m1) ** 2).sum())
    return MetricsReport(
        accuracy=util.accuracy,
        precision=util.precision,
        recall=util.recall,
        f1=util.f1,
        eopp0=crit.eopp0,
        eopp1=crit.eopp1,
        eodd=crit.eodd,
        accuracy_gap=accuracy_gap(preds, labels, attrs),
        n_samples_a0=n0,
        n_samples_a1=n1,
        sd_soft=sd_soft,
        sd_hard=losses.statistical_disparity_hard(preds, attrs, num_classes),
    )


def _val_accuracy(model: Model, ds: Dataset, need_attrs: bool) -> float:
    preds, _ = predict(model, ds, need_attrs)
    return float(np.mean(preds == ds.y))


def _plain_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled full batches; a trailing batch below 2 samples is dropped."""
    rng = np.random.default_rng([seed, epoch, 0xA7])
    perm = rng.permutation(n)
    out = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if out and out[-1].size < 2:
        out.pop()
    return out


def _train_single(
    cfg: ExperimentConfig,
    model: Model,
    train_ds: Dataset,
    val_ds: Dataset,
    seed: int,
    alpha: float,
    stratify: bool,
):
    """Train one model; return (best_state, best_epoch, loss_curve, val_curve)."""
    need_attrs = model.has_adaptive_norm()
    exempt = model.norm_affine_paths() if not cfg.decay_norm_affine else set()
    opt_cfg = type(cfg.optimizer)(**{**cfg.optimizer.__dict__, "step_count": 0})
    optimizer = AdamW(model.named_parameters(), opt_cfg, decay_exempt=exempt)
    loss_cfg = losses.LossConfig(alpha=alpha, sd_fallback=cfg.loss.sd_fallback)
    best_acc = -np.inf
    best_epoch = -1
    best_state = model.state_dict()
    loss_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(cfg.epochs):
        model.train_mode()
        if stratify:
            batches = stratified_batches(
                train_ds, cfg.batch_size, seed=seed * 1000 + _TAG_BATCH,
                epoch=epoch, min_per_group=cfg.min_per_group,
            )
        else:
            batches = _plain_batches(
                len(train_ds), cfg.batch_size, seed * 1000 + _TAG_BATCH, epoch
            )
        epoch_losses = []
        for idx in batches:
            x = Tensor(train_ds.X[idx])
            attrs = train_ds.a[idx]
            logits = model.forward(x, attrs if need_attrs else None)
            ce = losses.cross_entropy(logits, train_ds.y[idx])
            if alpha > 0.0:
                sd = losses.statistical_disparity(logits.softmax(axis=1), attrs, loss_cfg)
                loss = losses.total_loss(ce, sd, loss_cfg)
            else:
                loss = ce
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
        loss_curve.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        val_acc = _val_accuracy(model, val_ds, need_attrs)
        val_curve.append(val_acc)
        if val_acc > best_acc:  # strict: earliest epoch wins ties
            best_acc = val_acc
            best_epoch = epoch
            best_state = model.state_dict()
    return best_state, best_epoch, loss_curve, val_curve


def _effective_policy(cfg: ExperimentConfig) -> str:
    if cfg.method == "fairadabn":
        return "fair_adabn"
    if cfg.model.norm_policy == "fair_adabn":
        return "batch_norm"
    return cfg.model.norm_policy


def _model_config(cfg: ExperimentConfig, ds: Dataset, policy: str) -> ModelConfig:
    return ModelConfig(
        input_dim=ds.feature_dim,
        hidden_dims=list(cfg.model.hidden_dims),
        num_classes=ds.num_classes,
        norm_policy=policy,
        use_residual_blocks=cfg.model.use_residual_blocks,
        swap_residual_branch_norm=cfg.model.swap_residual_branch_norm,
        epsilon=cfg.model.epsilon,
        momentum=cfg.model.momentum,
    )


def _run_seed_shared(cfg: ExperimentConfig, ds: Dataset, seed: int) -> SeedRunRecord:
    train_ds, val_ds, test_ds = split(
        ds, cfg.split_ratios, seed * 1000 + _TAG_SPLIT, cfg.split_stratified
    )
    if cfg.method == "resampling":
        train_ds = resample_balanced(train_ds, seed * 1000 + _TAG_RESAMPLE)
    policy = _effective_policy(cfg)
    model = build_model(
        _model_config(cfg, ds, policy), {0, 1}, seed=seed * 1000 + _TAG_MODEL
    )
    alpha = cfg.loss.alpha if cfg.method == "fairadabn" else 0.0
    n0, n1 = train_ds.group_counts()
    stratify = cfg.batch_stratified and min(n0, n1) >= cfg.min_per_group
    best_state, best_epoch, loss_curve, val_curve = _train_single(
        cfg, model, train_ds, val_ds, seed, alpha, stratify
    )
    model.load_state_dict(best_state)
    preds, probs = predict(model, test_ds, model.has_adaptive_norm())
    metrics = evaluate_arrays(
        preds, test_ds.y, test_ds.a, probs, ds.num_classes, cfg.eodd_aggregation
    )
    return SeedRunRecord(
        seed, metrics, best_epoch, loss_curve, val_curve,
        test_labels=test_ds.y.copy(), test_preds=preds,
        test_attrs=test_ds.a.copy(), test_probs=probs,
    )


def _run_seed_ind(cfg: ExperimentConfig, ds: Dataset, seed: int) -> SeedRunRecord:
    """Two disjoint models, one per group, pooled at evaluation."""
    train_ds, val_ds, test_ds = split(
        ds, cfg.split_ratios, seed * 1000 + _TAG_SPLIT, cfg.split_stratified
    )
    preds = np.empty(len(test_ds), dtype=int)
    probs = np.empty((len(test_ds), ds.num_classes))
    curves_loss: list[float] = []
    curves_val: list[float] = []
    best_epochs = []
    policy = _effective_policy(cfg)
    for a in (0, 1):
        sub_train = train_ds.take(np.flatnonzero(train_ds.a == a))
        sub_val = val_ds.take(np.flatnonzero(val_ds.a == a))
        if len(sub_train) == 0 or len(sub_val) == 0:
            raise ValueError(f"method 'ind' requires samples of group {a} in every split")
        model = build_model(
            _model_config(cfg, ds, policy), {0, 1}, seed=(seed * 1000 + _TAG_MODEL) + a
        )
        best_state, best_epoch, lc, vc = _train_single(
            cfg, model, sub_train, sub_val, seed + a, alpha=0.0, stratify=False
        )
        model.load_state_dict(best_state)
        best_epochs.append(best_epoch)
        curves_loss = [x + y for x, y in zip(curves_loss, lc)] if curves_loss else list(lc)
        curves_val = [x + y for x, y in zip(curves_val, vc)] if curves_val else list(vc)
        test_rows = np.flatnonzero(test_ds.a == a)
        if test_rows.size:
            p, pr = predict(model, test_ds.take(test_rows), need_attrs=False)
            preds[test_rows] = p
            probs[test_rows] = pr
    curves_loss = [v / 2.0 for v in curves_loss]
    curves_val = [v / 2.0 for v in curves_val]
    metrics = evaluate_arrays(
        preds, test_ds.y, test_ds.a, probs, ds.num_classes, cfg.eodd_aggregation
    )
    return SeedRunRecord(
        seed, metrics, int(max(best_epochs)), curves_loss, curves_val,
        test_labels=test_ds.y.copy(), test_preds=preds,
        test_attrs=test_ds.a.copy(), test_probs=probs,
    )


def run_method(cfg: ExperimentConfig, label: str | None = None) -> RunResult:
    """Train and evaluate one method over all configured seeds."""
    cfg.validate()
    ds = build_dataset(cfg.data)
    if cfg.method in ("fairadabn", "ind"):
        n0, n1 = ds.group_counts()
        if n0 == 0 or n1 == 0:
            raise ValueError(
                f"method '{cfg.method}' needs both attribute groups, counts were {n0}/{n1}"
            )
    records = []
    for seed in cfg.seeds:
        if cfg.method == "ind":
            records.append(_run_seed_ind(cfg, ds, seed))
        else:
            records.append(_run_seed_shared(cfg, ds, seed))
        logger.info(
            "%s seed %d: acc=%.4f eopp1=%.4f",
            cfg.method, seed, records[-1].metrics.accuracy, records[-1].metrics.eopp1,
        )
    result = RunResult(
        method=cfg.method,
        label=label or cfg.method,
        records=records,
        provenance=f"{cfg.data.describe()}|split={cfg.split_ratios}|eodd={cfg.eodd_aggregation}",
    )
    result.aggregate()
    return result


def compare_and_fate(
    baseline: RunResult, mitigations: dict[str, RunResult], cfg: FateConfig
) -> dict[str, FateReport]:
    """FATE per criterion from aggregate means, one report per mitigation."""
    cfg.validate()
    acc_b = baseline.mean["accuracy"]
    reports: dict[str, FateReport] = {}
    for name, run in mitigations.items():
        if run.provenance != baseline.provenance:
            raise ValueError(
                f"run '{name}' used a different data source or evaluation settings "
                f"than the baseline: {run.provenance} vs {baseline.provenance}"
            )
        entries = {}
        for crit in ("eopp0", "eopp1", "eodd"):
            fc_b = baseline.mean[crit]
            if fc_b == 0 or acc_b == 0:
                entries[f"fate_{crit}"] = None
            else:
                entries[f"fate_{crit}"] = fate(
                    run.mean["accuracy"], acc_b, run.mean[crit], fc_b, cfg
                )
        reports[name] = FateReport(**entries)
    return reports
