"""Experiment configuration: plain-text `key = value` files with dotted keys.

Every key can also be supplied as a command-line flag of the same dotted
name; unknown keys fail with the nearest valid suggestions.  The flat
key/value view is turned into typed config objects for the runner.
"""
from __future__ import annotations

import difflib
import os
from dataclasses import dataclass, field

import numpy as np

from fairbn.data import SyntheticConfig, TableSchema
from fairbn.fairness import EODD_AGGREGATIONS, FateConfig
from fairbn.losses import LossConfig
from fairbn.nn import ModelConfig
from fairbn.optim import AdamWConfig

METHODS = ("vanilla", "resampling", "ind", "fairadabn")
OUTPUT_ROOT_ENV = "FAIRBN_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{s}'")


def _parse_int_list(s: str) -> list[int]:
    return [int(tok) for tok in s.split(",") if tok.strip()]


def _parse_float_list(s: str) -> list[float]:
    return [float(tok) for tok in s.split(",") if tok.strip()]


def _parse_str_list(s: str) -> list[str]:
    return [tok.strip() for tok in s.split(",") if tok.strip()]


def _parse_map(s: str) -> dict[str, int]:
    out = {}
    for tok in s.split(","):
        if not tok.strip():
            continue
        if ":" not in tok:
            raise ConfigError(f"expected 'name:index' pairs, got '{tok}'")
        name, idx = tok.split(":", 1)
        out[name.strip()] = int(idx)
    return out


def _choice(options):
    def parse(s: str) -> str:
        if s not in options:
            raise ConfigError(f"expected one of {options}, got '{s}'")
        return s

    return parse


# key -> (parser, default). None defaults mean "unset".
KEY_SPECS: dict[str, tuple] = {
    "method": (_choice(METHODS), "vanilla"),
    "epochs": (int, 60),
    "batch_size": (int, 128),
    "repeats": (int, 3),
    "seeds": (_parse_int_list, None),
    "base_seed": (int, 0),
    "output_dir": (str, "out"),
    "report_format": (_choice(("csv", "markdown")), "markdown"),
    "model.hidden_dims": (_parse_int_list, [64, 64]),
    "model.norm_policy": (_choice(("none", "batch_norm", "fair_adabn")), "batch_norm"),
    "model.use_residual_blocks": (_parse_bool, False),
    "model.swap_residual_branch_norm": (_parse_bool, False),
    "model.epsilon": (float, 1e-5),
    "model.momentum": (float, 0.1),
    "loss.alpha": (float, 1.0),
    "loss.sd_fallback": (_choice(("zero", "error")), "zero"),
    "optimizer.learning_rate": (float, 1e-4),
    "optimizer.beta1": (float, 0.9),
    "optimizer.beta2": (float, 0.999),
    "optimizer.eps": (float, 1e-8),
    "optimizer.weight_decay": (float, 1e-2),
    "optimizer.decay_norm_affine": (_parse_bool, False),
    "data.source": (_choice(("synthetic", "table")), "synthetic"),
    "data.synthetic.n_samples": (int, 2000),
    "data.synthetic.feature_dim": (int, 10),
    "data.synthetic.num_classes": (int, 3),
    "data.synthetic.group_ratio": (float, 0.5),
    "data.synthetic.class_priors_a0": (_parse_float_list, None),
    "data.synthetic.class_priors_a1": (_parse_float_list, None),
    "data.synthetic.group_shift_scale": (float, 0.0),
    "data.synthetic.group_shift": (_parse_float_list, None),
    "data.synthetic.noise_std": (float, 1.0),
    "data.synthetic.label_noise_rate": (float, 0.0),
    "data.synthetic.seed": (int, 7),
    "data.table.path": (str, None),
    "data.table.features": (_parse_str_list, None),
    "data.table.label": (str, "label"),
    "data.table.attribute": (str, "attr"),
    "data.table.label_map": (_parse_map, None),
    "data.table.attribute_map": (_parse_map, None),
    "data.table.num_classes": (int, None),
    "split.ratios": (_parse_float_list, [0.6, 0.2, 0.2]),
    "split.stratified": (_parse_bool, True),
    "batch.stratified": (_parse_bool, True),
    "batch.min_per_group": (int, 2),
    "eval.eodd_aggregation": (_choice(EODD_AGGREGATIONS), "max"),
    "fate.lambda": (float, 1.0),
    "sweep.alphas": (_parse_float_list, [0.1, 1.0, 2.0]),
}


def unknown_key_error(key: str) -> ConfigError:
    near = difflib.get_close_matches(key, KEY_SPECS.keys(), n=3, cutoff=0.4)
    hint = f"; nearest valid keys: {', '.join(near)}" if near else ""
    return ConfigError(f"unknown config key '{key}'{hint}")


def parse_config_text(text: str) -> dict[str, str]:
    """Flat dict of raw string values from `key = value` lines."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def load_config_file(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read())


def resolve_values(raw: dict[str, str]) -> dict:
    """Validate keys, parse values, and fill defaults."""
    values = {}
    for key, raw_value in raw.items():
        if key not in KEY_SPECS:
            raise unknown_key_error(key)
        parser, _ = KEY_SPECS[key]
        try:
            values[key] = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for '{key}': {exc}") from None
    for key, (_, default) in KEY_SPECS.items():
        values.setdefault(key, default)
    return values


@dataclass
class DataSourceConfig:
    source: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    table_path: str | None = None
    table_schema: TableSchema | None = None
    table_num_classes: int | None = None

    def describe(self) -> str:
        if self.source == "synthetic":
            s = self.synthetic
            return (
                f"synthetic(n={s.n_samples},d={s.feature_dim},C={s.num_classes},"
                f"ratio={s.group_ratio},shift={s.group_shift_scale},"
                f"noise={s.noise_std},label_noise={s.label_noise_rate},seed={s.seed})"
            )
        return f"table({self.table_path})"


@dataclass
class ExperimentConfig:
    method: str = "vanilla"
    model: ModelConfig = field(default_factory=lambda: ModelConfig(input_dim=1))
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    data: DataSourceConfig = field(default_factory=DataSourceConfig)
    epochs: int = 60
    batch_size: int = 128
    repeats: int = 3
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    split_ratios: tuple = (0.6, 0.2, 0.2)
    split_stratified: bool = True
    batch_stratified: bool = True
    min_per_group: int = 2
    eodd_aggregation: str = "max"
    fate: FateConfig = field(default_factory=FateConfig)
    decay_norm_affine: bool = False
    output_dir: str = "out"
    report_format: str = "markdown"
    sweep_alphas: list[float] = field(default_factory=lambda: [0.1, 1.0, 2.0])

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}'")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.repeats != len(self.seeds):
            raise ConfigError(
                f"repeats ({self.repeats}) must equal the seed count ({len(self.seeds)})"
            )
        self.loss.validate()
        self.optimizer.validate()
        self.fate.validate()


def build_experiment_config(values: dict) -> ExperimentConfig:
    seeds = values["seeds"]
    if seeds is None:
        seeds = [values["base_seed"] + i for i in range(values["repeats"])]
    priors = None
    if values["data.synthetic.class_priors_a0"] is not None:
        if values["data.synthetic.class_priors_a1"] is None:
            raise ConfigError("class priors must be given for both groups")
        priors = np.array(
            [
                values["data.synthetic.class_priors_a0"],
                values["data.synthetic.class_priors_a1"],
            ]
        )
    synthetic = SyntheticConfig(
        n_samples=values["data.synthetic.n_samples"],
        feature_dim=values["data.synthetic.feature_dim"],
        num_classes=values["data.synthetic.num_classes"],
        group_ratio=values["data.synthetic.group_ratio"],
        class_priors=priors,
        group_shift=(
            np.array(values["data.synthetic.group_shift"])
            if values["data.synthetic.group_shift"] is not None
            else None
        ),
        group_shift_scale=values["data.synthetic.group_shift_scale"],
        noise_std=values["data.synthetic.noise_std"],
        label_noise_rate=values["data.synthetic.label_noise_rate"],
        seed=values["data.synthetic.seed"],
    )
    schema = None
    if values["data.table.features"] is not None:
        schema = TableSchema(
            features=values["data.table.features"],
            label=values["data.table.label"],
            attribute=values["data.table.attribute"],
            label_map=values["data.table.label_map"],
            attribute_map=values["data.table.attribute_map"],
        )
    data = DataSourceConfig(
        source=values["data.source"],
        synthetic=synthetic,
        table_path=values["data.table.path"],
        table_schema=schema,
        table_num_classes=values["data.table.num_classes"],
    )
    model = ModelConfig(
        input_dim=1,  # resolved from the dataset by the runner
        hidden_dims=values["model.hidden_dims"],
        num_classes=2,  # resolved from the dataset by the runner
        norm_policy=values["model.norm_policy"],
        use_residual_blocks=values["model.use_residual_blocks"],
        swap_residual_branch_norm=values["model.swap_residual_branch_norm"],
        epsilon=values["model.epsilon"],
        momentum=values["model.momentum"],
    )
    cfg = ExperimentConfig(
        method=values["method"],
        model=model,
        loss=LossConfig(alpha=values["loss.alpha"], sd_fallback=values["loss.sd_fallback"]),
        optimizer=AdamWConfig(
            learning_rate=values["optimizer.learning_rate"],
            beta1=values["optimizer.beta1"],
            beta2=values["optimizer.beta2"],
            eps=values["optimizer.eps"],
            weight_decay=values["optimizer.weight_decay"],
        ),
        data=data,
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        repeats=len(seeds),
        seeds=list(seeds),
        split_ratios=tuple(values["split.ratios"]),
        split_stratified=values["split.stratified"],
        batch_stratified=values["batch.stratified"],
        min_per_group=values["batch.min_per_group"],
        eodd_aggregation=values["eval.eodd_aggregation"],
        fate=FateConfig(lambda_=values["fate.lambda"]),
        decay_norm_affine=values["optimizer.decay_norm_affine"],
        output_dir=values["output_dir"],
        report_format=values["report_format"],
        sweep_alphas=values["sweep.alphas"],
    )
    cfg.validate()
    return cfg


def resolve_output_dir(output_dir: str) -> str:
    """Resolve against the FAIRBN_OUTPUT_ROOT environment variable if set."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(output_dir):
        return os.path.join(root, output_dir)
    return output_dir
