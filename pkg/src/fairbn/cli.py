"""Command-line interface.

Subcommands:

* run       - train and evaluate one experiment config, emit reports
* sweep     - alpha grid for the adaptive method against a fresh baseline
* evaluate  - metrics (and FATE) from prediction files, no training
* gradcheck - randomized gradient/normalization verification suite
* gen-data  - emit a synthetic dataset as CSV

Configs are plain `key = value` files with dotted keys; any key can be
overridden on the command line as `--dotted.key value`.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from fairbn import config as cfgmod
from fairbn import report as reportmod
from fairbn import runner as runnermod
from fairbn import verification
from fairbn.config import ConfigError
from fairbn.data import generate_synthetic, save_table
from fairbn.fairness import FateConfig, FateReport
from fairbn.runner import evaluate_arrays


def _parse_overrides(tokens: list[str]) -> dict[str, str]:
    """Turn `--dotted.key value` / `--dotted.key=value` pairs into a dict."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument '{tok}'")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag '--{key}' is missing a value")
            value = tokens[i + 1]
            i += 2
        if key not in cfgmod.KEY_SPECS:
            raise cfgmod.unknown_key_error(key)
        overrides[key] = value
    return overrides


def _load_experiment(args, extras) -> cfgmod.ExperimentConfig:
    raw = cfgmod.load_config_file(args.config)
    raw.update(_parse_overrides(extras))
    if args.out is not None:
        raw["output_dir"] = args.out
    values = cfgmod.resolve_values(raw)
    return cfgmod.build_experiment_config(values)


def _emit_run_artifacts(cfg, results, fates, baseline_label):
    out_dir = cfgmod.resolve_output_dir(cfg.output_dir)
    paths = reportmod.emit_report(
        results,
        fates,
        out_dir,
        fmt=cfg.report_format,
        baseline_label=baseline_label,
        lambda_=cfg.fate.lambda_,
    )
    pred_dir = os.path.join(out_dir, "predictions")
    os.makedirs(pred_dir, exist_ok=True)
    for label, run in results.items():
        safe = label.replace("(", "_").replace(")", "").replace("=", "")
        for rec in run.records:
            path = os.path.join(pred_dir, f"{safe}_seed{rec.seed}.csv")
            reportmod.write_predictions_csv(
                path, rec.test_labels, rec.test_preds, rec.test_attrs, rec.test_probs
            )
            paths.append(path)
    return out_dir, paths


def cmd_run(args, extras) -> int:
    cfg = _load_experiment(args, extras)
    result = runnermod.run_method(cfg)
    results = {cfg.method: result}
    out_dir, paths = _emit_run_artifacts(cfg, results, None, cfg.method)
    print(f"{cfg.method}: accuracy={result.mean['accuracy']:.4f} "
          f"eopp1={result.mean['eopp1']:.4f} -> {out_dir}")
    for p in paths:
        print(f"  wrote {p}")
    return 0


def cmd_sweep(args, extras) -> int:
    cfg = _load_experiment(args, extras)
    results: dict[str, runnermod.RunResult] = {}
    base_cfg = replace(cfg, method="vanilla")
    results["vanilla"] = runnermod.run_method(base_cfg, label="vanilla")
    for alpha in cfg.sweep_alphas:
        sweep_cfg = replace(
            cfg,
            method="fairadabn",
            loss=replace(cfg.loss, alpha=alpha),
        )
        label = f"fairadabn(alpha={alpha:g})"
        results[label] = runnermod.run_method(sweep_cfg, label=label)
    mitigations = {k: v for k, v in results.items() if k != "vanilla"}
    fates = runnermod.compare_and_fate(results["vanilla"], mitigations, cfg.fate)
    out_dir, paths = _emit_run_artifacts(cfg, results, fates, "vanilla")
    print(f"sweep over alphas {cfg.sweep_alphas} -> {out_dir}")
    for p in paths:
        print(f"  wrote {p}")
    return 0


def cmd_evaluate(args, extras) -> int:
    if extras:
        raise ConfigError(f"unexpected argument '{extras[0]}'")
    labels, preds, attrs, probs = reportmod.read_predictions_csv(args.predictions)
    num_classes = probs.shape[1] if probs is not None else int(max(labels.max(), preds.max())) + 1
    metrics = evaluate_arrays(preds, labels, attrs, probs, num_classes, args.eodd_aggregation)
    out: dict[str, dict] = {"mitigation": metrics.as_dict()}
    if args.baseline:
        b_labels, b_preds, b_attrs, b_probs = reportmod.read_predictions_csv(args.baseline)
        b_nc = b_probs.shape[1] if b_probs is not None else num_classes
        base = evaluate_arrays(b_preds, b_labels, b_attrs, b_probs, b_nc, args.eodd_aggregation)
        out["baseline"] = base.as_dict()
        fate_report = FateReport()
        for crit in ("eopp0", "eopp1", "eodd"):
            fc_b = getattr(base, crit)
            value = None
            if fc_b != 0 and base.accuracy != 0:
                from fairbn.fairness import fate

                value = fate(metrics.accuracy, base.accuracy, getattr(metrics, crit),
                             fc_b, FateConfig(lambda_=args.fate_lambda))
            setattr(fate_report, f"fate_{crit}", value)
        out["fate"] = {k: (v if v is not None else float("nan"))
                       for k, v in fate_report.as_dict().items()}
    out_dir = cfgmod.resolve_output_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "metrics.csv")
    reportmod.write_metrics_csv(out, path)
    print(f"accuracy={metrics.accuracy:.4f} eopp0={metrics.eopp0:.4f} "
          f"eopp1={metrics.eopp1:.4f} eodd={metrics.eodd:.4f}")
    print(f"  wrote {path}")
    return 0


def cmd_gradcheck(args, extras) -> int:
    if extras:
        raise ConfigError(f"unexpected argument '{extras[0]}'")
    outcomes = verification.run_grad_check_suite(args.trials, args.seed)
    failed = 0
    for o in outcomes:
        status = "ok" if o.passed else "FAIL"
        print(f"[{status}] max_rel_err={o.max_relative_error:.3e}  {o.description}")
        failed += 0 if o.passed else 1
    worst_mean, var_lo, var_hi = verification.check_norm_statistics(seed=args.seed)
    print(f"[info] train-mode norm stats: |mean|<={worst_mean:.2e} "
          f"variance in [{var_lo:.6f}, {var_hi:.6f}]")
    if failed:
        print(f"{failed}/{len(outcomes)} gradient checks failed", file=sys.stderr)
        return 1
    print(f"all {len(outcomes)} gradient checks passed "
          f"(tolerance {verification.GRAD_TOLERANCE:g})")
    return 0


def cmd_gen_data(args, extras) -> int:
    raw = cfgmod.load_config_file(args.config)
    raw.update(_parse_overrides(extras))
    values = cfgmod.resolve_values(raw)
    cfg = cfgmod.build_experiment_config(values)
    ds = generate_synthetic(cfg.data.synthetic)
    save_table(ds, args.out)
    n0, n1 = ds.group_counts()
    print(f"wrote {args.out}: {len(ds)} samples, {ds.feature_dim} features, "
          f"{ds.num_classes} classes, groups {n0}/{n1}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairbn",
        description="fairness-aware training toolkit with adaptive batch normalization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one experiment config")
    p_run.add_argument("--config", required=True, help="key = value config file")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="alpha grid against a vanilla baseline")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("evaluate", help="metrics + FATE from prediction files")
    p_eval.add_argument("--predictions", required=True,
                        help="csv with header sample_id,label,pred,attr,p_0,...")
    p_eval.add_argument("--baseline", default=None, help="baseline prediction file")
    p_eval.add_argument("--out", default="out")
    p_eval.add_argument("--eodd-aggregation", default="max", choices=("max", "sum", "mean"))
    p_eval.add_argument("--fate-lambda", type=float, default=1.0)
    p_eval.set_defaults(func=cmd_evaluate)

    p_gc = sub.add_parser("gradcheck", help="gradient/normalization verification suite")
    p_gc.add_argument("--trials", type=int, default=20)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(func=cmd_gradcheck)

    p_gen = sub.add_parser("gen-data", help="emit a synthetic dataset as CSV")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True, help="destination CSV path")
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except (ConfigError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
