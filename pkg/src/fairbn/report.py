"""Report emission: long-form records, an aggregate table, scatter data,
and rendered fairness-vs-accuracy trade-off figures.

All delimited files are deterministic for a fixed set of results; the
timestamp is confined to the single `# generated` header line.  Aggregate
values are printed x10^-2 at two decimals as `mean+-std`; figures mark the
baseline point, its quadrants, and the zero-trade-off boundary.
"""
from __future__ import annotations

import os
from datetime import datetime, timezone

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from fairbn.fairness import FateReport  # noqa: E402
from fairbn.runner import RunResult  # noqa: E402

AGGREGATE_COLUMNS = (
    "accuracy", "precision", "recall", "f1", "eopp0", "eopp1", "eodd",
)
AGGREGATE_HEADERS = (
    "Accuracy↑", "Precision↑", "Recall↑", "F1↑", "EOpp0↓", "EOpp1↓", "EOdd↓",
)
FATE_HEADERS = ("E_0↑", "E_1↑", "E_2↑")
CRITERIA = ("eopp0", "eopp1", "eodd")


def _timestamp_line() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat()}"


def _scaled(mean: float, std: float) -> str:
    return f"{mean * 100:.2f}±{std * 100:.2f}"


def _fate_cell(value: float | None, is_baseline: bool) -> str:
    if is_baseline:
        return "/"
    if value is None:
        return "n/a"
    return f"{value * 100:.2f}"


def write_records_csv(results: dict[str, RunResult], path) -> None:
    """One row per (method, seed, metric), full precision."""
    with open(path, "w") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write("method,seed,metric,value\n")
        for label, run in results.items():
            for rec in run.records:
                row_metrics = dict(rec.metrics.as_dict())
                row_metrics["best_epoch"] = float(rec.best_epoch)
                for metric, value in row_metrics.items():
                    fh.write(f"{label},{rec.seed},{metric},{value!r}\n")


def load_records_csv(path) -> list[tuple[str, int, str, float]]:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("method,"):
                continue
            label, seed, metric, value = line.rstrip("\n").split(",")
            rows.append((label, int(seed), metric, float(value)))
    return rows


def _aggregate_rows(results: dict[str, RunResult], fates, baseline_label):
    for label, run in results.items():
        cells = [_scaled(run.mean[c], run.std[c]) for c in AGGREGATE_COLUMNS]
        fr: FateReport | None = fates.get(label) if fates else None
        is_base = label == baseline_label or fr is None
        fate_cells = [
            _fate_cell(getattr(fr, f"fate_{c}") if fr else None, is_base)
            for c in CRITERIA
        ]
        yield label, cells, fate_cells


def write_aggregate_table(
    results: dict[str, RunResult],
    fates: dict[str, FateReport] | None,
    path,
    fmt: str = "markdown",
    baseline_label: str | None = None,
) -> None:
    """Aggregate table matching the standard column order; x10^-2 scaling."""
    headers = ("Method",) + AGGREGATE_HEADERS + FATE_HEADERS
    rows = list(_aggregate_rows(results, fates or {}, baseline_label))
    with open(path, "w") as fh:
        fh.write(_timestamp_line() + "\n")
        if fmt == "markdown":
            fh.write("| " + " | ".join(headers) + " |\n")
            fh.write("|" + "---|" * len(headers) + "\n")
            for label, cells, fate_cells in rows:
                fh.write("| " + " | ".join([label] + cells + fate_cells) + " |\n")
        else:
            fh.write(",".join(headers) + "\n")
            for label, cells, fate_cells in rows:
                fh.write(",".join([label] + cells + fate_cells) + "\n")


def write_scatter_csv(results: dict[str, RunResult], path) -> None:
    """Per (method, criterion): mean fairness value and mean accuracy."""
    with open(path, "w") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write("method,criterion,fairness_mean,accuracy_mean\n")
        for label, run in results.items():
            for crit in CRITERIA:
                fh.write(f"{label},{crit},{run.mean[crit]!r},{run.mean['accuracy']!r}\n")


def render_tradeoff_figures(
    results: dict[str, RunResult],
    baseline_label: str,
    out_dir,
    lambda_: float = 1.0,
) -> list[str]:
    """One fairness-vs-accuracy scatter per criterion.

    The baseline point splits the plane into quadrants (fairer / more
    accurate / less fair / less accurate); the dashed diagonal is the
    zero-trade-off boundary, points left of it score positive.
    """
    paths = []
    base = results[baseline_label]
    for crit in CRITERIA:
        fig, ax = plt.subplots(figsize=(5.0, 4.0))
        fc_b = base.mean[crit] * 100
        acc_b = base.mean["accuracy"] * 100
        for label, run in results.items():
            marker = "s" if label == baseline_label else "o"
            ax.scatter(run.mean[crit] * 100, run.mean["accuracy"] * 100, marker=marker, s=45)
            ax.annotate(
                label,
                (run.mean[crit] * 100, run.mean["accuracy"] * 100),
                textcoords="offset points",
                xytext=(5, 4),
                fontsize=8,
            )
        ax.axvline(fc_b, color="gray", lw=0.8, ls=":")
        ax.axhline(acc_b, color="gray", lw=0.8, ls=":")
        if fc_b != 0:
            xs = ax.get_xlim()
            span = [min(xs[0], fc_b * 0.5), max(xs[1], fc_b * 1.5)]
            boundary = [acc_b * (1 + lambda_ * (x / fc_b - 1)) for x in span]
            ax.plot(span, boundary, color="tab:red", lw=1.0, ls="--", label="zero trade-off")
            ax.legend(fontsize=8, loc="lower right")
        ax.set_xlabel(f"{crit} (x10^-2, lower is fairer)")
        ax.set_ylabel("accuracy (x10^-2)")
        ax.set_title(f"fairness-accuracy trade-off: {crit}")
        fig.tight_layout()
        path = os.path.join(out_dir, f"tradeoff_{crit}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def write_predictions_csv(path, labels, preds, attrs, probs) -> None:
    """Prediction file: sample_id,label,pred,attr,p_0,...,p_{C-1}."""
    n, c = probs.shape
    with open(path, "w") as fh:
        fh.write("sample_id,label,pred,attr," + ",".join(f"p_{j}" for j in range(c)) + "\n")
        for i in range(n):
            probs_s = ",".join(repr(float(v)) for v in probs[i])
            fh.write(f"{i},{int(labels[i])},{int(preds[i])},{int(attrs[i])},{probs_s}\n")


def read_predictions_csv(path):
    """Returns (labels, preds, attrs, probs) from a prediction file."""
    labels, preds, attrs, probs = [], [], [], []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:4] != ["sample_id", "label", "pred", "attr"]:
            raise ValueError(
                f"prediction file must start with sample_id,label,pred,attr got {header[:4]}"
            )
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) < 4:
                continue
            labels.append(int(parts[1]))
            preds.append(int(parts[2]))
            attrs.append(int(parts[3]))
            probs.append([float(v) for v in parts[4:]])
    return (
        np.array(labels),
        np.array(preds),
        np.array(attrs),
        np.array(probs) if probs and probs[0] else None,
    )


def write_metrics_csv(metrics_by_label: dict[str, dict], path) -> None:
    """Flat per-evaluation metric records (used by `evaluate`)."""
    with open(path, "w") as fh:
        fh.write(_timestamp_line() + "\n")
        fh.write("label,metric,value\n")
        for label, metrics in metrics_by_label.items():
            for metric, value in metrics.items():
                fh.write(f"{label},{metric},{value!r}\n")


def emit_report(
    results: dict[str, RunResult],
    fates: dict[str, FateReport] | None,
    out_dir,
    fmt: str = "markdown",
    baseline_label: str | None = None,
    lambda_: float = 1.0,
    figures: bool = True,
) -> list[str]:
    """Write records, aggregate table, scatter data, and figures.

    Returns the list of written paths.
    """
    if not results:
        raise ValueError("emit_report needs at least one run result")
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    records = os.path.join(out_dir, "records.csv")
    write_records_csv(results, records)
    agg = os.path.join(out_dir, "aggregate.md" if fmt == "markdown" else "aggregate.csv")
    write_aggregate_table(results, fates, agg, fmt, baseline_label)
    scatter = os.path.join(out_dir, "scatter.csv")
    write_scatter_csv(results, scatter)
    paths = [records, agg, scatter]
    if figures:
        base = baseline_label if baseline_label in results else next(iter(results))
        paths.extend(render_tradeoff_figures(results, base, out_dir, lambda_))
    return paths
