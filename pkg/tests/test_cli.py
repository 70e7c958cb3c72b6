"""CLI subcommands, dotted-key overrides, and exit codes."""
import os

import numpy as np
import pytest

from fairbn.cli import main
from fairbn.runner import evaluate_arrays
from fairbn.report import write_predictions_csv

QUICK = os.path.join(os.path.dirname(__file__), "..", "configs", "quick.cfg")


def _write_quickish(path, extra=""):
    path.write_text(
        "method = vanilla\n"
        "epochs = 3\n"
        "batch_size = 32\n"
        "seeds = 1,2\n"
        "repeats = 2\n"
        "model.hidden_dims = 8\n"
        "optimizer.learning_rate = 1e-3\n"
        "data.synthetic.n_samples = 400\n"
        "data.synthetic.feature_dim = 4\n"
        "data.synthetic.num_classes = 2\n"
        "data.synthetic.group_ratio = 0.5\n"
        "data.synthetic.group_shift_scale = 1.0\n"
        "data.synthetic.seed = 3\n" + extra
    )


def test_run_missing_config_nonzero_exit(capsys):
    code = main(["run", "--config", "/nonexistent/path.cfg"])
    assert code != 0
    assert "error:" in capsys.readouterr().err


def test_run_writes_reports(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg)
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert (out / "records.csv").exists()
    assert (out / "aggregate.md").exists()
    assert (out / "scatter.csv").exists()
    assert (out / "tradeoff_eopp1.png").exists()
    assert (out / "predictions" / "vanilla_seed1.csv").exists()


def test_dotted_override_applies(tmp_path):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg)
    out = tmp_path / "out"
    code = main(
        ["run", "--config", str(cfg), "--out", str(out), "--epochs", "1", "--seeds", "7"]
    )
    assert code == 0
    text = (out / "records.csv").read_text()
    assert ",7," in text and ",1," not in text.replace("best_epoch", "")


def test_unknown_override_lists_nearest(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg)
    code = main(["run", "--config", str(cfg), "--epoch", "1"])
    assert code != 0
    err = capsys.readouterr().err
    assert "unknown config key" in err and "epochs" in err


def test_unknown_key_in_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg, extra="optimzer.learning_rate = 1\n")
    code = main(["run", "--config", str(cfg)])
    assert code != 0
    assert "optimizer.learning_rate" in capsys.readouterr().err


def test_sweep_emits_comparative_report(tmp_path):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg, extra="sweep.alphas = 0.5,1.0\n")
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    text = (out / "aggregate.md").read_text()
    assert "| vanilla |" in text
    assert "fairadabn(alpha=0.5)" in text
    assert "fairadabn(alpha=1)" in text
    # baseline row carries no FATE; mitigation rows carry numbers
    vanilla_row = [l for l in text.splitlines() if l.startswith("| vanilla")][0]
    assert vanilla_row.rstrip("| ").endswith("/")


def test_evaluate_matches_in_process_metrics(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n, c = 50, 2
    labels = rng.integers(0, c, n)
    preds = rng.integers(0, c, n)
    attrs = np.array([0, 1] * 25)
    raw = rng.random((n, c))
    probs = raw / raw.sum(axis=1, keepdims=True)
    pred_file = tmp_path / "preds.csv"
    write_predictions_csv(pred_file, labels, preds, attrs, probs)

    out = tmp_path / "ev"
    code = main(["evaluate", "--predictions", str(pred_file), "--out", str(out)])
    assert code == 0
    expected = evaluate_arrays(preds, labels, attrs, probs, c).as_dict()
    got = {}
    for line in (out / "metrics.csv").read_text().splitlines()[2:]:
        label, metric, value = line.split(",")
        if label == "mitigation":
            got[metric] = float(value)
    for k, v in expected.items():
        assert got[k] == pytest.approx(v, abs=0, rel=0), k


def test_evaluate_with_baseline_emits_fate(tmp_path):
    rng = np.random.default_rng(1)
    n, c = 60, 2
    attrs = np.array([0, 1] * 30)
    labels = rng.integers(0, c, n)

    def dump(path, preds):
        raw = rng.random((n, c))
        probs = raw / raw.sum(axis=1, keepdims=True)
        write_predictions_csv(path, labels, preds, attrs, probs)

    base_file = tmp_path / "base.csv"
    mit_file = tmp_path / "mit.csv"
    dump(base_file, rng.integers(0, c, n))
    dump(mit_file, labels.copy())  # perfect mitigation
    out = tmp_path / "ev"
    code = main(
        ["evaluate", "--predictions", str(mit_file), "--baseline", str(base_file),
         "--out", str(out)]
    )
    assert code == 0
    text = (out / "metrics.csv").read_text()
    assert "fate,fate_eopp1," in text


def test_gradcheck_subcommand_passes(capsys):
    code = main(["gradcheck", "--trials", "3", "--seed", "0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "all 3 gradient checks passed" in out


def test_gen_data_roundtrips(tmp_path):
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg)
    out_csv = tmp_path / "data.csv"
    code = main(["gen-data", "--config", str(cfg), "--out", str(out_csv)])
    assert code == 0
    from fairbn.data import default_schema, load_table

    ds, _ = load_table(out_csv, default_schema(4))
    assert len(ds) == 400 and ds.feature_dim == 4


def test_env_var_selects_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("FAIRBN_OUTPUT_ROOT", str(tmp_path))
    cfg = tmp_path / "c.cfg"
    _write_quickish(cfg, extra="output_dir = nested/exp\n")
    code = main(["run", "--config", str(cfg)])
    assert code == 0
    assert (tmp_path / "nested" / "exp" / "records.csv").exists()
