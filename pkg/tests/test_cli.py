import numpy as np
import pytest

from aafm import cli, config, fm, pipeline


def run(*argv):
    return cli.main([str(a) for a in argv])


def out_dir(tmp_path):
    return tmp_path / "out" / "runs" / "toy"


def read_log(path):
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = [ln.split("\t") for ln in lines if not ln.startswith("#")]
    return header, body[0], body[1:]


def test_prepare_is_idempotent(toy_config, tmp_path, capsys):
    assert run("prepare", "--config", toy_config) == 0
    assert "cache written" in capsys.readouterr().out
    assert run("prepare", "--config", toy_config) == 0
    assert "cache hit" in capsys.readouterr().out
    cfg = config.load_config(toy_config)
    split, *_ = pipeline.prepare(cfg)
    stats_lines = [ln for ln in (out_dir(tmp_path) / "stats.tsv").read_text().splitlines()
                   if not ln.startswith("#")]
    assert len(stats_lines) - 1 == sum(split.schema.cardinalities)


def test_stats_command(toy_config, tmp_path, capsys):
    assert run("stats", "--config", toy_config) == 0
    text = capsys.readouterr().out
    assert "user-id" in text and "genre" in text
    header = (out_dir(tmp_path) / "stats.tsv").read_text().splitlines()[:3]
    assert header[0].startswith("# config_hash=") and header[1] == "# seed=1"
    assert header[2].startswith("# code_version=")


def test_train_outputs_and_flag_wiring(toy_config, tmp_path):
    assert run("train", "--config", toy_config, "--variant", "fm") == 0
    assert run("train", "--config", toy_config, "--variant", "aafm") == 0
    assert run("train", "--config", toy_config, "--variant", "d-aafm") == 0
    root = out_dir(tmp_path)
    logs = {}
    for v in ("fm", "aafm", "d-aafm"):
        for name in ("final.ckpt", "train_log.tsv", "timing.tsv", "adversary.tsv", "config.yaml",
                     "figures/training.png"):
            assert (root / v / name).exists(), (v, name)
        logs[v] = read_log(root / v / "train_log.tsv")
    assert "# adversary=off" in logs["fm"][0]
    decay = logs["aafm"][1].index("decay_loss")
    assert all(float(r[decay]) == 0.0 for r in logs["aafm"][2])
    assert all(float(r[decay]) > 0.0 for r in logs["d-aafm"][2])
    hashes = {v: [h for h in logs[v][0] if h.startswith("# data_hash=")] for v in logs}
    assert hashes["fm"] == hashes["aafm"] == hashes["d-aafm"] != [[]]


def test_rerun_is_byte_identical(toy_config, tmp_path):
    root = out_dir(tmp_path)
    files = ("final.ckpt", "train_log.tsv", "adversary.tsv", "eval.tsv", "figures/training.png")
    snapshots = []
    for _ in range(2):
        assert run("train", "--config", toy_config) == 0
        assert run("eval", "--config", toy_config) == 0
        snapshots.append({f: (root / "aafm" / f).read_bytes() for f in files})
    assert snapshots[0] == snapshots[1]


def test_eval_report_sections(toy_config, tmp_path, capsys):
    assert run("train", "--config", toy_config, "--no-figures") == 0
    assert run("eval", "--config", toy_config) == 0
    text = capsys.readouterr().out
    for key in ("AUC", "Logloss", "EFGD", "STD", "robustness"):
        assert key in text
    tsv = (out_dir(tmp_path) / "aafm" / "eval.tsv").read_text()
    assert "drop_pct@0.5" in tsv
    assert (out_dir(tmp_path) / "aafm" / "groups.tsv").exists()
    assert run("eval", "--config", toy_config, "--no-probe") == 0
    assert "drop_pct" not in (out_dir(tmp_path) / "aafm" / "eval.tsv").read_text()
    assert run("eval", "--config", toy_config, "--set", "eval.probe_levels=[]") == 0
    assert "robustness" not in (out_dir(tmp_path) / "aafm" / "eval.txt").read_text()


def test_robustness_command(toy_config, tmp_path, capsys):
    assert run("train", "--config", toy_config, "--no-figures") == 0
    assert run("robustness", "--config", toy_config, "--levels", "0.5", "1", "2", "--mode", "random",
               "--trials", "2") == 0
    rows = (out_dir(tmp_path) / "aafm" / "robustness.tsv").read_text().splitlines()
    assert "# mode=random trials=2" in rows
    assert rows[-3:][0].startswith("0.5\t") and rows[-1].startswith("2\t")


def test_sweep_t(toy_config, tmp_path, capsys):
    assert run("sweep-t", "--config", toy_config, "--no-figures") == 0
    frontier = (out_dir(tmp_path) / "sweep-t" / "frontier.tsv").read_text().splitlines()
    body = [ln for ln in frontier if not ln.startswith("#")]
    assert body[0] == "t\tauc\tlogloss\tstd\tefgd"
    assert [r.split("\t")[0] for r in body[1:]] == ["1", "5"]


def test_sweep_t_one_matches_fixed_lambda(toy_config, tmp_path):
    assert run("sweep-t", "--config", toy_config, "--t", "1", "--no-figures") == 0
    cfg = config.load_config(toy_config)
    split, *_ = pipeline.prepare(cfg)
    swept, *_ = fm.load_checkpoint(out_dir(tmp_path) / "sweep-t" / "t_1" / "aafm" / "final.ckpt", split.schema)
    assert run("train", "--config", toy_config, "--variant", "aafm-epsilon", "--no-figures") == 0
    fixed, *_ = fm.load_checkpoint(out_dir(tmp_path) / "aafm-epsilon" / "final.ckpt", split.schema)
    assert swept.equal(fixed)


def test_sweep_needs_reweighting_variant(toy_config, capsys):
    assert run("sweep-t", "--config", toy_config, "--variant", "advfm") == 2


def test_resume(toy_config, tmp_path):
    assert run("train", "--config", toy_config, "--set", "train.epochs=3", "--no-figures") == 0
    full = (out_dir(tmp_path) / "aafm" / "final.ckpt").read_bytes()
    assert run("train", "--config", toy_config, "--set", "train.epochs=1", "--no-figures") == 0
    ckpt = out_dir(tmp_path) / "aafm" / "epoch1.ckpt"
    (out_dir(tmp_path) / "aafm" / "final.ckpt").rename(ckpt)
    assert run("train", "--config", toy_config, "--set", "train.epochs=3", "--resume", ckpt) == 0
    assert (out_dir(tmp_path) / "aafm" / "final.ckpt").read_bytes() == full


def test_compare(toy_config, tmp_path, capsys):
    assert run("compare", "--config", toy_config, "--variants", "fm", "advfm") == 0
    table = (out_dir(tmp_path) / "comparison.tsv").read_text()
    assert "metric\tfm\tadvfm" in table and "\nauc\t" in table
    assert (out_dir(tmp_path) / "figures" / "robustness.png").exists()


def test_exit_codes(toy_config, tmp_path, capsys):
    assert run("train", "--config", tmp_path / "missing.yaml") == 2
    assert run("train", "--config", toy_config, "--set", "train.epochs=0") == 2
    assert run("eval", "--config", toy_config, "--checkpoint", tmp_path / "nope.ckpt") == 2
    assert "error:" in capsys.readouterr().err
    bad = toy_config.parent / "interactions.tsv"
    bad.write_text("user_id\titem_id\trating\ttimestamp\nu1\ti1\t5\tnot-a-time\nu2\ti1\t4\t12\n")
    assert run("prepare", "--config", toy_config) == 3
    assert run("prepare", "--config", toy_config, "--set", "data.timestamp_column=when") == 3


def test_numerical_failure_exit_code(toy_config, capsys):
    code = run("train", "--config", toy_config, "--variant", "fm", "--set", "train.optimizer=sgd",
               "--set", "train.learning_rate=1e12", "--set", "train.init_std=10", "--no-figures")
    assert code == 4
    assert "non-finite" in capsys.readouterr().err


def test_bad_thread_setting(toy_config, monkeypatch):
    monkeypatch.setenv("AAFM_THREADS", "many")
    assert run("stats", "--config", toy_config) == 2


@pytest.mark.parametrize("cmd", ["prepare", "stats", "train", "eval", "robustness", "sweep-t", "compare"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([cmd, "--help"])
    assert exc.value.code == 0


def test_eval_twice_identical(toy_config, tmp_path):
    assert run("train", "--config", toy_config, "--no-figures") == 0
    reports = []
    for _ in range(2):
        assert run("eval", "--config", toy_config, "--no-figures") == 0
        reports.append((out_dir(tmp_path) / "aafm" / "eval.tsv").read_text())
    assert reports[0] == reports[1]
    values = dict(ln.split("\t") for ln in reports[0].splitlines() if not ln.startswith("#"))
    assert 0.0 <= float(values["auc"]) <= 1.0 and np.isfinite(float(values["logloss"]))
