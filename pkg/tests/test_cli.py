import csv

import numpy as np
import pytest

from gflowlab.cli import main, read_dag_file
from gflowlab.config import ConfigError, load_config
from gflowlab.exact import read_pgm

SMOKE = ["seeds=0", "iterations=10", "eval_every=5", "width=8"]


def write_cfg(tmp_path, text):
    p = tmp_path / "x.cfg"
    p.write_text(text)
    return p


def test_config_parsing_and_overrides(tmp_path):
    p = write_cfg(tmp_path, "side = 8  # grid\n\nseeds = 0-2,5\nlosses = TB, DB\nlr=3e-3\nexclude_modes = yes\n")
    cfg = load_config(p, ["lr=1e-2", "modes=1:2:1:2;4:4:4:4"])
    assert cfg.seeds == (0, 1, 2, 5)
    assert cfg.losses == ("TB", "DB")
    assert cfg.lr == 1e-2
    assert cfg.exclude_modes is True
    assert len(cfg.grid().modes) == 2
    # text form parses back to the same config
    again = write_cfg(tmp_path, cfg.to_text())
    assert load_config(again) == cfg


@pytest.mark.parametrize("bad", ["colour = red", "lr = fast", "loss = XB", "just words", "mask_mode = hide"])
def test_config_errors(tmp_path, bad):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, bad + "\n"))


def test_sweep_smoke_and_determinism(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--out", str(out1), *SMOKE]) == 0
    assert main(["sweep", "--out", str(out2), "--jobs", "2", *SMOKE]) == 0
    rows = list(csv.DictReader(open(out1 / "curves.csv")))
    # 6 curves x (10/5 + 1) eval points
    assert len(rows) == 18
    assert list(rows[0]) == ["loss", "masked", "seed", "iteration", "jsd", "train_loss"]
    assert {(r["loss"], r["masked"]) for r in rows} == {(k, m) for k in ("TB", "DB", "FL-DB") for m in ("0", "1")}
    assert (out1 / "curves.csv").read_bytes() == (out2 / "curves.csv").read_bytes()
    assert len(list((out1 / "checkpoints").glob("*.ckpt"))) == 6
    assert "FL-DB(masked)<TB(masked)" in capsys.readouterr().out


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GFLOW_LAB_OUT", str(tmp_path / "env"))
    assert main(["sweep", "losses=DB", "compare_masked=false", *SMOKE]) == 0
    assert (tmp_path / "env" / "curves.csv").exists()


def test_eval_checkpoint(tmp_path, capsys):
    main(["sweep", "--out", str(tmp_path), "losses=TB", *SMOKE])
    ck = tmp_path / "checkpoints" / "TB_masked_seed0.ckpt"
    assert main(["eval", "--checkpoint", str(ck)]) == 0
    got = float(capsys.readouterr().out.split("reward:")[1].split()[0])
    final = [r for r in csv.DictReader(open(tmp_path / "curves.csv")) if r["masked"] == "1"][-1]
    assert got == float(final["jsd"])
    assert read_pgm(tmp_path / "checkpoints" / "TB_masked_seed0.pgm").shape == (8, 8)


def test_length_outputs(tmp_path):
    rc = main(["length", "--out", str(tmp_path), "side=8", "length_threshold=5", "seeds=0", "iterations=10", "eval_every=5", "width=8"])
    assert rc == 0
    for name in ("learned.csv", "learned.pgm", "reward.csv", "reward.pgm", "length_report.csv"):
        assert (tmp_path / name).exists()
    assert read_pgm(tmp_path / "learned.pgm").shape == (8, 8)
    assert np.loadtxt(tmp_path / "learned.csv", delimiter=",").sum() == pytest.approx(1.0)


def test_length_threshold_full_is_unmasked(tmp_path):
    from gflowlab.config import ExperimentConfig

    assert len(ExperimentConfig(side=8, length_threshold=14).length_mask()) == 0


def test_exit_codes(tmp_path):
    assert main(["sweep", "nonsense=1"]) == 1
    assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["certify", "--grid", "9"]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert main(["certify", "--perturbations", "5", "--lemma-trials", "40", "--iid-trials", "20", "--inject-bug"]) == 3


def test_certify_dag_file(tmp_path, capsys):
    p = tmp_path / "g.dag"
    p.write_text("# two routes\nsource s\nsink t\nedge s a\nedge s b\nedge a c\nedge b c\nedge c t\nedge a t\nreward a 2.5\n")
    dag, reward = read_dag_file(p)
    assert reward == {"a": 2.5, "c": 1.0}
    csv_path = tmp_path / "r.csv"
    rc = main(["certify", "--dag", str(p), "--perturbations", "10", "--lemma-trials", "30", "--iid-trials", "20", "--csv", str(csv_path)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out
    assert csv_path.exists()


def test_bad_dag_file(tmp_path):
    p = tmp_path / "g.dag"
    p.write_text("source s\nsink t\nedge s a\nedge a s\nedge a t\n")
    assert main(["certify", "--dag", str(p)]) == 1
