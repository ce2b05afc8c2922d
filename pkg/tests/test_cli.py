import json
import subprocess
import sys

import numpy as np
import pytest

from hybseq.cli import run
from hybseq.dataset import read_csv
from hybseq.seq import write_fasta, random_seq, reverse_complement

GOLD = ("TGACTACGTCGATGCAGTAC", "GTACTGCATCGACGTAGTCA")


def _out(capsys):
    return capsys.readouterr().out


def test_align_prints_score(capsys):
    assert run(["align", "--pair", "GAATACTGTCAGTGAGAGGATCTGCC", "GAATACTGTCAGTGAGAGGATCTGCC"]) == 0
    assert _out(capsys).strip() == "130"


def test_align_rc(capsys):
    s = "ACGTTGCAAGGCTTAGCATT"
    assert run(["align", "--rc", "--pair", s, str(reverse_complement(s))]) == 0
    assert _out(capsys).strip() == "100"


def test_usage_errors_exit_nonzero(capsys):
    assert run(["frobnicate"]) == 2
    assert run(["align", "--pair", "ACGT"]) == 2
    assert run(["align", "--pair", "ACGU", "ACGT"]) == 1
    capsys.readouterr()


def test_entry_point_subprocess():
    r = subprocess.run([sys.executable, "-m", "hybseq.cli", "align", "--pair", "ACGT", "ACGT"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "20"
    r = subprocess.run([sys.executable, "-m", "hybseq.cli", "nope"], capture_output=True, text=True)
    assert r.returncode != 0 and "invalid choice" in r.stderr


def test_thermo_reports_yield_and_species(capsys):
    assert run(["thermo", "--pair", "AGCTTGCAGGCATCAGTACG", "CGTACTGATGCCTGCAAGCT"]) == 0
    out = _out(capsys).splitlines()
    assert out[0].startswith("yield=") and float(out[0].split("=")[1]) > 0.99
    assert out[1] == "species,conc_M"
    assert len(out) > 3


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"n_roots": 20, "target_size": 600}}))
    assert run(["--seed", "3", "--config", str(cfg), "generate", "--out", str(d / "a.csv")]) == 0
    return d, cfg


def test_generate_is_seeded(workdir):
    d, cfg = workdir
    assert run(["--seed", "3", "--config", str(cfg), "generate", "--out", str(d / "b.csv")]) == 0
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    assert run(["--seed", "4", "--config", str(cfg), "generate", "--out", str(d / "c.csv")]) == 0
    assert (d / "a.csv").read_bytes() != (d / "c.csv").read_bytes()
    assert 550 <= len(read_csv(d / "a.csv")) <= 650


def test_config_flags_override(workdir, tmp_path):
    d, _ = workdir
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"size": 100, "dataset": {"n_roots": 5}}))
    assert run(["--config", str(cfg), "generate", "--out", str(tmp_path / "x.csv")]) == 0
    assert len(read_csv(tmp_path / "x.csv")) <= 110
    assert run(["--config", str(cfg), "generate", "--size", "200", "--out", str(tmp_path / "y.csv")]) == 0
    assert len(read_csv(tmp_path / "y.csv")) > 150
    (tmp_path / "bad.json").write_text("[1]")
    assert run(["--config", str(tmp_path / "bad.json"), "align", "--pair", "A", "A"]) == 2


def test_split_features_train_eval_predict(workdir, capsys):
    d, _ = workdir
    assert run(["split", "--in", str(d / "a.csv"), "--prefix", str(d / "p_")]) == 0
    counts = dict(kv.split("=") for kv in _out(capsys).split())
    assert sum(map(int, counts.values())) == len(read_csv(d / "a.csv"))
    assert run(["features", "--in", str(d / "p_test.csv"), "--out", str(d / "f.csv")]) == 0
    assert (d / "f.csv").read_text().count("\n") == int(counts["test"]) + 1

    for kind, extra in [("lda", []), ("qda", []), ("mlp", ["--max-epochs", "3"]),
                        ("cnn-lite", ["--max-epochs", "1", "--batch-size", "64", "--symmetric"])]:
        model = d / f"{kind}.npz"
        assert run(["train", "--model", kind, "--in", str(d / "p_train.csv"),
                    "--val", str(d / "p_val.csv"), "--out", str(model)] + extra) == 0
        assert run(["eval", "--model", str(model), "--in", str(d / "p_test.csv"),
                    "--out", str(d / f"{kind}.txt")]) == 0
        out = _out(capsys)
        assert "MCC" in out.upper()
        lines = dict(l.split("=", 1) for l in (d / f"{kind}.txt").read_text().split())
        assert -1 <= float(lines["mcc"]) <= 1
        assert run(["predict", "--model", str(model), "--in", str(d / "p_test.csv")]) == 0
        rows = _out(capsys).strip().splitlines()
        assert rows[0] == "s1,s2,score,label" and len(rows) == int(counts["test"]) + 1

    from hybseq.models import load_model
    assert load_model(d / "cnn-lite.npz").symmetrize
    assert run(["train", "--model", "lda", "--symmetric", "--in", str(d / "p_train.csv"),
                "--out", str(d / "x.npz")]) == 2
    capsys.readouterr()

    bare = d / "bare.csv"
    bare.write_text("s1,s2\n%s,%s\n" % GOLD)
    assert run(["predict", "--model", str(d / "lda.npz"), "--in", str(bare)]) == 0
    assert len(_out(capsys).strip().splitlines()) == 2
    # LDA/QDA persist exactly
    assert load_model(d / "lda.npz").named_steps["clf"].coef_.shape == (9,)


def test_design(tmp_path, capsys):
    rng = np.random.default_rng(0)
    seqs = [random_seq(20, rng) for _ in range(40)]
    seqs.append(reverse_complement(seqs[0]))
    write_fasta(seqs, tmp_path / "lib.fasta")
    assert run(["design", "--in", str(tmp_path / "lib.fasta"), "--out", str(tmp_path / "c.csv"),
                "--prune"]) == 0
    out = dict(l.split("=") for l in _out(capsys).split())
    assert int(out["sequences"]) == 41 and int(out["conflicts"]) >= 1
    assert int(out["kept"]) < 41
    assert (tmp_path / "c.pruned.fasta").exists()
    assert run(["design", "--in", str(tmp_path / "lib.fasta"), "--out", str(tmp_path / "d.csv"),
                "--predictor", "cnn"]) == 2
    capsys.readouterr()


def test_bench_command(tmp_path, capsys):
    assert run(["bench", "--subject", "thermo-oracle", "--size", "200", "--trials", "2"]) == 0
    out = dict(l.split("=") for l in _out(capsys).split())
    assert out["trials"] == "2" and float(out["mean_s"]) > 0
    assert run(["bench", "--subject", "cnn-lite", "--size", "200"]) == 1
    capsys.readouterr()


def test_threads_flag(capsys):
    assert run(["--threads", "1", "align", "--pair", "ACGT", "ACGT"]) == 0
    assert run(["--threads", "0", "align", "--pair", "ACGT", "ACGT"]) == 0
    assert run(["--threads", "-1", "align", "--pair", "ACGT", "ACGT"]) == 2
    capsys.readouterr()
