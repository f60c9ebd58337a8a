import json
import subprocess
import sys

import pytest

from debicluster.cli import main, resolve_threads, UsageError


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    args = ["simulate", "--scenario", "B", "--n-features", "1500", "--n-biomarkers", "40",
            "--coexpr-size", "50", "--seed", "3", "--out", str(out)]
    assert main(args) == 0
    return out


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_simulate_outputs(sim):
    assert {"matrix.tsv", "truth.tsv", "biomarkers.tsv", "config.json"} <= set(files(sim))
    cfg = json.loads((sim / "config.json").read_text())
    assert cfg["spec"]["scenario"] == "B" and cfg["command"] == "simulate"
    assert len((sim / "truth.tsv").read_text().splitlines()) == 4


def test_run_deterministic_across_threads(sim, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(sim / "matrix.tsv"), "--seed", "7", "--threads", "1", "--out", str(a)]) == 0
    assert main(["run", str(sim / "matrix.tsv"), "--seed", "7", "--threads", "4", "--out", str(b)]) == 0
    assert files(a) == files(b)
    assert (a / "biclusters.tsv").read_text().startswith("id\tsnr\tdirection")


def test_run_evaluate_redundancy(sim, tmp_path):
    r = tmp_path / "r"
    assert main(["run", str(sim / "matrix.tsv"), "--out", str(r), "--dump-modules"]) == 0
    assert (r / "modules.tsv").exists()
    e = tmp_path / "e"
    assert main(["evaluate", str(r / "biclusters.tsv"), str(sim / "truth.tsv"),
                 "--matrix", str(sim / "matrix.tsv"), "--out", str(e)]) == 0
    rep = json.loads((e / "report.json").read_text())
    assert rep["total"] >= 0.9
    d = tmp_path / "d"
    assert main(["redundancy", str(r / "biclusters.tsv"), "--matrix", str(sim / "matrix.tsv"), "--out", str(d)]) == 0
    red = json.loads((d / "redundancy.json").read_text())
    assert 0 <= red["fsp"] <= 1


def test_evaluate_truth_against_itself(sim, tmp_path):
    # a bicluster file whose sample sets are exactly the truth sets
    truth = [line.split("\t") for line in (sim / "truth.tsv").read_text().splitlines()]
    lines = ["id\tsnr\tdirection\tn_features\tn_samples\tfeatures\tsamples"]
    for i, (_, members) in enumerate(truth):
        lines.append(f"{i}\t1\tup\t2\t{len(members.split())}\tg0000 g0001\t{members}")
    bpath = tmp_path / "b.tsv"
    bpath.write_text("\n".join(lines) + "\n")
    assert main(["evaluate", str(bpath), str(sim / "truth.tsv"), "--matrix", str(sim / "matrix.tsv"),
                 "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["total"] == 1.0


def test_n_runs_and_consensus(sim, tmp_path):
    r = tmp_path / "r"
    assert main(["run", str(sim / "matrix.tsv"), "--n-runs", "3", "--out", str(r)]) == 0
    names = set(files(r))
    assert {"run0.biclusters.tsv", "run1.biclusters.tsv", "run2.biclusters.tsv", "biclusters.tsv", "consensus.json"} <= names
    c = tmp_path / "c"
    runs = [str(r / f"run{i}.biclusters.tsv") for i in range(3)]
    assert main(["consensus", *runs, "--matrix", str(sim / "matrix.tsv"), "--out", str(c)]) == 0
    assert (c / "biclusters.tsv").read_bytes() == (r / "biclusters.tsv").read_bytes()
    prov = json.loads((c / "consensus.json").read_text())
    assert set(prov) >= {"cutoff", "scan", "biclusters", "runs"}


def test_usage_errors(sim, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", str(sim / "matrix.tsv"), "--out", str(tmp_path), "--bogus"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["run", str(sim / "matrix.tsv"), "--out", str(tmp_path), "--pval", "2"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    assert main(["run", str(sim / "matrix.tsv"), "--out", str(tmp_path), "--edge-threshold", "1.5"]) == 1
    assert main(["consensus", str(tmp_path / "x.tsv"), "--matrix", str(sim / "matrix.tsv"), "--out", str(tmp_path)]) == 1


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("\ts1\ts2\ng1\t1\tNA\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 2
    tiny = tmp_path / "tiny.tsv"
    tiny.write_text("\ts1\ts2\ts3\ng1\t1\t2\t3\n")
    assert main(["run", str(tiny), "--out", str(tmp_path / "o")]) == 2


def test_threads_resolution(monkeypatch):
    monkeypatch.setenv("UNPAST_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("UNPAST_THREADS", "zero")
    with pytest.raises(UsageError):
        resolve_threads(None)
    monkeypatch.delenv("UNPAST_THREADS")
    assert resolve_threads(None) >= 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "debicluster", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "debicluster" in r.stdout
    r = subprocess.run([sys.executable, "-m", "debicluster", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 1
