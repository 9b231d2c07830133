import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lnbnn import cli, dataset

SMALL = ["--classes", "3", "--train-images", "4", "--query-images", "2", "--descriptors", "6",
         "--dim", "4", "--separation", "4.0"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_evaluate_writes_per_class_csv(tmp_path, capsys):
    out = tmp_path / "eval.csv"
    assert cli.main(["evaluate", "--method", "nbnn", "--out", str(out), *SMALL]) == 0
    rows = read_csv(out)
    assert rows[0] == ["class_id", "queries", "correct", "accuracy"]
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    assert all(int(r[1]) == 2 for r in rows[1:])
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary["method"] == "nbnn"
    assert 0.0 <= summary["mean_per_class_accuracy"] <= 1.0


@pytest.mark.parametrize("method", ["local", "positive", "logodds"])
def test_evaluate_methods(tmp_path, method):
    out = tmp_path / "eval.csv"
    assert cli.main(["evaluate", "--method", method, "--k", "3", "--checks", "16",
                     "--out", str(out), *SMALL]) == 0
    assert len(read_csv(out)) == 4


def test_sweep_k(tmp_path):
    out = tmp_path / "k.csv"
    assert cli.main(["sweep-k", "--ks", "1,2,4", "--out", str(out), *SMALL]) == 0
    rows = read_csv(out)
    assert rows[0] == ["k", "accuracy"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "4"]


def test_sweep_checks(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["sweep-checks", "--methods", "nbnn,local", "--budgets", "2,8",
                     "--k", "3", "--out", str(out), *SMALL]) == 0
    rows = read_csv(out)
    assert rows[0] == ["method", "checks", "accuracy", "query_seconds"]
    assert len(rows) == 5


def test_scaling(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["scaling", "--class-counts", "2,4", "--repeats", "1", "--checks", "8", "--k", "3",
                     "--train-images", "3", "--query-images", "1", "--descriptors", "5", "--dim", "4",
                     "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["class_count", "method", "build_seconds", "mean_query_seconds_per_image", "accuracy"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("2", "nbnn"), ("4", "nbnn"), ("2", "local"), ("4", "local")]


@pytest.mark.parametrize("suffix", [".ldsc", ".csv"])
def test_gen_synthetic_then_evaluate_file(tmp_path, suffix):
    data_path = tmp_path / f"data{suffix}"
    assert cli.main(["gen-synthetic", "--out", str(data_path), "--seed", "3", *SMALL]) == 0
    data = dataset.load_any(data_path)
    assert data.class_count == 3 and data.dimension == 4
    assert len(data) == 3 * (4 + 2) * 6
    out = tmp_path / "eval.csv"
    assert cli.main(["evaluate", "--data", str(data_path), "--train-images", "4",
                     "--k", "3", "--out", str(out)]) == 0
    assert sum(int(r[1]) for r in read_csv(out)[1:]) == 3 * 2


def test_convert_round_trip(tmp_path):
    src = tmp_path / "a.csv"
    src.write_text("0,0,0.5,0.25,1.0,2.0\n1,1,1.0,0.0,3.0,4.0\n")
    binary = tmp_path / "a.ldsc"
    back = tmp_path / "b.csv"
    assert cli.main(["convert", str(src), str(binary), "--locations"]) == 0
    assert cli.main(["convert", str(binary), str(back)]) == 0
    a = dataset.load_csv(src, has_locations=True)
    b = dataset.load_csv(back, has_locations=True)
    np.testing.assert_array_equal(a.descriptors, b.descriptors)
    np.testing.assert_array_equal(a.locations, b.locations)


def test_evaluate_with_locations(tmp_path):
    src = tmp_path / "a.csv"
    rows = [f"{c},{i},0.5,0.5,{c + 0.1 * i},{c}" for c in range(2) for i in range(c * 3, c * 3 + 3)]
    src.write_text("\n".join(rows) + "\n")
    assert cli.main(["evaluate", "--data", str(src), "--locations", "--train-images", "2",
                     "--k", "1", "--method", "nbnn", "--out", str(tmp_path / "o.csv")]) == 0


def test_missing_file_is_an_error(tmp_path, capsys):
    code = cli.main(["evaluate", "--data", str(tmp_path / "nope.ldsc")])
    assert code != 0
    assert "lnbnn: error" in capsys.readouterr().err


def test_malformed_file_is_an_error(tmp_path, capsys):
    bad = tmp_path / "bad.ldsc"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert cli.main(["evaluate", "--data", str(bad)]) != 0
    assert "magic" in capsys.readouterr().err


def test_oversized_k_is_an_error(capsys):
    assert cli.main(["evaluate", "--k", "1000", *SMALL]) != 0
    assert "smaller k" in capsys.readouterr().err


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as info:
        cli.main(["sweep-k", "--ks", "a,b"])
    assert info.value.code != 0
    with pytest.raises(SystemExit) as info:
        cli.main(["evaluate", "--method", "svm"])
    assert info.value.code != 0


def test_gen_synthetic_needs_out():
    with pytest.raises(SystemExit):
        cli.main(["gen-synthetic"])


def test_console_entry_point(tmp_path):
    out = tmp_path / "k.csv"
    proc = subprocess.run([sys.executable, "-m", "lnbnn.cli", "sweep-k", "--ks", "1",
                           "--out", str(out), *SMALL], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_csv(out)[0] == ["k", "accuracy"]
