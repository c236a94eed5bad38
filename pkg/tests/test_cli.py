import json
import math
import subprocess
import sys

import pytest

from jacksontree.cli import main
from jacksontree.exact import gamblers_ruin


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_json(capsys):
    code, out, _ = run(capsys, "estimate", "--config", "ex1.json", "--n", "30", "--K", "2000",
                       "--eps", "0.25", "--delta", "0.08", "--seed", "1")
    assert code == 0
    res = json.loads(out)
    assert {"p_hat", "std_err", "ci95", "K", "seed", "hits", "second_moment", "wall_ms"} <= set(res)
    assert res["seed"] == 1
    assert 1e-23 < res["p_hat"] < 2e-22


def test_missing_config(capsys):
    code, _, err = run(capsys, "estimate", "--config", "does/not/exist.json")
    assert code == 2 and "error" in err


def test_bad_params_is_config_error(capsys):
    code, _, _ = run(capsys, "estimate", "--config", "mm1", "--eps", "-1", "--delta", ".1")
    assert code == 2


def test_naive_warns_and_returns_zero(capsys, caplog):
    code, out, _ = run(capsys, "estimate", "--config", "ex1", "--policy", "naive", "--K", "2000")
    assert code == 0
    assert json.loads(out)["p_hat"] == 0.0
    assert "no path" in caplog.text


def test_byte_identical(capsys):
    args = ["estimate", "--config", "ex1", "--K", "3000", "--seed", "5", "--no-timing"]
    outs = {run(capsys, *args, "--threads", t)[1] for t in ("1", "4")}
    assert len(outs) == 1


def test_exact(capsys):
    code, out, _ = run(capsys, "exact", "--config", "mm1", "--n", "5")
    res = json.loads(out)
    assert code == 0
    assert res["p_exact"] == pytest.approx(gamblers_ruin(.3, .7, 5), rel=1e-12, abs=0)
    assert res["states"] == 6


def test_sweep_csv(capsys, tmp_path):
    target = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--config", "mm1", "--n", "10,20,40", "--K", "5000",
                       "--out", str(target))
    assert code == 0 and out == ""
    lines = target.read_text().splitlines()
    assert lines[0] == "n,p_hat,se,rate1,rate2"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [10, 20, 40]
    rate = float(lines[-1].split(",")[3])
    assert abs(rate - math.log(7 / 3)) < .15 * math.log(7 / 3)


def test_verify(capsys):
    code, out, _ = run(capsys, "verify", "--config", "ex2.json", "--samples", "1000")
    assert code == 0
    assert "256 effective gradients" in out
    assert out.count("PASS") == 4


def test_verify_failure_exit_code(capsys, tmp_path):
    # an inflated decay rate pushes W above zero on the exit set
    code, out, _ = run(capsys, "verify", "--config", "ex1", "--gamma", "2.7", "--samples", "500")
    assert code != 0 and "FAIL" in out


def test_table(capsys):
    code, out, _ = run(capsys, "table", "--config", "ex1", "--K", "2000", "--exact")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("Exact probability")
    assert sum(l.startswith("Est.") for l in lines) == 5


def test_dump_config_roundtrip(capsys, tmp_path):
    code, out, _ = run(capsys, "exact", "--config", "five_node", "--dump-config")
    assert code == 0
    path = tmp_path / "five.json"
    path.write_text(out)
    code2, out2, _ = run(capsys, "exact", "--config", str(path), "--dump-config")
    assert json.loads(out2) == json.loads(out)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jacksontree", "exact", "--config", "mm1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["states"] == 11
