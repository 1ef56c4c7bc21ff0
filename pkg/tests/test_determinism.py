import json
import os
import subprocess
import sys

from conftest import CONFIGS
from delaytrack import cli


def run_once(out):
    assert cli.main(["solve", str(CONFIGS / "ex1a.json"), "--out", str(out), "--oracle-check"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    summary.pop("timestamp")
    return summary, (out / "solution.csv").read_bytes()


def test_repeat_runs_match(tmp_path):
    s1, c1 = run_once(tmp_path / "a")
    s2, c2 = run_once(tmp_path / "b")
    assert json.dumps(s1, sort_keys=True) == json.dumps(s2, sort_keys=True)
    assert c1 == c2


def test_numpy_fallback_agrees(tmp_path):
    s1, c1 = run_once(tmp_path / "a")
    env = dict(os.environ, DELAYTRACK_DISABLE_NUMBA="1")
    out = tmp_path / "b"
    subprocess.run([sys.executable, "-m", "delaytrack", "solve", str(CONFIGS / "ex1a.json"), "--out", str(out),
                    "--oracle-check"], env=env, check=True, capture_output=True)
    s2 = json.loads((out / "summary.json").read_text())
    assert abs(s1["objective"] - s2["objective"]) < 1e-12
    assert abs(s1["oracle"]["objective"] - s2["oracle"]["objective"]) < 1e-10
