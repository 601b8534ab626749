import csv
import json
import subprocess
import sys

import pytest

from nnsos.cli import main
from nnsos.sdpsolver import import_sdpa

from test_sdpsolver import sdpa_grammar_ok

NET = {"layers": [{"W": [[1.0]], "b": [0.0], "act": "relu"}, {"W": [[0.0]], "b": [0.0], "act": "id"}]}


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(p)

    return {
        "dir": tmp_path,
        "net": write("net.json", NET),
        "stable": write("stable.json", {"type": "linear", "A": [[0.5]], "B": [[1.0]]}),
        "unstable": write("unstable.json", {"type": "linear", "A": [[2.0]], "B": [[1.0]]}),
        "disturbed": write("dist.json", {"type": "linear", "A": [[0.5]], "B": [[1.0]], "E": [[1.0]], "C": [[1.0]]}),
        "pinned": write("pinned.json", {"type": "linear", "A": [[0.5]], "B": [[1.0]], "E": [[1.0]], "C": [[1.0]],
                                        "q": [{"vars": ["w1"], "terms": [{"exps": [2], "coef": -1.0}]}]}),
        "cubic": write("cubic.json", {"type": "polynomial", "f": [
            {"vars": ["x1", "u1"], "terms": [{"exps": [1, 0], "coef": 0.5}, {"exps": [3, 0], "coef": -0.1},
                                             {"exps": [0, 1], "coef": 1.0}]}]}),
        "broken": write("broken.json", '{"type": "linear",\n "A": [[0.5]]\n "B": [[1.0]]}'),
        "nofield": write("nofield.json", {"type": "linear", "A": [[0.5]]}),
        "write": write,
    }


def test_verify_certified(files, capsys):
    out = str(files["dir"] / "r.json")
    assert main(["verify", "--system", files["stable"], "--nn", files["net"], "--deg-v", "2", "--out", out]) == 0
    assert "certified-GAS" in capsys.readouterr().out
    rep = json.loads(open(out).read())
    assert rep["verdict"] == "certified-GAS" and "timings" in rep


def test_verify_no_certificate(files):
    assert main(["verify", "--system", files["unstable"], "--nn", files["net"]]) == 2


def test_verify_numerical_failure(files):
    # a single interior-point step on a mid-sized benchmark is far from any certificate
    inst = files["dir"] / "inst"
    assert main(["bench", "--n", "3", "--neurons", "5", "--seed-list", "1", "--out-dir", str(inst),
                 "--csv", str(files["dir"] / "b.csv")]) == 0
    assert main(["verify", "--system", str(inst / "n3_k5_s1_system.json"), "--nn", str(inst / "n3_k5_s1_nn.json"),
                 "--max-iter", "1"]) == 3


def test_usage_errors(files, capsys):
    assert main(["verify", "--system", files["broken"], "--nn", files["net"]]) == 64
    assert "broken.json:3:" in capsys.readouterr().err
    assert main(["verify", "--system", files["nofield"], "--nn", files["net"]]) == 64
    assert "missing field 'B'" in capsys.readouterr().err
    assert main(["verify", "--system", str(files["dir"] / "absent.json"), "--nn", files["net"]]) == 64
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--system", files["stable"], "--nn", files["net"], "--deg-v", "3"])
    assert exc.value.code == 64
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 64
    assert main(["gain", "--system", files["stable"], "--nn", files["net"]]) == 64


def test_polynomial_system(files):
    assert main(["verify", "--system", files["cubic"], "--nn", files["net"], "--v-depends-on", "x",
                 "--deg-v", "2"]) in (0, 2)
    assert main(["verify", "--system", files["cubic"], "--nn", files["net"], "--target", "2"]) == 64


def test_gain_and_iss(files, capsys):
    out = str(files["dir"] / "g.json")
    assert main(["gain", "--system", files["disturbed"], "--nn", files["net"], "--out", out]) == 0
    assert json.loads(open(out).read())["bound"] == pytest.approx(2.0, rel=0.05)
    assert main(["iss", "--system", files["disturbed"], "--nn", files["net"]]) == 0
    assert "certified-ISS" in capsys.readouterr().out
    assert main(["iss", "--system", files["pinned"], "--nn", files["net"]]) == 0
    assert "certified-robust-GAS" in capsys.readouterr().out


def test_simulate_outputs(files):
    rep = str(files["dir"] / "r.json")
    main(["verify", "--system", files["stable"], "--nn", files["net"], "--out", rep])
    traj, vcsv = files["dir"] / "t.csv", files["dir"] / "v.csv"
    assert main(["simulate", "--system", files["stable"], "--nn", files["net"], "--x0", "1.0", "--steps", "3",
                 "--report", rep, "--out", str(traj), "--v-out", str(vcsv)]) == 0
    rows = list(csv.DictReader(open(traj)))
    assert [float(r["x1"]) for r in rows] == [1.0, 0.5, 0.25, 0.125]
    V = [float(r["V"]) for r in csv.DictReader(open(vcsv))]
    assert V[0] == pytest.approx(4.0 / 3.0, rel=1e-5) and V == sorted(V, reverse=True)
    assert main(["simulate", "--system", files["stable"], "--nn", files["net"], "--x0", "1,2"]) == 64


def test_export_sdpa(files):
    out = files["dir"] / "p.dat-s"
    assert main(["export-sdpa", "--system", files["stable"], "--nn", files["net"], "--out", str(out)]) == 0
    text = out.read_text()
    assert sdpa_grammar_ok(text)
    assert import_sdpa(text).m > 0


def test_bench_csv(files):
    out = files["dir"] / "bench.csv"
    inst = files["dir"] / "inst"
    assert main(["bench", "--n", "2", "--neurons", "3", "--seeds", "2", "--csv", str(out),
                 "--out-dir", str(inst), "--jobs", "2"]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["seed"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"n", "neurons", "seed", "verdict", "solve_time", "iterations"}
    assert all(r["verdict"] == "certified-GAS" for r in rows)
    # generated instances feed straight back into verify
    assert main(["verify", "--system", str(inst / "n2_k3_s1_system.json"), "--nn",
                 str(inst / "n2_k3_s1_nn.json")]) == 0


def test_config_file_and_override(files):
    cfg = files["write"]("cfg2.json", {"v_depends_on": "x", "samples": 5})
    out = str(files["dir"] / "c.json")
    assert main(["--config", cfg, "verify", "--system", files["stable"], "--nn", files["net"], "--out", out]) == 0
    assert "l1" not in json.dumps(json.loads(open(out).read())["V"])
    bad = files["write"]("cfg3.json", {"nonsense": 1})
    assert main(["--config", bad, "verify", "--system", files["stable"], "--nn", files["net"]]) == 64


def test_seed_determinism(files):
    outs = []
    for k in range(2):
        out = str(files["dir"] / f"d{k}.json")
        main(["verify", "--system", files["stable"], "--nn", files["net"], "--seed", "3", "--out", out])
        rep = json.loads(open(out).read())
        rep.pop("timings")
        outs.append(rep)
    assert outs[0] == outs[1]


def test_console_entry_point(files):
    res = subprocess.run([sys.executable, "-m", "nnsos", "verify", "--system", files["unstable"], "--nn",
                          files["net"]], capture_output=True, text=True)
    assert res.returncode == 2
    assert "no-certificate-at-degree" in res.stdout
