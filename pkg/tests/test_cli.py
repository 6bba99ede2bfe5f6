import json

import pytest

from qsdlab.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_exit_codes(capsys, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"N": 2, "rows": [{"from": 1, "to": [0, 2], "p": [0.5, 0.5]},
                                                  {"from": 2, "to": [1], "p": [1.0]}]}))
    code, out, _ = run(capsys, "validate", str(good))
    assert code == 0 and json.loads(out)["valid"]
    broken = tmp_path / "broken.json"
    broken.write_text('{"N": 2, "rows": [')
    code, out, err = run(capsys, "validate", str(broken))
    assert code == 1 and out == "" and "error" in err
    sums = tmp_path / "sums.json"
    sums.write_text(json.dumps({"N": 1, "rows": [{"from": 1, "to": [0, 1], "p": [0.5, 0.6]}]}))
    code, out, _ = run(capsys, "validate", str(sums))
    assert code == 2 and json.loads(out)["violations"]


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["yaglom", "--no-such-flag"])
    assert e.value.code == 1
    code, _, err = run(capsys, "yaglom", "--preset", "pq-walk", "--r", "0.2")
    assert code == 1 and "r = 0" in err


def test_yaglom_json_embeds_config(capsys):
    argv = ["yaglom", "--preset", "delayed-walk", "--N", "60", "--tol", "1e-8"]
    code, out, _ = run(capsys, *argv)
    doc = json.loads(out)
    assert code == 0 and doc["schema"] == "qsd-lab/yaglom/1"
    assert doc["config"]["p"] == 0.15 and doc["config"]["N"] == 60 and doc["config"]["seed"] == 0
    assert doc["converged"] and doc["residual"] < 1e-6
    assert run(capsys, *argv)[1] == out


def test_holley_check_negative_control(capsys):
    code, out, _ = run(capsys, "holley-check", "--preset", "delayed-walk", "--p", "0.3", "--r", "0.3", "--q", "0.4")
    doc = json.loads(out)
    assert code == 2
    assert not doc["condition_b"] and not doc["trajectory_domination"]
    assert doc["bb2"]["first_failing_y"] == 2
    assert any(c["condition"] == "b" for c in doc["counterexamples"])
    code, out, _ = run(capsys, "holley-check", "--preset", "delayed-walk")
    assert code == 0 and json.loads(out)["trajectory_domination"]


def test_couple_csv_deterministic(capsys, monkeypatch):
    argv = ["couple", "--sweeps", "2000", "--seeds", "3", "--nu", "1", "--nu-prime", "3", "--seed", "7"]
    code, out, _ = run(capsys, *argv)
    lines = out.splitlines()
    assert code == 0
    assert lines[0].startswith("# schema: qsd-lab/couple/1") and lines[1].startswith("# config: ")
    assert lines[2] == "seed,sweep,tv,tv_prime,violations"
    assert all(line.endswith(",0") for line in lines[3:])
    assert run(capsys, *argv)[1] == out
    assert run(capsys, *argv, "--jobs", "2")[1] == out
    monkeypatch.setenv("QSD_LAB_SEED", "7")
    assert run(capsys, *argv[:-2])[1] == out


def test_couple_output_file(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for f in (a, b):
        assert main(["couple", "--sweeps", "500", "--output", str(f)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_qsd_command(capsys):
    code, out, _ = run(capsys, "qsd", "--lambda", "0.3333333333333333")
    doc = json.loads(out)
    assert code == 0 and doc["residual"] < 1e-8
    assert doc["weights"]["1"] == pytest.approx(0.1786327949540818, abs=1e-10)  # renormalized after a tail < 1e-10
    code, out, _ = run(capsys, "qsd", "--lambda", "0.3333333333333333", "--nu1", "0.2", "--recursion")
    assert code == 2 and json.loads(out)["negative_weight_at"] > 1


def test_bd_check(capsys):
    code, out, _ = run(capsys, "bd-check")
    assert code == 0 and json.loads(out)["agree"]
    code, out, _ = run(capsys, "bd-check", "--rates", '{"p": [0.1, 0.8, 0.1, 0.1], "r": [0.6, 0.1, 0.1, 0.5], '
                                                     '"q": [0.3, 0.1, 0.8, 0.4]}')
    doc = json.loads(out)
    assert code == 2 and doc["bb3"]["first_failing_y"] == 3 and doc["agree"]


def test_ct_limit_csv(capsys):
    code, out, _ = run(capsys, "ct-limit", "--N", "100")
    lines = out.splitlines()
    assert code == 0 and lines[2] == "r,steps,tv_to_ct" and len(lines) == 7
    assert run(capsys, "ct-limit", "--N", "100", "--jobs", "2")[1] == out
    # stopping at r = 0.99 leaves the final distance above 1e-3
    assert run(capsys, "ct-limit", "--r-list", "0.5,0.9,0.99", "--N", "100")[0] == 2


def test_explore_is_report_only(capsys):
    code, out, _ = run(capsys, "explore-pq-gt-r2", "--r-list", "0.1,0.6", "--N", "80", "--max-n", "300",
                       "--horizon", "50", "--format", "json")
    rows = json.loads(out)["rows"]
    assert code == 0 and rows[0]["pq_gt_r2"] and not rows[1]["pq_gt_r2"]
