import csv
import io
import json
import subprocess
import sys

import pytest

from misodelay import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    body = [line for line in text.splitlines() if not line.startswith("#:")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_parse_values():
    assert cli.parse_values("1,2,5") == [1.0, 2.0, 5.0]
    assert cli.parse_values("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli.parse_values("log:-2:0:3") == pytest.approx([0.01, 0.1, 1.0])
    for bad in ("1:0:1", "0:1:0", "a,b", "log:1:2"):
        with pytest.raises(cli.ConfigError):
            cli.parse_values(bad)


def test_series_and_sweep_expand():
    plan = cli.make_plan({"M": "1,2", "sweep": "w", "values": "1:3:1"}, "w")
    assert plan.axis == "w_ms" and plan.series_keys == ["M"]
    assert [(p["M"], p["w_ms"]) for p in plan.points] == [(1, 1.0), (1, 2.0), (1, 3.0), (2, 1.0), (2, 2.0), (2, 3.0)]


def test_bound_table(capsys):
    code, out, _ = run(capsys, "bound", "--set", "M=1,2", "--set", "values=1,3")
    assert code == 0
    rows = table(out)
    assert len(rows) == 4
    assert float(rows[0]["p_v"]) > float(rows[1]["p_v"])
    assert {r["status"] for r in rows} == {"ok"}
    assert "#: units=" in out
    assert "\r\n" in out


@pytest.mark.parametrize("argv", [
    ["bound", "--set", "scheme=nope", "--set", "values=1"],
    ["bound", "--set", "colour=red"],
    ["bound", "--set", "values=1", "--set", "M=zero"],
    ["bound", "--set", "values=1", "--set", "sweep=colour"],
    ["bound", "--recipe", "fig99"],
    ["bound", "/nonexistent/scenario.txt"],
    ["bound", "--set", "noequals"],
    ["epsopt", "--set", "values=1"],
    ["bound", "--set", "values=1", "--set", "snr_db=-1e9"],
])
def test_configuration_errors_exit_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert out == ""
    assert err.startswith("misodelay:")


def test_unstable_exit_3(capsys):
    code, out, err = run(capsys, "bound", "--set", "snr_db=-10", "--set", "rate_kbps=200", "--set", "values=1,2")
    assert code == 3
    assert {r["status"] for r in table(out)} == {"unstable"}
    assert "unstable" in err
    code, _, _ = run(capsys, "simulate", "--set", "snr_db=-10", "--set", "rate_kbps=200",
                     "--set", "values=1", "--set", "horizon=1000")
    assert code == 3


def test_partially_unstable_sweep_exits_0(capsys):
    code, out, _ = run(capsys, "bound", "--set", "w_ms=2", "--set", "sweep=snr", "--set", "values=-10,10",
                       "--set", "rate_kbps=150")
    assert code == 0
    assert [r["status"] for r in table(out)] == ["unstable", "ok"]


def test_numerical_failure_exit_4(capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise ArithmeticError("quadrature diverged")

    monkeypatch.setattr(cli.bound, "delay_bound", boom)
    code, out, err = run(capsys, "bound", "--set", "values=1")
    assert code == 4
    assert "numerical failure" in err


def test_header_reproduces_the_table(capsys, tmp_path):
    first = tmp_path / "first.csv"
    code, _, _ = run(capsys, "bound", "--set", "M=1,3", "--set", "values=1:4:1", "-o", str(first))
    assert code == 0
    second = tmp_path / "second.csv"
    code, _, _ = run(capsys, "bound", str(first), "-o", str(second))
    assert code == 0
    assert first.read_bytes() == second.read_bytes()


def test_csv_and_json_carry_the_same_values(capsys):
    _, out_csv, _ = run(capsys, "effcap", "--set", "M=1,2", "--set", "values=log:-3:0:4")
    _, out_json, _ = run(capsys, "effcap", "--set", "M=1,2", "--set", "values=log:-3:0:4", "--format", "json")
    lines = out_json.splitlines()
    meta = json.loads(lines[0])["meta"]
    assert meta["command"] == "effcap"
    records = [json.loads(x) for x in lines[1:]]
    rows = table(out_csv)
    assert len(records) == len(rows) == 8
    for rec, row in zip(records, rows):
        assert set(rec) == set(row)
        for key, value in rec.items():
            assert float(row[key]) == value


def test_epsopt_marks_one_argmin_per_series(capsys):
    code, out, _ = run(capsys, "epsopt", "--set", "M=1,2", "--set", "w_ms=3", "--set", "values=log:-6:-1:6")
    assert code == 0
    rows = table(out)
    for M in ("1", "2"):
        series = [r for r in rows if r["M"] == M]
        assert sum(r["is_argmin"] == "true" for r in series) == 1
        best = min(series, key=lambda r: float(r["p_v"]))
        assert best["is_argmin"] == "true"


def test_jobs_do_not_change_output(capsys):
    args = ["bound", "--set", "M=1,2,3", "--set", "values=1:3:1"]
    _, serial, _ = run(capsys, *args, "-j", "1")
    _, parallel, _ = run(capsys, *args, "-j", "2")
    assert serial == parallel


def test_simulate_series_get_distinct_seeds(capsys):
    code, out, _ = run(capsys, "simulate", "--set", "M=1,2", "--set", "values=1,2", "--set", "horizon=20000",
                       "--set", "snr_db=0")
    assert code == 0
    rows = table(out)
    assert len({r["seed"] for r in rows}) == 2
    for r in rows:
        assert float(r["ci_low"]) <= float(r["p_emp"]) <= float(r["ci_high"])


@pytest.mark.parametrize("name", ["fig1", "fig2", "fig2_fb", "fig4", "fig5", "fig9"])
def test_recipes_load(name):
    settings = cli.read_scenario(cli.recipe_text(name), name)
    plan = cli.make_plan(settings, "w")
    assert plan.points


def test_gaussian_scheme_estimates_its_moments(capsys):
    code, out, _ = run(capsys, "bound", "--set", "scheme=gaussian", "--set", "M=10", "--set", "snr_db=0",
                       "--set", "moment_samples=20000", "--set", "values=1")
    assert code == 0
    assert table(out)[0]["status"] == "ok"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "misodelay.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("misodelay ")
