import textwrap

import pytest

from regsde import acceptance, cli
from regsde.acceptance import CriterionResult


def _cfg(tmp_path, body: str, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(body))
    return p


GEN = """
[run]
command = gen
seed = 11

[grid]
n_steps = 256

[driver]
kind = fbm
hurst = 0.3333333333333333
n_paths = 4
"""


def _read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_is_deterministic_across_workers(tmp_path):
    cfg = _cfg(tmp_path, GEN)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["--config", str(cfg), "--out", str(a), "--quiet"]) == 0
    assert cli.main(["--config", str(cfg), "--out", str(b), "--workers", "4", "--quiet"]) == 0
    files = _read_all(a)
    assert sorted(files) == [f"path_{i:04d}.csv" for i in range(4)]
    assert files == _read_all(b)
    head = files["path_0000.csv"].decode().splitlines()[0]
    assert head.startswith("# regsde ") and "config_sha256=" in head and "seed=11" in head


def test_seed_override_changes_output(tmp_path):
    cfg = _cfg(tmp_path, GEN)
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["--config", str(cfg), "--out", str(a), "--quiet"])
    cli.main(["--config", str(cfg), "--out", str(b), "--seed", "12", "--quiet"])
    assert _read_all(a)["path_0001.csv"] != _read_all(b)["path_0001.csv"]


def test_missing_config_writes_nothing(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "never"
    assert cli.main(["--config", str(tmp_path / "nope.ini"), "--out", str(out), "--quiet"]) == 2
    assert not out.exists() and list(tmp_path.iterdir()) == []


@pytest.mark.parametrize("body", [
    "[grid]\nn_step = 256\n",
    "[gird]\nn_steps = 256\n",
    "[run]\ncommand = plot\n",
    "[grid]\nn_steps = 1000\n[run]\ncommand = gen\n",
    "[coefficient]\nclosed_form = maybe\n",
    "not an ini file",
])
def test_config_errors(tmp_path, body):
    cfg = _cfg(tmp_path, body)
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_each_command_writes_its_table(tmp_path):
    common = "[grid]\nn_steps = 256\n[ladder]\nj_min = 3\nj_max = 5\n"
    cases = {
        "var": ("[driver]\nkind = brownian\n[ensemble]\nn_rep = 4\n", "var_report.csv"),
        "integrate": ("[driver]\nkind = fbm\nhurst = 0.4\n", "integrals_eps_0.125.csv"),
        "check": ("[driver]\nkind = fbm\nhurst = 0.3333333333333333\n", "check_ito.csv"),
        "solve": ("[driver]\nkind = fbm\nhurst = 0.7\n[case]\neta = 2.0\n", "solution_0000.csv"),
        "demo-nonuniq": ("[demo]\nn_steps = 1024\n", "nonuniqueness.csv"),
    }
    for command, (extra, fname) in cases.items():
        cfg = _cfg(tmp_path, common + extra, name=f"{command}.ini")
        out = tmp_path / command
        assert cli.main([command, "--config", str(cfg), "--out", str(out), "--quiet"]) == 0, command
        text = (out / fname).read_text()
        assert text.startswith("# regsde "), command


def test_check_kinds_need_composite(tmp_path):
    cfg = _cfg(tmp_path, "[grid]\nn_steps = 256\n[check]\nkind = wentzell\n")
    assert cli.main(["check", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_numeric_failure_exit_code(tmp_path):
    cfg = _cfg(tmp_path, """
        [run]
        command = solve
        [grid]
        n_steps = 1024
        [driver]
        kind = fbm
        hurst = 0.7
        [coefficient]
        sigma = linear
        alpha = x^2
        closed_form = true
        """)
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 3


SUITE = """
[run]
command = suite
[suite]
only = c04, c13
determinism = {det}
"""


def test_suite_subset_passes(tmp_path):
    cfg = _cfg(tmp_path, SUITE.format(det="true"))
    out = tmp_path / "s"
    assert cli.main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[1] == "criterion,title,passed"
    assert [row.split(",")[0] for row in summary[2:]] == ["c04", "c13", "c14"]
    assert all(row.endswith(",1") for row in summary[2:])


def test_suite_failure_exit_code(tmp_path, monkeypatch):
    def broken(ctx):
        return CriterionResult("c04", "forced failure", False, {})

    broken.__name__ = "c04_forced"
    monkeypatch.setattr(acceptance, "CRITERIA", [broken])
    cfg = _cfg(tmp_path, SUITE.format(det="false"))
    out = tmp_path / "s"
    assert cli.main(["--config", str(cfg), "--out", str(out), "--quiet"]) == 4
    assert (out / "summary.csv").read_text().splitlines()[-1].endswith(",0")


def test_shipped_configs_parse():
    from pathlib import Path

    for p in sorted((Path(__file__).parents[1] / "configs").glob("*.ini")):
        cfg = cli.load_config(p)
        assert cfg["run.command"] in cli.COMMANDS
