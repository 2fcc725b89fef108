import configparser

import numpy as np
import pytest

from polyaurn import catalogue
from polyaurn.cli import main
from polyaurn.config import ConfigError, dump_config, load_config, parse_config, save_config
from polyaurn.io import read_csv

UNTENABLE = """
[experiment]
name = shrinking

[rule]
d = 2
m = 1

[rule.entries]
1,0 = -2,3
0,1 = 1,0

[initial]
counts = 1,1
"""

DIAGONAL = """
[rule]
d = 3
m = 2

[rule.entries]
2,0,0 = 4,0,0
1,1,0 = 2,2,0
1,0,1 = 2,0,2
0,2,0 = 0,4,0
0,1,1 = 0,2,2
0,0,2 = 0,0,4

[initial]
counts = 1,1,1
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config ---------------------------------------------------------------------


@pytest.mark.parametrize("name", catalogue.names())
def test_round_trip(name, tmp_path):
    cfg = catalogue.get(name)
    again = parse_config(dump_config(cfg))
    assert again == cfg
    path = save_config(cfg, tmp_path / "c.ini")
    assert load_config(path) == cfg
    assert dump_config(load_config(path)) == dump_config(cfg)


def test_overrides_cut_explicit_checkpoints():
    cfg = catalogue.get("4.2.3").with_overrides(n_steps=10_000, seed=5, n_reps=7, output_dir="x")
    ens = cfg.ensemble()
    assert ens.n_steps == 10_000 and ens.seed == 5 and ens.n_reps == 7
    assert ens.checkpoints[-1] == 10_000 and all(c <= 10_000 for c in ens.checkpoints)
    assert cfg.output_dir == "x"


def test_missing_composition_is_named():
    text = DIAGONAL.replace("0,1,1 = 0,2,2\n", "")
    with pytest.raises(ConfigError, match="0,1,1"):
        parse_config(text)


@pytest.mark.parametrize(
    "edit,field",
    [
        (("counts = 1,1,1", "counts = 1,x,1"), "initial.counts"),
        (("counts = 1,1,1", "counts = 1,1"), "initial.counts"),
        (("m = 2", "m = 0"), "rule.m"),
        (("2,0,0 = 4,0,0", "2,0,0 = 4,0"), "rule.entries"),
        (("2,0,0 = 4,0,0", "3,0,0 = 4,0,0"), "rule.entries"),
    ],
)
def test_malformed_fields(edit, field):
    text = DIAGONAL.replace(*edit)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(text)


def test_unknown_sections_are_ignored():
    assert parse_config(DIAGONAL + "\n[notes]\nauthor = me\n").rule.d == 3


def test_option_validation():
    with pytest.raises(ConfigError, match="simulation.n_reps"):
        parse_config(DIAGONAL + "\n[simulation]\nn_reps = 0\n")
    with pytest.raises(ConfigError, match="analysis.nope"):
        parse_config(DIAGONAL + "\n[analysis]\nnope = 1\n")
    with pytest.raises(ConfigError, match="simulation.checkpoints"):
        parse_config(DIAGONAL + "\n[simulation]\ncheckpoints = geometric:1\n").simulation.checkpoint_steps()


def test_catalogue_contents():
    cfg = catalogue.get("4.2.2")
    assert cfg.initial.counts == (10, 3, 3)
    assert cfg.rule.entries == {
        (2, 0, 0): (2, 0, 0), (1, 1, 0): (0, 0, 2), (1, 0, 1): (0, 2, 0),
        (0, 2, 0): (1, 0, 1), (0, 1, 1): (0, 1, 1), (0, 0, 2): (1, 1, 0),
    }
    cfg = catalogue.get("4.1.5")
    assert cfg.rule.m == 3 and cfg.initial.counts == (4, 6)
    assert [cfg.rule.entries[v] for v in cfg.rule.compositions] == [(82, 9), (91, 0), (0, 91), (9, 82)]
    with pytest.raises(KeyError, match="4.2.2"):
        catalogue.get("9.9")


# -- cli ------------------------------------------------------------------------


def test_examples_list(capsys):
    assert main(["examples"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 13
    assert [line.split()[0] for line in lines] == catalogue.names()


def test_examples_unknown_name(capsys):
    assert main(["examples", "4.9.9"]) == 2
    assert "4.1.1" in capsys.readouterr().err


def test_examples_writes_loadable_config(tmp_path, capsys):
    assert main(["examples", "4.1.5", "--out", str(tmp_path / "e.ini")]) == 0
    assert load_config(tmp_path / "e.ini") == catalogue.get("4.1.5")


def test_analyze_two_zero_example(capsys, tmp_path):
    assert main(["analyze", "--example", "4.2.2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(out)
    zeros = [parser[s] for s in parser.sections() if s.startswith("zero.")]
    assert [z["stability"] for z in zeros] == ["unstable", "stable"]
    np.testing.assert_allclose([float(x) for x in zeros[0]["location"].split(",")], [1, 0, 0])
    np.testing.assert_allclose([float(x) for x in zeros[1]["location"].split(",")], [0.2, 0.4, 0.4])
    eig = sorted(float(x) for x in zeros[1]["tangent_eigenvalues"].split(","))
    np.testing.assert_allclose(eig, [-18 / 5, -2], atol=1e-9)
    assert zeros[1]["regime"] == "GaussianSqrtN"
    assert (tmp_path / "analysis.ini").read_text() == out


def test_analyze_diagonal_note(tmp_path, capsys):
    assert main(["analyze", "--config", str(write(tmp_path, DIAGONAL))]) == 0
    assert "h ≡ 0; a.s. convergence to a random limit (diagonal case)" in capsys.readouterr().out


def test_analyze_missing_composition_exits_2(tmp_path, capsys):
    path = write(tmp_path, DIAGONAL.replace("1,0,1 = 2,0,2\n", ""))
    assert main(["analyze", "--config", str(path)]) == 2
    assert "1,0,1" in capsys.readouterr().err


def test_simulate_zero_reps_exits_2(tmp_path, capsys):
    assert main(["simulate", "--example", "4.1.1", "--reps", "0", "--out", str(tmp_path)]) == 2
    assert "n_reps" in capsys.readouterr().err


def test_bad_flags_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
    assert main(["simulate", "--example", "4.1.1", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_untenable_scheme_exits_3(tmp_path, capsys):
    path = write(tmp_path, UNTENABLE)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "not tenable: colour 1" in err
    assert main(["verify", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists()


def test_simulate_is_byte_identical(tmp_path, capsys):
    args = ["simulate", "--example", "4.1.5", "--reps", "30", "--steps", "2000"]
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for f in ("terminal.csv", "summary.csv", "metadata.ini"):
        a = (tmp_path / "a" / f).read_bytes()
        b = (tmp_path / "b" / f).read_bytes().replace(str(tmp_path / "b").encode(), str(tmp_path / "a").encode())
        assert a == b, f
    header, rows = read_csv(tmp_path / "a" / "terminal.csv")
    assert header == ["rep", "Z_1", "Z_2", "T_n"] and len(rows) == 30
    meta = (tmp_path / "a" / "metadata.ini").read_text()
    assert "seed = 20240611" in meta


def test_threads_from_environment(tmp_path, capsys, monkeypatch):
    args = ["simulate", "--example", "4.2.2", "--reps", "6", "--steps", "500"]
    monkeypatch.setenv("POLYAURN_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "env")]) == 0
    monkeypatch.setenv("POLYAURN_THREADS", "many")
    assert main(args + ["--out", str(tmp_path / "bad")]) == 2
    assert main(args + ["--out", str(tmp_path / "flag"), "--threads", "1"]) == 0
    assert (tmp_path / "env" / "terminal.csv").read_bytes() == (tmp_path / "flag" / "terminal.csv").read_bytes()


def verify_rows(tmp_path, *args):
    code = main(["verify", *args, "--out", str(tmp_path)])
    header, rows = read_csv(tmp_path / "verify.csv")
    assert header == ["check", "predicted", "empirical", "tolerance", "verdict", "note"]
    return code, rows


def test_verify_symmetric_three_colour(tmp_path, capsys):
    code, rows = verify_rows(tmp_path, "--example", "4.2.1", "--reps", "1000")
    assert code == 0
    checks = {r[0]: r[4] for r in rows}
    assert checks["limit assignment"] == "pass"
    assert any(c.startswith("CLT covariance") and v == "pass" for c, v in checks.items())


def test_verify_sigma_zero_skips_clt(tmp_path, capsys):
    code, rows = verify_rows(tmp_path, "--example", "5.3", "--reps", "200")
    assert code == 0
    (clt,) = [r for r in rows if r[0].startswith("CLT")]
    assert clt[4] == "skip" and "sigma^2 = 0" in clt[5]


def test_verify_cycling_rule(tmp_path, capsys):
    code, rows = verify_rows(tmp_path, "--example", "4.2.5", "--reps", "100")
    assert code == 0
    verdicts = {r[0]: r[4] for r in rows}
    assert verdicts["non-convergence"] == "pass"
    assert not any("CLT" in r[0] for r in rows)


def test_verify_reports_failure_with_exit_1(tmp_path, capsys):
    # 50 steps is far too short for a rate to settle
    code, rows = verify_rows(tmp_path, "--example", "4.2.1", "--reps", "300", "--steps", "50")
    assert code == 1
    assert any(r[4] == "fail" for r in rows)
