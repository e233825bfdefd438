import csv
import json

import pytest

from polymer_lab.cli import (
    ConfigError,
    EXPERIMENTS,
    main,
    parse_grid,
    read_config_file,
    resolve_config,
)


def _csv_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# polymer-lab ")
    return list(csv.reader(lines[1:]))


def test_tails_defaults_end_to_end(tmp_path, capsys):
    out = tmp_path / "tails.csv"
    assert main(["tails", "--out", str(out)]) == 0
    rows = _csv_rows(out)
    assert rows[0] == ["u", "p_hat", "se", "gauss_bound", "threshold"]
    assert [float(r[0]) for r in rows[1:]] == parse_grid("0:0.25:3")
    summary = capsys.readouterr().out
    assert "PASS" in summary and summary.count("\n") == 1


def test_negative_t_is_a_config_error(tmp_path, capsys):
    assert main(["tails", "--t", "-1", "--out", str(tmp_path / "x.csv")]) == 1
    err = capsys.readouterr().err
    assert "t > 0" in err
    assert not (tmp_path / "x.csv").exists()


@pytest.mark.parametrize(
    "argv, fragment",
    [
        (["nonsense"], "unknown experiment"),
        (["partition", "--M", "10"], "M >= 100"),
        (["neg-moments", "--p", "0"], "p > 0"),
        (["halving", "--N_grid", "8,9"], "even N"),
        (["partition", "--N", "4", "--x", "9"], "unreachable"),
        (["partition", "--N", "abc"], "must be a number"),
        (["partition", "--bogus", "1"], "unrecognized"),
    ],
)
def test_usage_errors_exit_one(argv, fragment, capsys, tmp_path):
    assert main(argv + ["--out", str(tmp_path / "o.csv")]) == 1
    assert fragment in capsys.readouterr().err


def test_unwritable_output_path(tmp_path, capsys):
    assert main(["partition", "--N", "4", "--M", "200", "--out", str(tmp_path / "missing" / "o.csv")]) == 1
    assert "output directory" in capsys.readouterr().err


def test_repeated_run_is_byte_identical(tmp_path, monkeypatch):
    paths = []
    for k, threads in enumerate(("1", "4")):
        monkeypatch.setenv("PLAB_THREADS", threads)
        out = tmp_path / f"run{k}.jsonl"
        assert main(["partition", "--N", "16", "--M", "3000", "--seed", "5",
                     "--format", "jsonl", "--out", str(out)]) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_provenance_header_tracks_config(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["partition", "--N", "4", "--M", "200", "--seed", "1", "--out", str(a)])
    main(["partition", "--N", "4", "--M", "200", "--seed", "2", "--out", str(b)])
    ha, hb = a.read_text().splitlines()[0], b.read_text().splitlines()[0]
    assert "seed=1" in ha and "seed=2" in hb
    assert ha.split("config=")[1] != hb.split("config=")[1]


def test_bound_violation_exits_two(tmp_path):
    # a zero stabilization tolerance can never be met
    out = tmp_path / "o.csv"
    assert main(["overlap-table", "--N_grid", "4,8,16", "--tol", "0", "--out", str(out)]) == 2
    assert out.exists()


def test_pinning_fit_does_not_extrapolate(tmp_path):
    # constants fitted on m <= 64 fail at the held-out m = 700
    out = tmp_path / "o.csv"
    assert main(["pinning", "--m_grid", "16,32,64", "--out", str(out)]) == 2
    rows = _csv_rows(out)
    assert rows[-1][-1] == "1" and float(rows[-1][2]) > float(rows[-1][4])


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nexperiment = partition\nN = 8\nM = 500  # inline\nseed = 3\n")
    values = read_config_file(cfg)
    assert values == {"experiment": "partition", "N": "8", "M": "500", "seed": "3"}
    resolved = resolve_config("partition", values, {"seed": "9"})
    assert resolved["N"] == 8 and resolved["M"] == 500 and resolved["seed"] == 9
    with pytest.raises(ConfigError, match="not 'tails'"):
        resolve_config("tails", values, {})
    out = tmp_path / "o.csv"
    assert main(["partition", "--config", str(cfg), "--out", str(out)]) == 0
    assert "seed=3" in out.read_text()


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("Nope = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(cfg)
    cfg.write_text("just words\n")
    with pytest.raises(ConfigError, match="key = value"):
        read_config_file(cfg)


def test_experiment_specific_defaults():
    assert resolve_config("tails", {}, {})["M"] == 100_000
    assert resolve_config("partition", {}, {})["M"] == 10_000
    assert set(EXPERIMENTS) >= {"partition", "overlap-table", "pinning", "convexity", "event-a",
                                "two-env", "tails", "neg-moments", "constants", "converge"}


def test_parse_grid():
    assert parse_grid("0:0.5:2") == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert parse_grid("4,32,256", int) == [4, 32, 256]
    with pytest.raises(ConfigError):
        parse_grid("1:0:2")


@pytest.mark.parametrize("exp, extra", [
    ("pinning", ["--m_grid", "16,64,256,1024"]),
    ("convexity", ["--m_grid", "4,8"]),
    ("halving", ["--N_grid", "8,16"]),
    ("halftime", ["--N_grid", "8,16,32"]),
    ("constants", ["--N_grid", "8,16"]),
    ("fubini", ["--N", "4", "--M", "20000"]),
    ("paley-zygmund", ["--N", "8", "--M", "2000"]),
    ("two-env", ["--N", "8", "--n_pairs", "50"]),
])
def test_experiments_run(exp, extra, tmp_path):
    out = tmp_path / f"{exp}.csv"
    assert main([exp, *extra, "--seed", "1", "--out", str(out)]) == 0
    assert len(_csv_rows(out)) >= 2


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["experiment,inequality,passed,failed,status"]


def test_report_single_tails_run(tmp_path, capsys):
    assert main(["tails", "--N", "16", "--M", "2000", "--N_grid", "8,16",
                 "--format", "jsonl", "--out", str(tmp_path / "tails.jsonl")]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path)]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 2
    assert rows[1][0] == "tails" and rows[1][-1] == "PASS"


def _record(exp, passed):
    return json.dumps(dict(experiment=exp, params={}, estimate=1.0, std_error=0.0,
                           bound=1.0, passed=passed, details={}))


def test_report_mixed(tmp_path, capsys):
    (tmp_path / "a.jsonl").write_text("# header\n" + _record("tails", True) + "\n")
    (tmp_path / "b.jsonl").write_text(_record("event-a", False) + "\n")
    assert main(["report", str(tmp_path)]) == 2
    out = capsys.readouterr().out
    assert "event-a" in out and "FAIL" in out and "PASS" in out


def test_report_malformed_record(tmp_path, capsys):
    (tmp_path / "a.jsonl").write_text(_record("tails", True) + "\n{not json\n")
    assert main(["report", str(tmp_path)]) == 1
    captured = capsys.readouterr()
    assert "unparseable" in captured.err and "tails" in captured.out


def test_report_requires_directory(tmp_path):
    assert main(["report"]) == 1
    assert main(["report", str(tmp_path / "nope")]) == 1
