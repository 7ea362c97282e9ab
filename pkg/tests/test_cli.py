import json

import pytest

from twocavity.cli import OUT_ENV, PRESETS, main
from twocavity.iohelpers import read_csv

FAST = ["--tmax", "1", "--stride", "100"]


def run(*argv):
    return main([str(a) for a in argv])


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run("densities", "--help")
    assert exc.value.code == 0
    assert "--deltaT" in capsys.readouterr().out


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run("densities", "--bogus", "1")
    assert exc.value.code == 2


def test_invalid_values_are_usage_errors(tmp_path):
    for argv in (["densities", "--kappa", "0"], ["entropy", "--convention", "x"],
                 ["densities", "--preset", "click-histograms"],
                 ["post-detection", "--start", "soon"]):
        with pytest.raises(SystemExit) as exc:
            run(*argv, "--out", tmp_path)
        assert exc.value.code == 2


def test_densities_outputs_and_manifest(tmp_path):
    assert run("densities", "--g", 0.25, "--delta", 0.5, *FAST, "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "densities.csv")
    assert header[0] == "t" and {"p2", "p11"} <= set(header)
    assert len(rows) == 11
    man = json.loads((tmp_path / "densities.manifest.json").read_text())
    assert man["settings"]["g"] == 0.25 and man["settings"]["tmax"] == 1.0
    assert man["outputs"] == ["densities.csv"]
    assert {"version", "wall_time_s", "manifest_sha256"} <= set(man)
    first = (tmp_path / "densities.csv").read_text()
    assert f"manifest-sha256: {man['manifest_sha256']}" in first


def test_byte_identical_reruns(tmp_path):
    for d in ("a", "b"):
        assert run("trajectories", "--n", 50, "--seed", 3, "--out", tmp_path / d) == 0
    for name in ("records.csv", "stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    stats = json.loads((tmp_path / "a" / "stats.json").read_text())
    assert stats["n_trajectories"] == 50 and 0 <= stats["fraction_same"] <= 1


def test_histograms(tmp_path):
    assert run("histograms", "--n", 40, "--bin-width", 1.0, "--out", tmp_path) == 0
    for q in ("T1", "T2", "dT"):
        header, rows = read_csv(tmp_path / f"hist_{q}.csv")
        assert header == ["bin_left", "count_same", "count_diff", "count_indep"]
        assert sum(int(r[1]) + int(r[2]) for r in rows) == 40


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run("entropy", *FAST) == 0
    assert (tmp_path / "env" / "entropy.csv").exists()


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# weak coupling\ng = 0.1\ntmax = 1\nstride = 100\n")
    assert run("densities", "--config", cfg, "--g", 0.3, "--out", tmp_path) == 0
    man = json.loads((tmp_path / "densities.manifest.json").read_text())
    assert man["settings"]["g"] == 0.3 and man["settings"]["tmax"] == 1.0


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 10\n")
    with pytest.raises(SystemExit) as exc:
        run("densities", "--config", cfg, "--out", tmp_path)
    assert exc.value.code == 2


def test_preset_applies(tmp_path):
    assert run("post-detection", "--preset", "single-weak", "--tmax", 1, "--out", tmp_path) == 0
    man = json.loads((tmp_path / "post-detection.manifest.json").read_text())
    assert man["settings"]["g"] == 0.2 and man["settings"]["delta"] == 0.1


def test_presets_listing(capsys):
    assert run("presets") == 0
    out = capsys.readouterr().out
    assert all(name in out for name in PRESETS)


@pytest.mark.parametrize("argv", [
    ["baseline", *FAST],
    ["phi-sweep", "--n-phi", 3, "--model", "early"],
    ["early-time", "--tmax", 0.2],
    ["post-detection", "--start", "0.5:a", *FAST],
])
def test_other_experiments_run(argv, tmp_path):
    assert run(*argv, "--out", tmp_path) == 0
    man = json.loads(next(tmp_path.glob("*.manifest.json")).read_text())
    assert all((tmp_path / f).exists() for f in man["outputs"])


def test_numerical_abort_exit_code(tmp_path, capsys):
    assert run("densities", "--dt", 3.5, "--tmax", 35, "--out", tmp_path) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_dark_click_is_reported(tmp_path):
    assert run("post-detection", "--g", 0, "--start", "0:a", *FAST, "--out", tmp_path) == 3


def test_validate_single_criterion(capsys):
    assert run("validate", "--only", "closed-form-concurrence") == 0
    assert "[PASS] closed-form-concurrence" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        run("validate", "--only", "nonsense")
    assert exc.value.code == 2
