from pathlib import Path

import pandas as pd
import pytest

from phibayes import __version__, cli
from phibayes.studies import StudyOutcome

CONFIGS = Path(__file__).parent.parent / "configs"


def test_version(capsys) -> None:
    assert cli.main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_validate_config(capsys) -> None:
    assert cli.main(["validate-config", "--config", str(CONFIGS / "single_fit.toml")]) == 0
    assert "config_hash" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text('[model]\nfamily = "NormalLocation"\ntheta0 = [0.0]\n\n[mcmc]\nstepz = 10\n')
    assert cli.main(["validate-config", "--config", str(path)]) == 2


def test_missing_config_exit_code(tmp_path) -> None:
    assert cli.main(["fit", "--config", str(tmp_path / "missing.toml")]) == 2


def test_bad_jobs_exit_code() -> None:
    assert cli.main(["study", "--config", str(CONFIGS / "normality.toml"), "--jobs", "0"]) == 2


def test_partial_study_exit_code(monkeypatch, tmp_path) -> None:
    class Failed:
        failed = True

    outcome = StudyOutcome(run_dir=tmp_path, rows=pd.DataFrame(), summary={}, responses=[Failed()])
    monkeypatch.setattr(cli, "run_study", lambda cfg, jobs, gnuplot: outcome)
    assert cli.main(["study", "--config", str(CONFIGS / "normality.toml"), "--quiet"]) == 4


def test_duality_check_needs_one_parameter(tmp_path) -> None:
    path = tmp_path / "scale.toml"
    path.write_text('[model]\nfamily = "NormalLocationScale"\ntheta0 = [0.0, 1.0]\n')
    assert cli.main(["duality-check", "--config", str(path)]) == 2


def test_duality_check(capsys, tmp_path) -> None:
    path = tmp_path / "duality.toml"
    path.write_text(
        '[model]\nfamily = "NormalLocation"\ntheta0 = [0.0]\n\n[divergence]\ngamma = "KL"\n\n'
        "[study]\nduality_thetas = [0.5]\n"
    )
    assert cli.main(["duality-check", "--config", str(path), "--output", str(tmp_path / "runs")]) == 0
    out = capsys.readouterr().out
    assert "0.125" in out
    assert (tmp_path / "runs" / "DualitySanity").is_dir()


def test_parser_requires_command() -> None:
    with pytest.raises(SystemExit):
        cli.main([])
