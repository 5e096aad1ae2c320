import hashlib
import io
import json
import subprocess
import sys

import pytest

from polymer_lab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME, main


def call(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


def test_exponents_prints_lambda(tmp_path):
    code, out = call(["exponents", "--alpha", "0.22", "--delta", "0.01", "--output", str(tmp_path)])
    assert code == 0 and "lambda = -0.546154" in out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "polymer_lab", "exponents", "--alpha", "0.22", "--delta", "0.01",
                        "--output", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and "lambda = -0.546154" in r.stdout


def test_tw_build_with_refinement(tmp_path):
    table = tmp_path / "tw.csv"
    code, out = call(["tw", "--order", "64", "--refine-check", "--output", str(tmp_path), "--table", str(table)])
    assert code == 0 and table.exists()
    from polymer_lab.dist import TWTable, default_table
    import numpy as np

    assert np.allclose(TWTable.from_csv(table).cdf, default_table().cdf, atol=1e-14)


def _cfg(tmp_path, body):
    p = tmp_path / "f.cfg"
    p.write_text(body)
    return str(p)


def test_fluctuations_config_override_is_digest_stable(tmp_path):
    cfg = _cfg(tmp_path, "[run]\nmaster_seed = 12345\n\n[fluctuations]\nn_list = 16, 32\nsamples = 20\n")
    digests = []
    for name in ("a", "b"):
        code, out = call(["fluctuations", "--config", cfg, "--override", "n=16", "--output", str(tmp_path / name)])
        assert code == 0 and "KS_TW" in out
        digests.append(hashlib.sha256((tmp_path / name / "fluctuations_n16.csv").read_bytes()).hexdigest())
        assert not (tmp_path / name / "fluctuations_n32.csv").exists()
    assert digests[0] == digests[1]


def test_dry_run_prints_resolved_config(tmp_path):
    cfg = _cfg(tmp_path, "[lindeberg]\nn = 64\n")
    code, out = call(["lindeberg", "--config", cfg, "--dry-run", "--output", str(tmp_path / "o")])
    resolved = json.loads(out)
    assert code == 0 and resolved["n"] == 64 and resolved["kind"] == "lindeberg"
    assert not (tmp_path / "o").exists()


def test_inline_comments_are_stripped(tmp_path):
    cfg = _cfg(tmp_path, "[fluctuations]\ncentering = crossover   ; nominal | corrected | crossover\nn_list = 8, 16 # two\n")
    code, out = call(["fluctuations", "--config", cfg, "--dry-run"])
    resolved = json.loads(out)
    assert code == 0 and resolved["centering"] == "crossover" and resolved["n_list"] == [8, 16]


@pytest.mark.parametrize("argv", [
    ["fluctuations", "--override", "bogus=1", "--dry-run"],
    ["fluctuations", "--override", "novalue", "--dry-run"],
    ["validate", "--override", "beta_grid=0", "--override", "samples_per_point=1"],
])
def test_config_errors_exit_1(argv, tmp_path):
    code, _ = call(argv + ["--output", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_unknown_section_exit_1(tmp_path):
    cfg = _cfg(tmp_path, "[mystery]\nx = 1\n")
    assert call(["fluctuations", "--config", cfg, "--dry-run"])[0] == EXIT_CONFIG
    assert call(["fluctuations", "--config", str(tmp_path / "missing.cfg")])[0] == EXIT_CONFIG


def test_runtime_error_exit_2(tmp_path, monkeypatch):
    import polymer_lab.dist as dist

    monkeypatch.setattr(dist, "REFINE_ORDERS", (10, 80))
    code, _ = call(["tw", "--refine-check", "--output", str(tmp_path), "--table", str(tmp_path / "t.csv")])
    assert code == EXIT_RUNTIME


def test_report_check_and_plot_data(tmp_path):
    out_dir = tmp_path / "run"
    assert call(["fluctuations", "--override", "n_list=8,16", "--override", "samples=30",
                 "--output", str(out_dir)])[0] == 0
    assert call(["exponents", "--alpha", "0.22", "--delta", "0.01", "--output", str(out_dir)])[0] == 0
    code, out = call(["report", str(out_dir), "--check", "--checks", "lambda"])
    assert code == 0 and "PASS lambda" in out
    plots = sorted(p.name for p in out_dir.glob("plot_*.dat"))
    assert "plot_tw_cdf.dat" in plots and "plot_ecdf_fluctuations_n8.dat" in plots
    rows = (out_dir / "plot_ecdf_fluctuations_n8.dat").read_text().splitlines()
    assert len(rows) == 31 and len(rows[1].split()) == 2
    # a check that cannot pass on these records
    cfg = _cfg(tmp_path, f"[report]\ninputs = {out_dir}\nchecks = lambda, swap_control\n")
    code, out = call(["report", "--config", cfg, "--check"])
    assert code == EXIT_CHECK and "FAIL swap_control" in out
    assert call(["report", str(out_dir), "--check", "--checks", "nonsense"])[0] == EXIT_CONFIG


def test_validate_and_localtime_commands(tmp_path):
    code, out = call(["validate", "--override", "samples_per_point=10000", "--output", str(tmp_path)])
    assert code == 0 and "positivity: ok" in out
    code, out = call(["localtime", "--output", str(tmp_path), "--override", "n_list=16", "--override", "trials=20",
                      "--override", "meeting_n_list=4", "--override", "meeting_trials=50",
                      "--override", "nstar_n_list=8,16", "--override", "platonov_n_list=10",
                      "--override", "slopes=0.5"])
    assert code == 0 and (tmp_path / "localtime_stats.csv").exists()
