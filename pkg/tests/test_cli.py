import csv
import json
import shutil

import numpy as np
import pytest

from bhvloss import cli
from bhvloss.dataset import load_training_set
from bhvloss.expression import parse
from bhvloss.fitting import fit_all, percent_errors
from bhvloss.gp_engine import RunConfig

SMALL_GRID = """
[grid]
f_s_hz = [45e3, 105e3]
v_in_v = [200, 400]
d = [0.3, 0.7]
r_t_ohm = [40, 100]
v_dr_v = [10, 15, 20]
r_g_ohm = [1, 3, 5]
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert cli.main(["gen-data", "--out", str(out)]) == 0
    assert cli.main(["run-gp", "--out", str(out), "--runs", "2", "--population-size", "20",
                     "--generations", "2", "--conditions", "4"]) == 0
    assert cli.main(["select", "--out", str(out), "--min-nrun", "1",
                     "--max-errmax", "1000"]) == 0
    assert cli.main(["fit-surface", "--out", str(out), "--reference-eq15"]) == 0
    assert cli.main(["validate", "--out", str(out)]) == 0
    assert cli.main(["report", "--out", str(out)]) == 0
    return out


def test_gen_data_summary(tmp_path, capsys):
    code = cli.main(["gen-data", "--out", str(tmp_path)])
    assert code == 0
    assert "1215 vectors (n=135, m=9)" in capsys.readouterr().out


def test_gen_data_rerun_is_byte_identical(tmp_path):
    grid = tmp_path / "grid.toml"
    grid.write_text(SMALL_GRID)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["gen-data", "--out", str(tmp_path), "--grid", str(grid), "-o", str(a)]) == 0
    assert cli.main(["gen-data", "--out", str(tmp_path), "--grid", str(grid), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_infeasible(tmp_path, capsys):
    grid = tmp_path / "grid.toml"
    grid.write_text(SMALL_GRID.replace("v_dr_v = [10, 15, 20]", "v_dr_v = [1.5, 15]"))
    assert cli.main(["gen-data", "--out", str(tmp_path), "--grid", str(grid)]) == cli.EXIT_INFEASIBLE
    assert "InsufficientGateDrive" in capsys.readouterr().err


def test_bad_config_is_parse_error(tmp_path):
    dev = tmp_path / "dev.toml"
    dev.write_text("rds_25_ohm = 0.1\n")
    assert cli.main(["gen-data", "--out", str(tmp_path), "--device", str(dev)]) == cli.EXIT_PARSE


def test_archive_rows_equal_distinct_models(pipeline):
    from bhvloss.gp_engine import ModelArchive, read_run_log
    keys = set()
    for path in sorted((pipeline / "runs").glob("run_*.csv")):
        log, _ = read_run_log(path)
        keys |= {k for gen in log for k in gen}
    assert len(ModelArchive.load(pipeline / "archive.json").entries) == len(keys)


def test_candidate_metrics_match_recomputation(pipeline):
    training = load_training_set(pipeline / "training.csv").subset([4])
    rows = cli.read_candidates(pipeline / "candidates.csv")
    assert rows
    for row in rows[:3]:
        e = parse(row["model"])
        stats = percent_errors(e, fit_all(e, training, RunConfig().fit_max_iter), training)
        assert stats.err_max == pytest.approx(row["err_max"], rel=1e-12)
        assert stats.mu_err == pytest.approx(row["mu_err"], rel=1e-12, abs=1e-12)


def test_select_empty_archive_notice(pipeline, capsys, tmp_path):
    code = cli.main(["select", "--out", str(tmp_path), "--archive",
                     str(pipeline / "archive.json"), "--min-nrun", "99"])
    assert code == 0
    assert "notice" in capsys.readouterr().out


def test_surface_pins_b0_for_p0(pipeline):
    doc = json.loads((pipeline / "surface.json").read_text())
    assert [doc["surfaced"]["p0"]["b"][f"a{x}"][0] for x in range(3)] == [0.0, 0.0, 0.0]
    assert doc["surfaced"]["p0"]["force_b0_zero"] is True
    assert "p1" in doc["fixed"]


def _errors(path):
    with open(path, newline="") as fh:
        return np.array([float(r["err_pct"]) for r in csv.DictReader(fh)])


def test_validate_direct_matches_percent_errors(pipeline, tmp_path):
    for name in ("training.csv", "surface.json"):
        shutil.copy(pipeline / name, tmp_path / name)
    assert cli.main(["validate", "--out", str(tmp_path), "--direct"]) == 0
    training = load_training_set(tmp_path / "training.csv")
    e = parse(json.loads((tmp_path / "surface.json").read_text())["model"])
    stats = percent_errors(e, fit_all(e, training), training)
    assert np.array_equal(_errors(tmp_path / "validation_errors.csv"), stats.errors.ravel())
    # least squares runs on watts, so the comparison is absolute rmse
    assert _abs_rmse(pipeline / "validation_errors.csv") >= _abs_rmse(
        tmp_path / "validation_errors.csv")


def _abs_rmse(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    diff = np.array([float(r["model_w"]) - float(r["y_w"]) for r in rows])
    return float(np.sqrt(np.mean(diff**2)))


def test_report_outputs(pipeline):
    for name in ("pareto_front", "coefficient_trends", "error_histogram"):
        assert (pipeline / f"{name}.svg").stat().st_size > 0
        assert (pipeline / f"{name}.csv").exists()
    with open(pipeline / "pareto_front.csv", newline="") as fh:
        points = list(csv.DictReader(fh))
    assert len(points) == len(cli.read_candidates(pipeline / "candidates.csv"))
    assert (pipeline / "summary.txt").read_text().startswith("candidates:")


def test_report_is_deterministic(pipeline):
    before = {p.name: p.read_bytes() for p in pipeline.glob("fig*")}
    assert cli.main(["report", "--out", str(pipeline)]) == 0
    after = {p.name: p.read_bytes() for p in pipeline.glob("fig*")}
    assert before == after


def test_report_missing_artifacts(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_MISSING
    assert "missing" in capsys.readouterr().err


def test_stale_upstream_detected(pipeline, tmp_path):
    work = tmp_path / "w"
    shutil.copytree(pipeline, work)
    # paths in the manifest are absolute, so regenerate the chain inside the copy
    assert cli.main(["gen-data", "--out", str(work)]) == 0
    assert cli.main(["fit-surface", "--out", str(work), "--reference-eq15"]) == 0
    training = work / "training.csv"
    training.write_text(training.read_text().replace("# n=135 m=9", "# n=135 m=9 ", 1))
    assert cli.main(["validate", "--out", str(work)]) == cli.EXIT_STALE


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "bhvloss", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("gen-data", "run-gp", "select", "fit-surface", "validate", "report"):
        assert name in res.stdout
