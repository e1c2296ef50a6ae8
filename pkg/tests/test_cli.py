import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

import cli
import settings
from coefficients import CoefficientField, load_field, save_field
from matrix_functions import NoGap
from torus_grid import TorusGrid
from utils import validate_against_schema


def test_gen_coeff_then_check(tmp_path: Path, capsys) -> None:
    path = tmp_path / "coeff.json"
    assert cli.main(["gen-coeff", "--kind", "hermitian", "--seed", "7", "--N", "16", "--out", str(path)]) == 0
    field_ = load_field(str(path))
    assert field_.grid.N == 16 and field_.kind == "hermitian"

    verdict_path = tmp_path / "verdict.json"
    code = cli.main(["check", "--coeff", str(path), "--N", "16", "--M", "40", "--out", str(verdict_path)])
    assert code == 0
    verdict = json.loads(verdict_path.read_text(encoding="utf-8"))
    assert verdict["verdict"]["wellposed"] is True
    assert verdict["kappa"] > 0
    assert "well-posed: True" in capsys.readouterr().out


def test_gen_coeff_defaults_to_configured_sizes(tmp_path: Path) -> None:
    path = tmp_path / "coeff.json"
    assert cli.main(["gen-coeff", "--kind", "identity", "--out", str(path)]) == 0
    field_ = load_field(str(path))
    assert field_.grid.N == settings.DEFAULT_N
    assert field_.m == settings.DEFAULT_SYSTEM_SIZE


def test_check_rejects_missing_and_non_accretive_coefficients(tmp_path: Path) -> None:
    assert cli.main(["check", "--coeff", str(tmp_path / "nope.json"), "--N", "16"]) == 1
    grid = TorusGrid(16)
    samples = np.broadcast_to(np.diag([1.0, -0.5]).astype(complex), (16, 2, 2)).copy()
    bad = tmp_path / "bad.json"
    save_field(CoefficientField(grid, 1, samples), str(bad))
    assert cli.main(["check", "--coeff", str(bad), "--N", "16"]) == 1


def test_solve_writes_solution_and_metrics(tmp_path: Path) -> None:
    out = tmp_path / "out"
    code = cli.main(["solve", "--coeff", "identity", "--N", "16", "--M", "40", "--u0", "modes:1,2",
                     "--out-dir", str(out)])
    assert code == 0
    frame = pd.read_csv(out / "solution.csv")
    assert list(frame.columns) == ["t", "x", "component", "re", "im"]
    assert len(frame) == 40 * 16
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert metrics["metrics"]["exact_trace_error"] < 1e-10
    assert (out / "boundary.csv").exists() and (out / "norms.csv").exists()


def test_solve_accepts_boundary_csv_and_rejects_bad_modes(tmp_path: Path) -> None:
    grid = TorusGrid(16)
    csv_path = tmp_path / "u0.csv"
    values = grid.mode(3)
    pd.DataFrame({"x": grid.points, "re_0": values.real, "im_0": values.imag}).to_csv(csv_path, index=False)
    out = tmp_path / "out"
    assert cli.main(["solve", "--coeff", "identity", "--N", "16", "--M", "40", "--u0", str(csv_path),
                     "--out-dir", str(out)]) == 0
    assert cli.main(["solve", "--coeff", "identity", "--N", "16", "--u0", "modes:0", "--out-dir", str(out)]) == 1
    assert cli.main(["solve", "--coeff", "identity", "--N", "16", "--u0", "modes:1,x", "--out-dir", str(out)]) == 1


def test_verify_golden_writes_reports(tmp_path: Path) -> None:
    out = tmp_path / "reports"
    code = cli.main(["verify", "GOLDEN", "--N", "16", "--M", "80", "--out-dir", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["pass"] is True
    report = json.loads((out / "golden.json").read_text(encoding="utf-8"))
    assert report["id"] == "GOLDEN" and report["pass"] is True
    assert cli.main(["verify", "NOPE", "--N", "16", "--out-dir", str(out)]) == 1


def test_dump_writes_raw_complex_matrix(tmp_path: Path) -> None:
    path = tmp_path / "ta.bin"
    assert cli.main(["dump", "--coeff", "identity", "--N", "16", "--operator", "T_A", "--out", str(path)]) == 0
    assert path.stat().st_size == 32 * 32 * 16


def test_usage_errors_exit_with_one() -> None:
    with pytest.raises(SystemExit) as excinfo:
        cli.main([])
    assert excinfo.value.code == 1
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["check", "--N", "sixteen"])
    assert excinfo.value.code == 1


def test_coefficient_file_with_bad_grid_size_exits_with_one(tmp_path: Path) -> None:
    good = tmp_path / "good.json"
    assert cli.main(["gen-coeff", "--kind", "identity", "--N", "16", "--out", str(good)]) == 0
    document = json.loads(good.read_text(encoding="utf-8"))
    document["N"] = 12
    bad = tmp_path / "n12.json"
    bad.write_text(json.dumps(document), encoding="utf-8")
    assert cli.main(["check", "--coeff", str(bad), "--N", "16"]) == 1
    assert cli.main(["solve", "--coeff", str(bad), "--N", "16", "--u0", "modes:1",
                     "--out-dir", str(tmp_path / "out")]) == 1


def test_gapless_operator_is_a_fail_verdict(tmp_path: Path, monkeypatch) -> None:
    def no_gap(*args, **kwargs):
        raise NoGap("spectrum touches the imaginary axis")

    monkeypatch.setattr(cli, "check_wellposed", no_gap)
    assert cli.main(["check", "--coeff", "identity", "--N", "16"]) == 2
    assert cli.main(["solve", "--coeff", "identity", "--N", "16", "--u0", "modes:1",
                     "--out-dir", str(tmp_path / "out")]) == 2


def test_verify_reports_match_the_report_schema(tmp_path: Path) -> None:
    out = tmp_path / "reports"
    assert cli.main(["verify", "GOLDEN", "--N", "16", "--M", "80", "--out-dir", str(out)]) == 0
    report = json.loads((out / "golden.json").read_text(encoding="utf-8"))
    validate_against_schema(settings.REPORT_FILE_SCHEMA, report)
    assert report["statement"]
