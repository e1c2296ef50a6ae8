import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from analysis_norms import ProfiledField, poisson
from coefficients import CoefficientField, NotAccretive, make_class
from dirichlet_solver import BoundaryData, check_wellposed, solve_dirichlet
from settings import RunConfig
from torus_grid import TGrid, TorusGrid
from verifier import (
    GOLDEN_ID,
    TEST_FIELD_KINDS,
    bilinear_lhs,
    comparability_constant,
    guarded,
    openness_schedule,
    refinement_stable,
    relative_change,
    run_all,
    run_bilinear,
    run_block_kato,
    run_carleson,
    run_decomp,
    run_equiv,
    run_experiment,
    run_golden,
    run_ibp,
    run_openness,
    run_quad,
    run_rellich_domain,
    summarize_reports,
)

COEFFICIENT = {"kind": "hermitian", "seed": 7, "roughness": 2, "kappa_target": 0.5, "amplitude": 0.5, "path": None}


def _small_config(**changes) -> RunConfig:
    values = {"N": 16, "M": 60, "trials": 2, "refine": False, "max_mode": 2, "coefficient": dict(COEFFICIENT)}
    values.update(changes)
    return RunConfig(**values)


def test_helpers() -> None:
    assert comparability_constant([0.5, 1.0, 1.5]) == pytest.approx(2.0)
    assert comparability_constant([]) == 1.0
    assert comparability_constant([1.0, 0.0]) == math.inf
    assert relative_change(2.0, 2.5) == pytest.approx(0.25)
    assert relative_change(0.0, 0.0) == 0.0
    assert relative_change(1.0, math.inf) == math.inf
    schedule = openness_schedule(0.05)
    assert len(schedule) == 20 and schedule[-1] == pytest.approx(0.2)


def test_golden_self_test_passes() -> None:
    report = run_golden(_small_config())
    assert report.id == GOLDEN_ID
    assert report.passed, report.constants
    assert report.constants["sigma_min_S"] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-10)
    assert report.constants["gamma_max"] <= 1e-12
    assert report.constants["decay_constant"] <= 1.0 + 1e-9
    payload = report.to_dict()
    assert payload["pass"] is True and payload["statement"]
    assert "timing" in payload and "timing" not in report.to_dict(include_timing=False)


def test_equiv_and_quad_on_hermitian_coefficient() -> None:
    config = _small_config()
    equiv = run_equiv(config)
    assert equiv.passed, equiv.constants
    assert 1.0 <= equiv.constants["C"] < math.inf
    assert 0.0 < equiv.constants["decay_constant"] < math.inf
    assert equiv.constants["range_leakage"] <= 1e-8
    assert "equiv_N16" in equiv.tables
    quad = run_quad(config)
    assert quad.passed, quad.constants
    assert quad.constants["psi0_square_function_tie"] <= 1e-8


def test_ibp_and_decomposition_identities() -> None:
    config = _small_config()
    ibp = run_ibp(config)
    assert ibp.passed, ibp.constants
    decomp = run_decomp(config)
    assert decomp.passed, decomp.constants
    assert decomp.constants["max_identity_error"] <= 1e-10
    assert decomp.constants["carleson_norm"] > 0


def test_carleson_rellich_domain_and_block_kato() -> None:
    config = _small_config()
    carleson = run_carleson(config)
    assert carleson.passed and math.isfinite(carleson.constants["embedding_constant"])
    rellich, domain = run_rellich_domain(config)
    assert (rellich.id, domain.id) == ("RELLICH", "DOMAIN")
    assert rellich.passed, rellich.constants
    assert domain.passed, domain.constants
    kato = run_block_kato(config)
    assert kato.passed, kato.constants
    assert kato.constants["used_block_part"] is True


def test_openness_report_is_reproducible() -> None:
    config = _small_config()
    first = run_openness(config)
    second = run_openness(config)
    assert first.passed, first.constants
    assert first.fingerprint() == second.fingerprint()
    frame = first.tables["openness"]
    assert len(frame) == 20 and bool(frame["wellposed"].iloc[0])


def test_run_experiment_filters_and_rejects_unknown_ids() -> None:
    config = _small_config()
    reports = run_experiment("DOMAIN", config)
    assert [r.id for r in reports] == ["DOMAIN"]
    with pytest.raises(ValueError):
        run_experiment("NOPE", config)


def test_run_all_runs_golden_first() -> None:
    config = _small_config(experiments=["OPENNESS", "EQUIV"])
    reports = run_all(config)
    assert [r.id for r in reports] == [GOLDEN_ID, "EQUIV", "OPENNESS"]
    summary = summarize_reports(reports)
    assert summary["pass"] is True
    assert len(summary["reports"]) == 3


def test_domain_errors_become_fail_reports() -> None:
    config = _small_config()

    def explode(config, A, started):
        raise ValueError("boom")

    report = guarded("IBP", config, None, explode)
    assert not report.passed
    assert "boom" in report.constants["error"]


def test_non_accretive_coefficient_is_rejected() -> None:
    grid = TorusGrid(16)
    samples = np.broadcast_to(np.diag([1.0, -1.0]).astype(complex), (16, 2, 2)).copy()
    with pytest.raises(NotAccretive):
        run_equiv(_small_config(), CoefficientField(grid, 1, samples))


def test_bilinear_lhs_matches_closed_form_for_identity() -> None:
    grid = TorusGrid(16)
    maps = check_wellposed(make_class("identity", grid))
    tgrid = TGrid.for_grid(grid, 120)
    sol = solve_dirichlet(maps, BoundaryData(grid, grid.mode(1)), tgrid)
    g = np.stack([grid.mode(1), np.zeros(grid.N, dtype=complex)])
    v = ProfiledField(poisson(rate=1.0), g)
    lhs = bilinear_lhs(sol, v, tgrid.t_min, tgrid.t_max)
    expected = -0.5 * grid.L * (math.exp(-2.0 * tgrid.t_min) - math.exp(-2.0 * tgrid.t_max))
    assert lhs.real == pytest.approx(expected, rel=1e-6)
    assert abs(lhs.imag) < 1e-8


def test_bilinear_constant_is_finite_over_all_field_kinds() -> None:
    report = run_bilinear(_small_config())
    assert report.passed, report.constants
    assert 0.0 < report.constants["C"] < math.inf
    assert report.constants["trials"] == 20
    assert set(report.constants["by_kind"]) == set(TEST_FIELD_KINDS)


@pytest.mark.parametrize(
    "values, stable",
    [
        ([1.0, 0.77], False),
        ([1.0, 0.81], True),
        ([1.0, 1.2], True),
        ([1.0, 1.26], False),
        ([2.0], True),
        ([0.0, 0.0], True),
        ([0.0, 1.0], False),
        ([1.0, math.inf], False),
    ],
)
def test_refinement_band_is_multiplicative(values, stable) -> None:
    assert refinement_stable(values, 0.25)[0] is stable


def test_run_all_without_gate_yields_one_report_per_experiment() -> None:
    config = _small_config(experiments=["DOMAIN", "RELLICH"])
    reports = run_all(config, gate=False)
    assert [r.id for r in reports] == ["RELLICH", "DOMAIN"]
