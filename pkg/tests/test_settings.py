import json
import math
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

import settings
from settings import ConfigError, RunConfig, load_run_config, thread_count


def test_defaults_resolve_t_bounds_from_grid() -> None:
    config = RunConfig(N=16, M=40)
    assert config.resolved_t_min == pytest.approx(config.L / 128.0)
    assert config.resolved_t_max == pytest.approx(16.0 * config.L)
    payload = config.to_dict()
    assert payload["t_min"] == config.resolved_t_min
    assert payload["coefficient"]["kind"] in settings.COEFFICIENT_KINDS


@pytest.mark.parametrize(
    "changes",
    [
        {"N": 24},
        {"M": 1},
        {"m": 0},
        {"c0": 1.0},
        {"sigma_floor": 0.0},
        {"trials": 0},
        {"max_mode": 9},
        {"t_min": 2.0, "t_max": 1.0},
        {"experiments": ["EQUIV", "NOPE"]},
        {"coefficient": {"kind": "spiral"}},
        {"schema": 2},
    ],
)
def test_invalid_configs_raise(changes) -> None:
    with pytest.raises(ConfigError):
        RunConfig(**{"N": 16, "M": 40, **changes})


def test_refined_doubles_resolution_and_changes_hash() -> None:
    config = RunConfig(N=16, M=40)
    fine = config.refined()
    assert (fine.N, fine.M) == (32, 80)
    assert fine.config_hash() != config.config_hash()
    assert RunConfig(N=16, M=40).config_hash() == config.config_hash()


def test_tolerance_lookup_prefers_config_values() -> None:
    config = RunConfig(N=16, M=40, tolerances={"trace": 0.01})
    assert config.tol("trace", 0.5) == 0.01
    assert config.tol("not_a_tolerance", 0.5) == 0.5


def test_load_run_config_merges_file_and_overrides(tmp_path: Path) -> None:
    path = tmp_path / "run.json"
    path.write_text(
        json.dumps({"schema": 1, "N": 16, "M": 50, "coefficient": {"kind": "block", "seed": 3},
                    "tolerances": {"trace": 0.02}}),
        encoding="utf-8",
    )
    config = load_run_config(str(path), M=60, seed=None, coefficient={"seed": 4})
    assert config.N == 16 and config.M == 60
    assert config.coefficient["kind"] == "block"
    assert config.coefficient["seed"] == 4
    assert config.tolerances["trace"] == 0.02
    assert "ibp" in config.tolerances


def test_load_run_config_rejects_bad_documents(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.json"))
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"N": 16, "M": 40, "colour": "red"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(unknown))
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(listed))


def test_default_config_document_loads() -> None:
    config = load_run_config(str(ROOT / "docs" / "default_config.json"))
    assert config.N == 32 and config.L == pytest.approx(2.0 * math.pi)
    assert config.coefficient["kind"] == "hermitian"


def test_thread_count_reads_environment(monkeypatch) -> None:
    monkeypatch.delenv(settings.THREADS_ENV_VAR, raising=False)
    assert thread_count() == 1
    monkeypatch.setenv(settings.THREADS_ENV_VAR, "4")
    assert thread_count() == 4
    monkeypatch.setenv(settings.THREADS_ENV_VAR, "many")
    assert thread_count() == 1
