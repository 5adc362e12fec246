import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from conftest import make_chain_a
from main import cli
from src.chain_core import dumps_chain
from src.convergence_lab import RECORD_HEADER
from src.exceptions import ConfigError, UnknownSeriesError
from src.report_service import ReportService, format_cell
from src.runner import config_hash, config_payload, emit_plot_data, load_config, run

CONFIG_DIR = Path(__file__).parent / "configs"


def write_config(directory: Path, payload: dict, name: str = "experiment.json") -> Path:
    path = directory / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture
def chain_dir(tmp_path):
    (tmp_path / "chain_a.json").write_text(dumps_chain(*make_chain_a()), encoding="utf-8")
    return tmp_path


def small_diffusion(**overrides) -> dict:
    diffusion = {
        "drift": {"kind": "zero"},
        "boundary": {"kind": "constant", "level": 0.0},
        "x0": 1.0,
        "dt": 0.01,
        "horizon": 1.0,
        "n_paths": 3000,
        "bins": [0.0, 1.0, 2.0, 3.0, 4.0],
        "tasks": ["survival", "conditioned_law", "scale"],
    }
    diffusion.update(overrides)
    return {"schema": 1, "kind": "diffusion", "name": "small", "seed": 99, "diffusion": diffusion}


def test_bundled_configs_validate():
    for path in sorted(CONFIG_DIR.glob("*.json")):
        if json.loads(path.read_text(encoding="utf-8")).get("schema") is None:
            continue
        config = load_config(path)
        assert config.schema_version == 1


def test_config_hash_is_canonical():
    first = load_config(CONFIG_DIR / "chain_a_certify.json")
    second = load_config(CONFIG_DIR / "chain_a_certify.json")
    assert config_hash(first) == config_hash(second)
    assert len(config_hash(first)) == 64
    assert config_payload(first)["schema"] == 1


def test_diffusion_needs_seed(tmp_path):
    payload = small_diffusion()
    del payload["seed"]
    with pytest.raises(ConfigError) as raised:
        load_config(write_config(tmp_path, payload))
    assert any("seed" in error for error in raised.value.errors)


def test_unknown_field_is_located(chain_dir):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "chain": "chain_a.json",
                                    "certify": {"t0_maxx": 2}})
    with pytest.raises(ConfigError) as raised:
        load_config(path)
    assert any(error.startswith("certify.t0_maxx") for error in raised.value.errors)


def test_json_syntax_error_has_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "schema": 1,\n  "kind": \n}\n', encoding="utf-8")
    with pytest.raises(ConfigError) as raised:
        load_config(path)
    assert raised.value.errors[0].startswith("line 4, column 1")


def test_missing_chain_file(tmp_path):
    path = write_config(tmp_path, {"schema": 1, "kind": "chain_limits", "chain": "nowhere.json"})
    with pytest.raises(ConfigError) as raised:
        load_config(path)
    assert "chain file not found: nowhere.json" in raised.value.errors[0]


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_run_certify_chain_a(chain_dir):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "chain": "chain_a.json",
                                    "certify": {"t0_max": 1}})
    out = chain_dir / "out"
    report = run(load_config(path), out_dir=out, base_dir=chain_dir)
    assert report.passed
    assert list(report.sections) == ["certify", "certify_limit", "d_coefficients"]
    assert report.sections["certify"].results["c1"] == pytest.approx(0.875)
    for name in ("report.json", "timings.json", "summary.txt", "d_coefficients.csv"):
        assert (out / name).is_file()
    assert (out / "d_coefficients.csv").read_text(encoding="utf-8").splitlines()[0] == "s,d,d_prime"
    assert "RESULT: PASSED" in (out / "summary.txt").read_text(encoding="utf-8")


def test_run_limits_chain_a(chain_dir):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_limits", "chain": "chain_a.json",
                                    "certify": {"t0_max": 1}, "limits": {"t_max": 60, "qed_n": 500}})
    report = run(load_config(path), out_dir=chain_dir / "out", base_dir=chain_dir)
    assert report.passed
    stationary = report.sections["quasi_stationary"].results
    assert stationary["rho"] == pytest.approx(0.8)
    assert stationary["alpha"]["a"] == pytest.approx(4 / 7)
    assert report.sections["qprocess"].results["beta"]["b"] == pytest.approx(3 / 7)
    assert {"quasi_limiting", "quasi_ergodic"} <= set(report.series)


def test_run_bounds_chain_a(chain_dir):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_bounds", "chain": "chain_a.json",
                                    "certify": {"t0_max": 1},
                                    "bounds": {"s_grid": [0, 1], "t_grid": [0, 2], "T_grid": [0, 1, 2, 3],
                                               "qed_n_grid": [1, 5], "gap_window": 3, "eta_margin": 50}})
    out = chain_dir / "out"
    report = run(load_config(path), out_dir=out, base_dir=chain_dir)
    assert report.passed
    assert set(report.sections) == {"certify", "qprocess_convergence", "merging", "qed_averaging", "uniform_gap"}
    header = (out / "bound_checks.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(RECORD_HEADER)


def test_diffusion_report_is_reproducible(tmp_path):
    config = load_config(write_config(tmp_path, small_diffusion()))
    one = run(config, out_dir=tmp_path / "one", threads=1)
    again = run(config, out_dir=tmp_path / "again", threads=1)
    many = run(config, out_dir=tmp_path / "many", threads=3)
    assert set(one.sections) == {"survival", "conditioned_law", "scale"}
    reference = (tmp_path / "one" / "report.json").read_text(encoding="utf-8")
    assert (tmp_path / "again" / "report.json").read_text(encoding="utf-8") == reference
    assert (tmp_path / "many" / "report.json").read_text(encoding="utf-8") == reference
    assert one.model_dump() == many.model_dump()
    written = sorted(path.name for path in (tmp_path / "one").iterdir() if path.name != "timings.json")
    assert {"report.json", "summary.txt"} <= set(written)
    assert any(name.endswith(".csv") for name in written)
    for name in written:
        expected = (tmp_path / "one" / name).read_bytes()
        assert (tmp_path / "again" / name).read_bytes() == expected, name
        assert (tmp_path / "many" / name).read_bytes() == expected, name


def test_failing_section_is_captured(tmp_path):
    payload = small_diffusion(x0=0.01, horizon=5.0, n_paths=200, tasks=["survival", "conditioned_law"])
    report = run(load_config(write_config(tmp_path, payload)), out_dir=tmp_path / "out")
    assert not report.passed
    assert report.sections["conditioned_law"].error.startswith("TooFewSurvivorsError")
    assert report.sections["survival"].error is None


def test_setup_failure_is_reported(chain_dir, tmp_path_factory):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "chain": "chain_a.json"})
    elsewhere = tmp_path_factory.mktemp("elsewhere")
    report = run(load_config(path), out_dir=elsewhere / "out", base_dir=elsewhere)
    assert not report.passed
    assert list(report.sections) == ["setup"]


def test_emit_plot_data(tmp_path):
    report = run(load_config(write_config(tmp_path, small_diffusion())), out_dir=tmp_path / "out")
    with pytest.raises(UnknownSeriesError):
        emit_plot_data(report, "no_such_series", tmp_path)
    path = emit_plot_data(report, "conditioned_law", tmp_path / "plots")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bin_left,bin_right,mass,stderr"
    assert len(lines) == 5


@pytest.mark.parametrize(
    "value, expected",
    [(0.1, "0.10000000000000001"), (True, "true"), (False, "false"), (None, ""), (3, "3"), ("a", "a")],
)
def test_format_cell(value, expected):
    assert format_cell(value) == expected


def test_cli_validate(chain_dir):
    runner = CliRunner()
    good = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "name": "demo", "chain": "chain_a.json"})
    result = runner.invoke(cli, ["validate", "--config", str(good)])
    assert result.exit_code == 0
    assert "OK: chain_certify experiment 'demo'" in result.output

    bad = write_config(chain_dir, {"schema": 2, "kind": "chain_certify"}, name="bad.json")
    result = runner.invoke(cli, ["validate", "--config", str(bad)])
    assert result.exit_code == 2


def test_cli_run_writes_series(chain_dir, mocker):
    spy = mocker.spy(ReportService, "write_csv")
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "chain": "chain_a.json",
                                    "certify": {"t0_max": 1}})
    out = chain_dir / "cli_out"
    result = CliRunner().invoke(cli, ["run", "--config", str(path), "--out", str(out), "--threads", "2"])
    assert result.exit_code == 0
    assert "PASSED" in result.output
    assert spy.call_count == 1
    assert (out / "report.json").is_file()


def test_cli_rejects_bad_thread_count(chain_dir):
    path = write_config(chain_dir, {"schema": 1, "kind": "chain_certify", "chain": "chain_a.json"})
    result = CliRunner().invoke(cli, ["run", "--config", str(path), "--threads", "0"])
    assert result.exit_code == 2
