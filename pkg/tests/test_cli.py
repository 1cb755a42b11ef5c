import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from soldecomp.cli import EXIT_IO, EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, execute, main
from soldecomp.config import PRESETS, ConfigError, load_config, parse_config, preset_configs, validate


def small(**overrides):
    cfg = {
        "name": "small",
        "mode": "single_run",
        "scheme": "ei_diag",
        "grid": {"n1": 12, "n2": 12},
        "time": {"T": 0.1, "N": 10, "sigma": 1.0},
        "decomposition": {"parts1": 2, "parts2": 2, "coloring": "red_black"},
        "reference_oversample": 8,
        "outputs": {"checkpoints": [0.05, 0.1], "dump_solution": True, "dump_error": True, "dump_decomposition": True},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    return cfg


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def findings(data):
    return [(f.level, f.where, f.message) for f in validate(parse_config(data))]


def test_valid_config_has_no_findings():
    assert findings(small()) == []


def test_cn_family_weight_below_half_warns():
    out = findings(small(scheme="cn", decomposition=None, time={"sigma": 0.4}))
    assert [f[0] for f in out] == ["warning"]
    assert "sigma = 0.4 < 1/2" in out[0][2]


def test_zero_steps_is_an_error():
    out = findings(small(time={"N": 0}))
    assert ("error", "time.N") in [f[:2] for f in out]


def test_ei_diag_half_weight_with_two_colours_warns():
    out = findings(small(time={"sigma": 0.5}))
    assert len(out) == 1 and out[0][0] == "warning"
    assert "sigma = 0.5 < p/2" in out[0][2]


def test_block_scheme_without_decomposition_is_an_error():
    out = findings(small(decomposition=None))
    assert ("error", "decomposition") in [f[:2] for f in out]


@pytest.mark.parametrize(
    "override,where",
    [
        (dict(mode="sweep"), "mode"),
        (dict(scheme="leapfrog"), "scheme"),
        (dict(grid={"n1": 0}), "grid.n1"),
        (dict(time={"T": -1.0}), "time.T"),
        (dict(outputs={"checkpoints": [0.033]}), "outputs.checkpoints[0]"),
        (dict(outputs={"checkpoints": [0.2]}), "outputs.checkpoints[0]"),
        (dict(decomposition={"parts1": 50}), "decomposition"),
        (dict(solver={"rel_tol": 0.0}), "solver"),
        (dict(mode="convergence_study", time={"N": [10, 30]}), "time.N"),
        (dict(coefficients={"k": "__import__('os')"}), "coefficients.k"),
        (dict(coefficients={"f": [{"box": [0, 1, 0], "value": 1}]}), "coefficients.f[0]"),
    ],
)
def test_errors_name_the_field(override, where):
    assert ("error", where) in [f[:2] for f in findings(small(**override))]


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError):
        parse_config({"grdi": {}})
    with pytest.raises(ConfigError):
        parse_config({"grid": {"n3": 4}})


def test_coefficient_expression():
    cfg = parse_config(small(coefficients={"k": "1 + 0.5*sin(pi*x1)*x2", "c": 2}))
    field = cfg.build_coefficients()
    x = np.array([0.5])
    assert field.sample_k(x, x)[0] == pytest.approx(1.25)
    assert field.sample_c(x, x)[0] == 2.0


def test_validate_command(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, small()))]) == EXIT_OK
    assert main(["validate", str(write(tmp_path, small(time={"N": 0})))]) == EXIT_VALIDATION
    assert "time.N" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "grid": {"n1": 4,}\n}')
    assert main(["validate", str(bad)]) == EXIT_VALIDATION
    assert f"{bad}:2:" in capsys.readouterr().err


def test_run_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["--reproducible", "run", str(write(tmp_path, small())), "--out", str(out)]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "decomposition.csv", "error_t0p05.csv", "error_t0p1.csv", "manifest.json",
        "report.csv", "solution_t0p05.csv", "solution_t0p1.csv",
    ]
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["t", "eps2", "epsinf"] and [r[0] for r in rows[1:]] == ["0.05", "0.1"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved"]["p"] == 2
    assert manifest["resolved"]["sigma"] == 1.0
    assert manifest["resolved"]["stability_threshold"] == 1.0
    assert manifest["resolved"]["parallel_blocks_per_subdomain"] == [2, 2]
    assert manifest["reproducible"] is True and manifest["threads"] == 1


def test_manifest_round_trip_is_bit_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["--reproducible", "run", str(write(tmp_path, small(time={"sigma": 0.5}))), "--out", str(first)]) == EXIT_OK
    manifest = json.loads((first / "manifest.json").read_text())
    assert any("p/2" in w for w in manifest["warnings"])
    assert main(["--reproducible", "run", str(first / "manifest.json"), "--out", str(second)]) == EXIT_OK
    for name in manifest["outputs"]:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_threads_match_reproducible_mode(tmp_path):
    cfg = parse_config(small(grid={"n1": 16, "n2": 16}, decomposition={"parts1": 4, "parts2": 4}))
    a = execute(cfg, tmp_path / "a", reproducible=True)
    execute(cfg, tmp_path / "b", threads=4)
    for name in a["outputs"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_convergence_study_mode(tmp_path):
    cfg = small(
        mode="convergence_study", scheme="implicit", decomposition=None,
        time={"N": [5, 10, 20], "sigma": None}, outputs={"checkpoints": None, "dump_solution": False, "dump_error": False},
    )
    out = tmp_path / "study"
    assert main(["run", str(write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader((out / "convergence.csv").open()))
    assert rows[0] == ["N", "tau", "eps2", "epsinf", "order2", "orderinf"]
    assert [r[0] for r in rows[1:]] == ["5", "10", "20"]
    assert 0.7 < float(rows[3][4]) < 1.3
    report = list(csv.reader((out / "report_N20.csv").open()))
    assert len(report) == 1 + 5  # the coarsest levels are the shared checkpoints


def test_theorem_check_mode(tmp_path):
    cfg = small(mode="theorem_check", grid={"n1": 6, "n2": 6}, outputs={"checkpoints": None})
    out = tmp_path / "th"
    assert main(["run", str(write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["results"]["passed"] is True
    assert manifest["results"]["operator_checks"]["triangular_asymmetry"] < 1e-13
    rows = list(csv.reader((out / "energy.csv").open()))
    assert rows[0] == ["n", "lhs", "rhs", "margin"] and [r[0] for r in rows[1:]] == [str(n) for n in range(1, 11)]


def test_exit_codes(tmp_path):
    assert main(["run", str(write(tmp_path, small(decomposition=None)))]) == EXIT_VALIDATION
    failing = small(solver={"max_iter": 1, "rel_tol": 1e-14, "abs_tol": 1e-16}, grid={"n1": 16, "n2": 16})
    assert main(["run", str(write(tmp_path, failing)), "--out", str(tmp_path / "f")]) == EXIT_SOLVER
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", str(write(tmp_path, small())), "--out", str(blocker / "sub")]) == EXIT_IO


def test_solver_failure_message(tmp_path, capsys):
    failing = small(solver={"max_iter": 1, "rel_tol": 1e-14, "abs_tol": 1e-16}, grid={"n1": 16, "n2": 16})
    main(["run", str(write(tmp_path, failing)), "--out", str(tmp_path / "f")])
    assert "scheme" in capsys.readouterr().err


def test_presets_cover_every_experiment(tmp_path):
    assert {f"paper-fig{k}" for k in (3, 4, 5, 7, 8, 9, 10)} <= set(PRESETS)
    for name in PRESETS:
        for cfg in preset_configs(name):
            assert [f for f in validate(cfg) if f.level == "error"] == [], (name, cfg.name)
    assert main(["preset", "paper-fig7", "--out", str(tmp_path), "--dry-run"]) == EXIT_OK
    written = sorted(p.parent.name for p in tmp_path.glob("*/config.json"))
    assert written == ["ei_diag_128", "ei_diag_64"]
    cfg = load_config(tmp_path / "ei_diag_64" / "config.json")
    assert cfg.time.sigma == 1.0 and cfg.n_list == [25, 50, 100, 200, 400, 800]
    assert cfg.decomposition.coloring == "red_black" and cfg.mode == "convergence_study"
    assert main(["preset", "nonsense", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_snapshot_preset():
    (cfg,) = preset_configs("paper-fig3")
    assert cfg.scheme == "implicit" and cfg.grid.n1 == 128
    assert cfg.outputs.checkpoints == [0.025, 0.05, 0.075, 0.1] and cfg.outputs.dump_solution


def test_module_entry_point(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "soldecomp", "validate", str(write(tmp_path, small(time={"sigma": 0.5})))],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert result.stdout.splitlines()[0].startswith("warning: time.sigma")
