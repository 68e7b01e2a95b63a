import copy
import json

import numpy as np
import pytest

from iamcf.cli import (
    ConfigError,
    RunConfig,
    bundled_config,
    convergence_study,
    load_config,
    main,
)
from iamcf.grid import ScalarField

BASE = {
    "norm": {"kind": "euclidean", "dim": 2},
    "obstacle": {"type": "wulff", "radius": 1.0},
    "grid": {"box": [-2.5, 2.5], "resolution": 64, "mask_shift": 0.15},
    "solver": {"schedule": [1.3, 1.2], "delta_reg": 1e-9},
    "flow": {"times": [0.25, 0.5], "trials": 50, "seed": 0},
    "checks": {"run": ["barriers", "maxgrad"]},
}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(v)


def write_config(tmp_path, spec, name="case"):
    lines = []
    for section, table in spec.items():
        lines.append(f"[{section}]")
        for k, v in table.items():
            lines.append(f"{k} = {_fmt(v)}")
        lines.append("")
    p = tmp_path / f"{name}.toml"
    p.write_text("\n".join(lines))
    return p


def variant(**section_updates):
    spec = copy.deepcopy(BASE)
    for section, upd in section_updates.items():
        if upd is None:
            spec.pop(section, None)
        else:
            spec.setdefault(section, {}).update(upd)
    return spec


def read_summary(out_dir):
    checks = {}
    stages = []
    for line in (out_dir / "summary.txt").read_text().splitlines():
        if line.startswith("check="):
            parts = dict(tok.split("=", 1) for tok in line.split())
            checks.setdefault(parts["check"], []).append(parts)
        elif line.startswith("stage "):
            stages.append(line)
    return stages, checks


# -- config loading and validation --------------------------------------------


def test_bundled_configs_load():
    for name in ("wulff_euclid_2d", "wulff_aniso_2d", "square_euclid_2d"):
        cfg = load_config(bundled_config(name))
        assert cfg.name == name
        assert cfg.checks
    assert len(load_config(bundled_config("wulff_euclid_2d")).checks) == 8


def test_bare_name_resolves_to_bundled():
    cfg = load_config("wulff_euclid_2d")
    assert cfg.resolution == 200


def test_unknown_bundled_name():
    with pytest.raises(ConfigError, match="available"):
        bundled_config("no_such_case")


@pytest.mark.parametrize(
    "updates,msg",
    [
        ({"solver": {"schedule": [1.1, 1.3]}}, "decrease"),
        ({"solver": {"schedule": [2.5]}}, "1 < p < n"),
        ({"solver": {"schedule": [1.3, 1.0]}}, "1 < p < n"),
        ({"solver": {"p_final": 1.2}}, "not both"),
        ({"checks": {"run": ["barriers", "spellchk"]}}, "unknown check"),
        ({"obstacle": {"type": "blob"}}, "obstacle.type"),
        ({"obstacle": {"radius": -1.0}}, "positive"),
        ({"norm": {"twist": 3}}, "unknown key"),
        ({"grid": {"spacing": 0.1}}, "unknown key"),
        ({"typo_section": {"x": 1}}, "unknown key"),
    ],
    ids=["increasing", "p-above-n", "p-at-one", "both-p-keys",
         "bad-check", "bad-obstacle", "bad-radius", "stray-norm-key",
         "stray-grid-key", "stray-section"],
)
def test_config_rejections(tmp_path, updates, msg):
    path = write_config(tmp_path, variant(**updates))
    with pytest.raises(ConfigError, match=msg):
        load_config(path)


def test_missing_field_named(tmp_path):
    spec = variant()
    del spec["grid"]["resolution"]
    with pytest.raises(ConfigError, match="grid.resolution"):
        load_config(write_config(tmp_path, spec))


def test_p_above_n_rejected_before_solving(tmp_path, capsys):
    # must die in validation, not after a solve attempt
    path = write_config(tmp_path, variant(solver={"schedule": [2.5]}))
    code = main(["check", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_obstacle_margin_rejected(tmp_path, capsys):
    path = write_config(tmp_path, variant(obstacle={"radius": 2.4}))
    code = main(["solve", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "margin" in capsys.readouterr().err


def test_bad_schedule_flag(tmp_path, capsys):
    path = write_config(tmp_path, variant())
    code = main(["solve", "--config", str(path), "--out", str(tmp_path / "o"),
                 "--p-schedule", "1.2,1.3"])
    assert code == 2
    assert "decrease" in capsys.readouterr().err


# -- the bundled closed-form case, end to end ----------------------------------


@pytest.fixture(scope="session")
def full_check_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("wulff_euclid_full")
    code = main(["check", "--config", "wulff_euclid_2d", "--out", str(out)])
    stages, checks = read_summary(out)
    return code, stages, checks, out


def test_bundled_case_all_checks_pass(full_check_run):
    code, stages, checks, _ = full_check_run
    assert code == 0
    assert all(rows[0]["status"] == "pass"
               for rows in checks.values()), checks


def test_summary_schema(full_check_run):
    _, stages, checks, _ = full_check_run
    want = {"barriers", "maxgrad", "inradius_bound", "boundary_curvature",
            "growth", "minimality", "weak_curvature", "p_convergence"}
    assert set(checks) == want
    for name, rows in checks.items():
        assert len(rows) == 1, f"{name} appears {len(rows)} times"
        assert rows[0]["status"] in ("pass", "fail", "hypothesis_unverified")
        float(rows[0]["value"])
        float(rows[0]["tol"])
    assert len(stages) == 3


def test_exponential_growth_recorded(full_check_run):
    _, _, checks, out = full_check_run
    assert float(checks["growth"][0]["value"]) <= 0.05
    rows = np.loadtxt(out / "growth.csv", delimiter=",", skiprows=2)
    assert rows.shape == (2, 4)
    # measured sigma against e^t * sigma_F(W_1) = e^t * 2 pi; the
    # reference perimeter is polygonal, good to ~1e-8
    for t, measured, predicted, rel in rows:
        assert predicted == pytest.approx(np.exp(t) * 2 * np.pi, rel=1e-6)
        assert abs(measured / predicted - 1.0) <= 0.05
        assert rel == pytest.approx(measured / predicted - 1.0)


def test_artifacts_written(full_check_run):
    _, _, _, out = full_check_run
    for fname in ("u_final.csv", "u_final.bin", "contours.csv",
                  "growth.csv", "minimality.csv", "config_resolved.json",
                  "summary.txt"):
        assert (out / fname).exists(), fname


def test_field_export_roundtrip(full_check_run):
    _, _, _, out = full_check_run
    values, origin, spacing = ScalarField.read_binary(out / "u_final.bin")
    assert values.shape == (201, 201)
    assert origin == pytest.approx([-2.5, -2.5])
    assert spacing == pytest.approx(5.0 / 200)
    # interior values are the log-transformed potential: positive outside
    # the unit Wulff shape, growing with radius
    assert values[195, 100] > values[180, 100] > 0


def test_resolved_config_provenance(full_check_run):
    _, _, _, out = full_check_run
    resolved = json.loads((out / "config_resolved.json").read_text())
    assert resolved["solver"]["schedule"] == [1.3, 1.1, 1.04]
    assert resolved["grid"]["resolution"] == 200
    assert resolved["grid"]["mask_shift"] == 0.15
    assert resolved["flow"]["seed"] == 0
    assert resolved["solver"]["delta_reg"] == 1e-15


# -- exit codes and determinism ------------------------------------------------


def test_failing_check_gives_nonzero_exit(tmp_path):
    # a single stage at p=1.2 leaves a ~20% gap to the p->1 limit
    out = tmp_path / "fail_run"
    code = main(["check", "--config", "wulff_euclid_2d",
                 "--resolution", "64", "--p-schedule", "1.2",
                 "--out", str(out)])
    assert code == 1
    _, checks = read_summary(out)
    assert checks["p_convergence"][0]["status"] == "fail"
    assert float(checks["p_convergence"][0]["value"]) > 0.05


def test_repeat_runs_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = main(["check", "--config", "wulff_euclid_2d",
                     "--resolution", "64", "--p-schedule", "1.3,1.2",
                     "--out", str(out)])
        assert code in (0, 1)
        outs.append(out)
    a, b = outs
    assert (a / "summary.txt").read_bytes() == (b / "summary.txt").read_bytes()
    assert (a / "u_final.bin").read_bytes() == (b / "u_final.bin").read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("IAMCF_OUTPUT_ROOT", str(tmp_path))
    code = main(["solve", "--config", "wulff_euclid_2d",
                 "--resolution", "48"])
    assert code == 0
    assert (tmp_path / "wulff_euclid_2d" / "summary.txt").exists()


def test_output_directory_from_config(tmp_path):
    spec = variant(output={"directory": str(tmp_path / "from_config")},
                   checks=None)
    path = write_config(tmp_path, spec)
    assert main(["solve", "--config", str(path)]) == 0
    assert (tmp_path / "from_config" / "u_final.bin").exists()


def test_flag_overrides_recorded(tmp_path):
    out = tmp_path / "ovr"
    code = main(["solve", "--config", "wulff_euclid_2d",
                 "--resolution", "48", "--seed", "5",
                 "--p-schedule", "1.3,1.2", "--out", str(out)])
    assert code == 0
    resolved = json.loads((out / "config_resolved.json").read_text())
    assert resolved["grid"]["resolution"] == 48
    assert resolved["flow"]["seed"] == 5
    assert resolved["solver"]["schedule"] == [1.3, 1.2]


# -- convergence study -----------------------------------------------------


@pytest.fixture(scope="module")
def study_rows(tmp_path_factory):
    cfg = load_config(bundled_config("wulff_euclid_2d"))
    out = tmp_path_factory.mktemp("study")
    rows = convergence_study(cfg, [48, 96], out)
    return rows, out


def test_study_row_layout(study_rows):
    rows, _ = study_rows
    assert len(rows) == 6  # 2 resolutions x 3 schedule stages
    assert {r["resolution"] for r in rows} == {48, 96}
    assert all(np.isfinite(r["err_exact"]) for r in rows)


def test_study_refinement_drops_error(study_rows):
    rows, _ = study_rows
    for p in (1.3, 1.1, 1.04):
        coarse = next(r for r in rows
                      if r["resolution"] == 48 and r["p"] == p)
        fine = next(r for r in rows
                    if r["resolution"] == 96 and r["p"] == p)
        assert coarse["err_exact"] / fine["err_exact"] >= 1.5
        assert fine["order"] > 0.58


def test_study_limit_error_monotone_in_p(study_rows):
    rows, _ = study_rows
    for res in (48, 96):
        errs = [r["err_limit"] for r in sorted(
            (r for r in rows if r["resolution"] == res),
            key=lambda r: -r["p"])]
        assert errs == sorted(errs, reverse=True)


def test_study_csv(study_rows):
    rows, out = study_rows
    table = np.loadtxt(out / "study.csv", delimiter=",", skiprows=1)
    assert table.shape == (6, 6)
    assert set(table[:, 0]) == {48.0, 96.0}


def test_study_degenerate_single_row():
    cfg = load_config(bundled_config("wulff_euclid_2d"))
    cfg = RunConfig(**{**cfg.__dict__, "schedule": [1.2]})
    rows = convergence_study(cfg, [48])
    assert len(rows) == 1
    assert np.isnan(rows[0]["order"])


def test_study_subcommand(tmp_path):
    out = tmp_path / "study_cli"
    code = main(["study", "--config", "wulff_euclid_2d",
                 "--resolutions", "48,96", "--out", str(out)])
    assert code == 0
    assert (out / "study.csv").exists()
