import json
import os

import numpy as np
import pytest

from pdecontrol import cli, config, fit, pipeline, rom
from pdecontrol.errors import ConfigError

HEAT_CFG = {
    "problem": {
        "kind": "heat",
        "domain": {"lo": [0.0], "hi": [1.0]},
        "horizon": 0.05,
        "boundary": "zero_dirichlet",
    },
    "rom_arch": {
        "kind": "linear_basis",
        "input_dim": 1,
        "basis_spec": [["fourier_sine", 1], ["fourier_sine", 2]],
    },
    "control_arch": {"width": 8, "depth": 2},
    "theta_space": {"kind": "box", "half_width": 1.0},
    "counts": {"n_theta": 6, "n_x": 32, "n_traj": 2, "n_t": 4},
    "quadrature": "gauss",
    "train": {"lr": 0.01, "zeta": 0.1, "batch_size": 0, "stop_loss": 1e-9,
              "stop_plateau_pct": None, "max_steps": 30},
    "solve": {"scheme": "rk4", "n_steps": 8},
    "initials": {"family": "heat_combo", "count": 2, "eps0_target": 0.01, "fit_n_x": 64,
                 "fit": {"lr": 0.01, "max_steps": 400}},
    "seed": 3,
}


@pytest.fixture
def heat_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(HEAT_CFG))
    return path


def test_load_and_defaults(heat_config, tmp_path):
    cfg = config.load_config(heat_config, out_dir=str(tmp_path / "out"))
    assert cfg.seed == 3
    assert cfg.raw["solve"]["scheme"] == "rk4"
    assert cfg.problem().dim == 1
    assert rom.param_count(cfg.rom_arch()) == 2
    assert cfg.control_arch().input_dim == 2


def test_schema_rejects_unknown_keys(tmp_path):
    doc = dict(HEAT_CFG)
    doc["bogus"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        config.load_config(path)


def test_schema_rejects_bad_values(tmp_path):
    doc = json.loads(json.dumps(HEAT_CFG))
    doc["problem"]["horizon"] = -1.0
    path = tmp_path / "bad2.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        config.load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "nope.json")


def test_overrides(heat_config, tmp_path):
    cfg = config.load_config(
        heat_config,
        overrides=["counts.n_theta=9", "train.lr=0.5", 'problem.kind="heat"'],
        out_dir=str(tmp_path / "out"),
        seed=77,
    )
    assert cfg.raw["counts"]["n_theta"] == 9
    assert cfg.raw["train"]["lr"] == 0.5
    assert cfg.seed == 77


def test_override_parsing():
    key, value = config.parse_override("a.b.c=[1,2]")
    assert key == "a.b.c" and value == [1, 2]
    key, value = config.parse_override("x=plain-string")
    assert value == "plain-string"
    with pytest.raises(ConfigError):
        config.parse_override("missing-equals")


def test_full_pipeline_small(heat_config, tmp_path):
    out = str(tmp_path / "out")
    cfg = config.load_config(heat_config, out_dir=out)
    report = pipeline.cmd_fit_initial(cfg)
    assert len(report) == 2
    stats = pipeline.cmd_sample_gram(cfg)
    assert stats["computed"] == 6
    stats = pipeline.cmd_gen_trajectories(cfg)
    assert stats["trajectories"] == 2
    stats = pipeline.cmd_train_control(cfg)
    assert stats["steps"] >= 1
    stats = pipeline.cmd_solve(cfg, anchor_index=0)
    assert os.path.exists(stats["path"])
    stats = pipeline.cmd_eval(cfg, anchor_index=0, n_x=512)
    assert os.path.exists(stats["path"])


def test_zero_field_solve_reproduces_fit_error(heat_config, tmp_path):
    # untrained (zero-init) control field: constant trajectory, so the error
    # at every time equals the fit-time error of theta0 against the decaying
    # reference at t=0 ... at t=0 specifically it must match the fit rmse.
    out = str(tmp_path / "out")
    cfg = config.load_config(heat_config, out_dir=out, overrides=["train.max_steps=1", "train.lr=1e-12"])
    pipeline.cmd_fit_initial(cfg)
    pipeline.cmd_sample_gram(cfg)
    pipeline.cmd_gen_trajectories(cfg)
    pipeline.cmd_train_control(cfg)
    sol = pipeline.cmd_solve(cfg, anchor_index=0)
    doc, traj = pipeline.load_solution(cfg, 0)
    assert np.allclose(traj.thetas, traj.thetas[0], atol=1e-12)  # zero field
    stats = pipeline.cmd_eval(cfg, anchor_index=0, n_x=4096)
    curve = open(stats["path"]).read().strip().split("\n")
    t0_abs = float(curve[1].split(",")[1])
    assert t0_abs <= 2.0 * max(doc["fit_rmse"], 1e-12)


def test_sample_gram_resume_noop(heat_config, tmp_path):
    out = str(tmp_path / "out")
    cfg = config.load_config(heat_config, out_dir=out)
    pipeline.cmd_sample_gram(cfg)
    payload = open(cfg.path("gram_cache"), "rb").read()
    stats = pipeline.cmd_sample_gram(cfg)
    assert stats["computed"] == 0
    assert open(cfg.path("gram_cache"), "rb").read() == payload


def test_cli_exit_codes(heat_config, tmp_path, capsys):
    out = str(tmp_path / "out")
    # config error
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["sample-gram", "--config", str(bad)]) == cli.EXIT_CONFIG
    # missing artifact: train before sampling
    assert cli.main(["train-control", "--config", str(heat_config), "--out", out]) == cli.EXIT_MISSING
    # happy path
    assert cli.main(["fit-initial", "--config", str(heat_config), "--out", out]) == 0
    assert cli.main(["sample-gram", "--config", str(heat_config), "--out", out]) == 0
    assert cli.main(["gen-trajectories", "--config", str(heat_config), "--out", out]) == 0
    assert cli.main(["train-control", "--config", str(heat_config), "--out", out]) == 0
    assert cli.main(["solve", "--config", str(heat_config), "--out", out, "--anchor", "0"]) == 0
    assert cli.main(["eval", "--config", str(heat_config), "--out", out, "--anchor", "0"]) == 0
    assert (
        cli.main(["export-slice", "--config", str(heat_config), "--out", out, "--anchor", "0", "--time", "0.01"])
        == cli.EXIT_CONFIG  # 1-D problem has no 2-D slice
    )
    capsys.readouterr()


def test_cli_checksum_mismatch_exit(heat_config, tmp_path):
    out = str(tmp_path / "out")
    assert cli.main(["fit-initial", "--config", str(heat_config), "--out", out]) == 0
    assert cli.main(["sample-gram", "--config", str(heat_config), "--out", out]) == 0
    # change the architecture under the same out dir: cached artifacts no longer match
    code = cli.main([
        "train-control", "--config", str(heat_config), "--out", out,
        "--set", 'rom_arch.basis_spec=[["fourier_sine",1],["fourier_sine",2],["fourier_sine",3]]',
    ])
    assert code == cli.EXIT_NUMERIC


def test_spec_from_dict_roundtrip():
    specs = [
        fit.RandomTheta(seed=5),
        fit.HeatCombo(np.array([0.1, 0.2, 0.3, 0.4])),
        fit.ChebCombo(terms=((1, 2, 0.5),)),
    ]
    for spec in specs:
        rebuilt = pipeline.spec_from_dict(spec.describe())
        assert rebuilt.describe() == spec.describe()
    with pytest.raises(ConfigError):
        pipeline.spec_from_dict({"kind": "closure", "label": "x"})
