import csv
import json

import pytest

from multistab import cli


def _config(tmp_path, **over):
    data = {"schema_version": 1,
            "integration": {"t_transient": 10.0, "t_total": 20.0, "sample_dt": 0.1},
            "outputs": str(tmp_path / "out")}
    data.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_parse_grid():
    assert cli.parse_grid("0:0.5:0.05") == pytest.approx([0.05 * k for k in range(11)])
    assert cli.parse_grid("0.1,0.2") == [0.1, 0.2]
    for bad in ("1:0:0.1", "0:1:0", "a,b", "0:1"):
        with pytest.raises(cli.ConfigError):
            cli.parse_grid(bad)


def test_config_roundtrip():
    cfg = cli.RunConfig()
    again = cli.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("data, field", [
    ({"modle": {}}, "modle"),
    ({"schema_version": 7}, "schema_version"),
    ({"model": {"tau": -1.0}}, "model"),
    ({"integration": {"sample_dt": 0.0}}, "integration"),
    ({"census": {"box": [[0, 1]]}}, "census.box"),
])
def test_config_errors_name_the_field(data, field):
    with pytest.raises(cli.ConfigError, match=field):
        cli.RunConfig.from_dict(data)


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"g_k": "ten"}}))
    assert cli.main(["simulate", "--config", str(path), "--seed", "0"]) == cli.EXIT_CONFIG
    assert "model" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    cfg = _config(tmp_path)
    assert cli.main(["simulate", "--config", cfg, "--state", "1,2,3"]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path)
    # the resting state has no oscillation to shoot from
    code = cli.main(["continue", "--config", cfg, "--state=-64.652,0.00036,-64.652,0.00036",
                     "--out", str(tmp_path / "c")])
    assert code == cli.EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_is_deterministic_and_has_manifest(tmp_path):
    cfg = _config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["simulate", "--config", cfg, "--seed", "3", "--out", str(out)]) == cli.EXIT_OK
        outs.append(out)
    assert (outs[0] / "trajectory.csv").read_bytes() == (outs[1] / "trajectory.csv").read_bytes()
    m = json.loads((outs[0] / "manifest.json").read_text())
    assert m["command"] == "simulate" and m["config"]["schema_version"] == 1
    # the manifest alone reproduces the run
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(m["config"]))
    out = tmp_path / "c"
    argv = [a for a in m["argv"] if a not in (cfg, str(outs[0]))]
    argv = [a for a in argv if a not in ("--config", "--out")]
    assert cli.main(argv + ["--config", str(replay), "--out", str(out)]) == cli.EXIT_OK
    assert (out / "trajectory.csv").read_bytes() == (outs[0] / "trajectory.csv").read_bytes()


def test_manifolds_command(tmp_path):
    cfg = _config(tmp_path)
    traj_dir = tmp_path / "sim"
    assert cli.main(["simulate", "--config", cfg, "--seed", "1", "--out", str(traj_dir)]) == 0
    out = tmp_path / "m"
    code = cli.main(["manifolds", "--config", cfg, "--out", str(out),
                     "--trajectory", str(traj_dir / "trajectory.csv"), "--unit", "2", "--stride", "5"])
    assert code == cli.EXIT_OK
    with open(out / "manifolds.csv") as fh:
        branches = {row["branch"] for row in csv.DictReader(fh)}
    assert branches == {"stable+", "stable-", "unstable+", "unstable-"}
    assert (out / "reinjection_unit2.csv").exists()
    assert (out / "coupling_field_unit2.csv").exists()
    assert (out / "manifest.json").exists()
    assert cli.main(["manifolds", "--config", cfg, "--out", str(out),
                     "--trajectory", str(traj_dir / "trajectory.csv"), "--unit", "3"]) == cli.EXIT_CONFIG


def test_census_command_writes_summary(tmp_path):
    cfg = _config(tmp_path, census={"n_ics": 6, "seed": 0})
    out = tmp_path / "census"
    assert cli.main(["census", "--config", cfg, "--eps-grid", "0.15", "--out", str(out)]) == cli.EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert "manifest.json" in names
    assert any(n.startswith("representatives_eps_") for n in names)
