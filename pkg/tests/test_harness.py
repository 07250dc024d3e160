import json
import math

import numpy as np
import pytest

from imagination.harness.cli import EXIT_CONFIG, EXIT_OK, main
from imagination.harness.config import ConfigError, env_overrides, load_config, preset
from imagination.harness.io import SchemaError, emit_csv, format_value, read_csv, write_manifest


def test_defaults_and_presets():
    cfg = load_config(environ={})
    assert cfg.scale == "desk" and cfg.seed == 0 and cfg.workers == 1
    paper = preset("paper")
    assert paper.calibrate.n_synthetic + paper.calibrate.n_lqg >= 400
    assert paper.scaling.seeds == 100 and paper.scaling.epochs == 200


def test_toml_file_and_overrides(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('seed = 5\n[fidelity]\nregime = "bounded"\ncmax = 3\n[allocate.lqg]\nbudget = 2e5\n')
    cfg = load_config(f, {"fidelity": {"sigma0": 2.0}}, environ={"IMAGINATION_SEED": "7"})
    assert cfg.seed == 7
    assert cfg.fidelity.regime == "bounded" and cfg.fidelity.cmax == 3.0 and cfg.fidelity.sigma0 == 2.0
    assert cfg.allocate.lqg.budget == 2e5


def test_env_override_tree():
    tree = env_overrides({"IMAGINATION_REINFORCE__K_GRID": "(1, 2)", "IMAGINATION_SCALE": "paper", "OTHER": "1"})
    assert tree == {"reinforce": {"k_grid": (1, 2)}, "scale": "paper"}


@pytest.mark.parametrize(
    "text, key",
    [
        ("[fidelity]\nbogus = 1\n", "fidelity.bogus"),
        ('seed = "zero"\n', "seed"),
        ("[reinforce]\nreps = 1.5\n", "reinforce.reps"),
        ("nonsense = 1\n", "nonsense"),
        ("scale = 'huge'\n", "scale"),
        ("seed = -1\n", "seed"),
    ],
)
def test_config_errors_name_the_key(tmp_path, text, key):
    f = tmp_path / "bad.toml"
    f.write_text(text)
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(f, environ={})


def test_invalid_toml_and_missing_file(tmp_path):
    f = tmp_path / "broken.toml"
    f.write_text("seed = = 1")
    with pytest.raises(ConfigError):
        load_config(f, environ={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml", environ={})


def test_format_value_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(format_value(v)) == v
    assert format_value(True) == "1" and format_value(np.int64(4)) == "4"
    assert format_value(float("inf")) == "inf" and format_value(float("nan")) == "nan"


def test_emit_csv(tmp_path):
    schema = ("a", "b")
    p = emit_csv(tmp_path / "x.csv", [], schema)
    assert p.read_text() == "a,b\n"
    emit_csv(tmp_path / "y.csv", [{"a": 1, "b": 0.1}, {"a": 2, "b": 1 / 3}], schema)
    rows = read_csv(tmp_path / "y.csv")
    assert [float(r["b"]) for r in rows] == [0.1, 1 / 3]
    with pytest.raises(SchemaError):
        emit_csv(tmp_path / "z.csv", [{"a": 1}], schema)
    with pytest.raises(SchemaError):
        emit_csv(tmp_path / "z.csv", [{"a": 1, "b": 2, "c": 3}], schema)


def test_manifest_deterministic(tmp_path):
    cfg = load_config(environ={}).to_dict()
    a = write_manifest(tmp_path / "a.json", cfg, {"x.csv": ("a", "b")}, status="ok").read_text()
    b = write_manifest(tmp_path / "b.json", cfg, {"x.csv": ("a", "b")}, status="ok").read_text()
    assert a == b
    doc = json.loads(a)
    assert doc["seed"] == 0 and doc["outputs"] == {"x.csv": ["a", "b"]} and len(doc["code_sha256"]) == 64


def test_cli_fidelity_bounded(tmp_path, capsys):
    out = tmp_path / "fid"
    rc = main(["fidelity", "--regime", "bounded", "--sigma0", "1", "--cmax", "2", "--out", str(out)])
    assert rc == EXIT_OK
    rows = [r for r in read_csv(out / "fidelity.csv") if r["regime"] == "bounded"]
    phis = np.array([float(r["phi"]) for r in rows])
    cs = np.array([float(r["c"]) for r in rows])
    assert cs[np.argmax(phis)] == pytest.approx(1.0)
    assert phis[0] == 0.0 and phis[-1] == 0.0
    assert json.loads((out / "manifest.json").read_text())["status"] == "ok"


def test_cli_config_error_exit(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("IMAGINATION_FIDELITY__NOPE", "1")
    assert main(["fidelity", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "fidelity.nope" in capsys.readouterr().err


def test_cli_domain_error_exit(tmp_path, capsys):
    assert main(["fidelity", "--regime", "bounded", "--cmax", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_calibrate_bitwise_reproducible(tmp_path):
    f = tmp_path / "small.toml"
    f.write_text("[calibrate]\nn_synthetic = 20\nn_lqg = 20\n")
    for d in ("r1", "r2"):
        assert main(["calibrate", "--config", str(f), "--seed", "3", "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("calibrate.csv", "calibrate_ecdf.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    rows = read_csv(tmp_path / "r1" / "calibrate.csv")
    assert len(rows) == 40
    assert all(float(r["R"]) <= 1.0 for r in rows if r["excluded"] == "0")


def test_env_override_mixed_case_field():
    cfg = load_config(environ={"IMAGINATION_REINFORCE__K_GRID": "(1, 2)", "IMAGINATION_REINFORCE__REPS": "500"})
    assert cfg.reinforce.K_grid == (1, 2) and cfg.reinforce.reps == 500
