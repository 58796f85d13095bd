import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from qmhlab import __version__, runner
from qmhlab.cli import main
from qmhlab.config import complex_array, config_from_dict, config_hash, load_config
from qmhlab.errors import ConfigError

CONFIGS = Path(runner.__file__).parent / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _small(mode="classical", **extra):
    cfg = {"mode": mode, "seed": 11, "model": {"energies": [0.0, 0.5], "beta": 1.0}, "steps": 200}
    if mode in ("imprecise", "quantum"):
        cfg.update(sigma=0.3, n_max=5)
    cfg.update(extra)
    return cfg


def _digest(p):
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


# ---------------------------------------------------------------- config

def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({"mode": "halting", "halting": {"delta": 1.0}})


@pytest.mark.parametrize("bad,path", [
    ({"mode": "nope", "seed": 1}, "mode"),
    ({"mode": "classical", "seed": -1}, "seed"),
    ({"mode": "classical", "seed": 1, "steps": 10}, "model"),
    ({"mode": "classical", "seed": 1, "steps": 10, "model": {"energies": [0, 1]}}, "model.beta"),
    ({"mode": "imprecise", "seed": 1, "steps": 10, "model": {"energies": [0], "beta": 1}}, "n_max"),
    ({"mode": "cost", "seed": 1, "cost": {"beta": 1}}, "cost.sigma"),
])
def test_validation_reports_field_path(bad, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(bad)
    assert exc.value.path == path


def test_file_references_resolve(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"energies": [0.0, 1.0], "beta": 2.0}))
    p = _write(tmp_path, {"mode": "classical", "seed": 1, "steps": 5, "model": {"file": "model.json"}})
    assert load_config(p).raw["model"]["beta"] == 2.0
    p = _write(tmp_path, {"mode": "classical", "seed": 1, "steps": 5, "model": {"file": "missing.json"}})
    with pytest.raises(ConfigError):
        load_config(p)


def test_hash_ignores_output_dir():
    a = {"mode": "halting", "seed": 1, "halting": {"delta": 1.0}}
    assert config_hash(a) == config_hash({**a, "output_dir": "x"})
    assert config_hash(a) != config_hash({**a, "seed": 2})


def test_complex_array_parsing():
    m = complex_array([[1, [0, 1]], [[0, -1], 2]], "h", 2)
    np.testing.assert_array_equal(m, [[1, 1j], [-1j, 2]])
    # a row of two reals is a row, not a complex scalar
    assert complex_array([[1.0, 2.0]], "h", 2).shape == (1, 2)
    with pytest.raises(ConfigError):
        complex_array([[1, 2], [3]], "h", 2)
    with pytest.raises(ConfigError):
        complex_array([["a"]], "h", 2)


# ---------------------------------------------------------------- runs

def test_verify_bundled_config_exits_zero(tmp_path):
    out = tmp_path / "v"
    assert main([str(CONFIGS / "verify.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "verify.json").read_text())
    assert rep["passed"]
    assert all(c["max_violation"] < 1e-10 for c in rep["checks"])


def test_config_error_exit_code(tmp_path, capsys):
    p = _write(tmp_path, {"mode": "classical", "steps": 5})
    assert main([str(p), "--out", str(tmp_path / "o")]) == 1
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_verification_failure_exit_code(tmp_path, monkeypatch):
    import qmhlab.verify as verify
    monkeypatch.setitem(verify.TOLERANCES, "gaussian_identity", 0.0)
    p = _write(tmp_path, {"mode": "verify", "seed": 1,
                          "verify": {"checks": ["gaussian_identity"], "trials": {"gaussian_identity": 2}}})
    assert main([str(p), "--out", str(tmp_path / "o")]) == 2
    assert (tmp_path / "o" / "verify.json").exists()


def test_failed_run_leaves_no_output(tmp_path, monkeypatch):
    def boom(cfg, stage, plots):
        (stage / "trace.csv").write_text("partial")
        raise ConfigError("x", "forced failure")
    monkeypatch.setitem(runner._MODES, "classical", boom)
    p = _write(tmp_path, _small())
    assert main([str(p), "--out", str(tmp_path / "o")]) == 1
    assert list(tmp_path.iterdir()) == [p]


def test_mixed_provenance_refused(tmp_path):
    out = tmp_path / "o"
    p1 = _write(tmp_path, _small(), "a.json")
    p2 = _write(tmp_path, _small(seed=12), "b.json")
    assert main([str(p1), "--out", str(out), "--no-plots"]) == 0
    assert main([str(p1), "--out", str(out), "--no-plots"]) == 0
    assert main([str(p2), "--out", str(out), "--no-plots"]) == 1
    stray = tmp_path / "stray"
    stray.mkdir()
    (stray / "notes.txt").write_text("x")
    assert main([str(p1), "--out", str(stray)]) == 1


def test_classical_trace_format(tmp_path):
    out = tmp_path / "o"
    p = _write(tmp_path, _small(burn_in=10))
    assert main([str(p), "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    h = load_config(p).config_hash
    assert f"# config_hash {h}" in lines
    assert f"# qmhlab {__version__}" in lines
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "step,state,proposal,accepted"
    assert len(body) == 201 and body[1].startswith("10,")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == h and manifest["qmhlab"] == __version__
    assert set(manifest["files"]) == {p.name for p in out.iterdir()}
    assert (out / "occupation.png").exists()


@pytest.mark.parametrize("mode,field", [("imprecise", "hidden_state"), ("quantum", "state_fidelity")])
def test_jsonl_schema_and_oracle_mode(tmp_path, mode, field):
    for oracle in (False, True):
        out = tmp_path / f"{mode}{oracle}"
        p = _write(tmp_path, _small(mode, oracle_mode=oracle), f"{mode}{oracle}.json")
        assert main([str(p), "--out", str(out), "--no-plots"]) == 0
        lines = (out / "trajectories.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["meta"]["config_hash"] == load_config(p).config_hash
        rec = json.loads(lines[1])
        assert {"step", "n", "truncated", "trajectory"} <= set(rec)
        assert len(rec["trajectory"]) == rec["n"] + 1
        assert (field in rec) == oracle
    summary = json.loads((out / "summary.json").read_text())["summary"]
    assert {"mean_f", "se_f", "mean_omega", "se_omega", "eps_tilde", "halting_histogram"} <= set(summary)


def test_quantum_config_with_hamiltonian(tmp_path):
    cfg = {"mode": "quantum", "seed": 3, "steps": 50, "sigma": 0.3, "n_max": 5,
           "model": {"hamiltonian": [[0.0, 0.2], [0.2, 1.0]], "beta": 1.0},
           "spam": {"type": "explicit",
                    "k_o": [[[1, 0], [0, 0]], [[0, 1], [0, 0]]],
                    "u_c": [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]}}
    assert main([str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0


def test_halting_csv_columns(tmp_path):
    out = tmp_path / "o"
    p = _write(tmp_path, {"mode": "halting", "seed": 2, "halting": {"delta": 1.0, "n_max": 10, "runs": 20000}})
    assert main([str(p), "--out", str(out)]) == 0
    body = [ln for ln in (out / "halting.csv").read_text().splitlines() if not ln.startswith("#")]
    assert body[0] == "n,p_halt,t_n,s_n,empirical_p,SE"
    assert len(body) == 11
    assert json.loads((out / "summary.json").read_text())["summary"]["within_4se"]


def test_cost_mode_tags_model(tmp_path):
    out = tmp_path / "o"
    assert main([str(CONFIGS / "cost.json"), "--out", str(out)]) == 0
    cost = json.loads((out / "cost.json").read_text())
    assert cost["kind"] == "model"
    assert cost["n_mix_bound"] == pytest.approx(3.0)


def test_mode_and_seed_overrides(tmp_path):
    p = _write(tmp_path, {"mode": "classical", "seed": 1, "halting": {"delta": 0.5, "runs": 100}})
    assert main([str(p), "--mode", "halting", "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 9


@pytest.mark.parametrize("threads", ["1", "2"])
def test_worker_count_does_not_change_traces(tmp_path, monkeypatch, threads):
    p = _write(tmp_path, _small(chains=2))
    monkeypatch.setenv("QMHLAB_THREADS", "1")
    assert main([str(p), "--out", str(tmp_path / "a"), "--no-plots"]) == 0
    monkeypatch.setenv("QMHLAB_THREADS", threads)
    assert main([str(p), "--out", str(tmp_path / "b"), "--no-plots"]) == 0
    for name in ("trace_chain0.csv", "trace_chain1.csv"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)
    assert _digest(tmp_path / "a" / "trace_chain0.csv") != _digest(tmp_path / "a" / "trace_chain1.csv")
