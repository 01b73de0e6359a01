import json
import math
import os

import numpy as np
import pytest

from oclab.bench import ExperimentConfig, fit_exponent, run_experiment
from oclab.cli import main
from oclab.core import InvalidInput


def test_fit_exact_power_law():
    xs = [1, 2, 5, 10, 100]
    f = fit_exponent([(x, x ** (2 / 7)) for x in xs])
    assert math.isclose(f.slope, 2 / 7, rel_tol=1e-12)
    assert f.r_squared == pytest.approx(1.0, abs=1e-12) and f.n_points == 5


def test_fit_noisy_half(rng):
    xs = np.logspace(0, 4, 30)
    ys = 3 * xs**0.5 * (1 + 0.01 * rng.standard_normal(30))
    f = fit_exponent(zip(xs, ys))
    assert 0.48 <= f.slope <= 0.52
    assert 0 <= f.r_squared <= 1


def test_fit_rejects():
    with pytest.raises(InvalidInput):
        fit_exponent([(1, 1), (2, 2)])
    with pytest.raises(InvalidInput):
        fit_exponent([(3, 1), (3, 2), (3, 4)])
    with pytest.raises(InvalidInput):
        fit_exponent([(1, 1), (2, -2), (3, 4)])


def test_config_validation():
    with pytest.raises(InvalidInput):
        ExperimentConfig(family="convex", kind="lowerbound", T=[])
    with pytest.raises(InvalidInput):
        ExperimentConfig(family="convex", kind="lowerbound", D=[-1.0])
    with pytest.raises(InvalidInput):
        ExperimentConfig(family="convex", kind="optimize", optimizers=[])
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict({"family": "convex", "bogus": 1})


def _cfg(tmp_path, name, **kw):
    base = dict(family="convex", kind="optimize", optimizers=["anpe", "agd"], mu1=[3.0], mu2=[2.0], D=[1.0],
                T=[4, 8], eps=[1e-3, 1e-5, 1e-7, 1e-9], budget=500, out_dir=str(tmp_path / name))
    base.update(kw)
    return ExperimentConfig(**base)


def test_replay_byte_identical(tmp_path):
    a, b = _cfg(tmp_path, "a"), _cfg(tmp_path, "b")
    run_experiment(a)
    run_experiment(b)
    files = sorted(os.listdir(tmp_path / "a" / "traces"))
    assert files
    for f in files:
        assert (tmp_path / "a" / "traces" / f).read_bytes() == (tmp_path / "b" / "traces" / f).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert ma["files"] and ma["seed"] == 0


def test_config_hash_changes_iff_config_changes(tmp_path):
    a = _cfg(tmp_path, "x")
    assert a.config_hash() == ExperimentConfig.from_json(a.to_json()).config_hash()
    assert a.config_hash() != _cfg(tmp_path, "x", seed=1).config_hash()


def test_cell_errors_are_recorded(tmp_path):
    cfg = ExperimentConfig(family="strong", kind="optimize", optimizers=["cubic-newton"], mu1=[10.0, 100.0],
                           mu2=[12.0], lam=[1.0], D=[100.0], T=[2], eps=[1e-6], budget=200,
                           out_dir=str(tmp_path / "s"))
    s = run_experiment(cfg)
    errs = [c for c in s["cells"] if "error" in c]
    assert len(errs) == 1 and errs[0]["error"]["type"] == "ConditionViolated"
    assert len(s["cells"]) == 2


def test_lowerbound_summary_fit(tmp_path):
    cfg = ExperimentConfig(family="korder", kind="lowerbound", k=[2], mu2=[1.0], D=[1.0], T=[16, 20, 24, 28, 32],
                           out_dir=str(tmp_path / "lb"))
    s = run_experiment(cfg)
    (fit,) = s["fits"].values()
    assert abs(fit["slope"] + 3.5) <= 0.15
    assert all(c["certified"] for c in s["cells"])


# command line ---------------------------------------------------------------------------


def test_cli_build_json(capsys):
    assert main(["build", "--family", "convex", "--mu1", "3", "--mu2", "2", "--T", "4", "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert math.isclose(d["gamma"], 1 / 192)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["build", "--family", "strong", "--mu1", "100", "--mu2", "12", "--D", "2", "--T", "2"]) == 2
    p = tmp_path / "pairs.csv"
    p.write_text("1,1\n2,2\n")
    assert main(["fit", str(p)]) == 1


def test_cli_fit_and_run(tmp_path, capsys):
    p = tmp_path / "pairs.csv"
    p.write_text("x,y\n" + "".join(f"{x},{x ** 0.5}\n" for x in (1, 4, 9, 16)))
    assert main(["fit", str(p), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["slope"] == pytest.approx(0.5)
    out = tmp_path / "t.csv"
    assert main(["run", "--family", "convex", "--mu1", "3", "--mu2", "2", "--T", "4", "--optimizer",
                 "cubic-newton", "--eps", "1e-9", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "oracle_calls,f_gap,grad_norm,elapsed_ms"


def test_cli_lowerbound_game_minimize_verify(capsys):
    assert main(["lowerbound", "--family", "korder", "--k", "2", "--T", "4", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["certified"]
    assert main(["game", "--family", "convex", "--mu1", "3", "--mu2", "2", "--T", "3", "--optimizer", "gd",
                 "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["sound"]
    assert main(["minimize", "--family", "korder", "--k", "1", "--T", "3", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["properties"]["passed"]
    assert main(["verify", "--family", "korder", "--k", "2", "--T", "3", "--points", "3", "--segments", "50",
                 "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]
