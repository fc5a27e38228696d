import json
import math

import numpy as np
import pytest
import scipy.stats
from click.testing import CliRunner

from glab.experiments import cli
from glab.experiments.config import ConfigError, load_config, params_from_config, parse_config
from glab.experiments.record import Check, RunRecord, input_hash, load_record, save_record, table_csv
from glab.experiments.runners import parallel_map, replica_seeds, run_named
from glab.experiments.stats import (
    WeightedNorm,
    holder_time_exponent,
    ks_distance,
    norm_eval,
    pooled_moment_gap,
    sup_increments,
)
from glab.model import Segment, Torus


# ---------------------------------------------------------------- config

def test_parse_config_values():
    cfg = parse_config(
        """
        [run]
        experiment = "kv"   # comment
        N = 64
        alpha = [0.6, 0.4]
        flag = true
        name = plain words
        """
    )
    assert cfg == {"experiment": "kv", "N": 64, "alpha": [0.6, 0.4], "flag": True, "name": "plain words"}


def test_parse_inline_tokens_and_errors():
    assert parse_config("N=8 T=0.5 alpha=[1, 0]") == {"N": 8, "T": 0.5, "alpha": [1, 0]}
    with pytest.raises(ConfigError):
        parse_config("just words")


def test_load_config_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("experiment = identity\nsamples = 5\n")
    assert load_config(path, ["samples=7"])["samples"] == 7


def test_params_from_config():
    p = params_from_config({"N": 16, "alpha": [1.0], "gamma": [0.5], "L": 10})
    assert p.geometry == Torus(10)
    q = params_from_config({"N": 16, "geometry": "segment", "L": 4})
    assert isinstance(q.geometry, Segment) and q.gamma == (0.0,)
    with pytest.raises(ConfigError):
        params_from_config({})


# ---------------------------------------------------------------- records

def test_record_roundtrip(tmp_path):
    rec = RunRecord({"experiment": "x"}, 3, [1, 2], {"t": [{"a": 1, "b": 0.1}, {"a": 2, "b": math.pi}]},
                    {"v": np.float64(1.5)}, [Check("c", np.bool_(True), "ok")])
    save_record(rec, tmp_path / "r")
    back = load_record(tmp_path / "r")
    assert back.tables == rec.tables
    assert back.content_hash == rec.content_hash == input_hash({"experiment": "x"}, 3)
    assert back.passed and back.summary == {"v": 1.5}
    assert back.meta["table_sha256"] == rec.manifest()["table_sha256"]
    assert table_csv(rec.tables["t"]).splitlines()[2] == f"2,{math.pi!r}"


def test_hash_depends_on_seed_and_config():
    assert input_hash({"a": 1}, 0) != input_hash({"a": 1}, 1)
    assert input_hash({"a": 1, "b": 2}, 0) == input_hash({"b": 2, "a": 1}, 0)


# ---------------------------------------------------------------- comparators

def test_ks_distance():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=500), rng.normal(0.3, 1.2, size=700)
    assert ks_distance(a, a) == 0.0
    assert ks_distance([0, 1], [5, 6]) == 1.0
    assert ks_distance(a, b) == pytest.approx(scipy.stats.ks_2samp(a, b).statistic, abs=1e-12)
    assert ks_distance(rng.normal(size=1000), rng.normal(size=1000)) <= 0.09
    with pytest.raises(ValueError):
        ks_distance([], [1.0])


def test_norm_eval():
    times = np.linspace(0, 1, 11)
    const = np.full((11, 5), -2.0)
    assert norm_eval(times, const, WeightedNorm("sup")) == 2.0
    assert norm_eval(times, const, WeightedNorm("discrete")) == 2.0
    # each piece holds the envelope value at its right end, so the weighted sup is 1
    fine = np.linspace(0, 1, 2001)
    envelope = np.append(fine[1:], 1.0 + fine[1])[:, None] ** -0.5 * np.ones((1, 3))
    nw = norm_eval(fine, envelope, WeightedNorm("nw", eps_nw=0.0), horizon=1.0 + fine[1])
    assert nw == pytest.approx(1.0, abs=1e-12)
    assert norm_eval(times, const, WeightedNorm("nw")) <= norm_eval(times, const, WeightedNorm("sup"))
    with pytest.raises(ValueError):
        WeightedNorm("l2")


def test_holder_fit():
    t = np.arange(200) * 0.01
    frozen = np.ones((200, 4))
    assert np.all(sup_increments(frozen, [1, 2]) == 0)
    assert holder_time_exponent(frozen, 0.01, [1, 2, 4, 8])[0] == 0.0
    smooth = np.exp(t)[:, None] * np.ones((1, 3))
    slope, taus, _ = holder_time_exponent(smooth, 0.01, [1, 2, 4, 8])
    assert slope == pytest.approx(1.0, abs=0.05)
    assert taus == pytest.approx([0.01, 0.02, 0.04, 0.08])
    with pytest.raises(ValueError):
        holder_time_exponent(smooth, 0.01, [1, 2, 3])


def test_pooled_moment_gap():
    gap, se = pooled_moment_gap([1.0, 3.0], [2.0, 2.0], 1)
    assert gap == 0.0 and se == pytest.approx(1.0)


# ---------------------------------------------------------------- seeds and workers

def test_replica_seeds_stable_and_distinct():
    s = replica_seeds(7, 50)
    assert s == replica_seeds(7, 50)
    assert s[:10] == replica_seeds(7, 10)
    assert len(set(s)) == 50 and all(0 <= v < 2**63 for v in s)


def _square(x):
    return x * x


def test_worker_count_does_not_change_output():
    assert parallel_map(_square, range(20), 3) == [x * x for x in range(20)]
    cfg = {"experiment": "stationarity", "N": 16, "T": 0.05, "replicas": 8, "exact_sizes": [4], "densities": [0.0]}
    serial, _ = run_named({**cfg, "workers": 1}, 4)
    pooled, _ = run_named({**cfg, "workers": 2}, 4)
    assert serial.tables == pooled.tables


def test_unknown_experiment_and_bad_replicas():
    with pytest.raises(ConfigError):
        run_named({"experiment": "nope"}, 0)
    with pytest.raises(ConfigError):
        run_named({"experiment": "stationarity", "replicas": 0}, 0)


# ---------------------------------------------------------------- CLI

@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "identity.cfg"
    path.write_text("experiment = identity\nsamples = 20\nseed = 5\n")
    return path


def test_cli_run_replay_report(tmp_path, config_file, monkeypatch):
    monkeypatch.delenv("GLAB_SEED", raising=False)
    runner = CliRunner()
    out = tmp_path / "rec"
    res = runner.invoke(cli.main, ["run", str(config_file), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "PASS" in res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 5

    res = runner.invoke(cli.main, ["replay", str(out)])
    assert res.exit_code == 0 and "same  residuals" in res.output

    res = runner.invoke(cli.main, ["report", str(out)])
    assert res.exit_code == 0 and json.loads(res.output)["summary"]["samples"] == 20

    res = runner.invoke(cli.main, ["report", str(out), "--csv", "--npz", str(tmp_path / "t.npz")])
    assert res.exit_code == 0
    assert res.output.splitlines()[0] == "sample,m,N,residual"
    with np.load(tmp_path / "t.npz") as data:
        assert data["residuals/residual"].shape == (20,)


def test_cli_seed_override(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv("GLAB_SEED", "11")
    res = CliRunner().invoke(cli.main, ["run", str(config_file), "--out", str(tmp_path / "r")])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["master_seed"] == 11


def test_cli_replay_detects_tampering(tmp_path, config_file):
    runner = CliRunner()
    out = tmp_path / "rec"
    runner.invoke(cli.main, ["run", str(config_file), "--out", str(out)])
    table = out / "residuals.csv"
    lines = table.read_text().splitlines()
    lines[1] = lines[1].rsplit(",", 1)[0] + ",0.5"
    table.write_text("\n".join(lines) + "\n")
    res = runner.invoke(cli.main, ["replay", str(out)])
    assert res.exit_code == 1 and "DIFF" in res.output


def test_cli_exit_codes(tmp_path, config_file):
    runner = CliRunner()
    failing = runner.invoke(cli.main, ["run", str(config_file), "--set", "tol=-1", "--out", str(tmp_path / "f")])
    assert failing.exit_code == 1 and "FAIL" in failing.output
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment = nope\n")
    assert runner.invoke(cli.main, ["run", str(bad)]).exit_code == 2
    zero = runner.invoke(cli.main, ["run", str(config_file), "--set", "experiment=stationarity", "--set", "replicas=0"])
    assert zero.exit_code == 2
