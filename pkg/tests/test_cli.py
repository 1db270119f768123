"""Command-line interface: exit codes, manifests, determinism, targets."""

import json
import os

import numpy as np
import pandas as pd
import pytest

from frugal import cli, examples
from frugal.model import serialize_model

CONFIG_DIR = os.path.join(os.path.dirname(cli.__file__), "configs")
MSM_CONFIG = os.path.join(CONFIG_DIR, "copula_msm.yaml")


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_csv_and_manifest(tmp_path):
    out = str(tmp_path / "d.csv")
    rc = cli.main(["simulate", MSM_CONFIG, "--n", "200", "--seed", "3",
                   "--out", out])
    assert rc == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["a", "l", "b", "y"]
    assert len(frame) == 200
    man = json.loads(_read(out + ".manifest.json"))
    assert man["command"] == "simulate"
    assert man["seed"] == 3
    assert man["outputs"] == [out]


def test_simulate_same_seed_byte_identical(tmp_path):
    out1, out2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert cli.main(["simulate", MSM_CONFIG, "--n", "150", "--seed", "9",
                     "--out", out1]) == 0
    assert cli.main(["simulate", MSM_CONFIG, "--n", "150", "--seed", "9",
                     "--out", out2]) == 0
    assert _read(out1) == _read(out2)


def test_simulate_n_zero_header_only(tmp_path):
    out = str(tmp_path / "empty.csv")
    rc = cli.main(["simulate", MSM_CONFIG, "--n", "0", "--out", out])
    assert rc == cli.EXIT_OK
    with open(out) as fh:
        lines = fh.read().splitlines()
    assert lines == ["a,l,b,y"]


def test_simulate_causal_world_randomizes_treatments(tmp_path):
    out = str(tmp_path / "c.csv")
    rc = cli.main(["simulate", MSM_CONFIG, "--world", "causal",
                   "--n", "4000", "--seed", "1", "--out", out])
    assert rc == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert abs(np.corrcoef(frame["b"], frame["l"])[0, 1]) < 0.05


def test_simulate_missing_config_is_model_error(tmp_path):
    rc = cli.main(["simulate", str(tmp_path / "nope.yaml"),
                   "--out", str(tmp_path / "x.csv")])
    assert rc == cli.EXIT_MODEL


# ---------------------------------------------------------------------------
# fit


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("fitdata") / "d.csv")
    assert cli.main(["simulate", MSM_CONFIG, "--n", "4000", "--seed", "11",
                     "--out", path]) == 0
    return path


def test_fit_ipw_report(sim_csv, tmp_path, capsys):
    out = str(tmp_path / "fit.csv")
    rc = cli.main(["fit", MSM_CONFIG, sim_csv, "--method", "ipw",
                   "--out", out])
    assert rc == cli.EXIT_OK
    report = pd.read_csv(out)
    assert list(report.columns) == ["parameter", "estimate", "se"]
    assert set(report["parameter"]) == {"intercept", "a", "b", "a:b"}
    est = dict(zip(report["parameter"], report["estimate"]))
    se = dict(zip(report["parameter"], report["se"]))
    for name, truth in examples.COPULA_MSM_TRUTH.items():
        assert abs(est[name] - truth) < 5 * se[name]
    assert os.path.exists(out + ".manifest.json")


def test_fit_or_method_shows_confounding_bias(sim_csv, tmp_path):
    out_or = str(tmp_path / "or.csv")
    out_ipw = str(tmp_path / "ipw.csv")
    assert cli.main(["fit", MSM_CONFIG, sim_csv, "--method", "or",
                     "--out", out_or]) == cli.EXIT_OK
    assert cli.main(["fit", MSM_CONFIG, sim_csv, "--method", "ipw",
                     "--out", out_ipw]) == cli.EXIT_OK
    b_or = pd.read_csv(out_or).set_index("parameter").loc["b", "estimate"]
    b_ipw = pd.read_csv(out_ipw).set_index("parameter").loc["b", "estimate"]
    # the naive fit absorbs the covariate path into b; IPW removes it
    assert b_or - examples.COPULA_MSM_TRUTH["b"] > 0.08
    assert abs(b_ipw - examples.COPULA_MSM_TRUTH["b"]) < 0.08


def test_fit_mismatched_columns_exits_model_error(tmp_path, capsys):
    bad = str(tmp_path / "bad.csv")
    pd.DataFrame({"a": [0, 1], "y": [0.1, 0.2]}).to_csv(bad, index=False)
    rc = cli.main(["fit", MSM_CONFIG, bad, "--method", "ipw"])
    assert rc == cli.EXIT_MODEL
    err = capsys.readouterr().err
    assert "missing" in err and "b" in err and "l" in err


def test_fit_mle_reports_all_parameters_with_sandwich(sim_csv, tmp_path):
    out = str(tmp_path / "mle.csv")
    rc = cli.main(["fit", MSM_CONFIG, sim_csv, "--method", "mle",
                   "--out", out])
    assert rc == cli.EXIT_OK
    report = pd.read_csv(out)
    labels = set(report["parameter"])
    assert {"y.intercept", "y.a", "y.b", "y.a:b"} <= labels
    assert any(l.startswith("dep.") for l in labels)


# ---------------------------------------------------------------------------
# rerun


def test_rerun_reproduces_byte_identically(tmp_path):
    out = str(tmp_path / "d.csv")
    assert cli.main(["simulate", MSM_CONFIG, "--n", "120", "--seed", "5",
                     "--out", out]) == 0
    first = _read(out)
    os.remove(out)
    rc = cli.main(["rerun", out + ".manifest.json"])
    assert rc == cli.EXIT_OK
    assert _read(out) == first


# ---------------------------------------------------------------------------
# reproduce


def test_reproduce_unknown_target_lists_options(capsys):
    rc = cli.main(["reproduce", "definitely-not-a-target"])
    assert rc == cli.EXIT_USAGE
    err = capsys.readouterr().err
    for target in cli.TARGETS:
        assert target in err


def test_reproduce_fast_targets_pass(capsys):
    for target in ("example-1.2", "example-4.1", "snmm-table-3",
                   "snmm-table-4"):
        rc = cli.main(["reproduce", target])
        out = capsys.readouterr().out
        assert rc == cli.EXIT_OK, out
        assert out.strip().endswith("PASS")


def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["simulate"]) == cli.EXIT_USAGE  # missing config/--out
    assert cli.main(["fit", MSM_CONFIG, "x.csv", "--method", "nonsense"]) \
        == cli.EXIT_USAGE


def test_shipped_configs_parse():
    for name in os.listdir(CONFIG_DIR):
        if not name.endswith(".yaml"):
            continue
        with open(os.path.join(CONFIG_DIR, name)) as fh:
            text = fh.read()
        from frugal.model import parse_model_config

        m = parse_model_config(text)
        assert serialize_model(m) == text


def test_reproduce_targets_cover_every_module():
    """The reproduce suite must collectively exercise every other module."""
    coverage = {
        "example-1.2": {"construct"},
        "example-4.1": {"model", "dependence", "construct"},
        "example-r4.3": {"model", "dependence", "sample", "fit"},
        "table-1": {"model", "dependence", "sample", "fit"},
        "appendix-d": {"model", "dependence", "sample", "fit"},
        "snmm-table-3": {"model", "dependence", "sequential"},
        "snmm-table-4": {"model", "dependence", "sequential"},
        "appendix-f": {"sequential", "fit"},
        "vine-c1": {"model", "dependence", "sample", "fit"},
        "iv-g": {"model", "sample"},
    }
    assert set(coverage) == set(cli.TARGETS)
    exercised = set().union(*coverage.values())
    assert exercised == {"model", "dependence", "construct", "sample",
                         "fit", "sequential"}
