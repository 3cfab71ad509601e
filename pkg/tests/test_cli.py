import json
import math
import os

import pytest

from factorphase import cli

POTTS_LN2 = {"family": "potts", "q": 2, "beta": math.log(2)}


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main(list(args) + ["--out", str(out)])
    return code, out


def test_spectra_reports_d_ks_nine(tmp_path):
    code, out = _run(tmp_path, "s", "spectra", "--model", json.dumps(POTTS_LN2))
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["spectra"]["d_ks"] == pytest.approx(9.0)
    assert "loop_normalization_order_1" in rep["resolutions"]
    assert rep["config"]["params"] == {}


def test_ks_bound_xorsat_infinite(tmp_path):
    code, out = _run(tmp_path, "x", "ks-bound", "--model", '{"family": "xorsat", "k": 3, "beta": 1.0}')
    assert code == 0
    assert json.loads((out / "report.json").read_text())["results"]["d_ks"] == "inf"


def test_parse_config_defaults_and_errors(tmp_path):
    cfg = cli.parse_config({"command": "tree-corr", "model": POTTS_LN2, "seed": 1,
                            "params": {"d": 2.0, "ell": 3}})
    assert cfg.params["n_trees"] == 10**4 and cfg.params["method"] == "auto"
    with pytest.raises(cli.ConfigError, match="seed"):
        cli.parse_config({"command": "bethe", "model": POTTS_LN2, "params": {"d": 1}})
    with pytest.raises(cli.ConfigError, match="model.family"):
        cli.parse_config({"command": "spectra", "model": {"family": "ising", "beta": 1}})
    with pytest.raises(cli.ConfigError, match="params.ell"):
        cli.parse_config({"command": "tree-corr", "model": POTTS_LN2, "seed": 1, "params": {"d": 1}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "spectra", "model": POTTS_LN2}))
    assert cli.parse_config(str(path)).command == "spectra"


def test_exit_codes(tmp_path):
    code, _ = _run(tmp_path, "e1", "bethe", "--model", json.dumps(POTTS_LN2), "--params", '{"d": 1}')
    assert code == 1
    code, _ = _run(tmp_path, "e2", "gibbs", "--model", json.dumps(POTTS_LN2), "--seed", "1",
                   "--params", '{"n": 40, "d": 1.0, "mode": "enumerate"}')
    assert code == 2


def test_repeat_runs_are_byte_identical(tmp_path):
    args = ["poisson-fit", "--model", json.dumps(POTTS_LN2), "--seed", "3", "--format", "csv",
            "--params", '{"d": 1.0, "n": 200, "n_graphs": 10}']
    _, a = _run(tmp_path, "a", *args)
    _, b = _run(tmp_path, "b", *(args + ["--workers", "2"]))
    assert (a / "poisson_fit.csv").read_bytes() == (b / "poisson_fit.csv").read_bytes()


def test_file_formats(tmp_path):
    m = json.dumps(POTTS_LN2)
    _, out = _run(tmp_path, "d", "dcond", "--model", m, "--seed", "1", "--format", "both",
                  "--params", '{"d_grid": [0.5, 1.0], "N": 100, "sweeps": 4, "keep": 2, "n_mc": 100}')
    assert (out / "dcond.csv").read_text().splitlines()[0] == "d,sup_B,threshold,gap,se"
    _, out = _run(tmp_path, "c", "census", "--model", m, "--seed", "1", "--format", "csv",
                  "--params", '{"n": 100, "d": 1.5}')
    lines = (out / "census.csv").read_text().splitlines()
    assert lines[0] == "signature,count" and lines[1].startswith("C1,")
    _, out = _run(tmp_path, "f", "fluctuation", "--model", m, "--seed", "1", "--format", "csv",
                  "--params", '{"d": 0.8, "n": 300, "n_graphs": 5, "n_K": 50}')
    assert (out / "ecdf_pair.csv").read_text().splitlines()[0] == "centered_lnZ,K_sample"
    _, out = _run(tmp_path, "r", "drec-scan", "--model", m, "--seed", "1", "--format", "csv",
                  "--params", '{"d_grid": [1.0], "ell_schedule": [1, 2, 3], "n_trees": 50, "replicates": 1}')
    assert (out / "drec.csv").read_text().splitlines()[0] == "d,ell,estimate,se,verdict"
    _, out = _run(tmp_path, "k", "sample-k", "--model", m, "--seed", "1", "--format", "csv",
                  "--params", '{"d": 0.8, "n_samples": 20}')
    assert len((out / "K.csv").read_text().splitlines()) == 21


def test_gen_writes_graph_file(tmp_path):
    _, out = _run(tmp_path, "g", "gen", "--model", json.dumps(POTTS_LN2), "--seed", "2", "--format", "csv",
                  "--params", '{"n": 12, "d": 1.0, "kind": "nishimori"}')
    from factorphase.graphs import FactorGraph
    G = FactorGraph.from_text((out / "graph.txt").read_text())
    assert G.n == 12
    assert os.path.exists(out / "sigma.csv")


def test_every_subcommand_is_registered():
    want = {"check-assumptions", "spectra", "ks-bound", "gen", "gibbs", "overlap", "bethe", "dcond",
            "census", "poisson-fit", "sample-k", "moments", "fluctuation", "tree-corr", "drec-scan",
            "nishimori-test", "taylor-check"}
    assert set(cli.COMMANDS) == want == set(cli.RUNNERS)
