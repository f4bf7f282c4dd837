from __future__ import annotations

import copy
import json

import numpy as np
import pytest
import yaml

from grassfield.cli import ResultTable, compare_tables, main
from grassfield.config import parse_config
from grassfield.errors import ValidationError

BASE = {
    "model": {"type": "two-component", "coupling": 1.0},
    "grid": {"points": 2},
    "initial_state": {"fock": [[0, 0], [1, 0]]},
    "scheme": {"variant": "split-step-fourier", "dt": 0.01, "steps": 40, "checkpoints": [0, 20, 40]},
    "ensemble": {"trajectories": 200, "seed": 5, "chunk_size": 50},
    "observables": [
        {"id": "pop", "kind": "population", "slots": [[0, 0], [1, 0]]},
        {"id": "coh", "kind": "coherence", "bra": [[0, 0], [1, 0]], "ket": [[0, 1], [1, 1]]},
        {"id": "kpop", "kind": "momentum", "bra": [[0, 0], [1, 0]], "ket": [[0, 0], [1, 0]]},
        {"id": "total", "kind": "total_population"},
    ],
}


def cfg(**changes):
    raw = copy.deepcopy(BASE)
    for path, value in changes.items():
        block, key = path.split("__")
        raw[block][key] = value
    return raw


def write(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_parse_base():
    c = parse_config(cfg())
    assert c.n_slots == 4 and c.order == 2
    assert c.times() == [0.0, 0.2, 0.4]
    assert len(c.config_hash()) == 16


@pytest.mark.parametrize(
    "raw,path",
    [
        (cfg(ensemble__trajectories=0), "ensemble.trajectories"),
        ({k: v for k, v in BASE.items() if k != "grid"}, "<root>.grid"),
        (cfg(grid__points=1), "grid.points"),
        (cfg(scheme__dt=-1.0), "scheme.dt"),
        (cfg(scheme__checkpoints=[0, 50]), "scheme.checkpoints"),
        (cfg(model__type="bosons"), "model.type"),
        (cfg(initial_state__fock=[[0, 0], [2, 0]]), "initial_state.fock[1]"),
    ],
)
def test_validation_paths(raw, path):
    with pytest.raises(ValidationError) as info:
        parse_config(raw)
    assert info.value.path.startswith(path)


def test_seed_is_mandatory():
    raw = cfg()
    del raw["ensemble"]["seed"]
    with pytest.raises(ValidationError, match="ensemble.seed"):
        parse_config(raw)


def test_observable_order_must_match_state():
    raw = cfg()
    raw["observables"] = [{"id": "x", "kind": "population", "slots": [[0, 0]]}]
    with pytest.raises(ValidationError, match=r"observables\[0\]"):
        parse_config(raw)


def test_momentum_off_lattice_rejected():
    raw = cfg()
    raw["observables"] = [{"id": "k", "kind": "momentum", "bra": [[0, 0.5], [1, 0]], "ket": [[0, 0], [1, 0]]}]
    with pytest.raises(ValidationError, match=r"observables\[0\].bra\[0\]"):
        parse_config(raw)


def test_hash_ignores_workers_but_not_seed():
    a = parse_config(cfg())
    b = parse_config(cfg(ensemble__workers=4))
    c = parse_config(cfg(ensemble__seed=6))
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert a.model_hash() == c.model_hash()


def test_multi_component_presets():
    raw = cfg()
    raw["model"] = {
        "type": "multi-component", "components": 2,
        "potentials": [{"preset": "harmonic", "omega": 0.5}, {"preset": "table", "values": [0.1, 0.2]}],
        "two_body": {"preset": "gaussian", "strength": 0.3, "width": 1.0},
    }
    c = parse_config(raw)
    np.testing.assert_allclose(c.model.one_body[1, 1], [0.1, 0.2])
    raw["model"]["potentials"][1]["values"] = [0.1]
    with pytest.raises(ValidationError, match=r"model.potentials\[1\].values"):
        parse_config(raw)


def test_run_is_reproducible_and_worker_invariant(tmp_path):
    path = write(tmp_path, cfg())
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        out = tmp_path / f"o{i}"
        assert main(["run", path, "--out-dir", str(out), "--workers", str(workers)]) == 0
        outs.append(((out / "results.csv").read_bytes(), (out / "results.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    header = outs[0][0].decode().splitlines()[0]
    assert header == "observable_id,t,re,im,stderr_re,stderr_im,n_traj,n_excluded"
    meta = json.loads(outs[0][1])["metadata"]
    assert meta["seed"] == 5 and "config_hash" in meta and "version" in meta


def test_seed_flag_overrides(tmp_path):
    path = write(tmp_path, cfg())
    main(["run", path, "--out-dir", str(tmp_path / "a"), "--format", "json"])
    main(["run", path, "--out-dir", str(tmp_path / "b"), "--format", "json", "--seed", "77"])
    a = json.loads((tmp_path / "a" / "results.json").read_text())
    b = json.loads((tmp_path / "b" / "results.json").read_text())
    assert b["metadata"]["seed"] == 77
    assert a["rows"][4]["re"] != b["rows"][4]["re"]
    assert not (tmp_path / "a" / "results.csv").exists()


def test_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, cfg(ensemble__trajectories=0), "bad.yaml")
    assert main(["run", bad]) == 1
    assert "ensemble.trajectories" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1
    diverge = cfg(model__coupling=50.0)
    diverge["scheme"] = {"variant": "euler-maruyama", "dt": 0.5, "steps": 3000}
    diverge["ensemble"]["trajectories"] = 8
    path = write(tmp_path, diverge, "div.yaml")
    assert main(["run", path, "--out-dir", str(tmp_path / "d")]) == 2
    partial = json.loads((tmp_path / "d" / "results_partial.json").read_text())
    assert partial["metadata"]["partial"] is True


def test_run_exact_compare_pass(tmp_path, capsys):
    raw = cfg(ensemble__trajectories=500, ensemble__chunk_size=250)
    # late checkpoints: the O(dt) weak bias must stay below the sampling error
    raw["scheme"].update(dt=0.001, steps=2000, checkpoints=[0, 1000, 2000])
    path = write(tmp_path, raw)
    out = tmp_path / "o"
    assert main(["run", path, "--out-dir", str(out)]) == 0
    assert main(["exact", path, "--out-dir", str(out)]) == 0
    capsys.readouterr()
    code = main(["compare", str(out / "results.json"), str(out / "results_exact.json"), "--out-dir", str(out)])
    text = capsys.readouterr().out
    assert code == 0 and "PASS" in text
    report = json.loads((out / "comparison.json").read_text())
    assert report["pass"] and report["n_rows"] == 12


def test_compare_identical_tables_and_failures(tmp_path):
    rows = [{"observable_id": "a", "t": 0.0, "re": 1.0, "im": 0.0, "stderr_re": 0.1, "stderr_im": 0.1,
             "n_traj": 10, "n_excluded": 0}]
    t = ResultTable(rows, {"model_hash": "x"})
    rep = compare_tables(t, t)
    assert rep["pass"] and rep["max_z"] == 0
    other = ResultTable([dict(rows[0], observable_id="b")], {"model_hash": "x"})
    with pytest.raises(ValidationError, match="unmatched"):
        compare_tables(t, other)
    with pytest.raises(ValidationError, match="model hashes"):
        compare_tables(t, ResultTable(rows, {"model_hash": "y"}))
    assert compare_tables(t, ResultTable(rows, {"model_hash": "y"}), force=True)["pass"]
    far = ResultTable([dict(rows[0], re=2.0)], {"model_hash": "x"})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text(t.to_csv())
    b.write_text(far.to_csv())
    assert main(["compare", str(a), str(b)]) == 3


def test_csv_round_trip(tmp_path):
    rows = [{"observable_id": "a", "t": 0.1, "re": 1 / 3, "im": -2e-17, "stderr_re": 0.0, "stderr_im": 0.0,
             "n_traj": 3, "n_excluded": 1}]
    path = tmp_path / "t.csv"
    path.write_text(ResultTable(rows).to_csv())
    assert ResultTable.read(path).rows == rows


def test_plot_flag(tmp_path):
    path = write(tmp_path, cfg(ensemble__trajectories=50))
    assert main(["run", path, "--out-dir", str(tmp_path), "--plot"]) == 0
    assert (tmp_path / "results.png").stat().st_size > 0


def test_selftest_passes(capsys):
    assert main(["selftest", "--cases", "20", "--samples", "5000"]) == 0
    assert "noise moments" in capsys.readouterr().out
