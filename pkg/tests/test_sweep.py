import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ringrc import experiments
from ringrc.cli import main
from ringrc.errors import ConfigError, DivergenceError
from ringrc.sweep import (ResultMap, best_power_projection, cell_seed, compare_baseline,
                          load_config, parse_axis, parse_config, run_experiment)


def write_cfg(tmp_path, body, name="c.ini"):
    p = tmp_path / name
    p.write_text(body)
    return p


# ---------------------------------------------------------------- config

def test_parse_axis_forms():
    assert parse_axis("1mW, 3mW") == (1e-3, 3e-3)
    assert parse_axis("0:1:5") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert parse_axis("2:2:1") == (2.0,)
    for bad in ("0:1", "0:1:2.5", "", "1:2:1"):
        with pytest.raises(ValueError):
            parse_axis(bad)


def test_parse_config_defaults_and_units(tmp_path):
    cfg = parse_config("[experiment]\nkind = narma10\nseed = 3\noutput = o\n"
                       "[sweep]\neta_F = 0, 0.5\nphi_F = 0:3.14159:3\n"
                       "[device]\ntau_fc = 50ns\n[task]\nlength = 900\ntau_F = 2ns\n", tmp_path)
    assert cfg.preset == "feedback" and cfg.seed == 3
    assert cfg.output == tmp_path / "o"
    assert cfg.n_cells == 6 and list(cfg.axes) == ["eta_F", "phi_F"]
    assert cfg.params.tau_fc == pytest.approx(50e-9)
    assert cfg.settings["tau_F"] == pytest.approx(2e-9)
    assert cfg.settings["length"] == 900 and isinstance(cfg.settings["length"], int)
    assert "eta_F" not in cfg.settings
    idx, point = list(cfg.cells())[-1]
    assert idx == 5 and point == {"eta_F": 0.5, "phi_F": pytest.approx(3.14159)}


def test_parse_config_collects_every_problem():
    text = ("[experiment]\nkind = narma10\nbogus = 1\n"
            "[sweep]\neta_F = 0, 1.5\nbitrate = 1Gbps\n[task]\nlength = 12.5\n[extra]\n")
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    keys = {k for k, _ in ei.value.problems}
    assert keys >= {"experiment.seed", "experiment.bogus", "sweep.eta_F", "sweep.bitrate",
                    "task.length", "extra"}


def test_parse_config_unknown_kind_and_bad_device():
    with pytest.raises(ConfigError, match="experiment.kind"):
        parse_config("[experiment]\nkind = nope\nseed = 0\n")
    with pytest.raises(ConfigError) as ei:
        parse_config("[experiment]\nkind = stability_map\nseed = 0\n[device]\ntau_fc = 5 apples\n")
    assert any(k.startswith("device") for k, _ in ei.value.problems)


def test_cli_reports_field_diagnostics(tmp_path, capsys):
    p = write_cfg(tmp_path, "[experiment]\nkind = xor_rc\n[sweep]\nbitrate = -1Gbps\n")
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert "invalid configuration" in err
    assert "experiment.seed" in err and "sweep.bitrate" in err
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


# ---------------------------------------------------------------- result maps

def toy_map(values, floors=None, metric="ber"):
    axes = {"a": (1.0, 2.0), "b": (10.0, 20.0)}
    records = [{"point": {"a": a, "b": b}, "metrics": {metric: v}, "status": "ok",
                "seed": 0, "cell_seed": i}
               for i, ((a, b), v) in enumerate(zip([(1.0, 10.0), (1.0, 20.0), (2.0, 10.0), (2.0, 20.0)], values))]
    return ResultMap(axes, [metric], records, floors if floors is not None else {metric: 100})


def test_result_map_csv_is_byte_stable():
    m = toy_map([0.0, 0.125, 1 / 3, 0.5])
    text = m.to_csv_text()
    assert text.splitlines()[0] == "a,b,status,seed,cell_seed,ber,ber_floor,n_test"
    assert "< 1/100,1,100" in text.splitlines()[1]
    back = ResultMap.from_csv_text(text)
    assert back.to_csv_text() == text
    assert back.values("ber")[1, 0] == 1 / 3
    assert back.at_floor("ber")[0, 0] and not back.at_floor("ber")[0, 1]


def test_result_map_rejects_incomplete_grid():
    m = toy_map([0.1, 0.2, 0.3, 0.4])
    m.records.pop()
    with pytest.raises(ValueError):
        m.to_csv_text()


def test_compare_baseline_cases():
    a = toy_map([0.1, 0.2, 0.3, 0.4])
    rb = compare_baseline(a, a)
    assert np.all(rb.values("rb_ber") == 1)
    better = toy_map([0.01, 0.02, 0.03, 0.04])
    assert np.allclose(compare_baseline(better, a).values("rb_ber"), 10)
    # hand-computed 2x2: out at the floor enters as 1/100
    out = toy_map([0.0, 0.05, 0.2, 0.4])
    inp = toy_map([0.3, 0.1, 0.2, 0.1])
    rb = compare_baseline(out, inp)
    assert np.allclose(rb.values("rb_ber"), [[30.0, 2.0], [1.0, 0.25]])
    assert rb.values("rb_ber_floor").tolist() == [[1, 0], [0, 0]]
    shifted = ResultMap({"a": (1.0, 3.0), "b": (10.0, 20.0)}, ["ber"],
                        [dict(r, point={"a": 3.0 if r["point"]["a"] == 2 else 1.0,
                                        "b": r["point"]["b"]}) for r in a.records],
                        {"ber": 100})
    with pytest.raises(ValueError, match="axis mismatch"):
        compare_baseline(shifted, a)


def test_best_power_projection():
    # axes a -> P, b -> other
    def pmap(values, powers):
        axes = {"P": powers, "x": (0.0, 1.0)}
        recs = []
        i = 0
        for p in powers:
            for x in (0.0, 1.0):
                recs.append({"point": {"P": p, "x": x}, "metrics": {"ber": values[i]},
                             "status": "ok", "seed": 0, "cell_seed": i})
                i += 1
        return ResultMap(axes, ["ber"], recs, {"ber": 100})

    single = pmap([0.1, 0.2], (1e-3,))
    best, at = best_power_projection(single)
    assert best.values("ber").tolist() == [0.1, 0.2]
    assert at.values("ber").tolist() == [1e-3, 1e-3]
    # unique minimum at the middle power for x=0; tie at the floor for x=1
    m = pmap([0.3, 0.0, 0.1, 0.0, 0.2, 0.05], (3e-3, 1e-3, 10e-3))
    best, at = best_power_projection(m)
    assert best.values("ber").tolist() == [0.1, 0.0]
    assert at.values("ber").tolist() == [1e-3, 1e-3]


# ---------------------------------------------------------------- runs

def test_cell_seed_is_stable_and_distinct():
    assert cell_seed(1, 0) == cell_seed(1, 0)
    assert len({cell_seed(1, i) for i in range(50)}) == 50


def test_linear_preset_stability_map_is_all_stable(tmp_path):
    p = write_cfg(tmp_path, "[experiment]\nkind = stability_map\npreset = linear\nseed = 0\n"
                            "output = out\n[sweep]\nP = 1mW, 10mW\ndelta_nu = -10GHz, 0GHz, 10GHz\n")
    s = run_experiment(load_config(p), workers=1)
    assert s.result.shape == (2, 3)
    assert all(r["metrics"]["class"] == "Stable" for r in s.result.records)
    text = (tmp_path / "out" / "stability.csv").read_text().splitlines()
    assert text[0] == "P,delta_nu,class,sp_freq_hz" and len(text) == 7


XOR_CFG = ("[experiment]\nkind = xor_rc\nseed = 1\noutput = {out}\n"
           "[sweep]\nbitrate = 2Mbps, 10Mbps\n[task]\nprbs_order = 7\n")


def test_xor_run_outputs_and_compare(tmp_path, capsys):
    p = write_cfg(tmp_path, XOR_CFG.format(out="x"))
    assert main(["run", str(p), "-q", "--dump-traces"]) == 0
    out = tmp_path / "x"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_cells"] == 2 and manifest["status_counts"] == {"ok": 2}
    assert manifest["seed"] == 1 and len(manifest["config_sha256"]) == 64
    assert sorted(f.name for f in (out / "trace").iterdir()) == ["cell0.csv", "cell1.csv"]
    assert (out / "trace" / "cell0.csv").read_text().startswith("t,")
    capsys.readouterr()
    assert main(["compare", str(out / "map.csv"), str(out / "baseline.csv")]) == 0
    rb = ResultMap.from_csv_text(capsys.readouterr().out)
    assert np.all(rb.values("rb_ber") > 1)


def test_runs_are_deterministic_across_workers(tmp_path):
    maps = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        cfg = parse_config(XOR_CFG.format(out=name), tmp_path)
        run_experiment(cfg, workers=workers)
        maps.append((tmp_path / name / "map.csv").read_bytes())
    assert maps[0] == maps[1] == maps[2]


def test_diverged_cells_are_recorded(tmp_path, monkeypatch):
    real = experiments.KINDS["xor_rc"]

    def flaky(params, settings, point, seed, keep_trace=False, data_seed=None):
        if point["bitrate"] > 5e6:
            raise DivergenceError("blew up", 3)
        return real.runner(params, settings, point, seed, keep_trace, data_seed)

    monkeypatch.setitem(experiments.KINDS, "xor_rc",
                        experiments.ExperimentKind(flaky, real.defaults, real.axes,
                                                   real.default_preset))
    s = run_experiment(parse_config(XOR_CFG.format(out="d"), tmp_path), workers=1)
    assert [r["status"] for r in s.result.records] == ["ok", "diverged"]
    assert math.isnan(s.result.values("ber")[1])
    assert s.manifest["status_counts"] == {"diverged": 1, "ok": 1}
    assert "blew up" in (tmp_path / "d" / "reports" / "cell1_error.txt").read_text()
    assert "diverged" in (tmp_path / "d" / "map.csv").read_text()


def test_worker_env_is_validated(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RINGRC_WORKERS", "zero")
    p = write_cfg(tmp_path, XOR_CFG.format(out="w"))
    assert main(["run", str(p), "-q"]) == 2
    assert "RINGRC_WORKERS" in capsys.readouterr().err


def test_presets_list_command():
    out = subprocess.run([sys.executable, "-m", "ringrc", "presets", "list"],
                         capture_output=True, text=True, check=True).stdout
    names = [ln.split()[0] for ln in out.splitlines() if ln.strip()]
    assert {"linear", "selfpulsing", "feedback", "logic"} <= set(names)
