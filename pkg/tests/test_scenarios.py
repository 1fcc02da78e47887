import json
import math

import numpy as np
import pytest

from bhsignal import scenarios as sc
from bhsignal.cid import ModeGridCache


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


PV = {"sender": {"r": 6.0, "omega": 1.0, "start": 0.0, "stop": 1.0},
      "receiver": {"r": 3.01, "omega": 1.0},
      "scenario": {"mode": "shift", "s2": 5.0, "ladder": {"start": 0.0, "stop": 8.0, "num": 17}}}
DIST = {"sender": {"r": 6.0, "omega": 1.0, "start": 0.0, "stop": 1.0},
        "scenario": {"r_B": [2.5, 3.0, 4.0, 6.0, 9.0, 20.0]}}
GRID = {"sender": {"r": 6.0, "omega": 1.0, "start": 0.0, "stop": 1.0},
        "receiver": {"omega": 1.0, "start": 0.0, "stop": 1.0},
        "solver": {"green": "none"},
        "scenario": {"r_B": [3.0, 6.0, 9.0], "gamma": [0.0, 0.01, 1.0, math.pi]}}
PROBE = {"scenario": {"r": 6.0, "rp": 5.0, "gamma": 0.0,
                      "dt": {"start": 2.0, "stop": 8.0, "num": 7}},
         "solver": {"ell_max": 4, "h": 0.05}}


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"sender": {"r": 6.0, "spin": 1}},
    {"receiver": {"r": 4.0, "aligned": True}},
    {"solver": {"tolerance": 1e-3}},
    {"scenario": {"ladder": {"start": 0, "stop": 1, "step": 0.1}}},
    {"output": {"file": "x.csv"}},
])
def test_unknown_keys_rejected(tmp_path, bad):
    data = {**PV, **bad} if "scenario" not in bad else {**PV, "scenario": {**PV["scenario"], **bad["scenario"]}}
    if "sender" in bad:
        data["sender"] = {**PV["sender"], **bad["sender"]}
    with pytest.raises(sc.ConfigError, match="unknown key"):
        sc.load_config(data, "pv-model")
    assert sc.main(["pv-model", "--config", _write(tmp_path, data)]) == 2


@pytest.mark.parametrize("patch,msg", [
    ({"sender": {"r": 1.5, "omega": 1.0, "start": 0.0, "stop": 1.0}}, "horizon"),
    ({"sender": {"r": 6.0, "omega": 1.0, "start": 1.0, "stop": 0.0}}, "switch-off"),
    ({"solver": {"h": -0.1}}, "solver.h"),
    ({"solver": {"green": "magic"}}, "solver.green"),
    ({"mass": -1.0}, "mass"),
    ({"scenario": {"kind": "distances"}}, "kind"),
])
def test_invalid_values_rejected(patch, msg):
    with pytest.raises(sc.ConfigError, match=msg):
        sc.load_config({**PV, **patch}, "pv-model")


def test_exit_codes(tmp_path, capsys):
    assert sc.main(["minkowski-ref", "--config", _write(tmp_path, {"scenario": {"L": [1.0]}})]) == 0
    assert capsys.readouterr().out.startswith("#schema=bh-signal-v1")
    assert sc.main(["minkowski-ref"]) == 2
    assert sc.main(["minkowski-ref", "--config", str(tmp_path / "missing.json")]) == 2
    caustic = {"sender": {"r": 6.0, "omega": 1.0, "start": 0.0, "stop": 1.0},
               "receiver": {"r": 4.0, "omega": 1.0},
               "scenario": {"gamma": math.pi - 1e-4}, "solver": {"green": "none"}}
    assert sc.main(["signal-static", "--config", _write(tmp_path, caustic)]) == 3
    assert sc.main(["verify"]) == 0


def test_ladder_forms():
    assert np.array_equal(sc.ladder(2.0), [2.0])
    assert np.array_equal(sc.ladder([1, 2]), [1.0, 2.0])
    assert len(sc.ladder({"start": 0, "stop": 1})) == sc.PRESET_POINTS["desk"]["ladder"]
    assert len(sc.ladder({"start": 0, "stop": 1}, "paper")) == sc.PRESET_POINTS["paper"]["ladder"]
    assert np.array_equal(sc.ladder({"start": 0, "stop": 1, "num": 3}), [0.0, 0.5, 1.0])
    for bad in ([], "x", {"start": 0}, {"start": 0, "stop": 1, "num": 0}, [float("nan")]):
        with pytest.raises(sc.ConfigError):
            sc.ladder(bad)


def test_csv_format():
    assert sc.fmt(-0.0) == "0"
    assert sc.fmt(complex(1.5, -0.0)) == "1.5;0"
    assert sc.parse_complex(sc.fmt(complex(0.1, -2e-17))) == complex(0.1, -2e-17)
    assert sc.fmt(True) == "1" and sc.fmt(None) == "" and sc.fmt("a,b") == "a b"


def test_header_and_round_trip(tmp_path):
    out = tmp_path / "pv.csv"
    cfg = sc.load_config(PV, "pv-model", out=str(out))
    text = sc.run(cfg)
    lines = text.splitlines()
    assert lines[0] == "#schema=bh-signal-v1"
    assert lines[1] == f"#command=pv-model config={cfg.digest()}"
    assert lines[2].startswith("index,B1,")
    assert out.read_text() == text
    cols, rows = sc.read_csv(out)
    assert len(rows) == 17 and all(r["status"] == "ok" for r in rows)
    s = [abs(sc.parse_complex(r["C2"])) + abs(sc.parse_complex(r["D2"])) for r in rows]
    assert np.allclose(s, [float(r["strength"]) for r in rows], rtol=1e-15)


def test_deterministic_output(tmp_path):
    a = sc.run(sc.load_config(GRID, "scan-grid", out=str(tmp_path / "a.csv")))
    b = sc.run(sc.load_config(GRID, "scan-grid", out=str(tmp_path / "b.csv")), threads=4)
    assert a == b
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert not (tmp_path / "a.csv.partial").exists()


def test_grid_statuses():
    _, rows = _rows(sc.run(sc.load_config(GRID, "scan-grid")))
    status = {(float(r["r_B"]), float(r["gamma"])): r["status"] for r in rows}
    assert status[(6.0, 0.0)] == "capped"
    assert status[(3.0, 0.01)] == "skipped-caustic"
    assert status[(9.0, math.pi)] == "skipped-caustic"
    assert status[(3.0, 1.0)] == "direct-only"


def _rows(text):
    body = [l for l in text.splitlines() if not l.startswith("#")]
    cols = body[0].split(",")
    return cols, [dict(zip(cols, l.split(","))) for l in body[1:]]


def test_resume_from_truncated_partial(tmp_path):
    out = tmp_path / "d.csv"
    cfg = sc.load_config(DIST, "distances", out=str(out))
    full = sc.run(cfg)
    lines = full.splitlines()
    out.unlink()
    # interrupted run: three finished rows and a half-written one
    partial = lines[:3] + lines[3:6] + [lines[6][:10]]
    (tmp_path / "d.csv.partial").write_text("\n".join(partial))
    calls = []
    orig = sc.static_distance
    sc.static_distance = lambda *a: calls.append(a) or orig(*a)
    try:
        again = sc.run(cfg)
    finally:
        sc.static_distance = orig
    assert again == full and out.read_text() == full
    assert len(calls) == 2  # only the rows that were missing (one of the six is capped)
    assert not (tmp_path / "d.csv.partial").exists()


def test_partial_from_other_config_is_discarded(tmp_path):
    out = tmp_path / "d.csv"
    (tmp_path / "d.csv.partial").write_text("#schema=bh-signal-v1\n#command=x config=0\nindex\n")
    cfg = sc.load_config(DIST, "distances", out=str(out))
    assert sc.run(cfg) == sc.run(sc.load_config(DIST, "distances"))


def test_distances_coincide_in_flat_space():
    _, rows = _rows(sc.run(sc.load_config({**DIST, "mass": 0.0,
                                           "scenario": {"r_B": [1.0, 3.0, 9.0]}}, "distances")))
    for r in rows:
        d = float(r["static_distance"])
        for k in ("half_return_sender", "half_return_receiver", "mimicking_distance"):
            assert float(r[k]) == pytest.approx(d, rel=1e-12)
        assert float(r["strength_identical"]) == pytest.approx(float(r["minkowski_identical"]),
                                                               abs=1e-6)


def test_distances_ordering_near_hole():
    _, rows = _rows(sc.run(sc.load_config(DIST, "distances")))
    for r in rows:
        if r["status"] != "ok":
            continue
        mim, L = float(r["mimicking_distance"]), float(r["static_distance"])
        # the receiver lapse shrinks an inner receiver's clock and stretches the equivalent length
        assert (mim > L) if float(r["r_B"]) < 6.0 else (mim < L)


def test_pv_geometry_delay():
    data = {**PV, "scenario": {"mode": "cumulative", "gamma": math.pi / 4,
                               "ladder": [0.5, 3.0, 6.0]}}
    _, rows = _rows(sc.run(sc.load_config(data, "pv-model")))
    assert rows[0]["status"].startswith("skipped")
    assert all(r["status"] == "ok" for r in rows[1:])


def test_green_probe_ql(tmp_path):
    data = {"scenario": {"r": 6.0, "rp": 6.0, "dt": [0.5, 2.0, 8.0]}}
    _, rows = _rows(sc.run(sc.load_config(data, "green-ql")))
    assert [r["in_window"] for r in rows] == ["1", "1", "0"]
    with pytest.raises(sc.ConfigError):
        sc.load_config({"scenario": {"provider": "dp", "dt": [1.0]}}, "green-ql")


def test_cache_modegrids_second_pass_is_free(tmp_path, monkeypatch):
    made = []

    class Counting(ModeGridCache):
        def __init__(self, root):
            super().__init__(root)
            made.append(self)

    monkeypatch.setattr(sc, "ModeGridCache", Counting)
    cfg = sc.load_config(PROBE, "green-dp", cache=str(tmp_path / "cache"))
    first = sc.cache_modegrids(cfg)
    assert made[-1].solves > 0
    second = sc.cache_modegrids(cfg)
    assert made[-1].solves == 0 and first == second
    # a run on the warm cache performs no solves and matches a cold run
    warm = sc.run(cfg)
    assert made[-1].solves == 0
    assert warm == sc.run(sc.load_config(PROBE, "green-dp"))
    with pytest.raises(sc.ConfigError):
        sc.cache_modegrids(sc.load_config(PROBE, "green-dp"))


def test_verify_checks_pass():
    results = sc.verify_checks()
    assert len(results) == 5 and all(ok for _, ok, _ in results)
