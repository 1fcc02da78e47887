import json
import math
import warnings

import numpy as np
import pytest

from bhsignal.cid import (DPGreenTable, ModeGrid, ModeGridCache, ModeSumConfig, cid_solve,
                          dp_table, dp_tables, field_green, flat_mode, mode_sum, potential,
                          summed_grid)
from bhsignal.geometry import BlackHole, tortoise


def test_potential_values(bh, flat):
    assert potential(bh, 0, 6.0) == pytest.approx(1 / 648)
    assert potential(bh, 3, 2.0 + 1e-12) == pytest.approx(0.0, abs=1e-10)
    assert potential(flat, 4, 3.0) == pytest.approx(20 / 9 / 4)


def test_mode_sum_config_validation():
    with pytest.raises(ValueError):
        ModeSumConfig(ell_max=0)
    with pytest.raises(ValueError):
        ModeSumConfig(smoothing="box")
    assert ModeSumConfig(100).cut == 20.0
    w = ModeSumConfig(10, smoothing="none").weights(1.0)
    assert np.array_equal(w, 2 * np.arange(11) + 1.0)
    assert ModeSumConfig(150, smoothing="heat-rx").cut == 20.0
    assert ModeSumConfig(150, 12.0, smoothing="heat-rx").cut == 12.0


def test_heat_rx_weights_fold_two_heat_cuts():
    cfg = ModeSumConfig(60, smoothing="heat-rx")
    lam = np.arange(61) * (np.arange(61) + 1.0)
    t1, t2 = 1 / (2 * (0.75 * cfg.cut) ** 2), 1 / (2 * cfg.cut**2)
    heat = ModeSumConfig(60, smoothing="none").weights(0.3)
    expect = heat * (t1 * np.exp(-lam * t2) - t2 * np.exp(-lam * t1)) / (t1 - t2)
    assert np.allclose(cfg.weights(0.3), expect, rtol=1e-13, atol=1e-13)
    assert cfg.weights(1.0)[0] == pytest.approx(1.0)


def _flat_coincident_sum(cfg, dt):
    w = cfg.weights(1.0)
    return -sum(w[l] * flat_mode(l, 6.0, 6.0, dt) for l in range(cfg.ell_max + 1)) / 36.0


@pytest.mark.parametrize("dt", [3.0, 5.0])
def test_heat_rx_removes_flat_smoothing_artefact(dt):
    # the exact flat-space field vanishes at coincident angles away from dt = 0
    gauss = abs(_flat_coincident_sum(ModeSumConfig(150), dt))
    heat = abs(_flat_coincident_sum(ModeSumConfig(150, smoothing="heat"), dt))
    rx = abs(_flat_coincident_sum(ModeSumConfig(150, smoothing="heat-rx"), dt))
    assert gauss > 1e-5
    assert heat < gauss / 100
    assert rx < 1e-10


@pytest.mark.parametrize("ell", [0, 2, 10])
def test_initial_data_and_boundaries(bh, ell):
    g = cid_solve(bh, ell, 6.0, 60, 80, 0.02)
    assert g.at(0, 0) == -0.5
    assert np.all(g.values[0, :] == -0.5) and np.all(g.values[:, 0] == -0.5)
    # transverse derivatives vanish at coincidence: first interior node departs at second order
    assert abs(g.at(1, 1) + 0.5) < 1e-3 * (1 + ell * ell) * 0.02**2 * 100


def test_zero_potential_keeps_initial_value(flat):
    g = cid_solve(flat, 0, 6.0, 50, 50, 0.05)
    assert np.all(g.values == -0.5)


@pytest.mark.parametrize("ell", [0, 2, 10])
def test_flat_modes_match_closed_form(flat, ell):
    h = 0.025
    n = int(round(2.0 / h)) + 1
    g = cid_solve(flat, ell, 6.0, n, n, h)
    i, j = n - 1, n - 1 - int(round(1 / h))
    dt, r = h * (i + j), 6.0 + h * (j - i)
    assert g.at(i, j) == pytest.approx(flat_mode(ell, r, 6.0, dt), abs=1e-7)


@pytest.mark.parametrize("ell", [0, 2, 10])
def test_richardson_order(bh, ell):
    vals = []
    for h in (0.05, 0.025, 0.0125):
        n = int(round(3 / h)) + 1
        vals.append(cid_solve(bh, ell, 6.0, n, n, h).at(n - 1, int(round(2 / h))))
    d = np.diff(vals)
    assert math.log2(d[0] / d[1]) >= 3.7


def test_mode_sum_support_and_unit_angle(bh):
    grids = [cid_solve(bh, l, 6.0, 20, 20, 0.05) for l in range(6)]
    cfg = ModeSumConfig(5, smoothing="none")
    assert mode_sum(grids, 6.0, 6.0, 0.0, -1, 3, cfg) == 0.0
    expected = -sum((2 * l + 1) * grids[l].at(10, 12) for l in range(6)) / 36.0
    assert mode_sum(grids, 6.0, 6.0, 0.0, 10, 12, cfg) == pytest.approx(expected)
    with pytest.raises(ValueError):
        mode_sum(grids[:3], 6.0, 6.0, 0.0, 1, 1, cfg)


def test_summed_grid_matches_per_mode_sum(bh):
    cfg = ModeSumConfig(8)
    w = cfg.weights(math.cos(0.4))
    full = summed_grid(bh, 6.0, 30, 30, 0.05, w, keep="full", threads=3)
    ref = sum(w[l] * cid_solve(bh, l, 6.0, 30, 30, 0.05).values for l in range(9))
    assert np.allclose(full, ref, rtol=1e-13, atol=1e-15)


def test_dp_table_basic_properties(bh):
    tab = dp_table(bh, 5.0, 6.0, 0.0, 8.0, ModeSumConfig(20), 0.05)
    assert tab(0.5 * tab.t_direct) == 0.0
    k = len(tab.dt) // 2
    assert tab(tab.dt[k]) == tab.G[k]
    with pytest.raises(ValueError):
        tab(tab.dt_max + 1.0)
    with pytest.raises(ValueError):
        dp_table(bh, 5.0, 6.0, 0.0, 0.1)


def test_dp_tables_many_angles_match_single(bh):
    cfg = ModeSumConfig(20)
    gammas = [0.0, 0.7, 2.0]
    many = dp_tables(bh, 4.0, 6.0, gammas, 10.0, cfg, 0.05, threads=2)
    for g, tab in zip(gammas, many):
        one = dp_table(bh, 4.0, 6.0, g, 10.0, cfg, 0.05, threads=2)
        assert np.allclose(tab.G, one.G, rtol=1e-12, atol=1e-18)


def test_secondary_crossing_has_pv_shape(ref_dp_green, bh):
    """Around the secondary crossing the smoothed table swings through an odd (PV-like) profile."""
    tab = ref_dp_green.table
    t_sec = ref_dp_green.crossings[0]
    before = tab(np.linspace(t_sec - 0.6, t_sec - 0.1, 20))
    after = tab(np.linspace(t_sec + 0.1, t_sec + 0.6, 20))
    peak_b = before[np.argmax(np.abs(before))]
    peak_a = after[np.argmax(np.abs(after))]
    assert np.sign(peak_b) == -np.sign(peak_a)
    far = np.max(np.abs(tab(np.linspace(t_sec - 5.0, t_sec - 3.0, 20))))
    assert min(abs(peak_b), abs(peak_a)) > 3 * far


def test_sharper_smoothing_raises_secondary_peak(bh, mode_cache):
    rp, r, g = 6.0, 3.01, math.pi / 4
    peaks = []
    from bhsignal.geometry import connecting_ray
    t_sec = connecting_ray(bh, rp, r, g, "secondary").dt
    for cut in (10, 15, 20):
        (tab,) = dp_tables(bh, r, rp, [g], t_sec + 2.0, ModeSumConfig(100, cut), 0.01, None,
                           mode_cache)
        window = np.linspace(t_sec - 1.0, t_sec + 1.0, 400)
        peaks.append(np.max(np.abs(tab(window))))
    assert peaks[0] <= peaks[1] <= peaks[2]


def test_flat_mode_sum_decays_with_ell_max(flat):
    vals = []
    for lmax in (20, 40, 80):
        (tab,) = dp_tables(flat, 6.0, 6.0, [0.0], 6.0, ModeSumConfig(lmax), 0.02)
        vals.append(np.max(np.abs(tab(np.linspace(3.0, 5.0, 50)))))
    assert vals[0] > vals[1] > vals[2]


def test_field_green_matches_diagonal_table(bh):
    cfg = ModeSumConfig(30)
    fg = field_green(bh, 6.0, 4.0, 9.0, cfg, 0.02)
    (tab,) = dp_tables(bh, 4.0, 6.0, [0.0], 9.0, cfg, 0.02)
    dts = np.linspace(tab.t_direct + 3.5, 8.5, 15)
    assert np.allclose(fg(dts, 4.0), tab(dts), rtol=1e-3, atol=1e-9)
    assert fg.inside(5.0, 4.0) and not fg.inside(0.1, 4.0)


def test_mode_grid_file_roundtrip(tmp_path, bh):
    g = cid_solve(bh, 3, 6.0, 12, 15, 0.05)
    g.to_file(tmp_path / "g.glcid")
    back = ModeGrid.from_file(tmp_path / "g.glcid")
    assert np.array_equal(back.values, g.values) and back.ell == 3
    (tmp_path / "bad").write_bytes(b"nonsense" * 4)
    with pytest.raises(ValueError):
        ModeGrid.from_file(tmp_path / "bad")


def test_cache_hits_rebuilds_and_manifest(tmp_path, bh):
    cfg = ModeSumConfig(10)
    cache = ModeGridCache(tmp_path / "c")
    first = dp_tables(bh, 5.0, 6.0, [0.3], 6.0, cfg, 0.05, cache=cache)[0]
    assert cache.solves == 11
    again = ModeGridCache(tmp_path / "c")
    second = dp_tables(bh, 5.0, 6.0, [0.3], 6.0, cfg, 0.05, cache=again)[0]
    assert again.solves == 0 and np.array_equal(first.G, second.G)
    dp_tables(bh, 5.0, 6.0, [0.3], 6.0, cfg, 0.04, cache=again)
    assert again.solves == 11
    # manifest round-trip is byte-identical
    text = again.manifest_path.read_bytes()
    ModeGridCache(tmp_path / "c").write_manifest()
    assert again.manifest_path.read_bytes() == text
    # full grids via the grid cache
    g1 = again.grid(bh, 2, 6.0, 10, 10, 0.05)
    assert again.solves == 12
    assert np.array_equal(ModeGridCache(tmp_path / "c").grid(bh, 2, 6.0, 10, 10, 0.05).values,
                          g1.values)


def test_cache_corruption_triggers_rebuild(tmp_path, bh):
    cfg = ModeSumConfig(5)
    cache = ModeGridCache(tmp_path)
    ref = dp_tables(bh, 5.0, 6.0, [0.0], 5.0, cfg, 0.05, cache=cache)[0]
    entry = next(iter(cache.manifest.values()))
    (tmp_path / entry["file"]).write_bytes(b"\x00" * 16)
    fresh = ModeGridCache(tmp_path)
    with pytest.warns(UserWarning, match="rebuilding"):
        again = dp_tables(bh, 5.0, 6.0, [0.0], 5.0, cfg, 0.05, cache=fresh)[0]
    assert fresh.solves == 6 and np.array_equal(ref.G, again.G)
