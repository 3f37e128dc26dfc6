import math

import numpy as np
import pytest

from mumimo import experiments as ex


def test_spec_rejects_bad_grid():
    with pytest.raises(ValueError):
        ex.ExperimentSpec("fig1", (50, 10))
    with pytest.raises(ValueError):
        ex.ExperimentSpec("fig9", (10,))


def test_drop_seed_is_stable_and_distinct():
    assert ex.drop_seed(0, 3) == ex.drop_seed(0, 3)
    assert len({ex.drop_seed(0, d) for d in range(20)}) == 20


def test_csv_round_trip(tmp_path):
    t = ex.ResultTable("M")
    t.add(10, "a", 1 / 3, 0.1)
    t.add(10, "b", 2.0)
    path = tmp_path / "t.csv"
    ex.emit_csv(t, path)
    back = ex.read_csv(path)
    assert back.rows[0] == (10, "a", 1 / 3, 0.1)
    assert math.isnan(back.rows[1][3])


def test_fig1_net_is_prelog_times_raw():
    t = ex.run_fig1(ex.ExperimentSpec("fig1", (16,), trials=60, drops=1, K=4, N_values=(2,)))
    v, se = t.value(16, "ul_sic_mc_N2")
    raw, raw_se = t.value(16, "ul_sic_mc_N2_raw")
    assert v == pytest.approx((1 - 8 / 200) * raw)
    assert se == pytest.approx((1 - 8 / 200) * raw_se)


def test_fig2_sqrt_scaling_keeps_growing():
    t = ex.run_fig2(ex.ExperimentSpec("fig2", (50, 1000), trials=20, drops=2, N_values=(3,), alphas=(0.5,)))
    _, y, _ = t.series("ul_sic_approx_alpha0.5")
    assert y[1] > 1.5 * y[0]
    M, _, _ = t.series("ul_sic_mc_alpha0.5")
    assert list(M) == [50]


def test_fig3_skips_indivisible(capsys):
    t = ex.run_fig3(ex.ExperimentSpec("fig3", (4, 6), trials=150, drops=1, M=16, N_values=(1, 3)))
    assert "skipping NK=4 for N=3" in capsys.readouterr().err
    x, _, _ = t.series("dl_sic_mc_N3")
    assert list(x) == [6]
    x, y, se = t.series("dl_sic_mc_N1")
    assert list(x) == [4, 6] and np.all(se > 0)
