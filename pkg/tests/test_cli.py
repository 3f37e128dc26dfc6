import math

import pytest

from mumimo import experiments as ex
from mumimo.cli import main, parse_grid


def test_parse_grid():
    assert parse_grid("10,50,100") == (10, 50, 100)
    assert parse_grid("30:90:30,200") == (30, 60, 90, 200)
    assert parse_grid("1e3,1e6") == (1000, 1000000)


def test_spec_validates_grid():
    with pytest.raises(ValueError):
        ex.ExperimentSpec("fig1", ())
    with pytest.raises(ValueError):
        ex.ExperimentSpec("fig1", (50, 10))
    with pytest.raises(ValueError):
        ex.ExperimentSpec("fig9", (10,))


def test_empty_table_is_header_only(tmp_path):
    ex.emit_csv(ex.ResultTable("M"), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "M,series,value,stderr\n"


def test_csv_round_trip_is_exact(tmp_path):
    t = ex.ResultTable("M")
    t.add(10, "a", 0.1 + 0.2, 1e-17)
    t.add(20, "a", 1 / 3)
    t.add(1.5, "b", -2.5e300, 3.0)
    ex.emit_csv(t, tmp_path / "t.csv")
    back = ex.read_csv(tmp_path / "t.csv")
    assert back.sweep == "M"
    for r, s in zip(t.rows, back.rows):
        assert r[:3] == s[:3] and (r[3] == s[3] or (math.isnan(r[3]) and math.isnan(s[3])))


def test_fig1_rerun_is_byte_identical_across_workers(tmp_path):
    args = ["fig1", "--m-grid", "12,24", "--trials", "60", "--drops", "2", "-q"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--workers", "3", "--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    table = ex.read_csv(tmp_path / "a.csv")
    assert len(table.rows) == 2 * 2 * 7 * 2
    assert [r[0] for r in table.rows[:28]] == [12] * 28


def test_fig3_skips_indivisible_points(tmp_path, capsys):
    assert main(["fig3", "--nk-grid", "20,30", "--trials", "20", "--drops", "1", "--out", str(tmp_path / "f.csv")]) == 0
    assert "skipping NK=20 for N=3" in capsys.readouterr().err
    names = ex.read_csv(tmp_path / "f.csv").names()
    assert "dl_sic_mc_N3" in names and "ul_sic_mc_N1" not in names


def test_full_overhead_point_has_zero_net_se(tmp_path):
    assert main(["fig3", "--nk-grid", "200", "--n-values", "10", "--trials", "10", "--drops", "1", "-q",
                 "--out", str(tmp_path / "z.csv")]) == 0
    t = ex.read_csv(tmp_path / "z.csv")
    assert t.value(200, "dl_sic_mc_N10")[0] == 0.0
    assert t.value(200, "dl_sic_mc_N10_raw")[0] > 0


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("M = 16\nK = 3\nN = 2\nseed = 9\n")
    assert main(["custom", "--config", str(cfg), "--m-grid", "64", "--trials", "20", "--drops", "1", "-q",
                 "--out", str(tmp_path / "c.csv")]) == 0
    t = ex.read_csv(tmp_path / "c.csv")
    assert {r[0] for r in t.rows} == {16}
    assert "ul_sic_mc_N2" in t.names()


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["fig1", "--m-grid", "50,10", "-q"]) == 1
    assert "strictly increasing" in capsys.readouterr().err
    assert main(["fig1", "--m-grid", "8", "--trials", "5", "--drops", "1", "-q",
                 "--out", str(tmp_path / "no" / "such" / "dir.csv")]) == 1


def test_csv_to_stdout(capsys):
    assert main(["fig2", "--m-grid", "1000,1000000", "--drops", "1", "-q"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "M,series,value,stderr"
    assert any(line.startswith("1000000,ul_limit_alpha0.5,") for line in out)
