import csv
import io
import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.bounds import CodeParams
from artifact.exact import undetected_matrix_exact
from artifact.study import (
    QUEUE_CSV_HEADER,
    RunConfig,
    _smallest_index,
    calibrate_traffic,
    emit_figure_data,
    evaluate_cell,
    load_config,
    run_sweep,
    select_margin,
)

P_GEO = 0.0068795575900011145


@given(st.integers(0, 80), st.integers(1, 64))
def test_smallest_index_matches_linear_scan(first_true, hi):
    ok = lambda k: k >= first_true
    expected = first_true if first_true <= hi else None
    assert _smallest_index(ok, hi) == expected


def test_trivial_target_gives_zero_margin():
    cfg = RunConfig()
    code = CodeParams(170, 0.5)
    assert select_margin("exact", cfg.channel, code, 1.0, cfg.rule()) == 0.0
    assert select_margin("bound", cfg.bound_channel(170), code, 1.0) == 0.0
    with pytest.raises(ValueError):
        select_margin("exact", cfg.channel, code, 0.0)


def test_selected_margin_is_minimal():
    cfg = RunConfig()
    code = CodeParams(100, 0.5)
    nu = select_margin("exact", cfg.channel, code, 1e-4, cfg.rule())
    assert undetected_matrix_exact(cfg.channel, code, cfg.rule(nu)).max() <= 1e-4
    assert undetected_matrix_exact(cfg.channel, code, cfg.rule(nu - 1)).max() > 1e-4


def test_single_cell_sweep_and_csv():
    cfg = RunConfig(N_list=(100,), rates=(0.5,), p_geo=P_GEO)
    res = run_sweep(cfg)
    assert len(res.cells) == 1 and res.argmin == (100, 0.5)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == QUEUE_CSV_HEADER
    tail = rows[1][5]
    assert len(tail.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 12
    assert res.to_csv() == run_sweep(cfg).to_csv()


def test_infeasible_and_unstable_cells_are_flagged():
    cfg = RunConfig(N_list=(40,), rates=(0.5, 0.75), p_geo=P_GEO, target=1e-200, nu_max=3)
    res = run_sweep(cfg)
    assert [c.status for c in res.cells] == ["infeasible", "infeasible"]
    assert res.argmin is None and not res.partial
    cfg = RunConfig(N_list=(40,), rates=(0.5,), p_geo=1e-4, target=0.5)
    assert run_sweep(cfg).cells[0].status == "unstable"


def test_parallel_sweep_equals_serial():
    cfg = RunConfig(N_list=(60, 80), rates=(0.25, 0.5), p_geo=P_GEO)
    assert run_sweep(replace(cfg, jobs=2)).to_csv() == run_sweep(cfg).to_csv()


def test_fractional_cells_skipped_by_default(caplog):
    cfg = RunConfig(N_list=(75,), rates=(0.4, 0.5))
    assert cfg.cells() == [(75, 0.4)]
    assert "not an integer" in caplog.text
    assert replace(cfg, fractional_cells="compute").cells() == [(75, 0.4), (75, 0.5)]


def test_calibration_recovers_generating_value():
    cfg = RunConfig(p_geo=0.01)
    cell = evaluate_cell(cfg, 100, 0.5, margin=3.0)
    res = calibrate_traffic(replace(cfg, p_geo=None), 100, 0.5, 3.0, cfg.threshold, cell.tail_probability)
    assert res.p_geo == pytest.approx(0.01, abs=1e-6)
    assert res.relative_residual < 1e-6 and not res.message


def test_calibration_degenerate_without_arrivals():
    res = calibrate_traffic(RunConfig(lam=0.0), 100, 0.5, 3.0, 5, 0.0)
    assert res.degenerate and res.p_geo is None


def test_missing_p_geo_is_an_error():
    with pytest.raises(ValueError):
        evaluate_cell(RunConfig(), 100, 0.5)


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[channel]\nalpha = 0.05\n[code]\nN_list = 50, 100\nrates = 0.25 0.5\n"
                    "[traffic]\nlam = 1/575\np_geo = 0.01\n[margin]\npipeline = bound\n")
    cfg = load_config(str(path), {"beta": 0.1, "alpha": None})
    assert cfg.alpha == 0.05 and cfg.beta == 0.1 and cfg.pipeline == "bound"
    assert cfg.N_list == (50, 100) and cfg.rates == (0.25, 0.5)
    assert math.isclose(cfg.lam, 1 / 575) and cfg.p_geo == 0.01
    path.write_text("[channel]\ngamma = 2\n")
    with pytest.raises(ValueError):
        load_config(str(path))


def test_figure_data_one_point_grids():
    text = emit_figure_data(2, RunConfig(), N_list=(50,), rates=(0.25,))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["x", "series", "value"] and len(rows) == 3
    text = emit_figure_data(5, RunConfig(p_geo=P_GEO), N_list=(170,), rates=(0.5,))
    assert len(text.splitlines()) == 2
    with pytest.raises(ValueError):
        emit_figure_data(6)


def test_figure3_bound_above_ml():
    rows = list(csv.DictReader(io.StringIO(emit_figure_data(3, RunConfig(), N_list=(50,), rates=(0.3, 0.5, 0.7)))))
    by = {(r["x"], r["series"]): float(r["value"]) for r in rows}
    for x in ("0.3", "0.5", "0.7"):
        assert by[(x, "rare N=50")] >= by[(x, "ML N=50")]
