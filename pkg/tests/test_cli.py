import csv
import io
import json

import pytest

from artifact.cli import main

P_GEO = "0.0068795575900011145"


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_channel_info(capsys):
    code, out = run(capsys, "channel", "info", "--N", "50")
    doc = json.loads(out.out)
    assert code == 0 and doc["csi_capacity_bits"] == pytest.approx(0.76398, abs=1e-5)
    assert doc["generator_rates"]["linear"] == pytest.approx([2.665, 4.0])


def test_channel_info_from_json(capsys, tmp_path):
    from artifact.channel import build_gilbert_elliott

    path = tmp_path / "ch.json"
    path.write_text(build_gilbert_elliott(0.1, 0.2, 0.01, 0.2).to_json())
    code, out = run(capsys, "channel", "info", "--spec", str(path))
    assert code == 0 and json.loads(out.out)["stationary"] == pytest.approx([2 / 3, 1 / 3])


@pytest.mark.parametrize("kind", ["gallager", "type-sum", "rare"])
def test_bound_csv(capsys, kind):
    code, out = run(capsys, "bound", kind, "--N", "50", "--rate", "0.5", "--rho", "0.5")
    rows = list(csv.reader(io.StringIO(out.out)))
    assert code == 0 and rows[0][:3] == ["kind", "N", "R_bits"] and len(rows) == 5


def test_exact_and_margin(capsys):
    code, out = run(capsys, "exact", "ml", "--N", "50", "--rate", "0.5", "--averaged")
    assert code == 0 and float(out.out) == pytest.approx(0.02361, rel=1e-3)
    code, out = run(capsys, "exact", "undetected", "--N", "50", "--rate", "0.5", "--nu", "2")
    assert code == 0 and out.out.startswith("kind,")
    code, out = run(capsys, "margin", "select", "--N", "100", "--rate", "0.5", "--target", "1e-4")
    assert code == 0 and json.loads(out.out)["margin_kind"] == "nu"
    code, out = run(capsys, "margin", "select", "--N", "40", "--rate", "0.5", "--target", "1e-300")
    assert code == 2 and json.loads(out.out)["feasible"] is False


def test_queue_tail_and_calibrate(capsys):
    code, out = run(capsys, "queue", "tail", "--N", "170", "--rate", "0.5", "--margin", "8", "--p-geo", P_GEO)
    rows = list(csv.DictReader(io.StringIO(out.out)))
    assert code == 0 and float(rows[0]["tail_probability"]) == pytest.approx(0.0528228675840124, rel=1e-9)
    code, out = run(capsys, "calibrate", "--N", "170", "--rate", "0.5", "--margin", "8", "--tail", "0.0528228675840124")
    assert code == 0 and json.loads(out.out)["p_geo"] == pytest.approx(float(P_GEO), rel=1e-9)


def test_sweep_writes_csv_and_summary(capsys, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[code]\nN_list = 100\nrates = 0.5\n[traffic]\np_geo = {P_GEO}\n")
    summary = tmp_path / "s.json"
    out_csv = tmp_path / "s.csv"
    code, _ = run(capsys, "sweep", "--config", str(cfg), "--summary", str(summary), "-o", str(out_csv))
    assert code == 0
    assert json.loads(summary.read_text())["argmin"] == [100, 0.5]
    assert out_csv.read_text().startswith("N,R_bits,margin_kind")


def test_mc_commands(capsys):
    code, out = run(capsys, "mc", "code", "--N", "8", "--rate", "0.5", "--trials", "20000")
    assert code == 0 and out.out.startswith("i,j,exact,simulated,stderr")
    code, out = run(capsys, "mc", "queue", "--N", "170", "--rate", "0.5", "--margin", "8", "--p-geo", P_GEO,
                    "--steps", "50000", "--q-max", "3")
    assert code == 0 and len(out.out.splitlines()) == 5
    code, out = run(capsys, "mc", "dominance", "--N", "170", "--rate", "0.5", "--p-geo", P_GEO, "--steps", "50000")
    assert code == 0


def test_exit_codes_for_errors(capsys):
    assert run(capsys, "queue", "tail", "--N", "170", "--rate", "0.5")[0] == 1  # p_geo missing
    assert run(capsys, "figure", "9")[0] == 1
    assert run(capsys, "bound", "rare", "--N", "50", "--rate", "1.5")[0] == 1
