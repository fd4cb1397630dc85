import csv
import json
import subprocess
import sys

import pytest

from nuotdr.cli import main
from nuotdr.engine import CSV_COLUMNS, read_trace_csv

SMALL = """
[fiber]
[[fiber.segments]]
length_km = 20
attenuation_db_per_km = 0.2

[laser]
peak_power_w = 0.01
pulse_width_s = 100e-9
repetition_hz = 4000

[apd]
efficiency = 0.1
dark_rate_hz = 2000
dead_time_s = 1e-6

[scheme]
kind = "train"
gate_rate_hz = 1e6
gate_width_s = 100e-9

[campaign]
mode = "single"
dwell_s = 1
seed = 3
"""

SHORTFALL = """
[fiber]
[[fiber.segments]]
length_km = 250
attenuation_db_per_km = 0.2

[laser]
peak_power_w = 0.001
pulse_width_s = 1e-6
repetition_hz = 400

[apd]
efficiency = 0.1

[scheme]
kind = "basic"
delay_step_s = 3e-6
gate_width_s = 1e-6

[campaign]
dwell_s = 5
seed = 1
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_simulate_writes_csv_and_report(small, tmp_path):
    out = tmp_path / "a.csv"
    assert main(["simulate", "--config", str(small), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    report = json.loads((tmp_path / "a.report.json").read_text())
    assert report["exit_code"] == 0
    assert report["inputs"]["scheme"]["kind"] == "train"
    assert any("capture ratio" in a for a in report["assumptions"])
    assert report["derived"]["duty_cycle"] == pytest.approx(0.1)


def test_simulate_deterministic_across_workers(small, tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(["simulate", "--config", str(small), "--out", str(a), "--seed", "7"]) == 0
    assert main(["simulate", "--config", str(small), "--out", str(b), "--seed", "7", "--workers", "4"]) == 0
    assert main(["--seed", "8", "simulate", "--config", str(small), "--out", str(c)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_scheme_override(small, tmp_path):
    out = tmp_path / "f.csv"
    code = main(["simulate", "--config", str(small), "--out", str(out), "--scheme", "basic"])
    assert code == 0
    report = json.loads((tmp_path / "f.report.json").read_text())
    assert report["inputs"]["scheme"]["kind"] == "basic"
    assert any("overridden" in a for a in report["assumptions"])


def test_dark_run(small, tmp_path):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(small), "--out", str(out), "--dark-run"]) == 0
    report = json.loads((tmp_path / "d.report.json").read_text())
    assert any("measured dark run" in a for a in report["assumptions"])


def test_partial_coverage_exit_code(tmp_path):
    cfg = tmp_path / "far.toml"
    cfg.write_text(SHORTFALL)
    out = tmp_path / "w.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 6
    report = json.loads((tmp_path / "w.report.json").read_text())
    assert report["results"]["unmeasured_from_km"] is not None
    assert len(report["results"]["partials"]) >= 2
    provenance = {int(line.split(",")[-1]) for line in out.read_text().splitlines()[1:]}
    assert provenance == set(range(len(report["results"]["partials"])))


def test_saturation_exit_code(small, tmp_path):
    cfg = tmp_path / "sat.toml"
    cfg.write_text(SMALL.replace('mode = "single"', 'mode = "single"\nattenuation_db = 0'))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 5


def test_error_exit_codes(small, tmp_path, capsys):
    assert main(["simulate"]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 9
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace("[apd]", "[apd]\nbogus = 1"))
    assert main(["simulate", "--config", str(bad)]) == 3
    assert main(["simulate", "--config", str(small), "--workers", "0"]) == 2
    assert main(["simulate", "--config", str(small), "--seed", "-1"]) == 2
    assert main(["nonsense"]) == 2
    weak = tmp_path / "weak.toml"
    weak.write_text(SMALL.replace("peak_power_w = 0.01", "peak_power_w = 1e-12"))
    assert main(["simulate", "--config", str(weak), "--out", str(tmp_path / "w.csv")]) == 4


def test_compare(small, tmp_path, capsys):
    other = tmp_path / "b.toml"
    other.write_text(SMALL.replace('kind = "train"\ngate_rate_hz = 1e6', 'kind = "basic"\ndelay_step_s = 1e-6'))
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(small), str(other), "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "cmp.report.json").read_text())["summary"]
    assert summary["a"]["scheme"] == "train" and summary["b"]["scheme"] == "basic"
    assert "time_to_snr_floor_s" in summary["delta"]
    assert out.read_text().startswith("distance_km,delay_s,a_gates_activated")

    longer = tmp_path / "c.toml"
    longer.write_text(SMALL.replace("length_km = 20", "length_km = 25"))
    assert main(["compare", str(small), str(longer), "--out", str(out)]) == 7


LINK_2KM = """
[fiber]
[[fiber.segments]]
length_km = 2
attenuation_db_per_km = 0.2

[laser]
peak_power_w = {power}
pulse_width_s = 50e-9
repetition_hz = 20000

[apd]
efficiency = 0.1
dark_rate_hz = 100
dead_time_s = 10e-6

[campaign]
mode = "single"
attenuation_db = 0
dwell_s = 0.05
seed = 5

[scheme]
"""


def _compare_regimes(tmp_path, power):
    fr, rg = tmp_path / "fr.toml", tmp_path / "rg.toml"
    base = LINK_2KM.format(power=power)
    fr.write_text(base + 'kind = "free_running"\nresolution_s = 50e-9\n')
    rg.write_text(base + 'kind = "rapid"\nbin_width_s = 50e-9\n')
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(fr), str(rg), "--out", str(out)]) == 0
    return json.loads((tmp_path / "cmp.report.json").read_text())["summary"]


def test_compare_low_flux_prefers_free_running(tmp_path):
    # ~2e5 photons/s backscatter, well under 1/(eta tau) = 1e6 /s
    s = _compare_regimes(tmp_path, 1e-7)
    assert s["a"]["time_to_snr_floor_s"] < s["b"]["time_to_snr_floor_s"]


def test_compare_high_flux_prefers_rapid_gating(tmp_path):
    s = _compare_regimes(tmp_path, 1e-4)
    assert s["b"]["detection_rate_hz"] > 10 * s["a"]["detection_rate_hz"]


def test_compare_identical_configs(small, tmp_path):
    assert main(["compare", str(small), str(small), "--out", str(tmp_path / "c.csv")]) == 0
    delta = json.loads((tmp_path / "c.report.json").read_text())["summary"]["delta"]
    assert delta and all(v == 0 for v in delta.values())


def test_stitch_files(small, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", str(small), "--out", str(a), "--seed", "1"])
    main(["simulate", "--config", str(small), "--out", str(b), "--seed", "2"])
    out = tmp_path / "s.csv"
    assert main(["stitch", str(a), str(b), "--out", str(out)]) == 0
    assert len(read_trace_csv(out)) == len(read_trace_csv(a))
    junk = tmp_path / "junk.csv"
    junk.write_text(",".join(CSV_COLUMNS) + "\n")
    assert main(["stitch", str(a), str(junk), "--out", str(out)]) == 8


@pytest.mark.parametrize(
    "argv,needle",
    [
        (["analyze", "twopoint", "--x-db", "10"], "alpha=0.046"),
        (["analyze", "ratio", "--conv-nep", "6.3e-15", "--pc-nep", "3.6e-16"], "306.2"),
        (["analyze", "nep", "--power-dbm", "-103"], "3.67"),
        (["analyze", "time", "--bandwidth-hz", "1e7", "--power-dbm", "-103", "--f-pulse-hz", "500"], "t = 17.2 s"),
        (["plan", "--p-sig", "0.25", "--tau-s", "1e-6", "--act-min", "0.4", "--efficiency", "0.1"], "f_gate,max = 4 MHz"),
    ],
)
def test_analyze_commands(argv, needle, capsys):
    assert main(argv) == 0
    assert needle in capsys.readouterr().out


def test_analyze_writes_csv(tmp_path):
    out = tmp_path / "tp.csv"
    assert main(["analyze", "twopoint", "--x-db", "10", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "x_db,alpha"


def test_plan_from_config(small, capsys):
    assert main(["plan", "--config", str(small)]) == 0
    assert "duty_cycle" in capsys.readouterr().out
    assert main(["plan", "--p-sig", "0.25"]) == 2


def test_plan_table(tmp_path, capsys):
    out = tmp_path / "table.csv"
    assert main(["plan", "--table", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert capsys.readouterr().out == out.read_text()
    row = next(r for r in rows if r["activation_min"] == "0.4" and r["p_sig"] == "0.25")
    assert int(row["f_tau_integer"]) == 4
    b = {r["activation_min"]: round(float(r["b"]), 2) for r in rows}
    assert b == {"0.2": 1.61, "0.4": 0.92, "0.6": 0.51, "0.8": 0.22}


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "nuotdr", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "nuotdr" in out.stdout
