import json

import pytest

from sataperf import presets
from sataperf.cli import DEFAULT_SEED, main
from sataperf.disk import DiskParams


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_no_arguments_is_usage_error(capsys):
    code, out, err = run(capsys)
    assert code == 2 and out == "" and "usage" in err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "sim", "--bogus")
    assert code == 2 and "usage" in err


def test_sim_table_preset(capsys):
    code, out, _ = run(capsys, "sim", "--table", "1", "--preset", "wd-software")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "| Vendor | Mirror | Normal IOps | Ctlr Rebuild IOps | Vol Rebuild IOps |"
    normal = float(lines[2].split("|")[3])
    assert normal == pytest.approx(146, rel=0.10)
    assert "| WD | Software | 100% |" in out


def test_sim_table_is_byte_identical(capsys):
    first = run(capsys, "sim", "--table", "5", "--format", "csv")[1]
    second = run(capsys, "sim", "--table", "5", "--format", "csv")[1]
    assert first == second and first.count("Vendor,Mirror") == 2


def test_bad_preset_is_usage_error(capsys):
    code, _, err = run(capsys, "sim", "--table", "1", "--preset", "seagate-raid5")
    assert code == 2 and "preset" in err


def test_sim_needs_one_mode(capsys):
    assert run(capsys, "sim")[0] == 2


def test_sim_single_volume_json(capsys):
    code, out, _ = run(capsys, "sim", "--profile", "seq-read-64k-d4", "--mirror", "hardware",
                       "--controller", "3ware-8506", "--duration", "10", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and 32 <= doc["mbps"] <= 33


def test_sim_array(capsys):
    code, out, _ = run(capsys, "sim", "--profile", "rand-read-8k-d4", "--disks", "4",
                       "--controller", "highpoint-1540", "--duration", "10", "--format", "json")
    assert code == 0 and json.loads(out)["iops"] == pytest.approx(4 * 99, rel=0.05)


def test_report_check_appendix(capsys):
    code, out, _ = run(capsys, "report", "--check", "appendix.json")
    assert code == 0
    assert "rows imply 256 KiB blocks" in out and "rows imply 64 KiB blocks" in out
    assert "FLAGGED" in out
    assert run(capsys, "report", "--check", "appendix", "--strict")[0] == 1


def test_report_check_file(capsys, tmp_path):
    path = tmp_path / "t5.json"
    path.write_text(json.dumps(presets.golden("table5")))
    code, out, _ = run(capsys, "report", "--check", str(path), "--format", "json")
    findings = json.loads(out)
    assert code == 0 and [f["expected"] for f in findings if f["status"] == "flagged"] == [85]


def test_report_fit(capsys):
    code, out, _ = run(capsys, "report", "--fit", "appendix", "--format", "csv")
    assert code == 0
    row = next(line for line in out.splitlines() if line.startswith("3ware-8506,sequential,read"))
    assert row.split(",")[7] == "5"


def test_report_table_percent(capsys):
    code, out, _ = run(capsys, "report", "--table", "2")
    assert code == 0 and "102%" in out


def test_calibrate_targets(capsys, tmp_path):
    path = tmp_path / "targets.json"
    path.write_text(json.dumps(presets.load_disk_targets("wd-250gb")))
    code, out, _ = run(capsys, "calibrate", "--targets", str(path))
    assert code == 0 and DiskParams.from_dict(json.loads(out)) == presets.load_disk("wd-250gb")


def test_calibrate_impossible_target_is_operational_failure(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"rand_read_iops": 5000, "rand_write_iops": 100, "seq_mbps": 50}))
    code, _, err = run(capsys, "calibrate", "--targets", str(path))
    assert code == 1 and "avg_seek" in err


def test_config_supplies_flags(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"table": 3, "preset": "wd-hardware", "format": "csv"}))
    code, out, _ = run(capsys, "sim", "--config", str(cfg))
    assert code == 0 and out.startswith("Vendor,Mirror,Normal MBps")
    code, out, _ = run(capsys, "sim", "--config", str(cfg), "--format", "json")
    assert json.loads(out)["values"]["rows"][0]["mirror"] == "hardware"


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"tabel": 3}))
    assert run(capsys, "sim", "--config", str(cfg))[0] == 2


def test_out_file(capsys, tmp_path):
    dest = tmp_path / "t.md"
    assert run(capsys, "report", "--table", "1", "--out", str(dest))[0] == 0
    assert dest.read_text().startswith("| Vendor |")


def test_stress_sim_target(capsys):
    code, out, _ = run(capsys, "stress", "--target", "sim:wd-software", "--profile",
                       "rand-read-8k-d4", "--duration", "10", "--format", "json")
    assert code == 0 and json.loads(out)["iops"] == pytest.approx(146, rel=0.10)


def test_stress_file_target(capsys, tmp_path):
    path = tmp_path / "f.bin"
    code, out, _ = run(capsys, "stress", "--target", str(path), "--size", str(16 * 2 ** 20),
                       "--profile", "rand-read-8k-d1", "--duration", "1", "--warmup", "0.2",
                       "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["queue_depth"] == 1 and doc["ops_completed"] > 0


def test_stress_profile_json(capsys):
    profile = json.dumps({"pattern": "random", "op": "write", "block_size": 4096,
                          "queue_depth": 2, "duration_s": 5})
    code, out, _ = run(capsys, "stress", "--target", "sim:wd-250gb", "--profile", profile,
                       "--format", "json")
    assert code == 0 and json.loads(out)["block_size"] == 4096


def test_replay_sim(capsys, tmp_path):
    log = tmp_path / "tweb3.log"
    log.write_text("".join(f"2003-08-25 00:00:{i // 10:02d} GET /tile.ashx "
                           f"t=1&s=10&x={i}&y=3&z=17 200\n" for i in range(500)))
    argv = ["replay", "--log", str(log), "--constant-ms", "41", "--format", "json"]
    code, out, _ = run(capsys, *argv)
    doc = json.loads(out)
    assert code == 0 and doc["total"]["completed"] == 500
    assert doc["servers"][0]["source"] == "tweb3"
    assert run(capsys, *argv)[1] == out
    code, out, _ = run(capsys, "replay", "--log", str(log), "--mode", "timesync",
                       "--speedup", "5")
    assert code == 0 and "| Web Page | Calls |" in out and "| Test Server |" in out


def test_replay_missing_log_is_operational_failure(capsys, tmp_path):
    assert run(capsys, "replay", "--log", str(tmp_path / "absent.log"))[0] == 1


def test_default_seed_documented():
    assert DEFAULT_SEED == 0
