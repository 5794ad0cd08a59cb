import json
import math
import shutil
import subprocess
import sys

import pytest

from otfdh import goldens
from otfdh.cli import main
from otfdh.numtheory import is_primitive_root


def naive_is_prime(n):
    return n >= 2 and all(n % d for d in range(2, math.isqrt(n) + 1))


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_honest(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "run", "--scenario", "honest", "--packets", "100", "--seed", "42",
                       "--trace", str(trace))
    assert code == 0
    assert "delivered 100" in out
    assert trace.read_text().count("\n") > 100


def test_run_mitm_literal(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "mitm-literal")
    assert code == 0
    assert "verdict    compromised" in out


def test_run_json(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "replay", "--packets", "5", "--json")
    summary = json.loads(out)
    assert code == 0 and summary["verdict"] == "defended"


def test_run_payload_cannot_fit(capsys):
    code, _, err = run(capsys, "run", "--dh-bits", "32", "--packets", "1")
    assert code == 2 and "dh_bits" in err


def test_run_unexpected_verdict(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "honest", "--packets", "3", "--adversary", "tamper")
    assert code == 1 and "expected ok" in out


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("OTFDH_SEED", "77")
    code, out, _ = run(capsys, "run", "--packets", "2")
    assert code == 0 and "seed 77" in out
    monkeypatch.setenv("OTFDH_SEED", "seventy")
    code, _, err = run(capsys, "run", "--packets", "2")
    assert code == 2 and "OTFDH_SEED" in err


def test_flag_beats_environment(capsys, monkeypatch):
    monkeypatch.setenv("OTFDH_SEED", "77")
    _, out, _ = run(capsys, "run", "--packets", "2", "--seed", "5")
    assert "seed 5" in out


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scenario = tamper\npackets = 4\n")
    code, out, _ = run(capsys, "run", "--config", str(cfg))
    assert code == 0 and "scenario   tamper" in out
    cfg.write_text("packets = lots\n")
    code, _, _ = run(capsys, "run", "--config", str(cfg))
    assert code == 2
    code, _, _ = run(capsys, "run", "--config", str(tmp_path / "missing.cfg"))
    assert code == 2


def test_boolean_flags(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "mitm-preinstalled", "--no-preinstall-hg-pub",
                       "--packets", "2")
    assert code == 1 and "compromised" in out
    code, out, _ = run(capsys, "run", "--packets", "2", "--sign-u2hg")
    assert code == 0


def params_of(out):
    values = dict(line.split(" = ") for line in out.strip().splitlines())
    return int(values["g"], 16), int(values["p"], 16)


def test_params_deterministic_and_valid(capsys):
    code, first, _ = run(capsys, "params", "--bits", "16", "--seed", "1")
    _, second, _ = run(capsys, "params", "--bits", "16", "--seed", "1")
    assert code == 0 and first == second
    g, p = params_of(first)
    assert p.bit_length() == 16
    assert naive_is_prime(p) and naive_is_prime((p - 1) // 2)
    assert is_primitive_root(g, p)


def test_params_bad_bits(capsys):
    code, _, _ = run(capsys, "params", "--bits", "2")
    assert code == 2


def test_keygen(capsys):
    code, out, _ = run(capsys, "keygen", "--bits", "512", "--seed", "3")
    assert code == 0 and "self-test passed" in out
    n = int(out.split("n = ")[1].split()[0], 16)
    assert n.bit_length() == 512
    code, _, _ = run(capsys, "keygen", "--bits", "63")
    assert code == 2


def test_goldens_shipped(capsys):
    code, out, _ = run(capsys, "goldens")
    assert code == 0 and "round-trip" in out


def test_goldens_edited_digit(capsys, tmp_path):
    path = tmp_path / "g.json"
    doc = json.loads(goldens.default_path().read_text())
    vec = doc["vectors"][4]
    digit = vec["hex"][-1]
    vec["hex"] = vec["hex"][:-1] + ("0" if digit != "0" else "1")
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "goldens", str(path))
    assert code == 1 and f"MISMATCH {vec['name']}" in out


def test_goldens_empty_file(capsys, tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    code, _, err = run(capsys, "goldens", str(path))
    assert code == 2 and "empty" in err


def test_goldens_write(capsys, tmp_path):
    path = tmp_path / "fresh.json"
    code, _, _ = run(capsys, "goldens", str(path), "--write")
    assert code == 0
    assert json.loads(path.read_text()) == json.loads(goldens.default_path().read_text())


def test_summary(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    run(capsys, "run", "--scenario", "replay", "--packets", "3", "--trace", str(trace))
    code, out, _ = run(capsys, "summary", str(trace))
    assert code == 0 and "rejected:stale_offer" in out
    code, _, _ = run(capsys, "summary", str(tmp_path / "none.jsonl"))
    assert code == 2


def test_usage_error_without_command(capsys):
    code, _, _ = run(capsys)
    assert code == 2


@pytest.mark.skipif(shutil.which("otfdh") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["otfdh", "goldens"], capture_output=True, text=True)
    assert proc.returncode == 0


def test_module_entry():
    proc = subprocess.run([sys.executable, "-m", "otfdh.cli", "run", "--dh-bits", "32", "--packets", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
