import json
import subprocess
import sys

import pytest

from pufkex.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def test_session_honest(capsys):
    code, out, _ = run(capsys, "session", "--variant", "A", "--device-seed", "7", "--noise", "0.15", "--seed", "1")
    fields = kv(out)
    assert code == 0
    assert fields["keys_match"] == "true" and fields["confirmed"] == "true"
    assert fields["server_key_fingerprint"] == fields["device_key_fingerprint"] != "none"


def test_session_without_seed_prints_one(capsys):
    code, out, _ = run(capsys, "session", "--variant", "c", "--device-seed", "7")
    assert code == 0
    assert "seed" in kv(out)


def test_deterministic_under_fixed_seeds(capsys):
    args = ("session", "--variant", "D", "--seed", "abc", "--device-seed", "7")
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_attack_fake_device(capsys):
    code, out, _ = run(capsys, "attack", "--scenario", "fake-device", "--variant", "D", "--seed", "0")
    assert code == 1
    assert kv(out)["abort_reason"] == "HandshakeMacMismatch"


def test_attack_eavesdrop_passes(capsys):
    code, out, _ = run(capsys, "attack", "--scenario", "eavesdrop", "--variant", "B", "--seed", "2")
    assert code == 0
    assert kv(out)["eavesdrop_audit"] == "pass"


def test_accounting_paper(capsys):
    code, out, _ = run(capsys, "accounting", "--mode", "paper")
    assert code == 0
    total_rows = [line for line in out.splitlines() if line.strip().startswith("Total:")]
    assert total_rows[1].split()[1] == "13312"


def test_accounting_measured_single_variant(capsys):
    code, out, _ = run(capsys, "accounting", "--mode", "measured", "--variant", "C", "--seed", "1")
    assert code == 0
    assert "Variant C" in out and "Variant A" not in out


def test_enroll_and_keygen(tmp_path, capsys):
    key = tmp_path / "ttp.json"
    code, out, _ = run(capsys, "ttp", "keygen", "--seed", "5", "--out", str(key))
    assert code == 0
    doc = json.loads(key.read_text())
    assert kv(out)["ttp_public"] == doc["public"]
    cert = tmp_path / "cert.hex"
    code, out, _ = run(capsys, "enroll", "--variant", "B", "--seed", "1", "--ttp-key", str(key), "--out", str(cert))
    fields = kv(out)
    assert code == 0
    assert fields["ttp_public"] == doc["public"]
    assert fields["helper_data_bytes"] == "1536"
    assert fields["stage1_transfers"] == "4"
    assert bytes.fromhex(cert.read_text().strip())


@pytest.mark.parametrize(
    "argv",
    [
        ["session"],
        ["session", "--variant", "E"],
        ["session", "--variant", "A", "--noise", "0.5"],
        ["session", "--variant", "A", "--seed", "xyz"],
        ["attack", "--scenario", "nope", "--variant", "A"],
        ["accounting", "--mode", "guess"],
        [],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "pufkex", "attack", "--scenario", "replay", "--variant", "C", "--seed", "3"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    assert "abort_reason=HandshakeMacMismatch" in proc.stdout


def test_parser_lists_all_subcommands():
    help_text = build_parser().format_help()
    for cmd in ("ttp", "enroll", "session", "attack", "accounting", "registry"):
        assert cmd in help_text


def test_attack_report_echoes_seed_in_hex(capsys):
    code, out, _ = run(capsys, "attack", "--scenario", "honest", "--variant", "A", "--seed", "1f")
    assert code == 0
    assert kv(out)["seed"] == "1f"
