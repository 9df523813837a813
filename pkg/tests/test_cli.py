import subprocess
import sys

import pytest

from fsmesh import cli, ratchet

SMALL_INI = """[network]
users = 9
[protocol]
depth = 9
[run]
duration = 240
stabilization = 30
runs = 2
"""


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def keys(tmp_path):
    pk, sk = tmp_path / "pk.bin", tmp_path / "sk.bin"
    assert _run("--seed", 1, "keygen", "--pk", pk, "--sk", sk, "--depth", 4) == 0
    return pk, sk


def test_keygen_reports_size_and_warns_when_seeded(tmp_path, capsys):
    assert _run("--seed", 1, "keygen", "--pk", tmp_path / "pk", "--sk", tmp_path / "sk") == 0
    out, err = capsys.readouterr()
    assert f"{ratchet.public_key_size(ratchet.DEFAULT_DEPTH)} bytes, fits in one QR code" in out
    assert "warning" in err


def test_encrypt_decrypt_roundtrip(tmp_path, keys):
    pk, sk = keys
    (tmp_path / "m.txt").write_bytes(b"meet at the bridge")
    assert _run("encrypt", "--pk", pk, "--in", tmp_path / "m.txt", "--out", tmp_path / "c.bin", "--epoch", 3) == 0
    # a key still at epoch 0 must be advanced explicitly
    assert _run("decrypt", "--sk", sk, "--in", tmp_path / "c.bin", "--out", tmp_path / "p.txt") == cli.EXIT_RUNTIME
    assert _run("decrypt", "--sk", sk, "--in", tmp_path / "c.bin", "--out", tmp_path / "p.txt",
                "--advance-to", 3) == 0
    assert (tmp_path / "p.txt").read_bytes() == b"meet at the bridge"
    assert _run("decrypt", "--sk", sk, "--in", tmp_path / "c.bin", "--out", tmp_path / "q.txt") == 0


def test_advanced_key_file_cannot_decrypt_the_past(tmp_path, keys, capsys):
    pk, sk = keys
    (tmp_path / "m.txt").write_bytes(b"old news")
    _run("encrypt", "--pk", pk, "--in", tmp_path / "m.txt", "--out", tmp_path / "c.bin", "--epoch", 2)
    before = sk.read_bytes()
    assert _run("decrypt", "--sk", sk, "--in", tmp_path / "c.bin", "--out", tmp_path / "p.txt",
                "--advance-to", 5) == cli.EXIT_RUNTIME
    assert sk.read_bytes() != before
    assert ratchet.FsSecretKey.from_bytes(sk.read_bytes()).t == 5
    assert not (tmp_path / "p.txt").exists()
    assert "cannot decrypt epoch 2" in capsys.readouterr().err


def test_corrupt_ciphertext_is_a_runtime_error(tmp_path, keys):
    _, sk = keys
    (tmp_path / "c.bin").write_bytes(b"\x00garbage")
    assert _run("decrypt", "--sk", sk, "--in", tmp_path / "c.bin", "--out", tmp_path / "p") == cli.EXIT_RUNTIME


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    [],
    ["keygen", "--pk", "x"],
    ["encrypt", "--pk", "/nonexistent/pk", "--in", "/nonexistent/m", "--out", "c"],
    ["simulate", "/nonexistent/config.ini", "--out", "o"],
    ["analyze", "/nonexistent/runs.csv"],
    ["trace-convert"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert _run(*argv) == cli.EXIT_USAGE


def test_bad_env_seed_is_a_usage_error(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "abc")
    assert _run("ratchet-demo") == cli.EXIT_USAGE


def test_env_seed_makes_keygen_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "42")
    for name in ("a", "b"):
        assert _run("keygen", "--pk", tmp_path / f"{name}.pk", "--sk", tmp_path / f"{name}.sk", "--depth", 3) == 0
    assert (tmp_path / "a.pk").read_bytes() == (tmp_path / "b.pk").read_bytes()


def test_ratchet_demo_table(capsys):
    assert _run("--seed", 0, "ratchet-demo", "--depth", 2) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epoch,identity,stack,decrypts_own,decrypts_previous"
    assert len(lines) == 1 + 7
    assert lines[1] == "0,root,1,yes,-"
    assert all(line.endswith(",yes,no") for line in lines[2:])


def test_simulate_is_byte_identical_and_analyzable(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL_INI)
    for out in ("a", "b"):
        assert _run("--seed", 5, "simulate", cfg, "--out", tmp_path / out) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["runs.csv", "timeline_5.csv", "timeline_6.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    capsys.readouterr()
    assert _run("analyze", tmp_path / "a" / "runs.csv", "--out", tmp_path / "summary.csv") == 0
    assert capsys.readouterr().out.startswith("metric,runs,mean,min,max\n")
    assert (tmp_path / "summary.csv").exists()


def test_simulate_default_campaign_writes_16_timelines(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL_INI.replace("runs = 2", "runs = 16").replace("duration = 240", "duration = 60")
                   .replace("stabilization = 30", "stabilization = 10"))
    assert _run("simulate", cfg, "--out", tmp_path / "o", "--jobs", 2) == 0
    files = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert len(files) == 17 and "runs.csv" in files
    assert len((tmp_path / "o" / "runs.csv").read_text().splitlines()) == 17


def test_bad_config_is_a_runtime_error(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[network]\nusers = lots\n")
    assert _run("simulate", cfg, "--out", tmp_path / "o") == cli.EXIT_RUNTIME


def test_trace_convert(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text("ts;who;x;y\n2;b;3;4\n1;a;1;2\n")
    out = tmp_path / "trace.csv"
    assert _run("trace-convert", raw, "--out", out, "--delimiter", ";", "--schema", "node=who,time=ts,x=x,y=y") == 0
    assert out.read_text() == "node_id,time_s,x_m,y_m\na,1.000,1.000,2.000\nb,2.000,3.000,4.000\n"
    again = tmp_path / "again.csv"
    assert _run("trace-convert", out, "--out", again) == 0
    assert again.read_text() == out.read_text()


def test_trace_convert_reports_the_bad_line(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    raw.write_text("node_id,time_s,x_m,y_m\n0,0,0,0\n0,zz,1,1\n")
    assert _run("trace-convert", raw) == cli.EXIT_RUNTIME
    assert "3" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fsmesh", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
