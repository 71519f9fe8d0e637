import json
import re
import signal
import subprocess
import sys
from pathlib import Path

import pytest

from lingopt.backend import GenerateRequest, HttpBackend
from lingopt.cli import build_parser, main
from lingopt.toymodel import checkpoint

GOLDEN = Path(__file__).parent / "golden" / "help"
COMMANDS = ["optimize", "score", "init-toy", "train-toy", "eval", "ablate", "diff", "stub-server", "make-toy-data"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory, trained):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-toy-data", "--out", str(root / "data")]) == 0
    checkpoint.save(trained, root / "toy.ckpt")
    return root


@pytest.mark.parametrize("command", [""] + COMMANDS)
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    argv = [command, "--help"] if command else ["--help"]
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert out == (GOLDEN / f"{command or 'lingopt'}.txt").read_text(encoding="utf-8")


@pytest.mark.parametrize("command", COMMANDS)
def test_help_documents_every_flag(command):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    text = sub.format_help()
    for action in sub._actions:
        for flag in action.option_strings:
            assert re.search(rf"(^|\s){re.escape(flag)}\b", text), flag
        assert action.help, action.dest


def test_missing_backend_is_usage_error(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("LINGOPT_BACKEND_URL", raising=False)
    code, _, err = run(capsys, "optimize", "--out", tmp_path / "o", "caption")
    assert code == 2 and "usage:" in err
    assert not (tmp_path / "o").exists()


def test_bad_flag_value_exits_2(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["optimize", "--out", str(tmp_path), "--rounds-mode", "sideways", "x"])
    assert info.value.code == 2
    code, _, _ = run(capsys, "optimize", "--out", tmp_path, "--backend", "toy:x", "--rounds", "3", "x")
    assert code == 2


def test_unreachable_backend_exits_3(capsys, tmp_path):
    code, _, err = run(capsys, "score", "--backend", "http://127.0.0.1:9", "x")
    assert code == 3 and "backend" in err


def test_optimize_on_toy_backend(capsys, toy_files, tmp_path):
    out = tmp_path / "opt"
    image = toy_files / "data" / "images" / "toy-00.grid"
    code, stdout, _ = run(
        capsys, "optimize", "--backend", f"toy:{toy_files / 'toy.ckpt'}", "--image", image, "--out", out, "caption"
    )
    assert code == 0 and stdout.strip()
    lines = (out / "trace.jsonl").read_text().splitlines()
    calls = [json.loads(l) for l in lines[:-1]]
    assert len(calls) == 4
    assert json.loads(lines[-1])["summary"]["optimized"] == stdout.strip()
    assert json.loads((out / "config.json").read_text())["pipeline"]["guard_fallback"] is False


def test_guard_flag_is_echoed(capsys, toy_files, tmp_path):
    out = tmp_path / "g"
    code, _, _ = run(capsys, "optimize", "--backend", f"toy:{toy_files / 'toy.ckpt'}", "--guard", "--out", out, "x")
    assert code == 0
    assert json.loads((out / "config.json").read_text())["pipeline"]["guard_fallback"] is True


def test_config_file_and_flag_override(capsys, toy_files, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[pipeline]\nmode = loop_xr\nrounds = 2\ndecimals = 3\n")
    out = tmp_path / "c"
    ckpt = f"toy:{toy_files / 'toy.ckpt'}"
    code, _, _ = run(capsys, "optimize", "--backend", ckpt, "--config", cfg, "--decimals", "5", "--out", out, "x")
    assert code == 0
    echoed = json.loads((out / "config.json").read_text())["pipeline"]
    assert echoed["rounds_mode"] == "loop_xr" and echoed["rounds"] == 2 and echoed["score_decimals"] == 5


def test_score_uniform_and_identical(capsys, tmp_path):
    assert main(["init-toy", "--uniform", "--vocab", "specials", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, "score", "--backend", f"toy:{tmp_path / 'toy.ckpt'}", "a photo", "a photo")
    assert code == 0
    assert out.splitlines() == ["a photo\t1.386294", "a photo\t1.386294"]


def test_score_unreadable_image_exits_3(capsys, tmp_path):
    main(["init-toy", "--uniform", "--vocab", "specials", "--out", str(tmp_path)])
    bad = tmp_path / "broken.grid"
    bad.write_bytes(b"not a grid")
    code, _, _ = run(capsys, "score", "--backend", f"toy:{tmp_path / 'toy.ckpt'}", "--image", bad, "x")
    assert code == 3


def test_missing_dataset_exits_2(capsys, toy_files, tmp_path):
    code, _, _ = run(
        capsys, "eval", "--backend", f"toy:{toy_files / 'toy.ckpt'}", "--data", tmp_path / "none.jsonl", "--out", tmp_path
    )
    assert code == 2


def test_train_then_eval_ranking(capsys, tmp_path, toy_files):
    code, out, _ = run(capsys, "train-toy", "--steps", "300", "--warmup", "20", "--out", tmp_path / "m")
    assert code == 0 and out.startswith("final_loss\t")
    assert len((tmp_path / "m" / "loss_trace.tsv").read_text().splitlines()) == 300
    code, out, _ = run(
        capsys, "eval", "--backend", f"toy:{toy_files / 'toy.ckpt'}", "--data", toy_files / "data" / "toy.jsonl",
        "--mode", "ranking", "--out", tmp_path / "e",
    )
    assert code == 0 and out == "accuracy\t1.000000\n"
    assert (tmp_path / "e" / "report.jsonl").exists()


def test_diff_command(capsys, tmp_path, toy_files):
    ckpt = f"toy:{toy_files / 'toy.ckpt'}"
    data = toy_files / "data" / "toy.jsonl"
    run(capsys, "eval", "--backend", ckpt, "--data", data, "--out", tmp_path / "a")
    run(capsys, "eval", "--backend", ckpt, "--data", data, "--out", tmp_path / "b")
    code, out, _ = run(capsys, "diff", tmp_path / "a" / "report.jsonl", tmp_path / "b" / "report.jsonl")
    assert code == 0 and out == ""


def test_stub_server_serves_script(tmp_path):
    script = tmp_path / "fixtures.json"
    script.write_text(json.dumps({"backend": "cli-stub", "default_text": "hello"}))
    proc = subprocess.Popen(
        [sys.executable, "-m", "lingopt.cli", "stub-server", "--script", str(script), "--port", "0"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        url = proc.stdout.readline().strip()
        with HttpBackend(url) as be:
            assert be.healthcheck().backend == "cli-stub"
            assert be.generate(GenerateRequest(None, "hi")).text == "hello"
    finally:
        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=10) == 0
