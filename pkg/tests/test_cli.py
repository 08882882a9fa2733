import json
import subprocess
import sys

import pytest

from dpnas.cli import main

MIN = [{"index": 1, "type": 1, "kernel": 3, "pred1": 0, "pred2": 0},
       {"index": 2, "type": 7, "kernel": 0, "pred1": 0, "pred2": 0}]

TINY = {"candidate_budget": 20, "early_stop": {"interval": 10, "patience": 2}, "n_images": 8,
        "image_size": 32, "patch_size": 16, "n_patches": 64, "n_val": 2, "n_test": 4, "batch_size": 4,
        "max_layers": 5, "full_iterations": 10, "iters_per_epoch": 5, "eval_interval": 5}


@pytest.fixture
def files(tmp_path):
    arch = tmp_path / "minimal.json"
    arch.write_text(json.dumps(MIN))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    return arch, cfg


def test_compile_dot(files, capsys):
    arch, _ = files
    assert main(["compile", "-a", str(arch), "--emit-dot"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph") and out.count("->") == 2


def test_compile_plan(files, capsys):
    arch, _ = files
    assert main(["compile", "-a", str(arch), "--emit-plan"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["order"] == [1, 2] and plan["params"] == 8 * 9 + 8 + 8 + 8 * 9 + 1


def test_unknown_flag(files, capsys):
    arch, _ = files
    assert main(["compile", "-a", str(arch), "--frobnicate"]) == 1
    assert "--frobnicate" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["fly"]) == 1


def test_runtime_failure(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"index": 1, "type": 1, "kernel": 3, "pred1": 0, "pred2": 0}]))
    assert main(["compile", "-a", str(bad)]) == 2
    assert "MissingTerminal" in capsys.readouterr().err
    assert main(["compile", "-a", str(tmp_path / "missing.json")]) == 2


def test_search_run_dir(files, tmp_path):
    _, cfg = files
    run = tmp_path / "run"
    assert main(["search", "-c", str(cfg), "-n", "3", "--seed", "2", "-o", str(run)]) == 0
    lines = (run / "log.csv").read_text().splitlines()
    assert len(lines) == 4
    for name in ("config.json", "qtable.json", "selected_arch.json", "metadata.json",
                 "checkpoints/search.json"):
        assert (run / name).exists(), name
    assert list((run / "top_k").iterdir())
    resolved = json.loads((run / "config.json").read_text())
    assert resolved["seed"] == 2 and resolved["episodes"] == 3 and resolved["patch_size"] == 16


def test_search_identical_run_dirs(files, tmp_path):
    _, cfg = files
    dirs = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["search", "-c", str(cfg), "-n", "3", "--surrogate", "-o", str(run)]) == 0
        dirs.append(run)
    files_a = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        if rel.name != "metadata.json":
            assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


def test_train_eval_export(files, tmp_path, capsys):
    arch, cfg = files
    run = tmp_path / "train"
    assert main(["train", "-a", str(arch), "-c", str(cfg), "-K", "1", "-o", str(run)]) == 0
    res = json.loads((run / "result.json").read_text())
    assert res["K"] == 1 and res["iterations"] == 10
    assert (run / "metrics.csv").read_text().startswith("iteration,loss,val_psnr")
    ck = run / "checkpoints" / "model"
    capsys.readouterr()
    assert main(["eval", "-m", str(ck), "-c", str(cfg), "-o", str(tmp_path / "ev")]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 4
    assert main(["export", "-m", str(ck), "-o", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "export" / "weights.bin").read_bytes()[:4] == b"DPNA"


def test_eval_on_image_dir(files, tmp_path, capsys):
    from dpnas.data import save_pgm, synth_images
    arch, cfg = files
    run = tmp_path / "t"
    assert main(["train", "-a", str(arch), "-c", str(cfg), "-o", str(run)]) == 0
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for i, im in enumerate(synth_images(3, 32, 0)):
        save_pgm(imgs / f"{i}.pgm", im)
    capsys.readouterr()
    assert main(["eval", "-m", str(run / "checkpoints" / "model"), "-d", str(imgs), "-o", str(tmp_path / "e")]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 3


def test_export_run(files, tmp_path):
    _, cfg = files
    run = tmp_path / "s"
    assert main(["search", "-c", str(cfg), "-n", "4", "--surrogate", "-o", str(run)]) == 0
    assert main(["export", "-r", str(run), "-c", str(cfg)]) == 0
    out = run / "export"
    assert (out / "top_k.csv").read_text().startswith("rank,episode")
    assert list(out.glob("*.dot"))


def test_console_script(files):
    arch, _ = files
    out = subprocess.run([sys.executable, "-m", "dpnas.cli", "compile", "-a", str(arch)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "params" in out.stdout
