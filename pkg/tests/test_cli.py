import json
import subprocess
import sys
from collections import Counter

import pytest

from sinf.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from sinf.data.scenes import load_scene_dir, load_split
from sinf.validation import scene_problems

from conftest import TINY

RUN = {
    "model": TINY,
    "synth": {"n_train": 12, "n_eval": 4},
    "train": {"steps": 3, "batch_size": 2, "render_resolution": 16, "checkpoint_every": 2},
    "metrics": {"resolution": 32, "n_generate": 3},
}


def write_config(path, cfg=RUN):
    path.write_text(json.dumps(cfg))
    return path


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.json")
    assert main(["synth-data", "--config", str(cfg), "--seed", "2", "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == EXIT_OK
    return root, cfg


def test_synth_data_is_reproducible_and_stats_are_right(workspace, tmp_path, capsys):
    root, cfg = workspace
    assert main(["synth-data", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path)]) == EXIT_OK
    printed = capsys.readouterr().out
    a, b = files(root / "data"), files(tmp_path)
    a.pop("config.json"), b.pop("config.json")  # records its own output path
    assert a == b
    train = load_split(tmp_path, "train")
    assert len(train) == 12 and len(load_split(tmp_path, "eval")) == 4
    counts = Counter(len(s.objects) for s in train)
    line = next(l for l in printed.splitlines() if l.startswith("  objects per scene"))
    assert line.split(": ", 1)[1] == " ".join(f"{k}:{counts[k]}" for k in sorted(counts))
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 2


def test_train_outputs(workspace):
    run = workspace[0] / "run"
    assert (run / "final.ckpt").exists() and (run / "config.json").exists()
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_000002.ckpt"]
    rows = (run / "loss.tsv").read_text().splitlines()
    assert len(rows) == 4


def test_resume_with_other_model_is_runtime_error(workspace, tmp_path):
    root, _ = workspace
    other = dict(RUN, model=dict(TINY, latent_dim=4))
    cfg = write_config(tmp_path / "c.json", other)
    rc = main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path / "r"),
               "--resume", str(root / "run" / "final.ckpt")])
    assert rc == EXIT_RUNTIME


def test_generate_zero_and_fixed_seed(workspace, tmp_path):
    root, cfg = workspace
    ck, assets = str(root / "run" / "final.ckpt"), str(root / "data" / "assets")
    assert main(["generate", "--config", str(cfg), "--checkpoint", ck, "--assets", assets, "-n", "0",
                 "--out", str(tmp_path / "none")]) == EXIT_OK
    assert load_scene_dir(tmp_path / "none") == []
    for d in ("g1", "g2"):
        assert main(["generate", "--config", str(cfg), "--checkpoint", ck, "--assets", assets,
                     "--seed", "7", "--out", str(tmp_path / d), "--render"]) == EXIT_OK
    a, b = files(tmp_path / "g1"), files(tmp_path / "g2")
    a.pop("config.json"), b.pop("config.json")
    assert a == b
    scenes = load_scene_dir(tmp_path / "g1")
    assert len(scenes) == 3
    assert all(scene_problems(s) == [] for s in scenes)


def test_evaluate(workspace, tmp_path):
    root, cfg = workspace
    data = str(root / "data" / "train")
    for d in ("e1", "e2"):
        assert main(["evaluate", "--config", str(cfg), "--reference", data, "--split-halves",
                     "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "e1" / "report.json").read_bytes() == (tmp_path / "e2" / "report.json").read_bytes()
    (tmp_path / "empty").mkdir()
    assert main(["evaluate", "--config", str(cfg), "--reference", data, "--generated", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "e3")]) == EXIT_RUNTIME
    assert main(["evaluate", "--config", str(cfg), "--reference", data, "--out", str(tmp_path / "e4")]) == EXIT_USAGE


def test_usage_errors(tmp_path):
    assert main(["no-such-command"]) == EXIT_USAGE
    bad = write_config(tmp_path / "bad.json", {"model": {"bogus": 1}})
    assert main(["gradcheck", "--config", str(bad)]) == EXIT_USAGE
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["gradcheck", "--config", str(tmp_path / "broken.json")]) == EXIT_USAGE
    assert main(["gradcheck", "--seed", "-1"]) == EXIT_USAGE
    assert main(["gradcheck", "--only", "nope", "--out", str(tmp_path)]) == EXIT_USAGE


def test_gradcheck_exit_codes(tmp_path):
    assert main(["gradcheck", "--only", "exp", "tanh", "--out", str(tmp_path / "ok")]) == EXIT_OK
    assert "PASS" in (tmp_path / "ok" / "gradcheck.txt").read_text()
    assert main(["gradcheck", "--only", "exp", "--inject-fault", "exp", "--out", str(tmp_path / "f")]) == EXIT_RUNTIME


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sinf", "gradcheck", "--only", "sum", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "sinf"], capture_output=True, text=True)
    assert r.returncode == 1
