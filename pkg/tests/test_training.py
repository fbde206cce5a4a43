import numpy as np
import pytest

from sinf.data.checkpoint import load_checkpoint, save_checkpoint
from sinf.losses import LOG_COLUMNS
from sinf.model import SINFModel
from sinf.training import TrainConfig, Trainer, TrainingError, evaluate_losses, render_ground_truth, smoothed
from sinf.renderer import Camera

from conftest import tiny_config

CFG = TrainConfig(lr=1e-3, batch_size=2, render_resolution=16, seed=4)


def trainer(scenes, log_path=None, workers=1, mode="full"):
    return Trainer(SINFModel(tiny_config(mode=mode), seed=1), scenes, CFG, log_path=log_path, workers=workers)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(temperature=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"nope": 1})
    assert TrainConfig.from_dict(CFG.to_dict()) == CFG


def test_resume_reproduces_next_loss(small_corpus, tmp_path):
    scenes = small_corpus["train"]
    full = trainer(scenes)
    reports = [full.train_step() for _ in range(4)]

    first = trainer(scenes)
    for _ in range(2):
        first.train_step()
    save_checkpoint(first.checkpoint(), tmp_path / "c.ckpt")
    resumed = trainer(scenes)
    resumed.restore(load_checkpoint(tmp_path / "c.ckpt"))
    for want in reports[2:]:
        got = resumed.train_step()
        assert (got.kl, got.render, got.layout, got.total) == (want.kl, want.render, want.layout, want.total)


def test_worker_count_does_not_change_numbers(small_corpus):
    scenes = small_corpus["train"]
    a, b = trainer(scenes, workers=1), trainer(scenes, workers=2)
    for _ in range(2):
        ra, rb = a.train_step(), b.train_step()
        assert ra.total == rb.total
    for k, p in a.params.items():
        assert np.array_equal(p.data, b.params[k].data)


def test_loss_log_format(small_corpus, tmp_path):
    t = trainer(small_corpus["train"], log_path=tmp_path / "loss.tsv")
    t.run(3)
    lines = (tmp_path / "loss.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert [int(l.split("\t")[0]) for l in lines[1:]] == [0, 1, 2]
    row = lines[1].split("\t")
    assert float(row[4]) == t.history[0].total


def test_checkpoints_written_on_schedule(small_corpus, tmp_path):
    t = trainer(small_corpus["train"])
    t.run(4, checkpoint_dir=tmp_path, checkpoint_every=2)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["step_000002.ckpt", "step_000004.ckpt"]
    assert load_checkpoint(tmp_path / "step_000004.ckpt").step == 4


def test_frozen_branch_untouched(small_corpus):
    t = trainer(small_corpus["train"], mode="layout_only")
    before = {k: t.params[k].data.copy() for k in t.frozen}
    t.train_step()
    assert t.frozen and all(np.array_equal(before[k], t.params[k].data) for k in t.frozen)


def test_nan_loss_aborts_with_step(small_corpus):
    t = trainer(small_corpus["train"])
    t.model.relations.slot_out.bias.data[:] = np.nan
    with pytest.raises(TrainingError, match="step 0: non-finite"):
        t.train_step()


def test_empty_scene_list_rejected(tiny_cfg):
    with pytest.raises(TrainingError):
        Trainer(SINFModel(tiny_cfg), [], CFG)


def test_ground_truth_render_grouping_matches_single_renders(small_corpus):
    from sinf.renderer import rasterize_soft_batch
    from sinf.autodiff import Tensor
    from sinf.training import FRAME_SIZE
    sc = small_corpus["train"][0]
    cam = Camera(np.array([0.5, 1.0, 1.0]), 40.0, 16, 16)
    idx = list(range(len(sc)))
    out = render_ground_truth(sc, idx, cam, 1e-2)
    for k in idx:
        box = sc.objects[k].aabb()
        v = (sc.objects[k].mesh.vertices - box.center) * (FRAME_SIZE / box.extent.max())
        one = rasterize_soft_batch(Tensor(v[None]), sc.objects[k].mesh.faces, cam, 1e-2).data[0]
        assert np.allclose(out[k], one, atol=1e-12)


def test_evaluate_losses_deterministic(small_corpus):
    m = SINFModel(tiny_config(), seed=2)
    a = evaluate_losses(m, small_corpus["eval"][:2], CFG)
    b = evaluate_losses(m, small_corpus["eval"][:2], CFG)
    assert a == b
    assert abs(a["total"] - (CFG.alpha * a["kl"] + a["render"] + a["layout"])) < 1e-15


def test_smoothed():
    assert np.allclose(smoothed([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert np.allclose(smoothed([5.0], 20), [5.0])
    assert smoothed([], 3).size == 0
