import json
from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sinf.config import ConfigError, RunConfig, load_config
from sinf.data.synth import library_assets
from sinf.estimator import SceneSynthesizer, sample_latents
from sinf.retrieval import AssetLibrary
from sinf.validation import ValidationError, check_scene, check_scenes, clip_box_to_cube, scene_problems

TINY_EST = dict(latent_dim=8, slots=8, plane_resolution=8, plane_channels=4, steps=2, batch_size=2,
                render_resolution=16, lr=1e-3, seed=1)


def test_clip_box():
    c, h = clip_box_to_cube([0.4, 0, 0], [0.2, 0.1, 0.1])
    assert np.allclose(c, [0.35, 0, 0]) and np.allclose(h, [0.15, 0.1, 0.1])
    assert clip_box_to_cube([0.9, 0, 0], [0.1, 0.1, 0.1]) is None
    c, h = clip_box_to_cube([0, 0, 0], [-0.1, 0.2, 0.3])
    assert np.allclose(h, [0.1, 0.2, 0.3])


def test_scene_problems(small_corpus):
    sc = small_corpus["train"][0]
    assert scene_problems(sc) == []
    obj = sc.objects[0]
    moved = replace(obj, mesh=obj.mesh.with_vertices(obj.mesh.vertices + 2.0))
    bad = replace(sc, id="has space", objects=(moved,) + tuple(sc.objects[1:]))
    probs = scene_problems(bad, vocabulary={"nothing"})
    assert any("whitespace" in p for p in probs) and any("unit cube" in p for p in probs)
    assert any("unknown category" in p for p in probs)
    with pytest.raises(ValidationError, match="has space"):
        check_scene(bad)


def test_check_scenes():
    with pytest.raises(ValidationError):
        check_scenes([])
    with pytest.raises(ValidationError):
        check_scenes(["not a scene"])
    assert check_scenes([], min_count=0) == []


def test_sample_latents_prefix_stable():
    a, b = sample_latents(5, 3, 9), sample_latents(2, 3, 9)
    assert np.array_equal(a[:2], b)
    assert sample_latents(0, 3, 9).shape == (0, 3)


def test_config_precedence_and_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "train": {"steps": 10}}))
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.train.steps == 10 and cfg.synth.seed == 3 and cfg.train.seed == 3
    over = cfg.with_overrides(seed=5, steps=20, mode="field_only", out=tmp_path / "o")
    assert (over.seed, over.train.steps, over.model.mode, over.paths.outputs) == (5, 20, "field_only",
                                                                                   str(tmp_path / "o"))
    assert RunConfig.from_dict(json.loads(over.dumps())) == over
    for bad in ({"extra": 1}, {"train": {"steps": 10, "x": 1}}, {"seed": -1}, {"model": []},
                {"metrics": {"resolution": 2}}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_estimator_protocol(small_corpus):
    est = SceneSynthesizer(**TINY_EST)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.transform(small_corpus["eval"])
    est.fit(small_corpus["train"])
    assert len(est.loss_history_) == 2
    z = est.transform(small_corpus["eval"])
    assert z.shape == (len(small_corpus["eval"]), 8)
    assert np.array_equal(z, est.transform(small_corpus["eval"]))
    assert np.isfinite(est.score(small_corpus["eval"]))
    lib = AssetLibrary.from_meshes(library_assets(levels=3), 256)
    scenes = est.sample(2, lib, seed=4)
    assert [s.id for s in scenes] == ["generated_00000", "generated_00001"]
    assert all(scene_problems(s) == [] for s in scenes)


def test_estimator_rejects_empty_scene(small_corpus):
    empty = replace(small_corpus["train"][0], objects=())
    with pytest.raises(ValidationError):
        SceneSynthesizer(**TINY_EST).fit([empty])
