import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinf.autodiff import AdamWState
from sinf.data import (
    Checkpoint, CheckpointError, ImageFormatError, SceneFormatError, SynthConfig, SynthError, load_checkpoint,
    load_scene, read_image, recover_style, save_checkpoint, save_scene, scenes_equal, synth_dataset,
    synth_scene, write_image,
)
from sinf.data.checkpoint import decode_checkpoint, encode_checkpoint
from sinf.data.scenes import read_manifest, scene_from_text, scene_to_text, write_manifest
from sinf.data.synth import CATEGORIES, library_assets, measured_taper, taper_ratio_for
from sinf.geometry import Mesh, Scene, SceneObject, SlotTransform, iou3d, normalize_scene
from sinf.renderer import RenderBuffers


def random_scene(seed, n_obj=5):
    rng = np.random.default_rng(seed)
    objs = []
    for k in range(n_obj):
        nv = int(rng.integers(3, 9))
        faces = [[0, i, i + 1] for i in range(1, nv - 1)]
        mesh = Mesh(rng.normal(size=(nv, 3)) * 10 ** rng.uniform(-8, 3), faces)
        asset = f"asset_{k}" if k % 2 else None
        objs.append(SceneObject(f"cat{k}", SlotTransform(rng.normal(size=3), rng.uniform(0.1, 2, 3)), mesh, asset))
    return Scene(f"scene_{seed}", "bedroom", tuple(objs), bool(seed % 2))


# -- scene files ------------------------------------------------------------------

def test_scene_roundtrip(tmp_path):
    sc = random_scene(0)
    save_scene(sc, tmp_path / "a.scene")
    assert scenes_equal(load_scene(tmp_path / "a.scene"), sc)


def test_hundred_scenes_roundtrip_bit_exact():
    for seed in range(100):
        sc = random_scene(seed, n_obj=seed % 6)
        assert scenes_equal(scene_from_text(scene_to_text(sc)), sc)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=9, max_size=9))
def test_any_float_survives(vals):
    mesh = Mesh(np.array(vals).reshape(3, 3), [[0, 1, 2]])
    sc = Scene("x", "t", (SceneObject("c", SlotTransform(vals[:3], [1, 1, 1]), mesh),))
    back = scene_from_text(scene_to_text(sc))
    assert back.objects[0].mesh.vertices.tobytes() == mesh.vertices.tobytes()


def test_truncated_file_reports_line(tmp_path):
    text = scene_to_text(random_scene(1))
    cut = "\n".join(text.split("\n")[:12])
    with pytest.raises(SceneFormatError) as err:
        scene_from_text(cut, "cut.scene")
    assert "cut.scene:" in str(err.value) and "unexpected end of file" in str(err.value)


@pytest.mark.parametrize("mutate,needle", [
    (lambda t: t.replace("SINF-SCENE 1", "SINF-SCENE 9"), "version"),
    (lambda t: t.replace("normalized 1", "normalized 2"), "normalized"),
    (lambda t: t.replace("center ", "centre ", 1), "center"),
    (lambda t: t + "extra\n", "trailing"),
])
def test_malformed_fields(mutate, needle):
    text = scene_to_text(random_scene(3))
    with pytest.raises(SceneFormatError, match=needle):
        scene_from_text(mutate(text))


def test_manifest_roundtrip(tmp_path):
    rows = [("a", "train", "train/a.scene"), ("b", "eval", "eval/b.scene")]
    write_manifest(rows, tmp_path / "m.tsv")
    assert read_manifest(tmp_path / "m.tsv") == rows
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(SceneFormatError, match="bad.tsv:1"):
        read_manifest(tmp_path / "bad.tsv")


# -- generator --------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return synth_dataset(SynthConfig(n_train=40, n_eval=10, seed=5))


def test_dataset_deterministic(corpus):
    again = synth_dataset(SynthConfig(n_train=40, n_eval=10, seed=5))
    for split in ("train", "eval"):
        assert all(scenes_equal(a, b) for a, b in zip(corpus[split], again[split]))
        assert all(scene_to_text(a) == scene_to_text(b) for a, b in zip(corpus[split], again[split]))


def test_no_overlaps(corpus):
    for sc in corpus["train"] + corpus["eval"]:
        for a, b in itertools.combinations(sc.boxes(), 2):
            assert iou3d(a, b) == 0.0


def test_style_consistency(corpus):
    for sc in corpus["train"]:
        styles = [recover_style(o.category, o.mesh) for o in sc.objects]
        assert max(styles) - min(styles) < 1e-9


def test_generated_scenes_normalized(corpus):
    for sc in corpus["train"][:10]:
        box = sc.aabb()
        assert sc.normalized and np.all(box.lo >= -0.5 - 1e-12) and np.all(box.hi <= 0.5 + 1e-12)
        again = normalize_scene(sc)
        for a, b in zip(sc.objects, again.objects):
            assert np.max(np.abs(a.mesh.vertices - b.mesh.vertices)) < 1e-12


def test_counts_and_archetypes(corpus):
    cfg = SynthConfig()
    for sc in corpus["train"]:
        assert cfg.count_range[0] <= len(sc) <= cfg.count_range[1]
        assert sc.scene_type in cfg.archetypes
        assert set(sc.categories()) <= set(CATEGORIES)


def test_style_map_injective():
    s = np.linspace(0, 1, 50)
    for cat in CATEGORIES:
        r = np.array([taper_ratio_for(cat, x) for x in s])
        assert np.all(np.diff(r) > 0) or np.all(np.diff(r) < 0)


def test_synth_scene_pure_function():
    cfg = SynthConfig(seed=2)
    a, sa = synth_scene(7, cfg)
    b, sb = synth_scene(7, cfg)
    assert sa == sb and scenes_equal(a, b)


@pytest.mark.parametrize("kw", [dict(archetypes=()), dict(archetypes=("castle",)), dict(count_range=(0, 3)),
                                dict(count_range=(9, 20), max_slots=20), dict(style_range=(0.5, 1.5))])
def test_infeasible_config_rejected(kw):
    with pytest.raises(SynthError):
        synth_dataset(SynthConfig(**kw))


def test_library_assets_cover_styles():
    lib = library_assets(levels=3)
    assert len(lib) == 3 * len(CATEGORIES)
    ids = [i for i, _, _ in lib]
    assert len(set(ids)) == len(ids)
    for _, cat, mesh in lib:
        assert abs(mesh.aabb().extent.max() - 1) < 1e-12
        assert measured_taper(mesh) > 0


# -- images -------------------------------------------------------------------------

def test_pfm_roundtrip_bit_exact(tmp_path):
    img = np.random.default_rng(0).normal(size=(7, 5, 3)).astype(np.float32)
    write_image(img, tmp_path / "n.pfm")
    back = read_image(tmp_path / "n.pfm")
    assert back.tobytes() == img.tobytes()


def test_pgm_all_ones(tmp_path):
    write_image(np.ones((4, 6)), tmp_path / "m.pgm")
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n6 4\n255\n")
    assert data[len(b"P5\n6 4\n255\n"):] == b"\xff" * 24


def test_ppm_header(tmp_path):
    write_image(np.zeros((256, 256, 3)), tmp_path / "n.ppm")
    data = (tmp_path / "n.ppm").read_bytes()
    assert data[:15] == b"P6\n256 256\n255\n"
    assert len(data) == 15 + 256 * 256 * 3
    assert set(data[15:]) == {128}


def test_render_buffers_written(tmp_path):
    buf = RenderBuffers(np.zeros((3, 3, 3)), np.eye(3))
    write_image(buf, tmp_path / "m.pgm")
    assert np.array_equal(read_image(tmp_path / "m.pgm"), np.eye(3, dtype=np.uint8) * 255)


def test_unsupported_image_format(tmp_path):
    with pytest.raises(ImageFormatError):
        write_image(np.zeros((2, 2, 3)), tmp_path / "x.png")


# -- checkpoints ---------------------------------------------------------------------

def make_ckpt():
    rng = np.random.default_rng(1)
    params = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
    opt = AdamWState(lr=1e-3, step=17, m={k: rng.normal(size=v.shape) for k, v in params.items()},
                     v={k: rng.uniform(size=v.shape) for k, v in params.items()})
    return Checkpoint(params, opt, 17, {"model": {"mode": "full"}})


def test_checkpoint_roundtrip(tmp_path):
    ck = make_ckpt()
    save_checkpoint(ck, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
        assert back.optimizer.m[k].tobytes() == ck.optimizer.m[k].tobytes()
        assert back.optimizer.v[k].tobytes() == ck.optimizer.v[k].tobytes()
    assert back.step == 17 and back.optimizer.step == 17 and back.config == ck.config


def test_checkpoint_version_mismatch_names_both():
    data = bytearray(encode_checkpoint(make_ckpt()))
    data[8:12] = struct.pack("<I", 7)
    with pytest.raises(CheckpointError) as err:
        decode_checkpoint(bytes(data))
    assert "7" in str(err.value) and "1" in str(err.value)


def test_checkpoint_corrupt_payload():
    data = encode_checkpoint(make_ckpt())
    with pytest.raises(CheckpointError, match="payload"):
        decode_checkpoint(data[:-8])
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOTACKPT" + data[8:])
