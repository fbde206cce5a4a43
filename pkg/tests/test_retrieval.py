import warnings

import numpy as np
import pytest

from sinf.data.assets import write_asset_library
from sinf.data.synth import library_assets, tapered_box
from sinf.geometry import Mesh, chamfer, icosphere, sample_surface, canonicalize
from sinf.retrieval import (
    AssetLibrary, ChamferRetriever, LibraryWarning, RetrievalError, assemble_scene, build_library, distances,
    place_asset, retrieve, retrieve_with_distance,
)

N = 256  # keeps brute-force oracles quick


def blob(seed, level=1):
    rng = np.random.default_rng(seed)
    m = icosphere(level)
    return m.with_vertices(m.vertices * rng.uniform(0.4, 1.6, 3) + 0.2 * rng.normal(size=m.vertices.shape))


@pytest.fixture(scope="module")
def library():
    return AssetLibrary.from_meshes([(f"a{k:02d}", "blob", blob(k)) for k in range(10)], N)


def test_build_from_directory(tmp_path):
    write_asset_library(tmp_path, [("x", "c1", blob(0)), ("y", "c2", blob(1)), ("z", "c1", blob(2))])
    lib = build_library(tmp_path, N)
    assert lib.ids == ["x", "y", "z"]
    again = build_library(tmp_path, N)
    for a, b in zip(lib.assets, again.assets):
        assert a.samples.tobytes() == b.samples.tobytes()
        assert abs(a.mesh.aabb().extent.max() - 1) < 1e-12


def test_unlisted_and_broken_files_are_skipped_with_named_warning(tmp_path):
    write_asset_library(tmp_path, [("good", "c", blob(0)), ("flat", "c", blob(1))])
    (tmp_path / "meshes" / "stray.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    (tmp_path / "meshes" / "flat.obj").write_text("v 0 0 0\nv 0 0 0\nv 0 0 0\nf 1 2 3\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lib = build_library(tmp_path, N)
    msgs = [str(w.message) for w in caught if issubclass(w.category, LibraryWarning)]
    assert lib.ids == ["good"]
    assert any("stray.obj" in m for m in msgs)
    assert any("flat" in m for m in msgs)


def test_empty_library_rejected(tmp_path):
    with pytest.raises(RetrievalError):
        AssetLibrary([])
    write_asset_library(tmp_path, [])
    with pytest.raises(RetrievalError):
        build_library(tmp_path)


def test_self_retrieval(library):
    for k in range(10):
        aid, d = retrieve_with_distance(blob(k), library)
        assert aid == f"a{k:02d}" and d == 0.0


def test_single_asset_library():
    lib = AssetLibrary.from_meshes([("only", "c", blob(3))], N)
    assert retrieve(blob(7), lib) == "only"


def test_argmin_matches_brute_force_table(library):
    for s in range(20):
        shape = blob(100 + s, level=0)
        can, _ = canonicalize(shape)
        q = sample_surface(can, N, 0)
        table = [chamfer(q, a.samples) for a in library.assets]
        ids, d = distances(shape, library)
        assert np.allclose(d, table, rtol=0, atol=1e-12)
        assert retrieve(shape, library) == library.ids[int(np.argmin(table))]


def test_uniform_scaling_invariance(library):
    for s in range(5):
        shape = blob(200 + s)
        big = shape.with_vertices(shape.vertices * 3.7 + 1.0)
        assert retrieve(shape, library) == retrieve(big, library)


def test_tie_broken_by_smallest_id():
    m = blob(5)
    lib = AssetLibrary.from_meshes([("b", "c", m), ("a", "c", m), ("c", "c", m)], N)
    assert retrieve(blob(9), lib) == "a"


def test_zero_area_query_rejected(library):
    with pytest.raises(RetrievalError):
        retrieve(Mesh(np.zeros((3, 3)), [[0, 1, 2]]), library)


def test_category_filter(library):
    lib = AssetLibrary.from_meshes([("a", "chair", blob(0)), ("b", "table", blob(1))], N)
    assert retrieve(blob(0), lib, category="table") == "b"
    with pytest.raises(RetrievalError):
        retrieve(blob(0), lib, category="sofa")


def test_empty_assembly(library):
    sc = assemble_scene([], np.zeros((0, 3)), np.zeros((0, 3)), library)
    assert len(sc) == 0


def test_placed_asset_centered_on_slot(library):
    rng = np.random.default_rng(4)
    centers, halves = rng.uniform(-0.3, 0.3, (4, 3)), rng.uniform(0.05, 0.2, (4, 3))
    sc = assemble_scene([blob(k) for k in range(4)], centers, halves, library)
    for obj, c, h in zip(sc.objects, centers, halves):
        box = obj.aabb()
        assert np.max(np.abs(box.center - c)) < 1e-9
        assert np.max(np.abs(box.extent - 2 * h)) < 1e-9


def test_roundtrip_reproduces_ground_truth_boxes(small_corpus):
    lib = AssetLibrary.from_meshes(library_assets(levels=11), N)
    sc = small_corpus["train"][0]
    boxes = sc.boxes()
    # ground-truth geometry goes in as the query shapes
    out = assemble_scene([o.mesh for o in sc.objects], [b.center for b in boxes],
                         [b.extent / 2 for b in boxes], lib)
    for got, want in zip(out.boxes(), boxes):
        assert np.max(np.abs(got.lo - want.lo)) < 1e-9 and np.max(np.abs(got.hi - want.hi)) < 1e-9
    assert out.categories() == sc.categories()


def test_estimator_wrapper(library, tmp_path):
    items = [(f"a{k:02d}", "blob", blob(k)) for k in range(3)]
    est = ChamferRetriever(n_samples=N).fit(items)
    assert est.predict([blob(1)]) == ["a01"]
    d = est.transform([blob(1), blob(2)])
    assert d.shape == (2, 3) and d[0, 1] == 0.0 and d[1, 2] == 0.0
    assert est.get_params() == {"n_samples": N, "category_filter": False}
    with pytest.raises(ValueError):
        est.set_params(bogus=1)
    with pytest.raises(RetrievalError):
        ChamferRetriever().predict([blob(0)])
    write_asset_library(tmp_path, items)
    assert ChamferRetriever(n_samples=N).fit(tmp_path).predict([blob(2)]) == ["a02"]


def test_place_asset_on_flat_asset():
    flat = tapered_box(1.0, 1e-9, 1.0, 1.0)
    lib = AssetLibrary.from_meshes([("f", "rug", flat)], N)
    m = place_asset(lib["f"], [0.1, 0.0, -0.1], [0.2, 0.05, 0.3])
    assert np.allclose(m.aabb().center, [0.1, 0.0, -0.1], atol=1e-12)
