import json
from collections import Counter

import numpy as np
import pytest

from sabrdf.datasets import (
    CenterScheme,
    ManifestError,
    ParameterGrid,
    RandomScheme,
    SVBRDFSpec,
    UniformScheme,
    brdfnet_targets,
    build_grid,
    crop_rotate,
    crop_rotate_arrays,
    generate_procedural_svbrdf,
    load_dataset,
    midpoint_test_grid,
    read_manifest,
    render_sphere_set,
    rotate_normals,
    select_unlabeled_subset,
    subsample,
    write_dataset,
)
from sabrdf.lighting import ProbeSpec, generate_probe
from sabrdf.renderer import render_planar

MONO = ProbeSpec(height=8, channels=1)


# -- grids --------------------------------------------------------------------


def test_full_scale_grid_counts():
    grid = build_grid(10, 10, 15)
    assert len(grid) == 1500
    assert len(midpoint_test_grid(grid)) == 9 * 9 * 14 == 1134


def test_grid_endpoints_and_spacing():
    grid = build_grid(4, 5, 6)
    assert grid.roughness[0] == pytest.approx(0.02) and grid.roughness[-1] == pytest.approx(1.0)
    assert grid.diffuse[0] == 0.05 and grid.diffuse[-1] == 1.0
    assert np.allclose(np.diff(grid.specular), np.diff(grid.specular)[0])
    assert np.allclose(np.diff(np.log(grid.roughness)), np.diff(np.log(grid.roughness))[0])


def test_two_sample_axes_give_corners_and_single_midpoint():
    grid = build_grid(2, 2, 2)
    pts = grid.points()
    assert len(pts) == 8
    assert {tuple(p) for p in pts} == {(d, s, r) for d in (0.05, 1.0) for s in (0.05, 1.0) for r in (grid.roughness[0], 1.0)}
    mid = midpoint_test_grid(grid)
    assert mid.shape == (1, 1, 1)
    assert mid.roughness[0] == pytest.approx(np.exp(0.5 * (np.log(0.02) + np.log(1.0))))
    assert mid.roughness[0] == pytest.approx(0.1414, abs=1e-4)


def test_grid_validation():
    with pytest.raises(ValueError):
        build_grid(1, 3, 3)
    with pytest.raises(ValueError):
        ParameterGrid([0.1, 0.1], [0.2, 0.3], [0.1, 0.2])


def test_points_order_matches_unravel():
    grid = build_grid(3, 4, 5)
    pts = grid.points()
    d, s, r = grid.unravel(np.arange(len(grid)))
    assert np.array_equal(pts[:, 0], grid.diffuse[d])
    assert np.array_equal(pts[:, 1], grid.specular[s])
    assert np.array_equal(pts[:, 2], grid.roughness[r])


def test_brdfnet_targets():
    t = brdfnet_targets(np.array([[0.5, 0.25, 0.1]]))
    assert np.allclose(t, [[np.log(0.5), np.log(0.1)]])


# -- subsampling --------------------------------------------------------------


def test_uniform_scheme_counts():
    grid = build_grid(10, 10, 15)
    lab, comp = subsample(grid, UniformScheme(5, 5, 7))
    assert len(lab) == 175 and len(comp) == 1325


def test_random_scheme_floor_count_and_seed():
    grid = build_grid(10, 10, 15)
    lab, _ = subsample(grid, RandomScheme(0.125))
    assert len(lab) == 187
    assert np.array_equal(lab, subsample(grid, RandomScheme(0.125))[0])
    assert not np.array_equal(lab, subsample(grid, RandomScheme(0.125, seed=1))[0])
    with pytest.raises(ValueError):
        subsample(build_grid(2, 2, 2), RandomScheme(0.1))


def test_corners_scheme_selects_domain_corners():
    grid = build_grid(6, 6, 8)
    lab, comp = subsample(grid, UniformScheme(2, 2, 2))
    pts = grid.points()[lab]
    assert len(lab) == 8 and len(comp) == 280
    for col, axis in zip(pts.T, (grid.diffuse, grid.specular, grid.roughness)):
        assert set(col) == {axis[0], axis[-1]}


@pytest.mark.parametrize("scheme", [UniformScheme(3, 2, 4), RandomScheme(0.2, 5), CenterScheme(0.5)])
def test_partition_is_disjoint_and_covering(scheme):
    grid = build_grid(6, 6, 8)
    lab, comp = subsample(grid, scheme)
    assert np.intersect1d(lab, comp).size == 0
    assert np.array_equal(np.union1d(lab, comp), np.arange(len(grid)))


def test_center_scheme_count():
    lab, _ = subsample(build_grid(6, 6, 8), CenterScheme(0.5))
    # Central half of each axis: 2 of 6, 2 of 6, 4 of 8.
    assert len(lab) == 16


def test_uniform_scheme_infeasible():
    with pytest.raises(ValueError):
        subsample(build_grid(3, 3, 3), UniformScheme(4, 2, 2))


# -- procedural SVBRDFs --------------------------------------------------------


def test_procedural_is_deterministic_and_valid():
    a = generate_procedural_svbrdf(3, SVBRDFSpec(size=32))
    b = generate_procedural_svbrdf(3, SVBRDFSpec(size=32))
    c = generate_procedural_svbrdf(4, SVBRDFSpec(size=32))
    assert np.array_equal(a.diffuse, b.diffuse) and np.array_equal(a.normals, b.normals)
    assert not np.array_equal(a.diffuse, c.diffuse)


def test_procedural_normals_unit_audit():
    worst = 0.0
    for seed in range(20):
        m = generate_procedural_svbrdf(seed, SVBRDFSpec(size=32))
        worst = max(worst, float(np.abs(np.linalg.norm(m.normals, axis=-1) - 1).max()))
        assert m.normals[..., 2].min() > 0
        assert 0.05 <= m.rho_s[0] <= 1 and 0.02 <= m.alpha[0] <= 1
    assert worst < 1e-5


def test_flat_spec():
    m = generate_procedural_svbrdf(1, SVBRDFSpec(size=8, flat=True))
    assert np.allclose(m.diffuse, m.diffuse[0, 0])
    assert np.array_equal(m.normals, np.broadcast_to([0, 0, 1.0], m.normals.shape))


# -- unlabeled selection ---------------------------------------------------------


def _mean_color_images(means):
    means = np.asarray(means, dtype=np.float64)
    return np.broadcast_to(means[:, :, None, None], means.shape + (2, 2)).copy()


def test_selection_degenerate_pool_equals_labeled(rng):
    imgs = _mean_color_images(rng.uniform(size=(30, 3)))
    sel = select_unlabeled_subset(imgs, imgs, 30, rng)
    assert np.array_equal(sel, np.arange(30))


def test_selection_follows_dark_target(rng):
    dark = _mean_color_images(rng.uniform(0.0, 0.375, size=(40, 3)))
    pool = _mean_color_images(rng.uniform(0.0, 1.0, size=(1000, 3)))
    events = Counter()
    sel = select_unlabeled_subset(dark, pool, 40, rng, events=events)
    assert events["uniform_fallback"] == 0
    assert pool[sel].max() < 0.375
    assert pool[sel].mean() < 0.5 * pool.mean()


def test_selection_fallback_is_counted(rng):
    dark = _mean_color_images(np.full((5, 1), 0.05))
    pool = _mean_color_images(np.concatenate([np.full((3, 1), 0.06), np.full((20, 1), 0.9)]))
    events = Counter()
    sel = select_unlabeled_subset(dark, pool, 10, rng, events=events)
    assert len(sel) == 10 and set(range(3)) <= set(sel.tolist())
    assert events["uniform_fallback"] == 7


def test_selection_deterministic_and_validated():
    imgs = _mean_color_images(np.random.default_rng(0).uniform(size=(50, 3)))
    a = select_unlabeled_subset(imgs[:10], imgs, 20, np.random.default_rng(1))
    b = select_unlabeled_subset(imgs[:10], imgs, 20, np.random.default_rng(1))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        select_unlabeled_subset(imgs, imgs[:5], 6, np.random.default_rng(1))


# -- crops and rotations ----------------------------------------------------------


def test_full_window_zero_rotation_is_identity(rng):
    img = rng.uniform(size=(8, 8, 3))
    out = crop_rotate_arrays({"image": img}, 8, (0, 0), 0)["image"]
    assert np.array_equal(out, img)


def test_two_quarter_turns_make_half_turn(rng):
    m = generate_procedural_svbrdf(2, SVBRDFSpec(size=8))
    arrays = {"diffuse": m.diffuse, "normals": m.normals}
    once = crop_rotate_arrays(crop_rotate_arrays(arrays, 8, (0, 0), 1), 8, (0, 0), 1)
    twice = crop_rotate_arrays(arrays, 8, (0, 0), 2)
    for k in arrays:
        assert np.allclose(once[k], twice[k], atol=1e-15)
    assert np.allclose(rotate_normals(m.normals, 4), m.normals)


def test_quarter_turn_permutes_normal_components():
    n = np.array([0.6, 0.0, 0.8])
    assert np.allclose(rotate_normals(n, 1), [0.0, 0.6, 0.8])
    assert np.allclose(rotate_normals(n, 2), [-0.6, 0.0, 0.8])


def test_crop_rotate_commutes_with_rendering():
    env = generate_probe(11, ProbeSpec(height=8))
    maps = generate_procedural_svbrdf(5, SVBRDFSpec(size=12))
    full = render_planar(maps, env).pixels
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(12):
        view, maps_view, (r, c, q) = crop_rotate(full, 8, rng, maps)
        seen.add(q)
        # Turning the sample by q quarter turns is the same as turning the lighting the same way.
        rerendered = render_planar(maps_view, env, rotation=q * np.pi / 2).pixels
        assert np.abs(view - rerendered).max() < 1e-6
    assert len(seen) > 1


def test_crop_window_too_large(rng):
    with pytest.raises(ValueError):
        crop_rotate(np.zeros((4, 4, 3)), 5, rng)


# -- sphere sets and persistence ---------------------------------------------------


def _small_sets():
    grid = build_grid(2, 2, 2)
    probes = [generate_probe(s, MONO) for s in range(2)]
    test_probes = [generate_probe(100, MONO)]
    train = render_sphere_set(grid, [0, 7], probes, None, 16, seed=1)
    unl = render_sphere_set(grid, [3], probes, 1, 16, seed=2)
    test_grid = midpoint_test_grid(grid)
    test = render_sphere_set(test_grid, [0], test_probes, 2, 16, seed=3)
    return grid, test_grid, probes, test_probes, {"train": train, "unlabeled": unl, "test": test}


def test_render_sphere_set_layout():
    grid, _, probes, _, sets = _small_sets()
    train = sets["train"]
    assert train.x.shape == (4, 1, 16, 16) and train.x.dtype == np.float32
    assert train.ids.tolist() == [0, 0, 7, 7]
    assert [p for p, _ in train.lighting] == [0, 1, 0, 1]
    assert np.allclose(train.targets, brdfnet_targets(grid.points()[[0, 0, 7, 7]]))
    assert train.x.max() <= 1.0 and train.x.min() >= 0.0
    again = render_sphere_set(grid, [0, 7], probes, None, 16, seed=1)
    assert np.array_equal(again.x, train.x) and again.lighting == train.lighting


def test_dataset_round_trip(tmp_path):
    grid, test_grid, probes, test_probes, sets = _small_sets()
    manifest = write_dataset(tmp_path, grid, test_grid, probes, test_probes, sets, seeds={"train": 1})
    assert len(manifest.samples) == 4 + 1 + 2
    unl = [s for s in manifest.samples if s["split"] == "unlabeled"]
    assert unl[0]["params"] is None and unl[0]["grid_id"] is None
    m2, p2, s2 = load_dataset(tmp_path)
    assert m2.to_dict() == manifest.to_dict()
    for split, ss in sets.items():
        assert np.array_equal(s2[split].x, ss.x)
        assert s2[split].lighting == ss.lighting
    assert np.array_equal(s2["train"].points, sets["train"].points)
    assert np.isnan(s2["unlabeled"].points).all()
    assert [e.id for e in p2["train"]] == [e.id for e in probes]
    assert np.array_equal(p2["test"][0].radiance, test_probes[0].radiance)


def test_dataset_rewrite_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        write_dataset(tmp_path / d, *_small_sets())
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_manifest_validation(tmp_path):
    write_dataset(tmp_path, *_small_sets())
    data = json.loads((tmp_path / "manifest.json").read_text())
    (tmp_path / data["samples"][0]["image"]).unlink()
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)
    data["samples"][1]["id"] = data["samples"][2]["id"]
    (tmp_path / "manifest.json").write_text(json.dumps(data))
    with pytest.raises(ManifestError):
        read_manifest(tmp_path).validate(tmp_path)
    (tmp_path / "manifest.json").write_text("{}")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path)
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "nowhere")
