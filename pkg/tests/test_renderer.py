import numpy as np
import pytest

from sabrdf.lighting import EnvironmentMap, ProbeSpec, constant_env, generate_probe, rotate
from sabrdf.reflectance import SVBRDFMaps, WardBRDF
from sabrdf.renderer import (
    RenderedImage,
    finalize,
    gamma_decode,
    gamma_encode,
    image_mse,
    luminance,
    render_planar,
    render_sphere,
    sphere_normals,
)

SMALL = ProbeSpec(height=8)


def test_lambertian_sphere_under_unit_env():
    img = render_sphere(WardBRDF(0.6, 0.0, 0.1), constant_env(1.0, 16), resolution=32)
    inner = sphere_normals(32)[0][:, 2] > 0.1
    values = img.pixels[img.mask][inner]
    assert np.allclose(values, 0.6, atol=1e-3)


def test_black_material_gives_black_image():
    img = render_sphere(WardBRDF(0.0, 0.0, 0.3), generate_probe(3, SMALL), resolution=16)
    assert not img.pixels.any()


def test_background_is_zero_and_mask_is_disc():
    img = render_sphere(WardBRDF(0.5, 0.2, 0.2), generate_probe(1, SMALL), resolution=16)
    assert not img.pixels[~img.mask].any()
    assert 0.7 < img.mask.mean() < 0.85


def test_resolution_floor():
    with pytest.raises(ValueError):
        render_sphere(WardBRDF(0.5, 0.1, 0.1), constant_env(1.0, 8), resolution=8)


def test_mirror_symmetric_env_gives_symmetric_image():
    env = generate_probe(5, SMALL)
    # Symmetrize about the xz plane: phi -> -phi maps column j to W-1-j.
    sym = EnvironmentMap(0.5 * (env.radiance + env.radiance[:, ::-1]))
    img = render_sphere(WardBRDF(0.4, 0.3, 0.15), sym, resolution=32)
    # y -> -y flips image rows.
    assert np.allclose(img.pixels, img.pixels[::-1], atol=1e-12)


def test_planar_flat_equals_sphere_pole():
    env = generate_probe(2, SMALL)
    brdf = WardBRDF(0.3, 0.2, 0.25)
    sphere = render_sphere(brdf, env, resolution=17)
    n = np.zeros((4, 4, 3))
    n[..., 2] = 1.0
    maps = SVBRDFMaps(np.full((4, 4, 3), 0.3), n, 0.2, 0.25)
    planar = render_planar(maps, env)
    assert np.allclose(planar.pixels, planar.pixels[0, 0], atol=1e-12)
    assert np.allclose(planar.pixels[0, 0], sphere.pixels[8, 8], rtol=1e-9)


def test_planar_matches_sphere_per_normal(rng):
    env = generate_probe(4, SMALL)
    normals, mask = sphere_normals(32)
    pick = rng.choice(np.flatnonzero(normals[:, 2] > 0.05), size=10, replace=False)
    maps = SVBRDFMaps(np.full((2, 5, 3), 0.45), normals[pick].reshape(2, 5, 3), 0.15, 0.3)
    planar = render_planar(maps, env).pixels.reshape(10, 3)
    sphere = render_sphere(WardBRDF(0.45, 0.15, 0.3), env, resolution=32).pixels[mask][pick]
    assert np.allclose(planar, sphere, rtol=1e-9, atol=1e-12)


def test_diffuse_only_is_albedo_times_irradiance_over_pi(rng):
    from sabrdf.lighting import irradiance

    env = generate_probe(6, SMALL)
    n = rng.normal(size=(3, 3, 3))
    n[..., 2] = np.abs(n[..., 2]) + 0.2
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    diffuse = rng.uniform(0.1, 0.9, size=(3, 3, 3))
    img = render_planar(SVBRDFMaps(diffuse, n, 0.0, 0.2), env)
    expected = diffuse * irradiance(env, n.reshape(-1, 3)).reshape(3, 3, 3) / np.pi
    assert np.allclose(img.pixels, expected, rtol=1e-9)


def test_render_is_linear_in_radiance():
    a, b = generate_probe(7, SMALL), generate_probe(8, SMALL)
    brdf = WardBRDF(0.5, 0.4, 0.1)
    combo = EnvironmentMap(2.0 * a.radiance + 0.5 * b.radiance)
    lhs = render_sphere(brdf, combo, 16).pixels
    rhs = 2.0 * render_sphere(brdf, a, 16).pixels + 0.5 * render_sphere(brdf, b, 16).pixels
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-14)


def test_rotation_argument_matches_rotated_env():
    env = generate_probe(9, SMALL)
    brdf = WardBRDF(0.5, 0.3, 0.2)
    angle = 2 * np.pi * 5 / 16
    assert np.array_equal(render_sphere(brdf, env, 16, angle).pixels, render_sphere(brdf, rotate(env, angle), 16).pixels)


@pytest.mark.parametrize("c", [0.1, 0.5, 3.0])
def test_exposure_scale_invariance(c):
    env = generate_probe(10, SMALL)
    brdf = WardBRDF(0.3, 0.0, 0.2)
    a = finalize(render_sphere(brdf, env, 16))
    b = finalize(render_sphere(brdf.scaled(c), env, 16))
    assert np.allclose(a.pixels, b.pixels, atol=1e-12)
    assert np.isclose(b.exposure * c, a.exposure)


def test_finalize_constant_image():
    img = RenderedImage(np.full((4, 4, 1), 0.25), np.ones((4, 4), bool))
    out = finalize(img)
    assert out.exposure == pytest.approx(4.0)
    assert np.allclose(out.pixels, 1.0)
    assert out.clamped and not out.gamma_encoded


def test_finalize_unit_range_unchanged():
    px = np.linspace(0, 1, 100).reshape(10, 10, 1)
    px[-1, -1] = 1.0
    px[-1, -2] = 1.0
    img = RenderedImage(px, np.ones((10, 10), bool))
    out = finalize(img, mode=1.0)
    assert np.array_equal(out.pixels, px)


def test_finalize_ignores_background():
    px = np.zeros((4, 4, 1))
    px[:2] = 0.5
    px[2:] = 100.0
    mask = np.zeros((4, 4), bool)
    mask[:2] = True
    out = finalize(RenderedImage(px, mask))
    assert out.exposure == pytest.approx(2.0)


def test_finalize_black_image_warns():
    img = RenderedImage(np.zeros((4, 4, 1)), np.ones((4, 4), bool))
    with pytest.warns(RuntimeWarning):
        out = finalize(img)
    assert out.exposure == 1.0


def test_finalize_rejects_double_and_bad_mode():
    img = RenderedImage(np.full((2, 2, 1), 0.5), np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        finalize(finalize(img))
    with pytest.raises(ValueError):
        finalize(img, mode="manual")
    with pytest.raises(ValueError):
        finalize(img, mode=-1.0)


def test_gamma_round_trip(rng):
    x = rng.uniform(0, 1, size=1000)
    assert np.allclose(gamma_decode(gamma_encode(x)), x, atol=1e-12)
    img = RenderedImage(x.reshape(10, 100, 1), np.ones((10, 100), bool))
    out = finalize(img, mode=1.0, gamma=True)
    assert out.gamma_encoded
    assert np.allclose(gamma_decode(out.pixels), x.reshape(10, 100, 1), atol=1e-12)


def test_luminance_weights():
    px = np.array([[[1.0, 1.0, 1.0]]])
    assert luminance(px)[0, 0] == pytest.approx(1.0)
    assert luminance(np.array([[[0.7]]]))[0, 0] == 0.7


def test_image_mse_examples():
    mask = np.ones((2, 2), bool)
    a = RenderedImage(np.zeros((2, 2, 1)), mask)
    b = RenderedImage(np.full((2, 2, 1), 0.5), mask)
    assert image_mse(a, a) == 0.0
    assert image_mse(a, b) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        image_mse(a, RenderedImage(np.zeros((3, 3, 1)), np.ones((3, 3), bool)))
    with pytest.raises(ValueError):
        image_mse(a, finalize(b))


def test_mask_shape_validated():
    with pytest.raises(ValueError):
        RenderedImage(np.zeros((2, 2, 1)), np.ones((3, 3), bool))


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        render_sphere(WardBRDF([0.1, 0.2], 0.1, 0.1), constant_env([1.0, 1.0, 1.0], 8), 16)
