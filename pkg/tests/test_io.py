import struct

import numpy as np
import pytest
from PIL import Image

from sabrdf import io
from sabrdf.lighting import ProbeSpec, generate_probe
from sabrdf.models import NetworkSpec, build_brdfnet, build_decoder_net
from sabrdf.reflectance import WardBRDF
from sabrdf.renderer import RenderedImage, finalize, render_sphere


def test_env_round_trip_bit_exact(tmp_path):
    env = generate_probe(4, ProbeSpec(height=8))
    path = io.save_env(env, tmp_path / "p.saem")
    back = io.load_env(path)
    assert np.array_equal(back.radiance, env.radiance)
    assert (back.id, back.seed, back.white_balanced) == (env.id, env.seed, env.white_balanced)
    assert path.read_bytes()[:4] == b"SAEM"
    assert len(path.read_bytes()) == 4 + 16 + 4 * env.radiance.size


def test_image_round_trip_bit_exact(tmp_path):
    env = generate_probe(5, ProbeSpec(height=8, channels=1))
    img = finalize(render_sphere(WardBRDF(0.4, 0.2, 0.1), env, 16), gamma=True)
    # Containers hold float32 pixels; an image that went through f32 once round-trips exactly.
    img32 = RenderedImage(img.pixels.astype(np.float32), img.mask, img.exposure, img.clamped, img.gamma_encoded, img.provenance)
    io.save_image(img32, tmp_path / "a.saim")
    back = io.load_image(tmp_path / "a.saim")
    assert np.array_equal(back.pixels, img32.pixels)
    assert np.array_equal(back.mask, img.mask)
    assert back.exposure == img.exposure and back.clamped and back.gamma_encoded
    assert back.provenance["env"] == env.id
    io.save_image(back, tmp_path / "b.saim")
    assert (tmp_path / "a.saim").read_bytes() == (tmp_path / "b.saim").read_bytes()


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "<i4", "<i8", "u1"])
@pytest.mark.parametrize("shape", [(), (0,), (3,), (2, 3, 4)])
def test_tensor_round_trip(tmp_path, dtype, shape, rng):
    arr = (rng.normal(size=shape) * 50).astype(dtype)
    io.save_tensor(arr, tmp_path / "t.satn")
    back = io.load_tensor(tmp_path / "t.satn")
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_tensor_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(io.FormatError):
        io.save_tensor(np.zeros(2, dtype=np.complex64), tmp_path / "c.satn")


def test_corrupt_files_raise_format_error(tmp_path):
    env = generate_probe(1, ProbeSpec(height=4))
    p = io.save_env(env, tmp_path / "e.saem")
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(io.FormatError):
        io.load_env(p)
    bad = tmp_path / "x.satn"
    bad.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(io.FormatError):
        io.load_tensor(bad)
    bad.write_bytes(b"SATN" + struct.pack("<3I", 99, 1, 0))
    with pytest.raises(io.FormatError):
        io.load_tensor(bad)
    bad.write_bytes(b"SATN" + struct.pack("<3I", 1, 42, 0))
    with pytest.raises(io.FormatError):
        io.load_tensor(bad)
    with pytest.raises(io.FormatError):
        io.load_image(bad)


def test_png_is_deterministic_and_black_background(tmp_path):
    env = generate_probe(2, ProbeSpec(height=8))
    img = finalize(render_sphere(WardBRDF(0.5, 0.3, 0.2), env, 16))
    io.save_png(img, tmp_path / "a.png")
    io.save_png(img, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    arr = np.asarray(Image.open(tmp_path / "a.png"))
    assert arr.shape == (16, 16, 3)
    assert not arr[~img.mask].any()


@pytest.mark.parametrize("builder", [build_brdfnet, build_decoder_net])
def test_checkpoint_round_trip_bit_exact(tmp_path, builder, rng):
    spec = NetworkSpec(input_size=16, in_channels=3, encoder_widths=(4, 8), fc_hidden=12, seed=2)
    g = builder(spec)
    x = rng.uniform(size=(3, 3, 16, 16)).astype(np.float32)
    g.forward(x, train=True)  # move batch-norm running statistics off their defaults
    io.save_checkpoint(g, tmp_path / "ck", {"note": "x"})
    h, meta = io.load_checkpoint(tmp_path / "ck")
    assert meta == {"note": "x"}
    assert h.architecture() == g.architecture()
    for k, v in g.state().items():
        assert h.state()[k].dtype == v.dtype and np.array_equal(h.state()[k], v)
    assert np.array_equal(h.forward(x), g.forward(x))


def test_checkpoint_float64_and_errors(tmp_path):
    g = build_brdfnet(NetworkSpec(input_size=8, encoder_widths=(2,), fc_hidden=3), dtype=np.float64)
    io.save_checkpoint(g, tmp_path / "ck")
    h, _ = io.load_checkpoint(tmp_path / "ck")
    assert h.dtype == np.float64
    with pytest.raises(io.FormatError):
        io.load_checkpoint(tmp_path / "missing")
    (tmp_path / "notck").mkdir()
    (tmp_path / "notck" / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(io.FormatError):
        io.read_manifest(tmp_path / "notck")
