"""Deterministic image-based-lighting renderer and the exposure/clamp/gamma pipeline.

Both cameras are orthographic and look down -z, so the outgoing direction is
+z for every pixel. Image row 0 is +y, column 0 is -x.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Union

import numpy as np

from .lighting import EnvironmentMap, cosine_weights, rotate, texel_geometry
from .reflectance import SVBRDFMaps, WardBRDF

log = logging.getLogger(__name__)

GAMMA = 2.2
VIEW = np.array([0.0, 0.0, 1.0])
_LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class RenderedImage:
    pixels: np.ndarray
    mask: np.ndarray
    exposure: float = 1.0
    clamped: bool = False
    gamma_encoded: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[..., None]
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != px.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} != image shape {px.shape[:2]}")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.pixels.shape


class _Shading:
    """Per-pixel/per-texel geometry terms for a fixed set of normals.

    Rendering is ``rho_d/pi * (D @ E) + rho_s * (S(alpha) @ E)`` where
    ``D`` holds the clipped texel cosine weights and ``S`` is the Ward lobe
    (evaluated at texel centres) times the same weights. Both are
    independent of the radiance values, so a sphere's geometry is computed
    once and reused across environments.
    """

    def __init__(self, normals: np.ndarray, env_height: int):
        dirs = texel_geometry(env_height, 2 * env_height)[0].reshape(-1, 3)
        cos_i = normals @ dirs.T
        cos_o = normals @ VIEW
        weight = cosine_weights(normals, env_height)
        visible = (cos_i > 0) & (cos_o[:, None] > 0) & (weight > 0)
        h = dirs + VIEW
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        cos_d2 = (normals @ h.T) ** 2
        self.tan2 = np.where(visible, (1.0 - cos_d2) / np.maximum(cos_d2, 1e-12), np.inf)
        self.diffuse = np.where(cos_o[:, None] > 0, weight, 0.0) / np.pi
        safe = np.where(visible, cos_i * cos_o[:, None], 1.0)
        self.specular = np.where(visible, weight / np.sqrt(safe), 0.0) / (4.0 * np.pi)

    def shade(self, radiance: np.ndarray, rho_d: np.ndarray, rho_s: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Return ``(P, C)`` outgoing radiance; ``rho_d`` is ``(P, C)`` or ``(C,)``."""
        n_ch = radiance.shape[1]
        out = rho_d * (self.diffuse @ radiance)
        for c in range(n_ch):
            if rho_s[c] == 0:
                continue
            a2 = alpha[c] ** 2
            lobe = self.specular * np.exp(-self.tan2 / a2) / a2
            out[:, c] += rho_s[c] * (lobe @ radiance[:, c])
        return out


def sphere_normals(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Normals ``(P, 3)`` of covered pixels and the ``(R, R)`` coverage mask."""
    coords = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x = coords[None, :].repeat(resolution, axis=0)
    y = -coords[:, None].repeat(resolution, axis=1)
    r2 = x**2 + y**2
    mask = r2 < 1.0
    normals = np.stack([x[mask], y[mask], np.sqrt(1.0 - r2[mask])], axis=-1)
    return normals, mask


@lru_cache(maxsize=8)
def _sphere_shading(resolution: int, env_height: int) -> tuple[_Shading, np.ndarray]:
    normals, mask = sphere_normals(resolution)
    return _Shading(normals, env_height), mask


def _channels_to(arr: np.ndarray, c: int) -> np.ndarray:
    if arr.size == c:
        return arr
    if arr.size == 1:
        return np.repeat(arr, c)
    if c == 1:
        # Monochrome lighting with a colour BRDF: shade each channel under the same light.
        return arr
    raise ValueError(f"cannot match {arr.size} BRDF channels to {c} lighting channels")


def _prepare_env(env: EnvironmentMap, n_channels: int, rotation: float) -> np.ndarray:
    env = rotate(env, rotation)
    radiance = env.radiance.reshape(-1, env.channels)
    if env.channels == 1 and n_channels > 1:
        radiance = np.repeat(radiance, n_channels, axis=1)
    return radiance


def render_sphere(brdf: WardBRDF, env: EnvironmentMap, resolution: int = 32, rotation: float = 0.0) -> RenderedImage:
    """Render a homogeneous sphere filling the frame; background pixels are 0."""
    if resolution < 16:
        raise ValueError("sphere resolution must be >= 16")
    n_ch = max(brdf.channels, env.channels)
    rho_d = _channels_to(brdf.rho_d, n_ch)
    rho_s = _channels_to(brdf.rho_s, n_ch)
    alpha = _channels_to(brdf.alpha, n_ch)
    shading, mask = _sphere_shading(resolution, env.shape[0])
    radiance = _prepare_env(env, n_ch, rotation)
    values = shading.shade(radiance, rho_d, rho_s, alpha)
    pixels = np.zeros((resolution, resolution, n_ch))
    pixels[mask] = values
    prov = {
        "brdf": {"rho_d": rho_d.tolist(), "rho_s": rho_s.tolist(), "alpha": alpha.tolist()},
        "env": env.id,
        "rotation": float(rotation),
    }
    return RenderedImage(pixels, mask, provenance=prov)


def render_planar(maps: SVBRDFMaps, env: EnvironmentMap, rotation: float = 0.0, maps_id: str = "") -> RenderedImage:
    """Fronto-parallel orthographic render of a planar SVBRDF sample."""
    h, w = maps.shape
    shading = _Shading(maps.normals.reshape(-1, 3), env.shape[0])
    radiance = _prepare_env(env, 3, rotation)
    values = shading.shade(radiance, maps.diffuse.reshape(-1, 3), maps.rho_s, maps.alpha)
    prov = {"maps": maps_id, "env": env.id, "rotation": float(rotation)}
    return RenderedImage(values.reshape(h, w, 3), np.ones((h, w), dtype=bool), provenance=prov)


def luminance(pixels: np.ndarray) -> np.ndarray:
    if pixels.shape[-1] == 1:
        return pixels[..., 0]
    return pixels @ _LUMA


def gamma_encode(x):
    return np.power(np.clip(x, 0.0, None), 1.0 / GAMMA)


def gamma_decode(x):
    return np.power(np.clip(x, 0.0, None), GAMMA)


def finalize(image: RenderedImage, mode: Union[str, float] = "auto", gamma: bool = False) -> RenderedImage:
    """Expose, clamp to [0, 1] and optionally gamma-encode.

    ``mode="auto"`` scales by ``1 / p99`` of the foreground luminance; a
    number is used as a fixed exposure scale.
    """
    if image.clamped:
        raise ValueError("image is already finalized")
    if isinstance(mode, str):
        if mode != "auto":
            raise ValueError(f"unknown exposure mode {mode!r}")
        lum = luminance(image.pixels)[image.mask]
        p99 = float(np.percentile(lum, 99)) if lum.size else 0.0
        if p99 <= 0:
            warnings.warn("auto-exposure on a black image; using k = 1", RuntimeWarning, stacklevel=2)
            k = 1.0
        else:
            k = 1.0 / p99
    else:
        k = float(mode)
        if not k > 0:
            raise ValueError("exposure must be positive")
    pixels = np.clip(image.pixels * k, 0.0, 1.0)
    if gamma:
        pixels = gamma_encode(pixels)
    prov = dict(image.provenance, exposure=k)
    return replace(image, pixels=pixels, exposure=k, clamped=True, gamma_encoded=gamma, provenance=prov)


def image_mse(a: RenderedImage, b: RenderedImage) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if (a.clamped, a.gamma_encoded) != (b.clamped, b.gamma_encoded):
        raise ValueError("images were finalized differently")
    return float(np.mean((a.pixels - b.pixels) ** 2))
