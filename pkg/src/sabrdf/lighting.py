"""Equirectangular environment maps: probes, white balance, rotation, irradiance.

Texel ``(i, j)`` of an ``H x W`` map is centred at polar angle
``theta = (i + 0.5) * pi / H`` (measured from +z) and azimuth
``phi = (j + 0.5) * 2 * pi / W`` (measured from +x towards +y).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np

Z_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class EnvironmentMap:
    radiance: np.ndarray
    white_balanced: bool = False
    id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        r = np.asarray(self.radiance, dtype=np.float64)
        if r.ndim == 2:
            r = r[..., None]
        if r.ndim != 3 or r.shape[2] not in (1, 3):
            raise ValueError(f"radiance must be HxWxC with C in (1, 3), got {r.shape}")
        h, w, _ = r.shape
        if h < 4 or w != 2 * h:
            raise ValueError(f"equirectangular map must have H >= 4 and W = 2H, got {h}x{w}")
        if not np.all(np.isfinite(r)) or r.min() < 0:
            raise ValueError("radiance must be finite and non-negative")
        r.setflags(write=False)
        object.__setattr__(self, "radiance", r)

    @property
    def shape(self):
        return self.radiance.shape

    @property
    def channels(self) -> int:
        return self.radiance.shape[2]


@lru_cache(maxsize=32)
def texel_geometry(height: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Texel centre directions ``(H, W, 3)``, solid angles ``(H, W)`` and first moments ``(H, W, 3)``.

    The first moment of a texel is the exact integral of the unit direction
    over its footprint, so ``moment @ n`` is the exact integral of
    ``cos(theta)`` for any texel entirely above the horizon of ``n``.
    """
    edges_t = np.arange(height + 1) * np.pi / height
    edges_p = np.arange(width + 1) * 2.0 * np.pi / width
    theta = 0.5 * (edges_t[:-1] + edges_t[1:])
    phi = 0.5 * (edges_p[:-1] + edges_p[1:])
    t0, t1 = edges_t[:-1, None], edges_t[1:, None]
    p0, p1 = edges_p[None, :-1], edges_p[None, 1:]
    st = np.sin(theta)[:, None]
    dirs = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(np.cos(theta)[:, None], (height, width))],
        axis=-1,
    )
    d_phi = p1 - p0
    d_omega = d_phi * (np.cos(t0) - np.cos(t1))
    # int sin^2 = (t - sin t cos t) / 2 ; int sin cos = sin^2 / 2
    sin2_int = 0.5 * ((t1 - t0) - (np.sin(t1) * np.cos(t1) - np.sin(t0) * np.cos(t0)))
    sincos_int = 0.5 * (np.sin(t1) ** 2 - np.sin(t0) ** 2)
    moment = np.stack(
        [sin2_int * (np.sin(p1) - np.sin(p0)), sin2_int * (np.cos(p0) - np.cos(p1)), np.broadcast_to(sincos_int * d_phi, (height, width))],
        axis=-1,
    )
    for arr in (dirs, d_omega, moment):
        arr.setflags(write=False)
    return dirs, d_omega, moment


_GAUSS_NODES = 4


@lru_cache(maxsize=32)
def _corner_dirs(height: int, width: int) -> np.ndarray:
    t = np.arange(height + 1) * np.pi / height
    p = np.arange(width + 1) * 2.0 * np.pi / width
    st = np.sin(t)[:, None]
    return np.stack([st * np.cos(p), st * np.sin(p), np.broadcast_to(np.cos(t)[:, None], (height + 1, width + 1))], axis=-1)


def _arc_integral(a, b, phi_n, p0, p1):
    """``int_{p0}^{p1} max(a cos(phi - phi_n) + b, 0) dphi`` with ``a >= 0``, elementwise."""
    tiny = a < 1e-15
    a_safe = np.where(tiny, 1.0, a)
    c = np.clip(-b / a_safe, -1.0, 1.0)
    half = np.arccos(c)
    total = np.zeros(np.broadcast(a, b, phi_n, p0, p1).shape)
    # The positive arc is centred on phi_n (mod 2 pi); texels live in [0, 2 pi].
    for k in (-1, 0, 1, 2):
        centre = phi_n + 2.0 * np.pi * k
        lo = np.maximum(p0, centre - half)
        hi = np.minimum(p1, centre + half)
        part = a * (np.sin(hi - centre) - np.sin(lo - centre)) + b * (hi - lo)
        total += np.where(hi > lo, part, 0.0)
    # Full circle positive or a vertical normal: the integrand is never clipped.
    whole = a * (np.sin(p1 - phi_n) - np.sin(p0 - phi_n)) + b * (p1 - p0)
    unclipped = tiny | (-b / a_safe <= -1.0)
    total = np.where(unclipped, whole, total)
    return np.where(tiny & (b <= 0), 0.0, total)


@lru_cache(maxsize=4)
def _gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _straddle_weights(normals: np.ndarray, rows: np.ndarray, cols: np.ndarray, height: int) -> np.ndarray:
    """Clipped cosine integral over texels ``(rows, cols)`` for the paired ``normals``.

    The azimuthal integral is evaluated in closed form. The polar range is
    split where the horizon meets a texel's azimuth edges or turns tangent
    to a parallel, so each piece is smooth and Gauss-Legendre converges fast.
    """
    width = 2 * height
    x, w = _gauss(_GAUSS_NODES)
    t0 = rows * np.pi / height
    t1 = (rows + 1) * np.pi / height
    p0 = cols * 2.0 * np.pi / width
    p1 = (cols + 1) * 2.0 * np.pi / width
    nz = normals[:, 2]
    r = np.hypot(normals[:, 0], normals[:, 1])
    phi_n = np.arctan2(normals[:, 1], normals[:, 0])
    edge0 = np.mod(np.arctan2(-nz, r * np.cos(p0 - phi_n)), np.pi)
    edge1 = np.mod(np.arctan2(-nz, r * np.cos(p1 - phi_n)), np.pi)
    tangent = np.arctan2(np.abs(nz), r)
    cuts = np.stack([t0, edge0, edge1, tangent, np.pi - tangent, t1], axis=1)
    cuts = np.sort(np.clip(cuts, t0[:, None], t1[:, None]), axis=1)
    lo, hi = cuts[:, :-1, None], cuts[:, 1:, None]
    theta = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    st = np.sin(theta)
    g = _arc_integral(st * r[:, None, None], np.cos(theta) * nz[:, None, None], phi_n[:, None, None],
                      p0[:, None, None], p1[:, None, None])
    return np.sum(0.5 * (hi - lo)[..., 0] * ((g * st) @ w), axis=1)


def cosine_weights(normals: np.ndarray, height: int) -> np.ndarray:
    """``(P, T)`` integrals of ``max(cos, 0)`` over every texel for each normal.

    Texels entirely above or below the horizon are integrated exactly via
    their first moments. For texels the horizon may cross, the azimuthal
    integral of the clipped cosine is done in closed form and the polar
    one with piecewise Gauss-Legendre quadrature.
    """
    width = 2 * height
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    moment = texel_geometry(height, width)[2].reshape(-1, 3)
    weights = np.maximum(normals @ moment.T, 0.0)
    corners = _corner_dirs(height, width)
    cd = np.tensordot(normals, corners, axes=([1], [2]))
    quad = np.stack([cd[:, :-1, :-1], cd[:, 1:, :-1], cd[:, :-1, 1:], cd[:, 1:, 1:]], axis=-1)
    # Margin covers a horizon arc that bulges into a texel between corners.
    margin = np.pi / height
    straddle = (quad.min(axis=-1) < margin) & (quad.max(axis=-1) > -margin)
    p_idx, t_idx = np.nonzero(straddle.reshape(len(normals), -1))
    if p_idx.size:
        rows, cols = np.divmod(t_idx, width)
        weights[p_idx, t_idx] = _straddle_weights(normals[p_idx], rows, cols, height)
    return weights


def irradiance(env: EnvironmentMap, n) -> np.ndarray:
    """Cosine-weighted texel sum over the hemisphere around ``n``.

    ``n`` may be a single normal ``(3,)`` or a stack ``(..., 3)``; the result
    has shape ``(..., C)``. See :func:`cosine_weights` for the quadrature.
    """
    h, w, c = env.shape
    n = np.asarray(n, dtype=np.float64)
    weights = cosine_weights(n.reshape(-1, 3), h)
    return (weights @ env.radiance.reshape(-1, c)).reshape(n.shape[:-1] + (c,))


def white_balance(env: EnvironmentMap) -> EnvironmentMap:
    """Scale channels so the upward irradiance is colour neutral.

    The mean of the three channel irradiances is preserved.
    """
    if env.channels != 3:
        raise ValueError("white balance needs a 3-channel map")
    s = irradiance(env, Z_UP)
    if np.any(s <= 0):
        raise ValueError(f"channel irradiance must be positive, got {s}")
    gain = s.mean() / s
    return replace(env, radiance=env.radiance * gain, white_balanced=True)


def rotate(env: EnvironmentMap, angle: float) -> EnvironmentMap:
    """Rotate about +z by ``angle`` radians, snapped to whole texel columns."""
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    w = env.shape[1]
    shift = int(np.rint(angle / (2.0 * np.pi) * w)) % w
    if shift == 0:
        return env
    return replace(env, radiance=np.roll(env.radiance, shift, axis=1))


@dataclass(frozen=True)
class ProbeSpec:
    """Parameters of the procedural light-probe generator."""

    height: int = 16
    channels: int = 3
    num_lobes: int = 3
    sharpness_range: tuple[float, float] = (4.0, 60.0)
    ambient_range: tuple[float, float] = (0.05, 0.4)
    intensity_range: tuple[float, float] = (0.5, 4.0)
    color_jitter: float = 0.3

    def __post_init__(self):
        for name in ("sharpness_range", "ambient_range", "intensity_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi")
        if self.num_lobes < 0 or self.height < 4 or self.channels not in (1, 3):
            raise ValueError("invalid probe spec")
        if self.ambient_range[1] <= 0 and self.num_lobes == 0:
            raise ValueError("probe would be black")


def generate_probe(seed: int, spec: ProbeSpec = ProbeSpec()) -> EnvironmentMap:
    """Ambient term plus von Mises-Fisher lobes; pure function of ``(seed, spec)``.

    Radiance is rounded to float32 so the map survives binary storage
    unchanged.
    """
    rng = np.random.default_rng([seed, 0x5AE])
    h, w, c = spec.height, 2 * spec.height, spec.channels
    dirs = texel_geometry(h, w)[0]

    def tint():
        if c == 1:
            return np.ones(1)
        return 1.0 + spec.color_jitter * rng.uniform(-1.0, 1.0, size=3)

    radiance = np.broadcast_to(rng.uniform(*spec.ambient_range) * tint(), (h, w, c)).copy()
    for _ in range(spec.num_lobes):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        # Bias lobe axes to the upper hemisphere where the sample sees them.
        axis[2] = abs(axis[2])
        kappa = np.exp(rng.uniform(*np.log(spec.sharpness_range)))
        power = rng.uniform(*spec.intensity_range) * tint()
        lobe = np.exp(kappa * (dirs @ axis - 1.0))
        radiance += lobe[..., None] * power
    env = EnvironmentMap(radiance, id=f"probe-{seed}", seed=seed)
    if c == 3:
        env = white_balance(env)
    else:
        env = replace(env, white_balanced=True)
    return replace(env, radiance=env.radiance.astype(np.float32).astype(np.float64))


def constant_env(value, height: int = 16) -> EnvironmentMap:
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    radiance = np.broadcast_to(value, (height, 2 * height, value.size)).copy()
    return EnvironmentMap(radiance, id=f"constant-{value.tolist()}")
