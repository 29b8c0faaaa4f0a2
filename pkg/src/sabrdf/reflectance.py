"""Ward reflectance model and the parameter-space transforms used by the nets.

Two relative parameterizations are supported:

* SVBRDF convention: albedos are divided by ``s = 2 * mean(rho_d)`` so the
  mean relative diffuse albedo is 0.5; specular albedo and roughness are
  stored in log space.
* BRDF-net convention: the specular albedo is expressed as the ratio
  ``rho_s / rho_d``; roughness in log space.
"""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ALPHA_MIN = 0.02
ALPHA_MAX = 1.0
ALBEDO_MIN = 0.05
ALBEDO_MAX = 1.0

_COS2_FLOOR = 1e-12


def _as_channels(value, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.ndim != 1 or arr.size not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class WardBRDF:
    """Homogeneous isotropic Ward BRDF with per-channel parameters."""

    rho_d: np.ndarray
    rho_s: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        rho_d = _as_channels(self.rho_d, "rho_d")
        rho_s = _as_channels(self.rho_s, "rho_s")
        alpha = _as_channels(self.alpha, "alpha")
        n = max(rho_d.size, rho_s.size, alpha.size)
        rho_d, rho_s, alpha = (np.broadcast_to(a, (n,)).copy() for a in (rho_d, rho_s, alpha))
        if np.any(alpha <= 0):
            raise ValueError("alpha must be > 0")
        object.__setattr__(self, "rho_d", rho_d)
        object.__setattr__(self, "rho_s", rho_s)
        object.__setattr__(self, "alpha", alpha)

    @property
    def channels(self) -> int:
        return self.rho_d.size

    def scaled(self, c: float) -> "WardBRDF":
        return WardBRDF(self.rho_d * c, self.rho_s * c, self.alpha)


@dataclass(frozen=True)
class SVBRDFMaps:
    """Spatially varying diffuse albedo and normals with a homogeneous specular lobe."""

    diffuse: np.ndarray
    normals: np.ndarray
    rho_s: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        diffuse = np.asarray(self.diffuse, dtype=np.float64)
        normals = np.asarray(self.normals, dtype=np.float64)
        if diffuse.ndim != 3 or diffuse.shape[2] != 3:
            raise ValueError(f"diffuse must be HxWx3, got {diffuse.shape}")
        if normals.shape != diffuse.shape:
            raise ValueError(f"normals shape {normals.shape} != diffuse shape {diffuse.shape}")
        if diffuse.min() < 0 or diffuse.max() > 1:
            raise ValueError("diffuse albedo must lie in [0, 1]")
        length = np.linalg.norm(normals, axis=-1)
        if np.abs(length - 1).max() > 1e-5 or normals[..., 2].min() <= 0:
            raise ValueError("normals must be unit length with positive z")
        rho_s = np.broadcast_to(_as_channels(self.rho_s, "rho_s"), (3,)).copy()
        alpha = np.broadcast_to(_as_channels(self.alpha, "alpha"), (3,)).copy()
        if np.any(alpha <= 0):
            raise ValueError("alpha must be > 0")
        object.__setattr__(self, "diffuse", diffuse)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "rho_s", rho_s)
        object.__setattr__(self, "alpha", alpha)

    @property
    def shape(self) -> tuple[int, int]:
        return self.diffuse.shape[:2]


@dataclass(frozen=True)
class RelativeParams:
    """Network-space parameters (relative diffuse, log-relative specular, log roughness)."""

    rho_d_rel: np.ndarray
    rho_s_logrel: np.ndarray
    alpha_log: np.ndarray
    normals_enc: Optional[np.ndarray] = None


@dataclass(frozen=True)
class DirectionPair:
    w_i: np.ndarray
    w_o: np.ndarray
    n: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        for name in ("w_i", "w_o", "n"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape[-1] != 3 or np.abs(np.linalg.norm(v, axis=-1) - 1).max() > 1e-9:
                raise ValueError(f"{name} must be unit 3-vectors")
            object.__setattr__(self, name, v)


def ward(rho_d, rho_s, alpha, w_i, w_o, n) -> np.ndarray:
    """Vectorized Ward BRDF.

    Direction arrays have a trailing axis of 3 and broadcast against each
    other; albedos/roughness have a trailing channel axis. Returns an array
    of shape ``broadcast(dirs[..., :1], channels)``. Pairs below the horizon
    evaluate to 0.
    """
    rho_d = np.asarray(rho_d, dtype=np.float64)
    rho_s = np.asarray(rho_s, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")
    w_i, w_o, n = (np.asarray(v, dtype=np.float64) for v in (w_i, w_o, n))
    cos_i = np.sum(w_i * n, axis=-1)[..., None]
    cos_o = np.sum(w_o * n, axis=-1)[..., None]
    visible = (cos_i > 0) & (cos_o > 0)
    h = w_i + w_o
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    cos_d2 = np.sum(h * n, axis=-1)[..., None] ** 2
    tan2 = (1.0 - cos_d2) / np.maximum(cos_d2, _COS2_FLOOR)
    denom = np.sqrt(np.where(visible, cos_i * cos_o, 1.0))
    spec = rho_s * np.exp(-tan2 / alpha**2) / (4.0 * np.pi * alpha**2 * denom)
    return np.where(visible, rho_d / np.pi + spec, 0.0)


def eval_ward(brdf: WardBRDF, dirs: DirectionPair) -> np.ndarray:
    return ward(brdf.rho_d, brdf.rho_s, brdf.alpha, dirs.w_i, dirs.w_o, dirs.n)


def clamp_alpha(alpha):
    return np.clip(alpha, ALPHA_MIN, ALPHA_MAX)


def normalize_svbrdf(maps: SVBRDFMaps) -> tuple[RelativeParams, float]:
    """Map absolute SVBRDF parameters to the scale-free network space.

    Returns the relative parameters and the scale ``s = 2 * mean(rho_d)``
    that was divided out.
    """
    mean = float(maps.diffuse.mean())
    if mean <= 0:
        raise ValueError("diffuse albedo has zero mean; scale is undefined")
    if np.any(maps.rho_s <= 0):
        raise ValueError("rho_s must be > 0 for the log-relative encoding")
    s = 2.0 * mean
    params = RelativeParams(
        rho_d_rel=maps.diffuse / s,
        rho_s_logrel=np.log(maps.rho_s / s),
        alpha_log=np.log(maps.alpha),
        normals_enc=(maps.normals + 1.0) / 2.0,
    )
    return params, s


def normalize_brdfnet(brdf: WardBRDF) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rho_s / rho_d, log(alpha))``."""
    if np.any(brdf.rho_d <= 0):
        raise ValueError("rho_d must be > 0 for the ratio encoding")
    return brdf.rho_s / brdf.rho_d, np.log(brdf.alpha)


def decode_normals(normals_enc: np.ndarray) -> np.ndarray:
    n = 2.0 * np.asarray(normals_enc, dtype=np.float64) - 1.0
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    degenerate = length[..., 0] < 1e-12
    n = n / np.where(length < 1e-12, 1.0, length)
    n[degenerate] = (0.0, 0.0, 1.0)
    return n


def _clamp_counted(arr, lo, hi, name, counter: Optional[Counter]):
    out = np.clip(arr, lo, hi)
    n_clamped = int(np.count_nonzero(out != arr))
    if n_clamped:
        if counter is not None:
            counter[name] += n_clamped
        warnings.warn(f"{n_clamped} {name} values clamped to [{lo}, {hi}]", RuntimeWarning, stacklevel=3)
    return out


def denormalize(params: RelativeParams, scale: float, counter: Optional[Counter] = None) -> SVBRDFMaps:
    """Inverse of :func:`normalize_svbrdf` for a chosen absolute scale ``s``.

    Out-of-range albedos and roughness are clamped; ``counter`` (if given)
    accumulates the number of clamped values per field.
    """
    if scale <= 0:
        raise ValueError("scale must be > 0")
    if params.normals_enc is None:
        raise ValueError("params carry no normal map")
    diffuse = _clamp_counted(np.asarray(params.rho_d_rel) * scale, 0.0, 1.0, "diffuse", counter)
    rho_s = _clamp_counted(np.exp(params.rho_s_logrel) * scale, 0.0, 1.0, "rho_s", counter)
    alpha = _clamp_counted(np.exp(params.alpha_log), ALPHA_MIN, ALPHA_MAX, "alpha", counter)
    normals = decode_normals(params.normals_enc)
    # Decoded normals can dip below the horizon; lift them to the plane's upper half.
    if np.any(normals[..., 2] <= 0):
        normals = normals.copy()
        normals[..., 2] = np.maximum(normals[..., 2], 1e-6)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return SVBRDFMaps(diffuse=diffuse, normals=normals, rho_s=rho_s, alpha=alpha)


def denormalize_brdfnet(rho_s_rel, alpha_log, rho_d, counter: Optional[Counter] = None) -> WardBRDF:
    """Inverse of :func:`normalize_brdfnet` given a chosen diffuse albedo."""
    rho_d = np.asarray(rho_d, dtype=np.float64)
    rho_s = _clamp_counted(np.asarray(rho_s_rel) * rho_d, 0.0, 1.0, "rho_s", counter)
    alpha = _clamp_counted(np.exp(alpha_log), ALPHA_MIN, ALPHA_MAX, "alpha", counter)
    return WardBRDF(rho_d, rho_s, alpha)
