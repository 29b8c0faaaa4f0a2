"""Training/test data: parameter grids, subsampling, procedural SVBRDFs,
histogram-matched unlabeled selection, crops and rotations."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .lighting import EnvironmentMap
from .reflectance import ALBEDO_MAX, ALBEDO_MIN, ALPHA_MAX, ALPHA_MIN, SVBRDFMaps, WardBRDF
from .renderer import finalize, render_sphere


@dataclass(frozen=True)
class ParameterGrid:
    """Axis-aligned BRDF grid; points are ordered diffuse-major, roughness-minor."""

    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray

    def __post_init__(self):
        for name in ("diffuse", "specular", "roughness"):
            axis = np.asarray(getattr(self, name), dtype=np.float64)
            if axis.ndim != 1 or axis.size < 1 or np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} axis must be strictly increasing")
            object.__setattr__(self, name, axis)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.diffuse.size, self.specular.size, self.roughness.size)

    def __len__(self):
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """``(N, 3)`` array of ``(rho_d, rho_s, alpha)``."""
        d, s, r = np.meshgrid(self.diffuse, self.specular, self.roughness, indexing="ij")
        return np.stack([d.ravel(), s.ravel(), r.ravel()], axis=1)

    def unravel(self, ids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.unravel_index(np.asarray(ids), self.shape)


def build_grid(nd: int, ns: int, nr: int) -> ParameterGrid:
    """Uniform albedos in [0.05, 1]; log-uniform roughness in [0.02, 1]."""
    if min(nd, ns, nr) < 2:
        raise ValueError("each axis needs at least 2 samples")
    return ParameterGrid(
        np.linspace(ALBEDO_MIN, ALBEDO_MAX, nd),
        np.linspace(ALBEDO_MIN, ALBEDO_MAX, ns),
        np.exp(np.linspace(np.log(ALPHA_MIN), np.log(ALPHA_MAX), nr)),
    )


def midpoint_test_grid(grid: ParameterGrid) -> ParameterGrid:
    """Points halfway between consecutive samples (geometric mean on roughness)."""
    return ParameterGrid(
        0.5 * (grid.diffuse[1:] + grid.diffuse[:-1]),
        0.5 * (grid.specular[1:] + grid.specular[:-1]),
        np.sqrt(grid.roughness[1:] * grid.roughness[:-1]),
    )


@dataclass(frozen=True)
class UniformScheme:
    nd: int
    ns: int
    nr: int


@dataclass(frozen=True)
class RandomScheme:
    fraction: float
    seed: int = 1234


@dataclass(frozen=True)
class CenterScheme:
    """Keep points whose per-axis index lies in the central ``fraction`` of each axis."""

    fraction: float = 0.5


Scheme = Union[UniformScheme, RandomScheme, CenterScheme]


def _even_indices(n: int, k: int) -> np.ndarray:
    if not 2 <= k <= n:
        raise ValueError(f"cannot pick {k} evenly spaced samples from {n}")
    return np.unique(np.rint(np.linspace(0, n - 1, k)).astype(int))


def subsample(grid: ParameterGrid, scheme: Scheme) -> tuple[np.ndarray, np.ndarray]:
    """Split grid ids into ``(labeled, complement)``; both sorted."""
    n = len(grid)
    if isinstance(scheme, UniformScheme):
        di = _even_indices(grid.shape[0], scheme.nd)
        si = _even_indices(grid.shape[1], scheme.ns)
        ri = _even_indices(grid.shape[2], scheme.nr)
        d, s, r = np.meshgrid(di, si, ri, indexing="ij")
        labeled = np.ravel_multi_index((d.ravel(), s.ravel(), r.ravel()), grid.shape)
    elif isinstance(scheme, RandomScheme):
        k = math.floor(scheme.fraction * n)
        if k < 1:
            raise ValueError(f"fraction {scheme.fraction} of {n} points selects nothing")
        labeled = np.random.default_rng(scheme.seed).choice(n, size=k, replace=False)
    elif isinstance(scheme, CenterScheme):
        masks = []
        for size in grid.shape:
            idx = np.arange(size)
            pos = idx / (size - 1)
            masks.append(np.abs(pos - 0.5) <= scheme.fraction / 2 + 1e-12)
        d, s, r = grid.unravel(np.arange(n))
        keep = masks[0][d] & masks[1][s] & masks[2][r]
        labeled = np.flatnonzero(keep)
        if labeled.size == 0:
            raise ValueError("center region selects nothing")
    else:
        raise TypeError(f"unknown scheme {scheme!r}")
    labeled = np.sort(labeled)
    complement = np.setdiff1d(np.arange(n), labeled)
    return labeled, complement


def brdfnet_targets(points: np.ndarray) -> np.ndarray:
    """``(N, 2)`` targets ``(log(rho_s / rho_d), log(alpha))`` for grid points."""
    points = np.atleast_2d(points)
    return np.stack([np.log(points[:, 1] / points[:, 0]), np.log(points[:, 2])], axis=1)


@dataclass
class SphereSet:
    """Rendered sphere images with their grid ids, absolute parameters and lighting."""

    x: np.ndarray
    ids: np.ndarray
    points: np.ndarray
    lighting: list[tuple[int, float]] = field(default_factory=list)
    exposures: list[float] = field(default_factory=list)

    @property
    def targets(self) -> np.ndarray:
        return brdfnet_targets(self.points)

    def __len__(self):
        return len(self.ids)


def render_sphere_set(
    grid: ParameterGrid,
    ids: Sequence[int],
    probes: Sequence[EnvironmentMap],
    lightings_per_point: Optional[int] = None,
    resolution: int = 32,
    seed: int = 0,
    gamma: bool = False,
) -> SphereSet:
    """Render every id under several lightings.

    With ``lightings_per_point=None`` each point is rendered once per probe
    (with a random texel-snapped rotation); otherwise that many
    ``(probe, rotation)`` draws are made per point.
    """
    rng = np.random.default_rng([seed, 0x5E7])
    pts = grid.points()
    xs, out_ids, lights, exposures = [], [], [], []
    for gid in ids:
        if lightings_per_point is None:
            probe_ids = range(len(probes))
        else:
            probe_ids = rng.integers(len(probes), size=lightings_per_point)
        for p in probe_ids:
            width = probes[p].shape[1]
            rotation = float(rng.integers(width) * 2.0 * np.pi / width)
            rho_d, rho_s, alpha = pts[gid]
            img = finalize(render_sphere(WardBRDF(rho_d, rho_s, alpha), probes[p], resolution, rotation), "auto", gamma)
            xs.append(np.transpose(img.pixels, (2, 0, 1)))
            out_ids.append(gid)
            lights.append((int(p), rotation))
            exposures.append(img.exposure)
    out_ids = np.asarray(out_ids, dtype=int)
    return SphereSet(np.stack(xs).astype(np.float32), out_ids, pts[out_ids], lights, exposures)


# -- procedural SVBRDFs ---------------------------------------------------------


@dataclass(frozen=True)
class SVBRDFSpec:
    size: int = 64
    octaves: int = 4
    base_cells: int = 4
    normal_strength: float = 2.0
    flat: bool = False


def _value_noise(rng: np.random.Generator, size: int, octaves: int, base_cells: int) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1], periodic over the tile."""
    total = np.zeros((size, size))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        cells = base_cells * 2**o
        lattice = rng.uniform(size=(cells, cells))
        coords = (np.arange(size) + 0.5) * cells / size - 0.5
        i0 = np.floor(coords).astype(int)
        f = coords - i0
        f = f * f * (3 - 2 * f)
        a, b = i0 % cells, (i0 + 1) % cells
        rows = lattice[a][:, a] * (1 - f)[None, :] + lattice[a][:, b] * f[None, :]
        rows2 = lattice[b][:, a] * (1 - f)[None, :] + lattice[b][:, b] * f[None, :]
        total += amp * (rows * (1 - f)[:, None] + rows2 * f[:, None])
        norm += amp
        amp *= 0.5
    return total / norm


def generate_procedural_svbrdf(seed: int, spec: SVBRDFSpec = SVBRDFSpec()) -> SVBRDFMaps:
    """Two-tone value-noise albedo, height-field normals, random homogeneous specular."""
    rng = np.random.default_rng([seed, 0x5B])
    size = spec.size
    color_a = rng.uniform(0.1, 0.9, size=3)
    color_b = rng.uniform(0.1, 0.9, size=3)
    rho_s = np.full(3, rng.uniform(ALBEDO_MIN, ALBEDO_MAX))
    alpha = np.full(3, np.exp(rng.uniform(np.log(ALPHA_MIN), np.log(ALPHA_MAX))))
    if spec.flat:
        diffuse = np.broadcast_to(color_a, (size, size, 3)).copy()
        normals = np.broadcast_to([0.0, 0.0, 1.0], (size, size, 3)).copy()
        return SVBRDFMaps(diffuse, normals, rho_s, alpha)
    t = _value_noise(rng, size, spec.octaves, spec.base_cells)[..., None]
    diffuse = np.clip(color_a * (1 - t) + color_b * t, 0.0, 1.0)
    height = _value_noise(rng, size, spec.octaves, spec.base_cells)
    # Row index runs along -y.
    dh_dx = (np.roll(height, -1, axis=1) - np.roll(height, 1, axis=1)) * 0.5
    dh_dy = -(np.roll(height, -1, axis=0) - np.roll(height, 1, axis=0)) * 0.5
    k = spec.normal_strength
    normals = np.stack([-k * dh_dx, -k * dh_dy, np.ones_like(height)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return SVBRDFMaps(diffuse, normals, rho_s, alpha)


# -- unlabeled selection ------------------------------------------------------------


def _color_bins(images: np.ndarray, bins: int) -> np.ndarray:
    """``(N, C)`` per-channel bin index of each image's mean colour; images are ``(N, C, H, W)``."""
    mean = images.reshape(images.shape[0], images.shape[1], -1).mean(axis=2)
    return np.clip((mean * bins).astype(int), 0, bins - 1)


def select_unlabeled_subset(
    labeled_images: np.ndarray,
    pool: np.ndarray,
    k: int,
    rng: np.random.Generator,
    bins: int = 8,
    events: Optional[Counter] = None,
) -> np.ndarray:
    """Draw ``k`` pool indices whose mean-colour histograms follow the labeled ones.

    Each pool image is weighted by the product over channels of
    ``target_mass(bin) / pool_mass(bin)``. If fewer than ``k`` pool images
    have nonzero weight, the deficit is drawn uniformly from the rest
    (counted in ``events``).
    """
    if k > len(pool):
        raise ValueError(f"pool has {len(pool)} images, cannot select {k}")
    target = _color_bins(labeled_images, bins)
    pool_bins = _color_bins(pool, bins)
    weights = np.ones(len(pool))
    for c in range(pool.shape[1]):
        t_mass = np.bincount(target[:, c], minlength=bins) / len(target)
        p_mass = np.bincount(pool_bins[:, c], minlength=bins) / len(pool)
        weights *= t_mass[pool_bins[:, c]] / p_mass[pool_bins[:, c]]
    covered = np.flatnonzero(weights > 0)
    n_weighted = min(k, covered.size)
    chosen = rng.choice(covered, size=n_weighted, replace=False, p=weights[covered] / weights[covered].sum()) if n_weighted else np.array([], dtype=int)
    deficit = k - n_weighted
    if deficit:
        if events is not None:
            events["uniform_fallback"] += deficit
        rest = np.setdiff1d(np.arange(len(pool)), chosen)
        chosen = np.concatenate([chosen, rng.choice(rest, size=deficit, replace=False)])
    return np.sort(chosen.astype(int))


# -- crops and rotations ----------------------------------------------------------


def rotate_normals(normals: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate normal vectors by ``quarter_turns * 90`` degrees counter-clockwise about +z."""
    n = np.array(normals, dtype=np.float64, copy=True)
    for _ in range(quarter_turns % 4):
        n[..., 0], n[..., 1] = -n[..., 1].copy(), n[..., 0].copy()
    return n


def crop_rotate_arrays(arrays: dict, window: int, offset: tuple[int, int], quarter_turns: int) -> dict:
    """Apply one crop + rotation to ``H x W x C`` arrays; key ``"normals"`` also rotates its vectors."""
    r, c = offset
    out = {}
    for key, arr in arrays.items():
        crop = np.asarray(arr)[r : r + window, c : c + window]
        rot = np.rot90(crop, quarter_turns, axes=(0, 1))
        if key == "normals":
            rot = rotate_normals(rot, quarter_turns)
        out[key] = np.ascontiguousarray(rot)
    return out


def crop_rotate(image: np.ndarray, window: int, rng: np.random.Generator, maps: Optional[SVBRDFMaps] = None):
    """Random square crop and 90-degree-multiple rotation of an ``H x W x C`` image.

    The same transform is applied to ``maps`` if given. Returns
    ``(view, maps_view, (row, col, quarter_turns))``.
    """
    h, w = image.shape[:2]
    if window > min(h, w):
        raise ValueError(f"window {window} larger than image {h}x{w}")
    r = int(rng.integers(h - window + 1))
    c = int(rng.integers(w - window + 1))
    q = int(rng.integers(4))
    arrays = {"image": image}
    if maps is not None:
        arrays.update(diffuse=maps.diffuse, normals=maps.normals)
    out = crop_rotate_arrays(arrays, window, (r, c), q)
    maps_view = None
    if maps is not None:
        maps_view = SVBRDFMaps(out["diffuse"], out["normals"], maps.rho_s, maps.alpha)
    return out["image"], maps_view, (r, c, q)


# -- persistence ----------------------------------------------------------------

MANIFEST_FORMAT = "sabrdf-dataset"
SPLITS = ("train", "unlabeled", "test")


class ManifestError(ValueError):
    pass


@dataclass
class DatasetManifest:
    """Index of a dataset directory; every path is relative to it.

    ``samples`` entries hold ``id``, ``split``, ``unlabeled``, ``params``
    (``[rho_d, rho_s, alpha]``, or None for unlabeled samples), ``grid_id``,
    ``image``, ``env``, ``probe``, ``rotation``, ``crop`` and ``seed``.
    ``probes`` entries hold ``id``, ``set`` (``train`` or ``test``) and ``path``.
    """

    grids: dict
    probes: list[dict]
    samples: list[dict]
    provenance: dict = field(default_factory=dict)
    version: int = 1

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": self.version,
            "grids": self.grids,
            "probes": self.probes,
            "samples": self.samples,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("format") != MANIFEST_FORMAT:
            raise ManifestError("not a dataset manifest")
        return cls(d["grids"], d["probes"], d["samples"], d.get("provenance", {}), d.get("version", 1))

    def validate(self, root) -> None:
        """Check id uniqueness, split tags and that every referenced file exists."""
        root = Path(root)
        ids = [s["id"] for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate sample ids")
        for s in self.samples:
            if s["split"] not in SPLITS:
                raise ManifestError(f"{s['id']}: bad split {s['split']!r}")
            if (s["params"] is None) != bool(s["unlabeled"]):
                raise ManifestError(f"{s['id']}: params must be present exactly for labeled samples")
        for path in [s["image"] for s in self.samples] + [p["path"] for p in self.probes]:
            if not (root / path).is_file():
                raise ManifestError(f"missing file {path}")


def _grid_dict(grid: ParameterGrid) -> dict:
    return {"diffuse": grid.diffuse.tolist(), "specular": grid.specular.tolist(), "roughness": grid.roughness.tolist()}


def write_dataset(
    root,
    grid: ParameterGrid,
    test_grid: ParameterGrid,
    probes: Sequence[EnvironmentMap],
    test_probes: Sequence[EnvironmentMap],
    sets: dict,
    provenance: Optional[dict] = None,
    seeds: Optional[dict] = None,
    gamma: bool = False,
) -> DatasetManifest:
    """Write probes, sphere images and ``manifest.json`` under ``root``.

    ``sets`` maps split names to :class:`SphereSet`; unlabeled samples are
    stored without parameters or grid ids. Output is a pure function of
    the inputs, so regenerating gives byte-identical files.
    """
    from . import io
    from .renderer import RenderedImage, sphere_normals

    root = Path(root)
    (root / "probes").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    probe_entries = []
    for tag, group in (("train", probes), ("test", test_probes)):
        for i, env in enumerate(group):
            rel = f"probes/{tag}_{i:03d}.saem"
            io.save_env(env, root / rel)
            probe_entries.append({"id": env.id, "set": tag, "path": rel})
    seeds = seeds or {}
    samples = []
    for split, ss in sets.items():
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        if ss is None:
            continue
        group = test_probes if split == "test" else probes
        for k in range(len(ss)):
            sid = f"{split}-{k:05d}"
            rel = f"images/{sid}.saim"
            pixels = np.transpose(ss.x[k], (1, 2, 0))
            mask = sphere_normals(pixels.shape[0])[1]
            probe, rotation = ss.lighting[k]
            exposure = ss.exposures[k] if ss.exposures else 1.0
            io.save_image(RenderedImage(pixels, mask, exposure, True, gamma, {"env": group[probe].id, "rotation": rotation}), root / rel)
            unl = split == "unlabeled"
            samples.append({
                "id": sid,
                "split": split,
                "unlabeled": unl,
                "params": None if unl else [float(v) for v in ss.points[k]],
                "grid_id": None if unl else int(ss.ids[k]),
                "image": rel,
                "env": group[probe].id,
                "probe": int(probe),
                "rotation": rotation,
                "crop": None,
                "seed": seeds.get(split),
            })
    manifest = DatasetManifest({"train": _grid_dict(grid), "test": _grid_dict(test_grid)}, probe_entries, samples, provenance or {})
    (root / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest.validate(root)
    return manifest


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    return DatasetManifest.from_dict(data)


def load_dataset(root) -> tuple[DatasetManifest, dict, dict]:
    """Read a dataset directory back into ``(manifest, probes, sets)``.

    ``probes`` maps ``"train"``/``"test"`` to probe lists; ``sets`` maps
    split names to :class:`SphereSet` (unlabeled sets carry id -1 and NaN
    parameters).
    """
    from . import io

    root = Path(root)
    manifest = read_manifest(root)
    manifest.validate(root)
    probes = {"train": [], "test": []}
    for entry in manifest.probes:
        probes[entry["set"]].append(io.load_env(root / entry["path"]))
    sets = {}
    for split in SPLITS:
        rows = [s for s in manifest.samples if s["split"] == split]
        if not rows:
            continue
        images = [io.load_image(root / s["image"]) for s in rows]
        x = np.stack([np.transpose(im.pixels, (2, 0, 1)) for im in images]).astype(np.float32)
        ids = np.array([-1 if s["grid_id"] is None else s["grid_id"] for s in rows], dtype=int)
        pts = np.array([[np.nan] * 3 if s["params"] is None else s["params"] for s in rows], dtype=np.float64)
        lights = [(s["probe"], s["rotation"]) for s in rows]
        sets[split] = SphereSet(x, ids, pts, lights, [im.exposure for im in images])
    return manifest, probes, sets
