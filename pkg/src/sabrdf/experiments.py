"""Validation studies for self-augmented BRDF estimation.

Each ``run_*`` function trains the networks it needs, evaluates them and
writes a CSV table, PNG heat-maps (where meaningful) and a JSON report
into ``out``. Everything is a pure function of the :class:`Config`.

Image error is the mean squared difference over all pixels of the
auto-exposed ``32 x 32`` sphere, between the test image and the render of
the estimated parameters under the test image's own lighting (the test
diffuse albedo is reused; auto-exposure makes the render independent of
absolute scale).
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import Config
from .datasets import (
    CenterScheme,
    ParameterGrid,
    RandomScheme,
    SphereSet,
    UniformScheme,
    build_grid,
    midpoint_test_grid,
    render_sphere_set,
    subsample,
)
from .estimators import SelfAugmentedRegressor
from .lighting import ProbeSpec, generate_probe
from .selfaug import SphereForwardModel

# Heat-map colour scale: log10 of image MSE, fixed so PNGs compare across runs.
HEATMAP_LOG10_RANGE = (-5.0, -1.0)
HEATMAP_CMAP = "viridis"


@dataclass
class ExperimentReport:
    name: str
    config: dict
    seed: int
    cells: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    artifacts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out: Path) -> Path:
        """Write ``report.json`` (reproducible from config and seed) and ``timing.json`` (wall clock)."""
        path = Path(out) / "report.json"
        self.artifacts += [path.name, "timing.json"]
        body = {k: v for k, v in self.to_dict().items() if k != "wall_clock"}
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
        (Path(out) / "timing.json").write_text(json.dumps({"wall_clock": self.wall_clock}) + "\n")
        return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _out_dir(out) -> Optional[Path]:
    if out is None:
        return None
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, rows: list[dict]):
    if not rows:
        return
    keys = list(rows[0])
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in keys})


def save_heatmap(values: np.ndarray, path: Path, title: str, xlabel: str, ylabel: str, xticks=None, yticks=None):
    """Write ``log10(values)`` as a PNG with the fixed colour scale."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lo, hi = HEATMAP_LOG10_RANGE
    fig, ax = plt.subplots(figsize=(4.5, 3.6), dpi=100)
    im = ax.imshow(np.log10(np.maximum(values, 1e-12)), origin="lower", cmap=HEATMAP_CMAP, vmin=lo, vmax=hi, aspect="auto")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if xticks is not None:
        ax.set_xticks(range(len(xticks)), [f"{t:.2g}" for t in xticks], fontsize=6)
    if yticks is not None:
        ax.set_yticks(range(len(yticks)), [f"{t:.2g}" for t in yticks], fontsize=6)
    fig.colorbar(im, ax=ax, label="log10 image MSE")
    fig.tight_layout()
    # Fixed metadata keeps the PNG bytes reproducible.
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


# -- BRDF-net studies -----------------------------------------------------------


@dataclass
class BRDFData:
    """Grid, probes, forward models and the rendered midpoint test set."""

    grid: ParameterGrid
    test_grid: ParameterGrid
    probes: list
    test_probes: list
    forward_model: SphereForwardModel
    test_model: SphereForwardModel
    test: SphereSet


def scheme_split(cfg: Config, grid: ParameterGrid):
    """``(name, labeled_ids, unlabeled_ids)`` for the configured scheme."""
    return _scheme(cfg, grid)


def prepare_brdf_data(cfg: Config) -> BRDFData:
    spec = ProbeSpec(height=cfg.lighting.probe_height, channels=cfg.lighting.channels)
    probes = [generate_probe(cfg.seeds.probes + i, spec) for i in range(cfg.lighting.n_probes)]
    test_probes = [generate_probe(cfg.seeds.test_probes + i, spec) for i in range(cfg.lighting.n_test_probes)]
    grid = build_grid(cfg.grid.nd, cfg.grid.ns, cfg.grid.nr)
    test_grid = midpoint_test_grid(grid)
    res, gamma = cfg.render.resolution, cfg.render.gamma
    test = render_sphere_set(
        test_grid, np.arange(len(test_grid)), test_probes, cfg.lighting.test_lightings, res, cfg.seeds.data + 2, gamma
    )
    return BRDFData(
        grid, test_grid, probes, test_probes,
        SphereForwardModel(probes, res, gamma), SphereForwardModel(test_probes, res, gamma), test,
    )


def render_training_sets(cfg: Config, data: BRDFData, labeled_ids, unlabeled_ids) -> tuple[SphereSet, Optional[SphereSet]]:
    res, gamma = cfg.render.resolution, cfg.render.gamma
    labeled = render_sphere_set(data.grid, labeled_ids, data.probes, cfg.lighting.labeled_lightings, res, cfg.seeds.data, gamma)
    unlabeled = None
    if len(unlabeled_ids):
        unlabeled = render_sphere_set(
            data.grid, unlabeled_ids, data.probes, cfg.lighting.unlabeled_lightings, res, cfg.seeds.data + 1, gamma
        )
    return labeled, unlabeled


def image_errors(pred: np.ndarray, test: SphereSet, model: SphereForwardModel) -> np.ndarray:
    """Per-image MSE between each test image and the re-render of its estimate."""
    pred, _ = model.clamp(np.asarray(pred).reshape(len(test), -1))
    errs = np.empty(len(test))
    for i, (p, (probe, rotation)) in enumerate(zip(pred, test.lighting)):
        img = model.to_input(model.render_one(p, float(test.points[i, 0]), probe, rotation))
        errs[i] = np.mean((img - test.x[i]) ** 2)
    return errs


def make_regressor(cfg: Config, forward_model) -> SelfAugmentedRegressor:
    t = cfg.train
    return SelfAugmentedRegressor(
        forward_model=forward_model,
        encoder_widths=cfg.network.encoder_widths,
        fc_hidden=cfg.network.fc_hidden,
        hidden=cfg.network.mlp_hidden,
        init_epochs=t.init_epochs,
        total_epochs=t.total_epochs,
        batch_size=t.batch_size,
        unlabeled_batch_size=t.unlabeled_batch_size,
        steps_per_epoch=t.steps_per_epoch,
        learning_rate=t.learning_rate,
        lr_decay_epoch=t.lr_decay_epoch,
        lr_decay_factor=t.lr_decay_factor,
        divergence_factor=t.divergence_factor,
        seed=cfg.seeds.master,
    )


def evaluate_brdfnet(est: SelfAugmentedRegressor, data: BRDFData) -> dict:
    pred = est.predict(data.test.x)
    errs = image_errors(pred, data.test, data.test_model)
    return {
        "test_param_mse": float(np.mean((pred - data.test.targets) ** 2)),
        "test_image_mse": float(errs.mean()),
        "image_errors": errs,
    }


def _epoch_evaluator(data: BRDFData, every: int, total: int) -> Callable:
    state = {"epoch": 0}

    def evaluate(model) -> dict:
        epoch = state["epoch"]
        state["epoch"] += 1
        if (epoch + 1) % every and epoch != total - 1:
            return {"test_param_mse": None, "test_image_mse": None}
        res = evaluate_brdfnet(model, data)
        return {"test_param_mse": res["test_param_mse"], "test_image_mse": res["test_image_mse"]}

    return evaluate


def train_brdfnet(cfg: Config, data: BRDFData, labeled_ids, unlabeled_ids, self_augment: bool, log_path=None):
    """Train one BRDF-net; returns ``(estimator, labeled_set, unlabeled_set)``."""
    labeled, unlabeled = render_training_sets(cfg, data, labeled_ids, unlabeled_ids if self_augment else [])
    return fit_brdfnet(cfg, data, labeled, unlabeled, log_path), labeled, unlabeled


def fit_brdfnet(cfg: Config, data: BRDFData, labeled: SphereSet, unlabeled: Optional[SphereSet], log_path=None):
    """Fit a BRDF-net on rendered sets; ``unlabeled=None`` is plain supervised training."""
    fm = data.forward_model
    fm.source_lighting = unlabeled.lighting if (unlabeled is not None and cfg.lighting.same_lighting) else None
    est = make_regressor(cfg, fm)
    evaluate = _epoch_evaluator(data, cfg.train.eval_every, cfg.train.total_epochs)
    try:
        est.fit(labeled.x, labeled.targets, None if unlabeled is None else unlabeled.x, evaluate, log_path)
    finally:
        fm.source_lighting = None
    return est


def error_map(errors: np.ndarray, test: SphereSet, test_grid: ParameterGrid) -> np.ndarray:
    """Average per-image errors per test point, then over the specular axis: ``(nd_test, nr_test)``."""
    n = len(test_grid)
    per_point = np.bincount(test.ids, weights=errors, minlength=n) / np.bincount(test.ids, minlength=n)
    return per_point.reshape(test_grid.shape).mean(axis=1)


def _scheme(cfg: Config, grid: ParameterGrid):
    e = cfg.experiment
    if e.scheme == "baseline":
        return "baseline", np.arange(len(grid)), np.array([], dtype=int)
    if e.scheme == "uniform":
        lab, comp = subsample(grid, UniformScheme(*e.uniform))
        return "uniform-" + "x".join(map(str, e.uniform)), lab, comp
    lab, comp = subsample(grid, RandomScheme(e.random_fraction, cfg.seeds.subsample))
    return f"random-{e.random_fraction:g}", lab, comp


def run_brdf_validation(cfg: Config = Config(), out=None, self_augment: Sequence[bool] = (False, True)) -> ExperimentReport:
    """Train the configured scheme with and without self-augmentation on the complement.

    Reports aggregate test image MSE per run and the ``(diffuse, roughness)``
    error map averaged over the specular axis.
    """
    t0 = time.time()
    out = _out_dir(out)
    data = prepare_brdf_data(cfg)
    name, lab, comp = _scheme(cfg, data.grid)
    report = ExperimentReport("brdf-validation", cfg.to_dict(), cfg.seeds.master)
    for sa in self_augment:
        tag = f"{name}-{'sa' if sa else 'nosa'}"
        log_path = out / f"{tag}.log.jsonl" if out else None
        est, labeled, unlabeled = train_brdfnet(cfg, data, lab, comp, sa, log_path)
        res = evaluate_brdfnet(est, data)
        emap = error_map(res["image_errors"], data.test, data.test_grid)
        cell = {
            "scheme": name,
            "self_augment": sa,
            "labeled_points": len(lab),
            "unlabeled_points": len(comp) if sa else 0,
            "labeled_images": len(labeled),
            "unlabeled_images": 0 if unlabeled is None else len(unlabeled),
            "param_mse": res["test_param_mse"],
            "image_mse": res["test_image_mse"],
            "epochs": cfg.train.total_epochs,
            "seed": cfg.seeds.master,
            "rejected_pairs": est.train_result_.rejected_pairs,
            "error_map": emap,
        }
        report.cells.append(cell)
        if out:
            report.artifacts.append(log_path.name)
            png = out / f"{tag}.png"
            save_heatmap(emap.T, png, f"{tag}: image MSE {res['test_image_mse']:.2e}", "diffuse albedo", "roughness",
                         data.test_grid.diffuse, data.test_grid.roughness)
            report.artifacts.append(png.name)
    by_sa = {c["self_augment"]: c["image_mse"] for c in report.cells}
    report.aggregate = {f"image_mse_{'sa' if k else 'nosa'}": v for k, v in by_sa.items()}
    if True in by_sa and False in by_sa:
        report.aggregate["sa_over_nosa"] = by_sa[True] / by_sa[False]
    report.wall_clock = time.time() - t0
    if out:
        _write_csv(out / "cells.csv", [{k: v for k, v in c.items() if k != "error_map"} for c in report.cells])
        report.artifacts.append("cells.csv")
        report.write(out)
    return report


def run_ratio_table(cfg: Config = Config(), out=None, labeled_fracs=None, unlabeled_fracs=None) -> ExperimentReport:
    """Test error for each feasible (labeled, unlabeled) fraction pair of the grid.

    Labeled points are a seeded random subset; unlabeled points are nested
    prefixes of one seeded permutation of the remaining points, so a larger
    unlabeled fraction always contains the smaller one. Cells with
    ``labeled + unlabeled > 1`` are left blank.
    """
    t0 = time.time()
    out = _out_dir(out)
    labeled_fracs = tuple(labeled_fracs or cfg.experiment.labeled_fractions)
    unlabeled_fracs = tuple(unlabeled_fracs or cfg.experiment.unlabeled_fractions)
    for f in labeled_fracs + unlabeled_fracs:
        if not 0 <= f <= 1:
            raise ValueError(f"fraction {f} outside [0, 1]")
    data = prepare_brdf_data(cfg)
    n = len(data.grid)
    report = ExperimentReport("ratio-table", cfg.to_dict(), cfg.seeds.master)
    table = np.full((len(labeled_fracs), len(unlabeled_fracs)), np.nan)
    for i, lf in enumerate(labeled_fracs):
        lab, comp = subsample(data.grid, RandomScheme(lf, cfg.seeds.subsample))
        pool = np.random.default_rng([cfg.seeds.subsample, 1]).permutation(comp)
        for j, uf in enumerate(unlabeled_fracs):
            k = math.floor(uf * n)
            cell = {"labeled_fraction": lf, "unlabeled_fraction": uf, "labeled_points": len(lab), "unlabeled_points": k}
            if lf + uf > 1 + 1e-12 or k > len(pool):
                cell.update(feasible=False, image_mse=None, param_mse=None, labeled_images=None, unlabeled_images=None)
                report.cells.append(cell)
                continue
            unl = np.sort(pool[:k])
            log_path = out / f"l{lf:g}-u{uf:g}.log.jsonl" if out else None
            est, labeled, unlabeled = train_brdfnet(cfg, data, lab, unl, k > 0, log_path)
            res = evaluate_brdfnet(est, data)
            table[i, j] = res["test_image_mse"]
            cell.update(
                feasible=True,
                image_mse=res["test_image_mse"],
                param_mse=res["test_param_mse"],
                labeled_images=len(labeled),
                unlabeled_images=0 if unlabeled is None else len(unlabeled),
                epochs=cfg.train.total_epochs,
                seed=cfg.seeds.master,
            )
            report.cells.append(cell)
            if out:
                report.artifacts.append(log_path.name)
    report.aggregate = {"table": table, "labeled_fractions": labeled_fracs, "unlabeled_fractions": unlabeled_fracs}
    report.wall_clock = time.time() - t0
    if out:
        _write_csv(out / "cells.csv", report.cells)
        with (out / "table.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["labeled \\ unlabeled"] + [f"{u:g}" for u in unlabeled_fracs])
            for lf, row in zip(labeled_fracs, table):
                w.writerow([f"{lf:g}"] + ["" if np.isnan(v) else f"{v:.6g}" for v in row])
        report.artifacts += ["cells.csv", "table.csv"]
        report.write(out)
    return report


def region_masks(test_grid: ParameterGrid, grid: ParameterGrid, labeled_ids) -> np.ndarray:
    """True for test points inside the per-axis bounding box of the labeled points."""
    pts = test_grid.points()
    lab = grid.points()[np.asarray(labeled_ids)]
    lo, hi = lab.min(axis=0), lab.max(axis=0)
    return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)


def run_extrapolation(cfg: Config = Config(), out=None) -> ExperimentReport:
    """Labels only in the central region of every axis; unlabeled data covers the rest."""
    t0 = time.time()
    out = _out_dir(out)
    data = prepare_brdf_data(cfg)
    lab, comp = subsample(data.grid, CenterScheme(cfg.experiment.center_fraction))
    inside_pt = region_masks(data.test_grid, data.grid, lab)
    inside = inside_pt[data.test.ids]
    report = ExperimentReport("extrapolation", cfg.to_dict(), cfg.seeds.master)
    for sa in (False, True):
        tag = f"center-{'sa' if sa else 'nosa'}"
        log_path = out / f"{tag}.log.jsonl" if out else None
        est, labeled, unlabeled = train_brdfnet(cfg, data, lab, comp, sa, log_path)
        res = evaluate_brdfnet(est, data)
        errs = res["image_errors"]
        report.cells.append({
            "self_augment": sa,
            "labeled_points": len(lab),
            "unlabeled_points": len(comp) if sa else 0,
            "inside_points": int(inside_pt.sum()),
            "outside_points": int((~inside_pt).sum()),
            "inside_image_mse": float(errs[inside].mean()) if inside.any() else None,
            "outside_image_mse": float(errs[~inside].mean()) if (~inside).any() else None,
            "image_mse": res["test_image_mse"],
            "param_mse": res["test_param_mse"],
            "epochs": cfg.train.total_epochs,
            "seed": cfg.seeds.master,
        })
        if out:
            report.artifacts.append(log_path.name)
            emap = error_map(errs, data.test, data.test_grid)
            png = out / f"{tag}.png"
            save_heatmap(emap.T, png, f"{tag}: image MSE {res['test_image_mse']:.2e}", "diffuse albedo", "roughness",
                         data.test_grid.diffuse, data.test_grid.roughness)
            report.artifacts.append(png.name)
    report.aggregate = {
        f"outside_{'sa' if c['self_augment'] else 'nosa'}": c["outside_image_mse"] for c in report.cells
    } | {f"inside_{'sa' if c['self_augment'] else 'nosa'}": c["inside_image_mse"] for c in report.cells}
    report.wall_clock = time.time() - t0
    if out:
        _write_csv(out / "cells.csv", report.cells)
        report.artifacts.append("cells.csv")
        report.write(out)
    return report


# -- 1D toy ---------------------------------------------------------------------

TOY_STEP_AT = 0.25
TOY_STEP_HEIGHT = 0.5


def toy_function(x, target: str = "smooth") -> np.ndarray:
    """Monotone cubic on [-1, 1]; the discontinuous variant adds a step at ``x = 0.25``."""
    x = np.asarray(x, dtype=np.float64)
    y = 0.5 * x**3 + 0.5 * x
    if target == "discontinuous":
        y = y + TOY_STEP_HEIGHT * (x > TOY_STEP_AT)
    elif target != "smooth":
        raise ValueError(f"unknown toy target {target!r}")
    return y


class ToyForwardModel:
    """Forward model ``x -> y`` for the 1D regression of ``x`` from ``y``."""

    def __init__(self, target: str = "smooth"):
        self.target = target
        self.low, self.high = np.array([-1.0]), np.array([1.0])
        self.source_lighting = None

    @property
    def domain(self):
        return self.low, self.high

    def clamp(self, params):
        p = np.asarray(params, dtype=np.float64).reshape(len(params), -1)
        finite = np.all(np.isfinite(p), axis=1)
        rejected = ~finite | np.all((p < self.low) | (p > self.high), axis=1)
        return np.clip(np.nan_to_num(p), self.low, self.high), rejected

    def render(self, params, rng, fixed_lighting=None):
        p = np.asarray(params, dtype=np.float64).reshape(len(params), -1)
        return toy_function(p, self.target).astype(np.float32), [{} for _ in range(len(p))]

    def rerender(self, params, provenance=None):
        return toy_function(np.atleast_1d(params), self.target).astype(np.float32)


def run_toy1d(cfg: Config = Config(), out=None, target: Optional[str] = None, n_bins: int = 10) -> ExperimentReport:
    """Regress ``x`` from ``y = f(x)`` with labels only near both ends of the domain.

    Uses its own fixed schedule (MLP, 100 warm-up + 300 interleaved epochs
    of 5 steps); only seeds and the data sizes come from ``cfg``.
    """
    t0 = time.time()
    out = _out_dir(out)
    e = cfg.experiment
    target = target or e.toy_target
    rng = np.random.default_rng([cfg.seeds.data, 0x70])
    half = e.toy_labeled // 2
    x_lab = np.concatenate([np.linspace(-1.0, -0.8, half), np.linspace(0.8, 1.0, e.toy_labeled - half)])
    x_unl = rng.uniform(-1.0, 1.0, e.toy_unlabeled)
    x_test = np.linspace(-1.0, 1.0, e.toy_test)
    fm = ToyForwardModel(target)

    def y(x):
        return toy_function(x, target).reshape(-1, 1)

    report = ExperimentReport("toy1d", cfg.to_dict(), cfg.seeds.master)
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    which = np.clip(np.searchsorted(edges, x_test, side="right") - 1, 0, n_bins - 1)
    for sa in (False, True):
        est = SelfAugmentedRegressor(
            forward_model=fm, hidden=cfg.network.mlp_hidden, init_epochs=100, total_epochs=400,
            batch_size=e.toy_labeled, unlabeled_batch_size=20, steps_per_epoch=5, learning_rate=1e-3,
            seed=cfg.seeds.master,
        )
        est.fit(y(x_lab), x_lab, y(x_unl) if sa and e.toy_unlabeled else None)
        err = (est.predict(y(x_test)) - x_test) ** 2
        bins = np.bincount(which, weights=err, minlength=n_bins) / np.bincount(which, minlength=n_bins)
        report.cells.append({
            "target": target,
            "self_augment": sa,
            "labeled": e.toy_labeled,
            "unlabeled": e.toy_unlabeled if sa else 0,
            "test_mse": float(err.mean()),
            "bin_edges": edges,
            "bin_mse": bins,
            "max_bin": int(np.argmax(bins)),
            "curve": [r["labeled_loss"] for r in est.train_result_.log],
        })
    report.aggregate = {
        "sa_over_labeled_only": report.cells[1]["test_mse"] / report.cells[0]["test_mse"],
        "discontinuity_bin": int(np.clip(np.searchsorted(edges, TOY_STEP_AT, side="right") - 1, 0, n_bins - 1)),
    }
    report.wall_clock = time.time() - t0
    if out:
        rows = []
        for c in report.cells:
            for b, v in enumerate(c["bin_mse"]):
                rows.append({"self_augment": c["self_augment"], "bin": b, "x_lo": edges[b], "x_hi": edges[b + 1], "mse": v})
        _write_csv(out / "bins.csv", rows)
        report.artifacts.append("bins.csv")
        report.write(out)
    return report
