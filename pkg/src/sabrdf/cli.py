"""Command-line entry point: ``sabrdf <command> [options]``.

Numeric settings live in the JSON config (``--config``); flags only pick
actions, paths and the master seed. Failures print one JSON object
``{"error": ..., "message": ...}`` to stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .config import Config, ConfigError, load_config
from .datasets import ManifestError, ParameterGrid, load_dataset, write_dataset
from .neural import GraphError
from .selfaug import DivergenceError, SphereForwardModel

log = logging.getLogger("sabrdf")

EXPERIMENTS = ("brdf-validation", "ratio-table", "toy1d", "extrapolation")


class CLIError(RuntimeError):
    pass


def _config(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seeds={"master": args.seed})
    return cfg


def _dump(obj, path: Optional[Path] = None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _brdf_data(cfg: Config, data_dir: Optional[str]):
    """Build the BRDF-net data either from the config or from a ``datagen`` directory."""
    from .experiments import BRDFData, prepare_brdf_data, render_training_sets, scheme_split

    if data_dir is None:
        data = prepare_brdf_data(cfg)
        _, lab, comp = scheme_split(cfg, data.grid)
        labeled, unlabeled = render_training_sets(cfg, data, lab, comp)
        return data, labeled, unlabeled
    manifest, probes, sets = load_dataset(data_dir)
    grids = {k: ParameterGrid(v["diffuse"], v["specular"], v["roughness"]) for k, v in manifest.grids.items()}
    res, gamma = cfg.render.resolution, cfg.render.gamma
    data = BRDFData(
        grids["train"], grids["test"], probes["train"], probes["test"],
        SphereForwardModel(probes["train"], res, gamma), SphereForwardModel(probes["test"], res, gamma), sets["test"],
    )
    return data, sets["train"], sets.get("unlabeled")


# -- commands -----------------------------------------------------------------


def cmd_datagen(args) -> int:
    from .experiments import prepare_brdf_data, render_training_sets, scheme_split

    cfg = _config(args)
    out = Path(args.out)
    data = prepare_brdf_data(cfg)
    name, lab, comp = scheme_split(cfg, data.grid)
    labeled, unlabeled = render_training_sets(cfg, data, lab, comp)
    seeds = {"train": cfg.seeds.data, "unlabeled": cfg.seeds.data + 1, "test": cfg.seeds.data + 2}
    manifest = write_dataset(
        out, data.grid, data.test_grid, data.probes, data.test_probes,
        {"train": labeled, "unlabeled": unlabeled, "test": data.test},
        provenance={"config": cfg.to_dict(), "scheme": name}, seeds=seeds, gamma=cfg.render.gamma,
    )
    counts = {s: sum(1 for r in manifest.samples if r["split"] == s) for s in ("train", "unlabeled", "test")}
    _dump({"out": str(out), "scheme": name, "samples": counts})
    return 0


def _checkpoint_complete(path: Path, cfg: Config, self_augment: bool) -> bool:
    try:
        meta = io.read_manifest(path)["metadata"]
    except io.FormatError:
        return False
    return meta.get("config") == cfg.to_dict() and meta.get("self_augment") == self_augment


def cmd_train(args) -> int:
    from .experiments import evaluate_brdfnet, fit_brdfnet

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint"
    if args.resume and _checkpoint_complete(ckpt, cfg, args.self_augment):
        _dump({"checkpoint": str(ckpt), "resumed": True})
        return 0
    data, labeled, unlabeled = _brdf_data(cfg, args.data or cfg.paths.data)
    est = fit_brdfnet(cfg, data, labeled, unlabeled if args.self_augment else None, out / "train.log.jsonl")
    res = evaluate_brdfnet(est, data)
    est.save(ckpt, {"config": cfg.to_dict(), "self_augment": args.self_augment})
    metrics = {
        "test_param_mse": res["test_param_mse"],
        "test_image_mse": res["test_image_mse"],
        "rejected_pairs": est.train_result_.rejected_pairs,
        "self_augment": args.self_augment,
    }
    _dump(metrics, out / "metrics.json")
    _dump({"checkpoint": str(ckpt), **metrics})
    return 0


def cmd_eval(args) -> int:
    from .estimators import SelfAugmentedRegressor
    from .experiments import error_map, evaluate_brdfnet

    cfg = _config(args)
    data, _, _ = _brdf_data(cfg, args.data or cfg.paths.data)
    est = SelfAugmentedRegressor.load(args.checkpoint, data.forward_model)
    res = evaluate_brdfnet(est, data)
    metrics = {
        "test_param_mse": res["test_param_mse"],
        "test_image_mse": res["test_image_mse"],
        "error_map": error_map(res["image_errors"], data.test, data.test_grid),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(metrics, out / "eval.json")
    _dump(metrics)
    return 0


def cmd_experiment(args) -> int:
    from . import experiments

    cfg = _config(args)
    out = Path(args.out)
    runner = {
        "brdf-validation": experiments.run_brdf_validation,
        "ratio-table": experiments.run_ratio_table,
        "toy1d": experiments.run_toy1d,
        "extrapolation": experiments.run_extrapolation,
    }[args.name]
    if args.name == "brdf-validation" and args.self_augment is not None:
        report = runner(cfg, out, self_augment=(args.self_augment,))
    else:
        report = runner(cfg, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _dump({"experiment": args.name, "out": str(out), "aggregate": report.aggregate, "wall_clock": report.wall_clock})
    return 0


def cmd_render(args) -> int:
    from .reflectance import WardBRDF
    from .renderer import finalize, render_sphere

    try:
        params = json.loads(Path(args.params).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read params {args.params}: {exc}") from exc
    unknown = set(params) - {"rho_d", "rho_s", "alpha"}
    if unknown or not {"rho_d", "rho_s", "alpha"} <= set(params):
        raise CLIError("params JSON needs exactly rho_d, rho_s, alpha")
    env = io.load_env(args.env)
    brdf = WardBRDF(params["rho_d"], params["rho_s"], params["alpha"])
    cfg = _config(args)
    image = finalize(render_sphere(brdf, env, cfg.render.resolution, args.rotation), "auto", cfg.render.gamma)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".saim":
        io.save_image(image, out)
    else:
        io.save_png(image, out)
    _dump({"out": str(out), "exposure": image.exposure})
    return 0


def describe(path: Path) -> dict:
    """Human-readable summary of a dataset, checkpoint, report or binary container."""
    if path.is_dir():
        if (path / "manifest.json").is_file():
            raw = json.loads((path / "manifest.json").read_text())
            if raw.get("format") == "sabrdf-checkpoint":
                shapes = {k: list(io.load_tensor(path / f).shape) for k, f in raw["tensors"].items()}
                return {**raw, "tensor_shapes": shapes}
            return raw
        if (path / "report.json").is_file():
            return json.loads((path / "report.json").read_text())
        raise CLIError(f"{path}: no manifest.json or report.json")
    head = path.read_bytes()[:4]
    if head == b"SAEM":
        env = io.load_env(path)
        return {"type": "environment", "id": env.id, "seed": env.seed, "shape": list(env.shape),
                "white_balanced": env.white_balanced, "mean": env.radiance.mean(axis=(0, 1))}
    if head == b"SAIM":
        img = io.load_image(path)
        return {"type": "image", "shape": list(img.shape), "exposure": img.exposure, "clamped": img.clamped,
                "gamma_encoded": img.gamma_encoded, "provenance": img.provenance, "coverage": float(img.mask.mean())}
    if head == b"SATN":
        t = io.load_tensor(path)
        return {"type": "tensor", "dtype": str(t.dtype), "shape": list(t.shape),
                "min": float(t.min()) if t.size else None, "max": float(t.max()) if t.size else None}
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise CLIError(f"{path}: unrecognized file")


def cmd_inspect(args) -> int:
    _dump(describe(Path(args.path)))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sabrdf", description="Self-augmented BRDF estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        sp.add_argument("--out", required=out_required, help="output path")
        sp.add_argument("--seed", type=int, help="override seeds.master")

    sp = sub.add_parser("datagen", help="render and store the BRDF-net dataset")
    common(sp)
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("train", help="train a BRDF-net and write a checkpoint")
    common(sp)
    sp.add_argument("--data", help="dataset directory from datagen (default: render from config)")
    sp.add_argument("--self-augment", action="store_true", help="use the unlabeled set")
    sp.add_argument("--resume", action="store_true", help="reuse a finished checkpoint with the same config")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the midpoint test set")
    common(sp, out_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="dataset directory from datagen")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="run a validation study")
    sp.add_argument("name", choices=EXPERIMENTS)
    common(sp)
    sa = sp.add_mutually_exclusive_group()
    sa.add_argument("--self-augment", dest="self_augment", action="store_true", default=None,
                    help="brdf-validation: only the self-augmented run")
    sa.add_argument("--no-self-augment", dest="self_augment", action="store_false",
                    help="brdf-validation: only the labeled-only run")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("render", help="render a homogeneous sphere to PNG or SAIM")
    common(sp)
    sp.add_argument("--params", required=True, help='JSON {"rho_d": .., "rho_s": .., "alpha": ..}')
    sp.add_argument("--env", required=True, help="SAEM environment map")
    sp.add_argument("--rotation", type=float, default=0.0, help="environment rotation in radians")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("inspect", help="print manifests, checkpoints or containers as JSON")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)
    return p


_HANDLED = (ConfigError, io.FormatError, ManifestError, GraphError, DivergenceError, CLIError, OSError, ValueError, KeyError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _HANDLED as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
