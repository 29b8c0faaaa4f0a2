"""Self-augmented training: labeled warm-up, then unlabeled images are turned
into synthetic labeled pairs by rendering the network's own estimates.

The loop is generic over two small protocols:

``model``
    ``predict(X) -> params`` and ``train_step(X, params) -> loss``, both in
    the model's parameter units (e.g. log ratio / log roughness).
``forward_model``
    ``clamp(params) -> (params, rejected_mask)`` and
    ``render(params, rng) -> (X, provenance_list)``; rendering must be a
    pure function of ``params`` and the provenance it reports, which
    ``rerender(params, provenance)`` replays.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .lighting import EnvironmentMap
from .reflectance import ALBEDO_MAX, ALBEDO_MIN, ALPHA_MAX, ALPHA_MIN, WardBRDF
from .renderer import RenderedImage, finalize, render_sphere

log = logging.getLogger(__name__)

RATIO_MIN = ALBEDO_MIN / ALBEDO_MAX
RATIO_MAX = ALBEDO_MAX / ALBEDO_MIN


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    init_epochs: int = 10
    total_epochs: int = 20
    batch_size: int = 32
    unlabeled_batch_size: Optional[int] = None
    steps_per_epoch: Optional[int] = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_floor: float = 1e-3
    # Step decay: from this epoch on the learning rate is multiplied by ``lr_decay_factor``.
    lr_decay_epoch: Optional[int] = None
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if not 0 <= self.init_epochs <= self.total_epochs:
            raise ValueError("need 0 <= init_epochs <= total_epochs")
        if self.batch_size < 1 or (self.unlabeled_batch_size is not None and self.unlabeled_batch_size < 1):
            raise ValueError("batch sizes must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must be in (0, 1]")


@dataclass
class ProvisionalPair:
    """A synthetic labeled pair rendered from the network's own estimate."""

    x: np.ndarray
    params: np.ndarray
    source_id: Any
    provenance: dict


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    rejected_pairs: int = 0
    events: Counter = field(default_factory=Counter)
    schedule: list[str] = field(default_factory=list)


def _take(y, idx):
    if isinstance(y, dict):
        return {k: v[idx] for k, v in y.items()}
    return y[idx]


def _count(x) -> int:
    if isinstance(x, dict):
        return len(next(iter(x.values())))
    return len(x)


def sample_albedo_pair(rho_s_rel: float, rng: np.random.Generator, events: Optional[Counter] = None) -> tuple[float, float]:
    """Draw ``(rho_d, rho_s)`` with ``rho_s = ratio * rho_d`` and ``rho_d`` uniform on its feasible range.

    Feasible means both albedos lie in ``[0.05, 1]``. Ratios with an empty
    feasible range are clamped to the nearest feasible ratio.
    """
    if not rho_s_rel > 0:
        raise ValueError("rho_s_rel must be > 0")
    ratio = float(np.clip(rho_s_rel, RATIO_MIN, RATIO_MAX))
    if not math.isclose(ratio, rho_s_rel, rel_tol=1e-12) and events is not None:
        events["ratio_clamped"] += 1
    lo = max(ALBEDO_MIN, ALBEDO_MIN / ratio)
    hi = min(ALBEDO_MAX, ALBEDO_MAX / ratio)
    hi = max(hi, lo)
    rho_d = rng.uniform(lo, hi)
    return rho_d, min(ratio * rho_d, ALBEDO_MAX)


class SphereForwardModel:
    """Renders BRDF-net parameters ``(log(rho_s/rho_d), log(alpha))`` as sphere images.

    Each rendered sample draws an absolute albedo pair, a probe and a
    texel-snapped rotation from ``rng``. When ``fixed_lighting`` is given as
    a list of ``(probe_index, rotation)`` entries, those are used instead
    (renders under the "same" lighting as the source image). Setting
    ``source_lighting`` to a per-unlabeled-sample list of such entries makes
    :func:`synthesize_pairs` do this for every provisional pair.
    """

    def __init__(self, probes: Sequence[EnvironmentMap], resolution: int = 32, gamma: bool = False):
        if not probes:
            raise ValueError("need at least one probe")
        self.probes = list(probes)
        self.resolution = resolution
        self.gamma = gamma
        self.low = np.array([np.log(RATIO_MIN), np.log(ALPHA_MIN)])
        self.high = np.array([np.log(RATIO_MAX), np.log(ALPHA_MAX)])
        self.events: Counter = Counter()
        self.source_lighting: Optional[list] = None

    @property
    def domain(self):
        return self.low, self.high

    def clamp(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(params, dtype=np.float64)
        finite = np.all(np.isfinite(params), axis=1)
        outside = (params < self.low) | (params > self.high)
        rejected = ~finite | np.all(outside, axis=1)
        clamped = np.clip(np.nan_to_num(params), self.low, self.high)
        return clamped, rejected

    def render_one(self, params, rho_d: float, probe: int, rotation: float) -> RenderedImage:
        ratio, alpha = np.exp(params[0]), np.exp(params[1])
        rho_s = min(ratio * rho_d, ALBEDO_MAX)
        brdf = WardBRDF(rho_d, rho_s, np.clip(alpha, ALPHA_MIN, ALPHA_MAX))
        image = render_sphere(brdf, self.probes[probe], self.resolution, rotation)
        return finalize(image, "auto", gamma=self.gamma)

    def draw_lighting(self, rng: np.random.Generator) -> tuple[int, float]:
        probe = int(rng.integers(len(self.probes)))
        width = self.probes[probe].shape[1]
        rotation = float(rng.integers(width) * 2.0 * np.pi / width)
        return probe, rotation

    def render(self, params: np.ndarray, rng: np.random.Generator, fixed_lighting=None):
        xs, provs = [], []
        for i, p in enumerate(params):
            rho_d, _ = sample_albedo_pair(float(np.exp(p[0])), rng, self.events)
            probe, rotation = fixed_lighting[i] if fixed_lighting is not None else self.draw_lighting(rng)
            img = self.render_one(p, rho_d, probe, rotation)
            xs.append(self.to_input(img))
            provs.append({"rho_d": rho_d, "probe": probe, "env": self.probes[probe].id, "rotation": rotation, "exposure": img.exposure})
        return np.stack(xs).astype(np.float32), provs

    def rerender(self, params, provenance: dict) -> np.ndarray:
        img = self.render_one(params, provenance["rho_d"], provenance["probe"], provenance["rotation"])
        return self.to_input(img).astype(np.float32)

    @staticmethod
    def to_input(img: RenderedImage) -> np.ndarray:
        return np.transpose(img.pixels, (2, 0, 1))


def synthesize_pairs(model, x_unlabeled: np.ndarray, forward_model, rng: np.random.Generator, source_ids=None) -> tuple[list[ProvisionalPair], int]:
    """Estimate provisional parameters for a batch and render them as new training pairs.

    Returns the accepted pairs and the number of rejected estimates.
    """
    ids = list(range(len(x_unlabeled))) if source_ids is None else list(source_ids)
    raw = model.predict(x_unlabeled)
    params, rejected = forward_model.clamp(raw)
    keep = np.flatnonzero(~rejected)
    pairs: list[ProvisionalPair] = []
    if keep.size:
        fixed = getattr(forward_model, "source_lighting", None)
        if fixed is not None:
            fixed = [fixed[ids[k]] for k in keep]
        xs, provs = forward_model.render(_take(params, keep), rng, fixed)
        for j, k in enumerate(keep):
            pairs.append(ProvisionalPair(xs[j], _take(params, k), ids[k], provs[j]))
    return pairs, int(rejected.sum())


def synthesize_pair(model, x_unlabeled: np.ndarray, forward_model, rng: np.random.Generator, source_id=None) -> Optional[ProvisionalPair]:
    """Single-image form of :func:`synthesize_pairs`; returns None if rejected."""
    pairs, _ = synthesize_pairs(model, x_unlabeled[None], forward_model, rng, [source_id])
    return pairs[0] if pairs else None


def _stack_params(pairs: list[ProvisionalPair]):
    first = pairs[0].params
    if isinstance(first, dict):
        return {k: np.stack([p.params[k] for p in pairs]) for k in first}
    return np.stack([p.params for p in pairs])


def train(
    model,
    labeled: tuple[np.ndarray, Any],
    unlabeled: Optional[np.ndarray] = None,
    cfg: TrainConfig = TrainConfig(),
    forward_model=None,
    evaluate: Optional[Callable[[Any], dict]] = None,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """Labeled-only warm-up for ``init_epochs``, then interleaved training.

    In the interleaved phase every unlabeled mini-batch is converted into
    provisional pairs and trained on, followed by one randomly drawn
    labeled mini-batch. An epoch is one pass over the unlabeled set (or
    ``steps_per_epoch`` unlabeled batches). With no unlabeled data the
    interleaved phase is plain supervised training. Models exposing
    ``set_learning_rate`` follow the step decay in ``cfg``.
    """
    x_lab, y_lab = labeled
    n_lab = _count(x_lab)
    if n_lab == 0:
        raise ValueError("labeled set is empty")
    n_unl = 0 if unlabeled is None else len(unlabeled)
    if n_unl and forward_model is None:
        raise ValueError("self-augmentation needs a forward model")
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.batch_size
    bs_u = cfg.unlabeled_batch_size or bs
    result = TrainResult()
    if log_path is not None:
        log_path = Path(log_path)
        log_path.write_text("")

    def labeled_epoch() -> float:
        steps = cfg.steps_per_epoch or math.ceil(n_lab / bs)
        order = np.concatenate([rng.permutation(n_lab) for _ in range(math.ceil(steps * bs / n_lab))])
        losses = []
        for s in range(steps):
            idx = order[s * bs : (s + 1) * bs]
            losses.append(model.train_step(_take(x_lab, idx), _take(y_lab, idx)))
            result.schedule.append("L")
        return float(np.mean(losses))

    def random_labeled_batch() -> float:
        idx = rng.choice(n_lab, size=min(bs, n_lab), replace=False)
        result.schedule.append("L")
        return model.train_step(_take(x_lab, idx), _take(y_lab, idx))

    def interleaved_epoch() -> tuple[float, float, int]:
        steps = cfg.steps_per_epoch or math.ceil(n_unl / bs_u)
        order = np.concatenate([rng.permutation(n_unl) for _ in range(math.ceil(steps * bs_u / n_unl))])
        l_losses, u_losses, rejected = [], [], 0
        for s in range(steps):
            idx = order[s * bs_u : (s + 1) * bs_u]
            pairs, n_rej = synthesize_pairs(model, unlabeled[idx], forward_model, rng, idx)
            rejected += n_rej
            if pairs:
                xs = np.stack([p.x for p in pairs])
                u_losses.append(model.train_step(xs, _stack_params(pairs)))
                result.schedule.append("U")
            l_losses.append(random_labeled_batch())
        u_mean = float(np.mean(u_losses)) if u_losses else float("nan")
        return float(np.mean(l_losses)), u_mean, rejected

    phase1_final = None
    set_lr = getattr(model, "set_learning_rate", None)
    for epoch in range(cfg.total_epochs):
        if set_lr is not None and cfg.lr_decay_epoch is not None:
            set_lr(cfg.learning_rate * (cfg.lr_decay_factor if epoch >= cfg.lr_decay_epoch else 1.0))
        if epoch < cfg.init_epochs or n_unl == 0:
            l_loss, u_loss, rejected = labeled_epoch(), None, 0
        else:
            l_loss, u_loss, rejected = interleaved_epoch()
        if epoch == cfg.init_epochs - 1:
            phase1_final = l_loss
        result.rejected_pairs += rejected
        record = {"epoch": epoch, "labeled_loss": l_loss, "unlabeled_loss": u_loss, "rejected_pairs": rejected}
        if evaluate is not None:
            record.update(evaluate(model))
        result.log.append(record)
        log.debug("epoch %d: %s", epoch, record)
        if log_path is not None:
            with log_path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        if phase1_final is not None and epoch >= cfg.init_epochs and n_unl:
            limit = cfg.divergence_factor * max(phase1_final, cfg.divergence_floor)
            if not np.isfinite(l_loss) or l_loss > limit:
                raise DivergenceError(
                    f"labeled loss {l_loss:.4g} at epoch {epoch} exceeds {cfg.divergence_factor}x the warm-up loss "
                    f"({phase1_final:.4g}); self-augmentation is drifting from the labeled data"
                )
    return result
