"""Self-augmentation fixed point with a lookup-table inverse renderer.

A network whose first layer snaps the input to the nearest pre-rendered
template (one-hot) and whose second layer stores each template's scaled
parameters inverts the renderer exactly on the grid. Self-augmenting such
a network must leave it unchanged: every provisional pair it synthesizes is
already predicted perfectly.
"""
import numpy as np

from sabrdf import selfaug
from sabrdf.datasets import brdfnet_targets, build_grid
from sabrdf.estimators import SelfAugmentedRegressor
from sabrdf.lighting import ProbeSpec, generate_probe
from sabrdf.neural import FullyConnected, Layer, LayerGraph
from sabrdf.selfaug import SphereForwardModel

RES = 16


class NearestTemplate(Layer):
    """One-hot of the nearest stored template; constant, so zero input gradient."""

    def __init__(self, templates: np.ndarray):
        super().__init__()
        self.templates = templates.reshape(len(templates), -1).astype(np.float64)
        self._sq = np.sum(self.templates**2, axis=1)

    def forward(self, inputs, train):
        (x,) = inputs
        flat = x.reshape(len(x), -1).astype(np.float64)
        d = self._sq[None, :] - 2.0 * flat @ self.templates.T
        idx = np.argmin(d, axis=1)
        self._cache = x.shape
        self.last_distance = np.sqrt(np.maximum(d[np.arange(len(x)), idx] + np.sum(flat**2, axis=1), 0.0))
        out = np.zeros((len(x), len(self.templates)))
        out[np.arange(len(x)), idx] = 1.0
        return out

    def backward(self, grad):
        return [np.zeros(self._need_cache())]


def build_setup(seed: int = 0):
    probe = generate_probe(seed, ProbeSpec(height=8, channels=1))
    fm = SphereForwardModel([probe], resolution=RES)
    grid = build_grid(5, 5, 5)
    points = grid.points()
    targets = brdfnet_targets(points)
    width = probe.shape[1]
    xs, ys = [], []
    for p, t in zip(points, targets):
        for r in range(width):
            img = fm.render_one(t, float(p[0]), 0, r * 2.0 * np.pi / width)
            xs.append(fm.to_input(img).astype(np.float32))
            ys.append(t)
    return fm, np.stack(xs), np.array(ys)


def oracle_estimator(fm, templates, targets) -> SelfAugmentedRegressor:
    est = SelfAugmentedRegressor(forward_model=fm, init_epochs=0, total_epochs=1, batch_size=16, steps_per_epoch=None,
                                 learning_rate=1e-3, seed=0)
    est.initialize(templates[:2], targets[:2])
    g = LayerGraph(templates.shape[1:])
    g.add("lookup", NearestTemplate(templates))
    fc = FullyConnected(len(templates), targets.shape[1], dtype=np.float64)
    # Stored values are the float32 scaled targets the loss compares against, so the match is exact.
    fc.params["weight"] = est.scaler_.forward(targets).astype(np.float64)
    fc.params["bias"] = np.zeros(targets.shape[1])
    fc.zero_grad()
    g.add("table", fc)
    est.net_ = g
    return est


def run_fixed_point(seed: int = 0, n_labeled: int = 32, n_unlabeled: int = 96, perturb: float = 0.0) -> dict:
    """``perturb`` adds noise to the table, as a control that moves off the fixed point."""
    fm, templates, targets = build_setup(seed)
    est = oracle_estimator(fm, templates, targets)
    if perturb:
        w = est.net_.node("table").layer.params["weight"]
        w += perturb * np.random.default_rng([seed, 6]).normal(size=w.shape)
    rng = np.random.default_rng([seed, 4])
    lab = rng.choice(len(templates), n_labeled, replace=False)
    unl = rng.choice(len(templates), n_unlabeled, replace=False)

    pairs, rejected = selfaug.synthesize_pairs(est, templates[unl], fm, np.random.default_rng([seed, 5]))
    px = np.stack([p.x for p in pairs])
    synth_loss = est.param_loss(px, np.stack([p.params for p in pairs]))

    before = {k: v.copy() for k, v in est.net_.parameters().items()}
    result = selfaug.train(est, (templates[lab], targets[lab]), templates[unl], est.train_config(), fm)
    after = est.net_.parameters()
    num = np.sqrt(sum(np.sum((after[k] - before[k]) ** 2) for k in before))
    den = np.sqrt(sum(np.sum(before[k] ** 2) for k in before))
    return {
        "synth_param_loss": float(synth_loss),
        "weight_rel_change": float(num / den),
        "rejected": rejected,
        "n_pairs": len(pairs),
        "schedule": "".join(result.schedule),
        "unlabeled_loss": result.log[-1]["unlabeled_loss"],
    }
