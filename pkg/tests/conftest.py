import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


TINY = {
    "grid": {"nd": 3, "ns": 3, "nr": 3},
    "lighting": {"n_probes": 2, "n_test_probes": 1, "probe_height": 8, "test_lightings": 1},
    "render": {"resolution": 16},
    "network": {"encoder_widths": [2, 4], "fc_hidden": 8, "mlp_hidden": [4]},
    "train": {"init_epochs": 1, "total_epochs": 2, "lr_decay_epoch": 1, "batch_size": 4, "steps_per_epoch": 2, "eval_every": 1},
    "experiment": {"labeled_fractions": [0.3], "unlabeled_fractions": [0.0, 0.4], "toy_labeled": 4,
                   "toy_unlabeled": 8, "toy_test": 20},
}


@pytest.fixture
def tiny_config():
    from sabrdf.config import Config

    return Config.from_dict(TINY)


# Acceptance verdicts, printed together at the end of the session.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
