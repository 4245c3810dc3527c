import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pastacc.data import Dataset, SyntheticSpec, gen_synthetic  # noqa: E402
from pastacc.train import init_network  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def random_net(dims, seed, bias_scale=0.3):
    """Seeded network with non-zero biases, so no symmetric ties by accident."""
    net = init_network(dims, seed)
    gen = np.random.default_rng(seed + 1000)
    layers = [np.hstack([m[:, :-1], bias_scale * gen.standard_normal((m.shape[0], 1))])
              for m in net.layers]
    from pastacc.nn import MlpNetwork
    return MlpNetwork(dims, layers)


def blobs(n_classes, dim, per_class, seed, separation=1.0, sigma=1.0):
    return gen_synthetic(SyntheticSpec.random_means(n_classes, dim, separation, sigma, per_class, seed))


@pytest.fixture
def net_483():
    return random_net((4, 8, 3), seed=11)


@pytest.fixture
def three_class_set():
    return blobs(3, 4, 70, seed=5, separation=0.7)


@pytest.fixture
def pinned_config_path():
    return ROOT / "configs" / "synthetic.cfg"


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """record(n, ok, detail): print and collect one pass/fail line per criterion."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        ACCEPTANCE_LINES.append((n, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
