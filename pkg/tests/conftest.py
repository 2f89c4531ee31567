import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sparsecnn import LayerSpec, NetworkSpec, init_network, parse_arch, synth_generate, train  # noqa: E402
from sparsecnn.admm import PathSchedule, accuracy, default_mu_grid, run_path  # noqa: E402
from sparsecnn.config import RunConfig, load_data  # noqa: E402
from sparsecnn.data import Dataset  # noqa: E402
from sparsecnn.sparsity import LayerGuardPolicy  # noqa: E402
from sparsecnn.tensor_net import MAXPOOL, RELU, _forward  # noqa: E402

TINY_ARCH = "conv3x3:8,relu,pool2,conv3x3:16,relu,pool2,fc:2"


def kink_margin(net, x):
    """Smallest distance of any ReLU input from 0 or any pool runner-up from its max."""
    _, caches = _forward(net, x, keep=True)
    margin = np.inf
    for layer, (inp, _) in zip(net.spec.layers, caches):
        if layer.kind == RELU:
            margin = min(margin, float(np.abs(inp).min()))
        elif layer.kind == MAXPOOL:
            k = layer.pool
            b, c, h, w = inp.shape
            win = inp[:, :, :h // k * k, :w // k * k].reshape(b, c, h // k, k, w // k, k)
            win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // k, w // k, k * k), axis=-1)
            margin = min(margin, float((win[..., -1] - win[..., -2]).min()))
    return margin


GRADCHECK_ARCHS = [
    ((1, 6, 6), "conv3x3:2,relu,pool2,fc:3"),
    ((2, 5, 5), "conv3x3:3/valid,relu,fc:2"),
    ((1, 7, 7), "conv3x3:2/s2,relu,fc:3,head"),
    ((2, 4, 4), "conv2x2:2,pool2,relu,fc:2"),
    ((1, 4, 4), "fc:6,relu,fc:4,relu,fc:3"),
    ((1, 6, 6), "conv1x1:2,relu,conv3x3:2,pool3,fc:2"),
]


def random_gradcheck_case(seed, margin=2e-2, batch=2):
    """Float64 net and batch kept away from ReLU/max-pool kinks."""
    rng = np.random.default_rng(seed)
    input_shape, arch = GRADCHECK_ARCHS[seed % len(GRADCHECK_ARCHS)]
    spec = parse_arch(arch, input_shape)
    for attempt in range(2000):
        net = init_network(spec, seed * 7919 + attempt, dtype=np.float64)
        for p in net.params.values():
            p["bias"][:] = rng.normal(0, 0.3, size=p["bias"].shape)
        x = rng.uniform(0, 1, size=(batch,) + input_shape)
        y = rng.integers(0, spec.num_classes, size=batch)
        if kink_margin(net, x) > margin:
            return net, x, y
    raise RuntimeError("could not draw a kink-free gradient check case")


@pytest.fixture(scope="session")
def desk_data():
    """2,000 train / 500 test 16x16 two-class synthetic images."""
    train = synth_generate(1, 2000, 16, 16, 2, 0.8)
    test = synth_generate(2, 500, 16, 16, 2, 0.8, split="test")
    return train, test


@pytest.fixture
def tiny_spec():
    return parse_arch(TINY_ARCH, (1, 16, 16))


@pytest.fixture
def small_net():
    spec = NetworkSpec((1, 8, 8), (
        LayerSpec.conv(1, 2, 3),
        LayerSpec.relu(),
        LayerSpec.maxpool(2),
        LayerSpec.fc(32, 2),
    ))
    return init_network(spec, 3)


def convergence_fixture():
    """fc 10->2 (20 weights) on 8 overlapping samples, so the loss has a finite minimizer."""
    spec = parse_arch("fc:2", (1, 2, 5))
    u = np.r_[np.ones(5), np.zeros(5)]
    coords = np.array([[0.2, 0.2], [0.3, 0.1], [0.1, 0.4], [0.8, 0.8],
                       [0.7, 0.9], [0.9, 0.6], [0.2, 0.25], [0.8, 0.7]])
    x = (coords[:, :1] * u + coords[:, 1:] * (1 - u)).reshape(8, 1, 2, 5).astype(np.float32)
    ds = Dataset(x, np.array([0, 0, 0, 1, 1, 1, 1, 0]), 2)
    net = train(init_network(spec, 0), ds, 140, 0.5, 8)
    return net, ds


def train_desk_baseline(cfg=None):
    """Default-config data and baseline: ``(cfg, train, test, net)``."""
    cfg = cfg or RunConfig()
    train_ds, test_ds = load_data(cfg)
    spec = parse_arch(cfg.arch, train_ds.sample_shape)
    net = train(init_network(spec, cfg.seed), train_ds, cfg.baseline_epochs, cfg.baseline_lr,
                cfg.baseline_batch_size, cfg.seed)
    return cfg, train_ds, test_ds, net


def run_desk_path(baseline=None):
    """Full default-config regularization path; returns ``(baseline_acc, points, seconds)``.

    The timing includes baseline training when ``baseline`` is not given.
    """
    t0 = time.perf_counter()
    cfg, train_ds, test_ds, net = baseline or train_desk_baseline()
    mus = default_mu_grid(net, cfg.rho, None, cfg.mu_count)
    schedule = PathSchedule(mus, cfg.delta, cfg.nu, cfg.xi, None, cfg.lr, cfg.batch_size)
    points = run_path(net, train_ds, test_ds, schedule, cfg.penalty, cfg.rho, None,
                      LayerGuardPolicy(cfg.guard, cfg.guard_fraction), cfg.seed)
    return accuracy(net, test_ds), points, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_baseline():
    return train_desk_baseline()


@pytest.fixture(scope="session")
def desk_path():
    """Timed from scratch, so it trains its own baseline."""
    return run_desk_path()


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
