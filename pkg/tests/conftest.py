import numpy as np
import pytest

from locunlearn.data import DataView, Dataset, SyntheticSpec, make_synthetic
from locunlearn.errors import ConfigError, DimensionError
from locunlearn.nn import LayerSpec, Model, build_model

SMALL_CONV = {
    "input_shape": [1, 5, 5],
    "layers": [
        {"kind": "conv2d", "out_channels": 3, "kernel_size": 3, "padding": 1},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "out_features": 6},
        {"kind": "relu"},
        {"kind": "dense", "out_features": 4},
    ],
}


def random_model(rng, max_params=500):
    """Random dense or conv+dense stack with at most 3 parameterized layers."""
    while True:
        if rng.random() < 0.5:
            c = int(rng.integers(1, 3))
            side = int(rng.integers(3, 6))
            arch = [{"kind": "conv2d", "out_channels": int(rng.integers(1, 4)),
                     "kernel_size": int(rng.integers(1, 4)), "padding": int(rng.integers(0, 2))},
                    {"kind": "relu"}, {"kind": "flatten"}]
            shape = (c, side, side)
        else:
            arch = []
            shape = (int(rng.integers(2, 8)),)
        for _ in range(int(rng.integers(0, 2))):
            arch += [{"kind": "dense", "out_features": int(rng.integers(2, 7))}, {"kind": "relu"}]
        arch.append({"kind": "dense", "out_features": int(rng.integers(2, 5))})
        try:
            model = build_model(arch, input_shape=shape, seed=int(rng.integers(1 << 30)))
        except (ConfigError, DimensionError):
            continue
        if model.p <= max_params:
            return model


def smooth_grad_fixture(rng, max_params=500, n=4, eps=1e-4):
    """(model, x, y) with no ReLU kink inside any +-eps coordinate stencil."""
    from oracles import kink_free

    while True:
        model = random_model(rng, max_params)
        for _ in range(20):
            x = rng.normal(size=(n, *model.input_shape))
            if kink_free(model, x, eps):
                return model, x, rng.integers(0, model.num_classes, n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def conv_model():
    return build_model(SMALL_CONV, seed=3)


@pytest.fixture
def toy_data():
    """Balanced 4-class data shaped for SMALL_CONV."""
    return make_synthetic(SyntheticSpec(num_classes=4, dim=25, n=80, seed=5, mean_scale=1.5,
                                        noise_scale=1.0, input_shape=(1, 5, 5)))


@pytest.fixture
def toy_view(toy_data):
    return DataView(toy_data)


def linear_1p(theta=2.0):
    """f(x) = theta * x: one dense unit, no bias."""
    model = Model([LayerSpec("dense", 1, 1, has_bias=False)], (1,))
    model.params[:] = theta
    return model


def dataset(x, y, c, name="t"):
    return Dataset(np.asarray(x, dtype=np.float32), np.asarray(y), c, name)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
