import numpy as np
import pytest

from nafkit.flow import FlowLayer, FlowStack


def constant_affine_stack(m, mu, s, kind="affine-exp", n_layers=1):
    """Stack whose conditioner outputs the constants (mu, s) everywhere."""
    layers = []
    natural = tuple(range(1, m + 1))
    for i in range(n_layers):
        order = natural if i % 2 == 0 else tuple(reversed(natural))
        layer = FlowLayer(m, kind, order=order, seed=0, name=f"layer{i}")
        for w in layer.conditioner.weights:
            w.data[:] = 0.0
        for b in layer.conditioner.biases:
            b.data[:] = 0.0
        layer.conditioner.biases[-1].data = np.tile([mu, s], m).astype(float)
        layers.append(layer)
    return FlowStack(layers)


def exact_identity_dsf_stack(m, d=16):
    """DSF stack with zeroed conditioner: pseudo-params are the offsets
    (w uniform, a = softplus(softplus_inv(1)), b = 0)."""
    layer = FlowLayer(m, "dsf", d=d, seed=0)
    for w in layer.conditioner.weights:
        w.data[:] = 0.0
    for b in layer.conditioner.biases:
        b.data[:] = 0.0
    return FlowStack([layer])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
