import numpy as np
import pytest

from gairlab.nn import Dense, Model, ReLU, build_mlp


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at array x (x is restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return np.linalg.norm(a - b) / scale


def random_mlp(rng, in_features=None, classes=None):
    """He-initialised MLP with small random biases.

    Zero biases behind a dead bottleneck unit put the next pre-activation
    exactly on the ReLU kink, where finite differences are meaningless.
    """
    in_features = in_features or int(rng.integers(1, 6))
    classes = classes or int(rng.integers(2, 5))
    hidden = [int(rng.integers(1, 33)) for _ in range(int(rng.integers(1, 4)))]
    model = build_mlp(in_features, hidden, classes, rng)
    for layer in model.layers:
        if isinstance(layer, Dense):
            layer.bias[...] = rng.normal(scale=0.1, size=layer.bias.shape)
    return model


def kink_distance(model, x):
    """Smallest |pre-activation| feeding any ReLU."""
    smallest = np.inf
    a = np.atleast_2d(x)
    for layer in model.layers:
        if isinstance(layer, ReLU):
            smallest = min(smallest, float(np.min(np.abs(a))))
        a, _ = layer.forward(a)
    return smallest


def linear_model(weight, bias=None):
    """Single dense layer f(x) = x @ weight + bias."""
    weight = np.asarray(weight, dtype=float)
    return Model([Dense(weight.shape[0], weight.shape[1], weight, bias)], weight.shape[1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def threshold_model():
    # 1-D, two classes: z0 = -x, z1 = x; class 1 iff x > 0
    return linear_model([[-1.0, 1.0]])
