"""Small feed-forward network engine with hand-written backward passes.

Tensors are plain float64 numpy arrays. A batch of inputs is always 2-D
(batch, features); Conv2D reshapes internally from its declared image shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gairlab.losses import LossKind, loss_grad, per_example_loss


class ShapeError(ValueError):
    """Raised when tensor extents do not chain through a model."""


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, weight=None, bias=None):
        self.n_in = n_in
        self.n_out = n_out
        self.weight = np.zeros((n_in, n_out)) if weight is None else np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(n_out) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.weight.shape != (n_in, n_out) or self.bias.shape != (n_out,):
            raise ShapeError(f"dense({n_in},{n_out}) got weight {self.weight.shape}, bias {self.bias.shape}")

    @property
    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {"type": "dense", "in": self.n_in, "out": self.n_out}

    def in_size(self):
        return self.n_in

    def out_size(self, n_in):
        return self.n_out

    def forward(self, x):
        return x @ self.weight + self.bias, x

    def backward(self, cache, grad_out):
        x = cache
        return [x.T @ grad_out, grad_out.sum(axis=0)], grad_out @ self.weight.T


class ReLU:
    kind = "relu"
    params: list = []

    def spec(self):
        return {"type": "relu"}

    def in_size(self):
        return None

    def out_size(self, n_in):
        return n_in

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad_out):
        return [], np.where(cache, grad_out, 0.0)


class Conv2D:
    """Stride-1 convolution with zero 'same' padding on flattened (C,H,W) inputs."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, height, width, weight=None, bias=None):
        if kernel % 2 != 1:
            raise ShapeError("conv2d kernel must be odd for 'same' padding")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.height = height
        self.width = width
        wshape = (out_channels, in_channels, kernel, kernel)
        self.weight = np.zeros(wshape) if weight is None else np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(out_channels) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.weight.shape != wshape or self.bias.shape != (out_channels,):
            raise ShapeError(f"conv2d expects weight {wshape}, got {self.weight.shape}")

    @property
    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {
            "type": "conv2d",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "height": self.height,
            "width": self.width,
        }

    def in_size(self):
        return self.in_channels * self.height * self.width

    def out_size(self, n_in):
        return self.out_channels * self.height * self.width

    def _columns(self, x):
        b = x.shape[0]
        p = self.kernel // 2
        img = x.reshape(b, self.in_channels, self.height, self.width)
        padded = np.pad(img, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (self.kernel, self.kernel), axis=(2, 3))
        # (b, C, H, W, k, k) -> (b, H, W, C*k*k)
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, self.height, self.width, -1)

    def forward(self, x):
        cols = self._columns(x)
        wmat = self.weight.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias  # (b, H, W, O)
        return out.transpose(0, 3, 1, 2).reshape(x.shape[0], -1), cols

    def backward(self, cache, grad_out):
        cols = cache
        b = cols.shape[0]
        g = grad_out.reshape(b, self.out_channels, self.height, self.width).transpose(0, 2, 3, 1)
        wmat = self.weight.reshape(self.out_channels, -1)
        dw = np.einsum("bhwo,bhwk->ok", g, cols).reshape(self.weight.shape)
        db = g.sum(axis=(0, 1, 2))
        dcols = (g @ wmat).reshape(b, self.height, self.width, self.in_channels, self.kernel, self.kernel)
        p = self.kernel // 2
        dpad = np.zeros((b, self.in_channels, self.height + 2 * p, self.width + 2 * p))
        for i in range(self.kernel):
            for j in range(self.kernel):
                dpad[:, :, i : i + self.height, j : j + self.width] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dpad[:, :, p : p + self.height, p : p + self.width]
        return [dw, db], dx.reshape(b, -1)


def layer_from_spec(spec: dict):
    kind = spec["type"]
    if kind == "dense":
        return Dense(spec["in"], spec["out"])
    if kind == "relu":
        return ReLU()
    if kind == "conv2d":
        return Conv2D(
            spec["in_channels"], spec["out_channels"], spec["kernel"], spec["height"], spec["width"]
        )
    raise ShapeError(f"unknown layer type {kind!r}")


@dataclass
class Model:
    """An ordered layer stack producing ``class_count`` logits per example."""

    layers: list
    class_count: int
    in_features: int = field(init=False)

    def __post_init__(self):
        width = None
        for layer in self.layers:
            need = layer.in_size()
            if need is not None:
                if width is not None and width != need:
                    raise ShapeError(f"{layer.kind} expects {need} inputs, previous layer gives {width}")
                width = need
            elif width is None:
                raise ShapeError("first layer must fix the input width")
            width = layer.out_size(width)
        if width != self.class_count:
            raise ShapeError(f"model emits {width} logits, class_count is {self.class_count}")
        self.in_features = self.layers[0].in_size()

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def param_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            if layer.params:
                names += [f"{i}.weight", f"{i}.bias"]
        return names

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def copy(self) -> "Model":
        clone = Model([layer_from_spec(s) for s in self.specs()], self.class_count)
        for dst, src in zip(clone.params, self.params):
            dst[...] = src
        return clone

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"input shape {x.shape} does not match {self.in_features} features")
        return x

    def forward(self, x) -> np.ndarray:
        out = self._check(x)
        for layer in self.layers:
            out, _ = layer.forward(out)
        return out

    def forward_with_cache(self, x):
        out = self._check(x)
        caches = []
        for layer in self.layers:
            out, c = layer.forward(out)
            caches.append(c)
        return out, caches

    def backward(self, caches, grad_logits):
        """Return (parameter gradients in ``params`` order, input gradient)."""
        grads = []
        g = grad_logits
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            pg, g = layer.backward(c, g)
            grads = pg + grads
        return grads, g


def build_mlp(in_features: int, hidden: list[int], class_count: int, rng: np.random.Generator) -> Model:
    """He-initialised ReLU MLP."""
    layers: list = []
    width = in_features
    for h in list(hidden) + [class_count]:
        w = rng.normal(0.0, np.sqrt(2.0 / width), size=(width, h))
        layers.append(Dense(width, h, w, np.zeros(h)))
        layers.append(ReLU())
        width = h
    layers.pop()
    return Model(layers, class_count)


def init_model(specs: list[dict], class_count: int, rng: np.random.Generator) -> Model:
    """Build a model from layer specs with He-normal weights and zero biases."""
    model = Model([layer_from_spec(s) for s in specs], class_count)
    for layer in model.layers:
        if isinstance(layer, Dense):
            layer.weight[...] = rng.normal(0.0, np.sqrt(2.0 / layer.n_in), size=layer.weight.shape)
        elif isinstance(layer, Conv2D):
            fan_in = layer.in_channels * layer.kernel**2
            layer.weight[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=layer.weight.shape)
    return model


def forward(model: Model, inputs) -> np.ndarray:
    return model.forward(inputs)


def param_gradients(model: Model, x, target, kind: LossKind = LossKind.CROSS_ENTROPY, weights=None):
    """Gradients of the weighted mean loss with respect to every parameter.

    ``weights`` defaults to uniform 1/m. For KL the target is a reference
    logit tensor held constant.
    """
    logits, caches = model.forward_with_cache(x)
    m = logits.shape[0]
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise ShapeError(f"expected {m} weights, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("per-example weights must be nonnegative")
    g = loss_grad(logits, target, kind) * w[:, None]
    grads, _ = model.backward(caches, g)
    return grads


def input_gradient(model: Model, x, target, kind: LossKind = LossKind.CROSS_ENTROPY) -> np.ndarray:
    """Per-example gradient of the loss with respect to the input rows."""
    x = np.asarray(x, dtype=np.float64)
    logits, caches = model.forward_with_cache(x)
    _, gx = model.backward(caches, loss_grad(logits, target, kind))
    return gx.reshape(x.shape)


def loss_and_logits(model: Model, x, target, kind: LossKind):
    logits = model.forward(x)
    return per_example_loss(logits, target, kind), logits


def predict(model: Model, x) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(model.forward(x), axis=1)
