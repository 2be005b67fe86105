"""The classifier network: three 3x3 conv stages, two dense layers, softmax.

The layer sequence is frozen:

    Conv(3->32) ReLU Pool | Conv(32->32) ReLU Pool | Conv(32->64) ReLU Pool
    Flatten | Dense(->64) ReLU | Dense(64->2) Softmax

Layers carry their parameters; forward passes are pure and return a
:class:`ForwardCache` holding every intermediate activation, which both the
training backward pass and the Grad-CAM explainer consume. Parameters are
never mutated by forward/backward, so a model can be shared read-only
across concurrent inference calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops as T
from .tensor_ops import ShapeError


class ConfigurationError(ValueError):
    """Raised when a model cannot be assembled from the requested geometry."""


class Conv3x3:
    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int, weights, bias):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weights = weights  # [K,C,3,3]
        self.bias = bias  # [K]

    def params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def set_params(self, arrays):
        self.weights, self.bias = arrays

    def forward(self, x):
        return T.conv2d_valid(x, self.weights, self.bias), x

    def backward(self, grad_out, cache):
        gx, gw, gb = T.conv2d_valid_backward(cache, self.weights, grad_out)
        return gx, [gw, gb]


class ReLU:
    kind = "relu"

    def params(self):
        return []

    def set_params(self, arrays):
        pass

    def forward(self, x):
        return T.relu(x), x

    def backward(self, grad_out, cache):
        return T.relu_backward(cache, grad_out), []


class MaxPool2:
    kind = "maxpool2"

    def params(self):
        return []

    def set_params(self, arrays):
        pass

    def forward(self, x):
        out, mask = T.maxpool2(x)
        return out, mask

    def backward(self, grad_out, cache):
        return T.maxpool2_backward(cache, grad_out), []


class Flatten:
    kind = "flatten"

    def params(self):
        return []

    def set_params(self, arrays):
        pass

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache), []


class Dense:
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, weights, bias):
        self.in_features = in_features
        self.out_features = out_features
        self.weights = weights  # [in,out]
        self.bias = bias  # [out]

    def params(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def set_params(self, arrays):
        self.weights, self.bias = arrays

    def forward(self, x):
        return T.matmul(x, self.weights) + self.bias, x

    def backward(self, grad_out, cache):
        gx = T.matmul(grad_out, self.weights.T)
        gw = T.matmul(cache.T, grad_out)
        gb = grad_out.sum(axis=0)
        return gx, [gw, gb]


class Softmax:
    kind = "softmax"

    def params(self):
        return []

    def set_params(self, arrays):
        pass

    def forward(self, x):
        return T.softmax2(x), None

    def backward(self, grad_out, cache):
        # Training fuses softmax with cross-entropy and skips this, but the
        # exact Jacobian-vector product is kept for completeness.
        y = cache if cache is not None else None
        if y is None:
            raise RuntimeError("softmax backward needs the cached output")
        inner = (grad_out * y).sum(axis=1, keepdims=True)
        return y * (grad_out - inner), []


# Softmax.backward needs its own output; cache it instead of the input.
def _softmax_forward(self, x):
    y = T.softmax2(x)
    return y, y


Softmax.forward = _softmax_forward


@dataclass
class Model:
    """Ordered layer list plus the input geometry it was built for."""

    input_size: int
    channels: int
    layers: list = field(default_factory=list)

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (conv1..dense2, w then b)."""
        out = []
        for layer in self.layers:
            out.extend(arr for _, arr in layer.params())
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            names.extend(f"layer{i}.{n}" for n, _ in layer.params())
        return names

    def set_parameters(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for layer in self.layers:
            k = len(layer.params())
            if k:
                layer.set_params([next(it) for _ in range(k)])

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters())


@dataclass
class ForwardCache:
    """Per-layer activations and auxiliary caches from one forward pass.

    ``activations[i]`` is the input of ``layers[i]``; the final entry is the
    softmax output. ``layer_caches[i]`` holds whatever ``layers[i]`` needs
    for its backward pass (pool masks, pre-activation inputs, ...).
    """

    activations: list
    layer_caches: list

    @property
    def probs(self) -> np.ndarray:
        return self.activations[-1]


def stage_sizes(input_size: int) -> list[int]:
    """Spatial extent after each conv+pool stage, e.g. 22 -> [10, 4, 1]."""
    sizes = []
    s = input_size
    for _ in range(3):
        s = (s - 2) // 2 if s >= 3 else 0
        sizes.append(s)
    return sizes


def build_paper_cnn(input_size: int, seed: int, dtype=np.float32) -> Model:
    """Assemble the fixed architecture for square RGB inputs.

    Conv/dense weights are He-normal (std ``sqrt(2/fan_in)``) from a
    generator seeded with ``seed``; biases start at zero. The same seed and
    dtype always produce bit-identical weights. ``input_size`` must leave at
    least a 1x1 map after the third pool (>= 22 pixels).
    """
    sizes = stage_sizes(input_size)
    if sizes[-1] < 1:
        raise ConfigurationError(
            f"input_size {input_size} collapses to nothing after three "
            f"conv+pool stages (got {sizes}); need at least 22"
        )
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)

    def he_conv(k, c):
        std = np.sqrt(2.0 / (c * 9))
        w = rng.standard_normal((k, c, 3, 3), dtype=dtype)
        return w * dtype.type(std), np.zeros(k, dtype=dtype)

    def he_dense(fin, fout):
        std = np.sqrt(2.0 / fin)
        w = rng.standard_normal((fin, fout), dtype=dtype)
        return w * dtype.type(std), np.zeros(fout, dtype=dtype)

    flat = 64 * sizes[-1] * sizes[-1]
    layers = [
        Conv3x3(3, 32, *he_conv(32, 3)),
        ReLU(),
        MaxPool2(),
        Conv3x3(32, 32, *he_conv(32, 32)),
        ReLU(),
        MaxPool2(),
        Conv3x3(32, 64, *he_conv(64, 32)),
        ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(flat, 64, *he_dense(flat, 64)),
        ReLU(),
        Dense(64, 2, *he_dense(64, 2)),
        Softmax(),
    ]
    return Model(input_size=input_size, channels=3, layers=layers)


def forward(model: Model, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run ``batch [N,3,S,S]`` through the network.

    Returns the ``[N,2]`` class probabilities (rows sum to 1) and the cache
    needed by :func:`backward` and the Grad-CAM explainer.
    """
    if batch.ndim != 4:
        raise ShapeError(f"batch must be [N,3,S,S], got {batch.shape}")
    expected = (model.channels, model.input_size, model.input_size)
    if batch.shape[1:] != expected:
        raise ShapeError(f"batch shape {batch.shape} does not match model {expected}")
    activations = [batch]
    layer_caches = []
    x = batch
    for layer in model.layers:
        x, cache = layer.forward(x)
        activations.append(x)
        layer_caches.append(cache)
    return x, ForwardCache(activations, layer_caches)


def backward(model: Model, cache: ForwardCache, labels: np.ndarray) -> list[np.ndarray]:
    """Gradients of the mean cross-entropy loss w.r.t. every parameter.

    Softmax and cross-entropy are fused: the gradient at the logits is
    ``(probs - onehot(labels)) / N``. Returns arrays aligned with
    ``model.parameters()``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or cache.probs.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch {cache.probs.shape}"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    n = labels.shape[0]
    probs = cache.probs
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n

    param_grads: list[list[np.ndarray]] = []
    for i in range(len(model.layers) - 2, -1, -1):  # skip softmax, it is fused
        grad, grads = model.layers[i].backward(grad, cache.layer_caches[i])
        param_grads.append(grads)
    flat: list[np.ndarray] = []
    for grads in reversed(param_grads):
        flat.extend(grads)
    return flat


def predict(model: Model, image: np.ndarray) -> tuple[int, float]:
    """Classify one ``[3,S,S]`` image; ties resolve to class 0."""
    if image.ndim != 3:
        raise ShapeError(f"image must be [3,S,S], got {image.shape}")
    probs, _ = forward(model, image[None])
    idx = int(np.argmax(probs[0]))
    return idx, float(probs[0, idx])
