"""Small numpy neural-network kernels with hand-written reverse-mode gradients.

Only the layer types needed for the dropout models are provided: Dense,
Conv1D ("same" padding), LSTM, bidirectional LSTM, pointwise activations,
Flatten and Reshape.  Sequence tensors are laid out as
``(batch, time, channels)``; Dense works on ``(batch, features)``.

All parameters of a :class:`Network` live in one flat float64 vector
``theta``; each layer holds reshaped views into it, so an optimizer can
update ``theta`` in place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ForwardStateError, NonFiniteError, ShapeError

PROB_CLIP = 1e-7


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0
    kernel_size: int = 1
    alpha: float = 0.0
    shape: tuple = ()

    def __str__(self):
        if self.kind == "Conv1D":
            return f"Conv1D({self.size}, {self.kernel_size})"
        if self.kind in ("Dense", "LSTM", "BiLSTM"):
            return f"{self.kind}({self.size})"
        if self.kind == "LeakyReLU":
            return f"LeakyReLU({self.alpha})"
        if self.kind == "Reshape":
            return f"Reshape({self.shape})"
        return self.kind

    def to_dict(self):
        return {"kind": self.kind, "size": self.size, "kernel_size": self.kernel_size,
                "alpha": self.alpha, "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["size"]), int(d["kernel_size"]), float(d["alpha"]),
                   tuple(int(s) for s in d["shape"]))


def Dense(n: int) -> LayerSpec:
    return LayerSpec("Dense", size=n)


def Conv1D(channels: int, kernel_size: int = 1) -> LayerSpec:
    return LayerSpec("Conv1D", size=channels, kernel_size=kernel_size)


def LSTM(cells: int) -> LayerSpec:
    return LayerSpec("LSTM", size=cells)


def BiLSTM(cells: int) -> LayerSpec:
    return LayerSpec("BiLSTM", size=cells)


def Sigmoid() -> LayerSpec:
    return LayerSpec("Sigmoid")


def ReLU() -> LayerSpec:
    return LayerSpec("ReLU")


def LeakyReLU(alpha: float = 0.2) -> LayerSpec:
    return LayerSpec("LeakyReLU", alpha=alpha)


def Flatten() -> LayerSpec:
    return LayerSpec("Flatten")


def Reshape(shape: Sequence[int]) -> LayerSpec:
    return LayerSpec("Reshape", shape=tuple(int(s) for s in shape))


def Embedding() -> LayerSpec:
    """Identity marker for the autoencoder bottleneck (split point)."""
    return LayerSpec("Embedding")


def sigmoid(z):
    # tanh form is overflow-free and a single transcendental call
    return 0.5 * np.tanh(0.5 * z) + 0.5


def glorot(rng, fan_in, fan_out, shape):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# --------------------------------------------------------------------------
# layers

class _Layer:
    n_params = 0

    def __init__(self, spec: LayerSpec, in_shape: tuple, index: int):
        self.spec = spec
        self.in_shape = in_shape
        self.index = index
        self.out_shape = in_shape
        self._cache = None

    def bind(self, theta, grad):
        pass

    def init(self, rng):
        pass

    def _require_cache(self):
        if self._cache is None:
            raise ForwardStateError(f"layer {self.index} ({self.spec}): backward before forward")
        return self._cache


class _Dense(_Layer):
    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        if len(in_shape) != 1:
            raise ConfigurationError(
                f"layer {index} ({spec}) needs flat input, got shape {in_shape}")
        self.n_in = in_shape[0]
        self.out_shape = (spec.size,)
        self.n_params = self.n_in * spec.size + spec.size

    def bind(self, theta, grad):
        k = self.n_in * self.spec.size
        self.W = theta[:k].reshape(self.n_in, self.spec.size)
        self.b = theta[k:]
        self.dW = grad[:k].reshape(self.n_in, self.spec.size)
        self.db = grad[k:]

    def init(self, rng):
        self.W[...] = glorot(rng, self.n_in, self.spec.size, self.W.shape)
        self.b[...] = 0.0

    def forward(self, x):
        self._cache = x
        return x @ self.W + self.b

    def backward(self, g):
        x = self._require_cache()
        self.dW[...] = x.T @ g
        self.db[...] = g.sum(axis=0)
        return g @ self.W.T


class _Conv1D(_Layer):
    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        if len(in_shape) != 2:
            raise ConfigurationError(
                f"layer {index} ({spec}) needs (time, channels) input, got shape {in_shape}")
        self.T, self.C = in_shape
        self.k = spec.kernel_size
        self.left = (self.k - 1) // 2
        self.out_shape = (self.T, spec.size)
        self.n_params = self.k * self.C * spec.size + spec.size

    def bind(self, theta, grad):
        m = self.k * self.C * self.spec.size
        self.W = theta[:m].reshape(self.k * self.C, self.spec.size)
        self.b = theta[m:]
        self.dW = grad[:m].reshape(self.k * self.C, self.spec.size)
        self.db = grad[m:]

    def init(self, rng):
        self.W[...] = glorot(rng, self.k * self.C, self.k * self.spec.size, self.W.shape)
        self.b[...] = 0.0

    def _patches(self, x):
        if self.k == 1:
            return x
        B = x.shape[0]
        xp = np.zeros((B, self.T + self.k - 1, self.C))
        xp[:, self.left:self.left + self.T] = x
        return np.concatenate([xp[:, j:j + self.T] for j in range(self.k)], axis=2)

    def forward(self, x):
        p = self._patches(x)
        self._cache = p
        return p @ self.W + self.b

    def backward(self, g):
        p = self._require_cache()
        F = p.shape[2]
        self.dW[...] = p.reshape(-1, F).T @ g.reshape(-1, g.shape[2])
        self.db[...] = g.sum(axis=(0, 1))
        dp = g @ self.W.T
        if self.k == 1:
            return dp
        B = g.shape[0]
        dxp = np.zeros((B, self.T + self.k - 1, self.C))
        for j in range(self.k):
            dxp[:, j:j + self.T] += dp[:, :, j * self.C:(j + 1) * self.C]
        return dxp[:, self.left:self.left + self.T]


class _LSTM(_Layer):
    """Unidirectional LSTM returning the full hidden sequence.

    Gate layout in the weight columns is [input, forget, output, candidate].
    """

    def __init__(self, spec, in_shape, index, reverse=False):
        super().__init__(spec, in_shape, index)
        if len(in_shape) != 2:
            raise ConfigurationError(
                f"layer {index} ({spec}) needs (time, channels) input, got shape {in_shape}")
        self.T, self.C = in_shape
        self.H = spec.size
        self.reverse = reverse
        self.out_shape = (self.T, self.H)
        self.n_params = self.C * 4 * self.H + self.H * 4 * self.H + 4 * self.H

    def bind(self, theta, grad):
        C, H = self.C, self.H
        a, b = C * 4 * H, C * 4 * H + H * 4 * H
        self.Wx = theta[:a].reshape(C, 4 * H)
        self.Wh = theta[a:b].reshape(H, 4 * H)
        self.b = theta[b:]
        self.dWx = grad[:a].reshape(C, 4 * H)
        self.dWh = grad[a:b].reshape(H, 4 * H)
        self.db = grad[b:]

    def init(self, rng):
        H = self.H
        self.Wx[...] = glorot(rng, self.C, 4 * H, self.Wx.shape)
        self.Wh[...] = glorot(rng, H, 4 * H, self.Wh.shape)
        self.b[...] = 0.0
        self.b[H:2 * H] = 1.0

    def forward(self, x):
        if self.reverse:
            x = x[:, ::-1]
        B, T, H = x.shape[0], self.T, self.H
        xw = x @ self.Wx + self.b
        gates = np.empty((T, B, 4 * H))
        cs = np.empty((T + 1, B, H))
        hs = np.empty((T + 1, B, H))
        tcs = np.empty((T, B, H))
        cs[0] = 0.0
        hs[0] = 0.0
        Wh = self.Wh
        for t in range(T):
            z = xw[:, t] + hs[t] @ Wh
            a = gates[t]
            a[:, :3 * H] = sigmoid(z[:, :3 * H])
            a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
            cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 3 * H:]
            tcs[t] = np.tanh(cs[t + 1])
            hs[t + 1] = a[:, 2 * H:3 * H] * tcs[t]
        self._cache = (x, gates, cs, hs, tcs)
        out = hs[1:].transpose(1, 0, 2)
        return out[:, ::-1] if self.reverse else out

    def backward(self, g):
        x, gates, cs, hs, tcs = self._require_cache()
        if self.reverse:
            g = g[:, ::-1]
        B, T, H = x.shape[0], self.T, self.H
        dz = np.empty((T, B, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        WhT = self.Wh.T
        for t in range(T - 1, -1, -1):
            a = gates[t]
            i, f, o, c_hat = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            dh = dh + g[:, t]
            tc = tcs[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            d = dz[t]
            d[:, :H] = dc * c_hat * i * (1.0 - i)
            d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            d[:, 3 * H:] = dc * i * (1.0 - c_hat * c_hat)
            dc = dc * f
            dh = d @ WhT
        dz_flat = dz.reshape(T * B, 4 * H)
        self.dWh[...] = hs[:-1].reshape(T * B, H).T @ dz_flat
        self.db[...] = dz_flat.sum(axis=0)
        dzb = dz.transpose(1, 0, 2)
        self.dWx[...] = x.reshape(B * T, self.C).T @ dzb.reshape(B * T, 4 * H)
        dx = dzb @ self.Wx.T
        return dx[:, ::-1] if self.reverse else dx


class _BiLSTM(_Layer):
    """Forward and time-reversed LSTMs, hidden sequences concatenated on channels."""

    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        self.fwd = _LSTM(spec, in_shape, index)
        self.bwd = _LSTM(spec, in_shape, index, reverse=True)
        self.H = spec.size
        self.out_shape = (in_shape[0], 2 * spec.size)
        self.n_params = 2 * self.fwd.n_params

    def bind(self, theta, grad):
        m = self.fwd.n_params
        self.fwd.bind(theta[:m], grad[:m])
        self.bwd.bind(theta[m:], grad[m:])

    def init(self, rng):
        self.fwd.init(rng)
        self.bwd.init(rng)

    def forward(self, x):
        self._cache = True
        return np.concatenate([self.fwd.forward(x), self.bwd.forward(x)], axis=2)

    def backward(self, g):
        self._require_cache()
        return self.fwd.backward(g[:, :, :self.H]) + self.bwd.backward(g[:, :, self.H:])


class _Sigmoid(_Layer):
    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._require_cache()
        return g * y * (1.0 - y)


class _ReLU(_Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, g):
        return np.where(self._require_cache(), g, 0.0)


class _LeakyReLU(_Layer):
    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        if not 0.0 < spec.alpha < 1.0:
            raise ConfigurationError(f"layer {index}: LeakyReLU alpha must lie in (0, 1)")

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, self.spec.alpha * x)

    def backward(self, g):
        return np.where(self._require_cache(), g, self.spec.alpha * g)


class _Flatten(_Layer):
    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x):
        self._cache = True
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        self._require_cache()
        return g.reshape((g.shape[0],) + self.in_shape)


class _Reshape(_Layer):
    def __init__(self, spec, in_shape, index):
        super().__init__(spec, in_shape, index)
        if int(np.prod(spec.shape)) != int(np.prod(in_shape)):
            raise ConfigurationError(
                f"layer {index} ({spec}) cannot reshape {in_shape} to {spec.shape}")
        self.out_shape = tuple(spec.shape)

    def forward(self, x):
        self._cache = True
        return x.reshape((x.shape[0],) + self.out_shape)

    def backward(self, g):
        self._require_cache()
        return g.reshape((g.shape[0],) + self.in_shape)


class _Identity(_Layer):
    def forward(self, x):
        self._cache = True
        return x

    def backward(self, g):
        self._require_cache()
        return g


_LAYERS = {
    "Dense": _Dense, "Conv1D": _Conv1D, "LSTM": _LSTM, "BiLSTM": _BiLSTM,
    "Sigmoid": _Sigmoid, "ReLU": _ReLU, "LeakyReLU": _LeakyReLU,
    "Flatten": _Flatten, "Reshape": _Reshape, "Embedding": _Identity,
}


def _validate_spec(spec: LayerSpec, index: int):
    if spec.kind not in _LAYERS:
        raise ConfigurationError(f"layer {index}: unknown layer kind {spec.kind!r}")
    if spec.kind in ("Dense", "Conv1D", "LSTM", "BiLSTM") and spec.size < 1:
        raise ConfigurationError(f"layer {index} ({spec}): size must be >= 1")
    if spec.kind == "Conv1D" and spec.kernel_size < 1:
        raise ConfigurationError(f"layer {index} ({spec}): kernel_size must be >= 1")
    if spec.kind == "LeakyReLU" and not 0.0 < spec.alpha < 1.0:
        raise ConfigurationError(f"layer {index} ({spec}): alpha must lie in (0, 1)")


# --------------------------------------------------------------------------
# network

class Network:
    """A fixed chain of layers sharing one flat parameter vector."""

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int], seed: int = 0):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.layers = []
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            _validate_spec(spec, i)
            layer = _LAYERS[spec.kind](spec, shape, i)
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape = shape
        self.offsets = np.cumsum([0] + [l.n_params for l in self.layers])
        self.theta = np.zeros(int(self.offsets[-1]))
        self._grad = np.zeros_like(self.theta)
        for layer, a, b in zip(self.layers, self.offsets[:-1], self.offsets[1:]):
            layer.bind(self.theta[a:b], self._grad[a:b])
        rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            layer.init(rng)
        self.input_gradient = None
        self._recorded = False

    @property
    def n_params(self) -> int:
        return self.theta.size

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.theta.shape:
            raise ShapeError(f"expected {self.theta.size} parameters, got {theta.size}")
        self.theta[...] = theta

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        if not np.isfinite(x).all():
            raise NonFiniteError("network input contains NaN or Inf")
        for layer in self.layers:
            x = layer.forward(x)
        self._recorded = True
        return x

    __call__ = forward

    def backward(self, grad_output):
        """Back-propagate ``dLoss/dOutput``; returns ``dLoss/dtheta`` (a copy).

        The gradient with respect to the network input is left in
        ``self.input_gradient``.
        """
        if not self._recorded:
            raise ForwardStateError("backward() called without a prior forward()")
        g = np.asarray(grad_output, dtype=float)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self.input_gradient = g
        return self._grad.copy()

    def copy(self) -> "Network":
        net = Network(self.specs, self.input_shape, self.seed)
        net.theta[...] = self.theta
        return net

    def to_dict(self):
        return {"specs": [s.to_dict() for s in self.specs],
                "input_shape": list(self.input_shape),
                "seed": self.seed,
                "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Network":
        net = cls([LayerSpec.from_dict(s) for s in d["specs"]], d["input_shape"], d["seed"])
        net.set_theta(d["theta"])
        return net

    def dump_theta_csv(self, path):
        """Debug dump: one row per parameter with its layer index and offset."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "kind", "offset", "value"])
            for i, (layer, a, b) in enumerate(zip(self.layers, self.offsets[:-1], self.offsets[1:])):
                for j in range(a, b):
                    w.writerow([i, layer.spec.kind, j - a, repr(float(self.theta[j]))])


def build_network(specs: Sequence[LayerSpec], input_shape: Sequence[int], seed: int = 0) -> Network:
    return Network(specs, input_shape, seed)


# --------------------------------------------------------------------------
# presets (architectures used by the dropout models)

def init_output_bias(net: Network, rate: float):
    """Start the last Dense layer at the log-odds of the positive rate.

    Keeps the early BCE gradient from driving hidden ReLUs dead while the
    output is still far from the base rate.
    """
    dense = [layer for layer in net.layers if isinstance(layer, _Dense)]
    if not dense:
        raise ConfigurationError("network has no Dense layer")
    r = float(np.clip(rate, 1e-3, 1 - 1e-3))
    dense[-1].b[...] = np.log(r / (1.0 - r))


def lstm_predictor_specs() -> list:
    return [Conv1D(16, 1), ReLU(), Conv1D(8, 1), ReLU(), LSTM(8), ReLU(),
            Flatten(), Dense(1), Sigmoid()]


def cnn_predictor_specs() -> list:
    return [Conv1D(8, 3), ReLU(), Conv1D(8, 3), ReLU(), Flatten(), Dense(1), Sigmoid()]


def lstm_ae_encoder_specs(bottleneck: int = 8) -> list:
    return [Conv1D(12, 1), LeakyReLU(0.2), BiLSTM(8), LeakyReLU(0.2),
            Conv1D(bottleneck, 1), Flatten()]


def lstm_ae_decoder_specs(n_steps: int, n_channels: int, bottleneck: int = 8) -> list:
    return [Reshape((n_steps, bottleneck)), BiLSTM(6), LeakyReLU(0.2),
            Conv1D(n_channels, 1), Sigmoid()]


def preset(name: str, input_shape: Sequence[int], bottleneck: int = 8) -> list:
    """Layer chains by name: ``lstm-predictor``, ``cnn-predictor``, ``lstm-ae``."""
    n_steps, n_channels = input_shape
    if name == "lstm-predictor":
        return lstm_predictor_specs()
    if name == "cnn-predictor":
        return cnn_predictor_specs()
    if name == "lstm-ae":
        return (lstm_ae_encoder_specs(bottleneck) + [Embedding()]
                + lstm_ae_decoder_specs(n_steps, n_channels, bottleneck))
    raise ConfigurationError(f"unknown preset {name!r}")


# --------------------------------------------------------------------------
# losses

def bce_loss(predictions, labels, sample_weights=None):
    """Weighted-mean binary cross-entropy and its gradient w.r.t. ``predictions``."""
    p = np.asarray(predictions, dtype=float)
    shape = p.shape
    p = p.reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if p.size != y.size:
        raise ShapeError(f"{p.size} predictions but {y.size} labels")
    if sample_weights is None:
        w = np.ones_like(p)
    else:
        w = np.asarray(sample_weights, dtype=float).reshape(-1)
        if w.size != p.size:
            raise ShapeError(f"{p.size} predictions but {w.size} weights")
        if (w < 0).any():
            raise ValueError("sample weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        return 0.0, np.zeros(shape)
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(np.dot(w, losses) / total)
    grad = w * (-y / pc + (1.0 - y) / (1.0 - pc)) / total
    return loss, grad.reshape(shape)


def mse_loss(output, target):
    output = np.asarray(output, dtype=float)
    target = np.asarray(target, dtype=float)
    if output.shape != target.shape:
        raise ShapeError(f"output shape {output.shape} != target shape {target.shape}")
    diff = output - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(state: AdamState, theta: np.ndarray, gradient: np.ndarray):
    """One bias-corrected Adam update, applied to ``theta`` in place.

    Returns ``(theta, state)``.
    """
    gradient = np.asarray(gradient, dtype=float)
    if not (theta.shape == gradient.shape == state.first_moment.shape):
        raise ShapeError(f"theta {theta.shape}, gradient {gradient.shape}, "
                         f"moments {state.first_moment.shape} disagree")
    bad = ~np.isfinite(gradient)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise NonFiniteError(f"{idx.size} non-finite gradient entries (first at index {idx[0]})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment *= b1
    state.first_moment += (1.0 - b1) * gradient
    state.second_moment *= b2
    state.second_moment += (1.0 - b2) * gradient * gradient
    m_hat = state.first_moment / (1.0 - b1 ** state.step)
    v_hat = state.second_moment / (1.0 - b2 ** state.step)
    theta -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return theta, state


# --------------------------------------------------------------------------
# training helpers

def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches; the last partial batch is kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0


def fit(net: Network, X, target, loss: str = "bce", config: TrainingConfig = TrainingConfig(),
        sample_weights=None, on_epoch: Callable | None = None) -> list:
    """Minibatch Adam training of ``net``; returns the per-epoch mean loss."""
    from .errors import TrainingDivergedError

    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(net.n_params, config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        total = 0.0
        for idx in iterate_minibatches(n, config.batch_size, rng):
            out = net.forward(X[idx])
            if loss == "bce":
                w = None if sample_weights is None else sample_weights[idx]
                value, g = bce_loss(out, target[idx], w)
            else:
                value, g = mse_loss(out, target[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} in epoch {epoch}", epoch=epoch)
            adam_step(state, net.theta, net.backward(g))
            total += value * len(idx)
        trace.append(total / max(n, 1))
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    return trace
