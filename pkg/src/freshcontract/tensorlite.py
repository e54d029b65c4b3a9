"""Sequential dense networks with hand-written reverse-mode gradients.

Everything operates on row batches: an input of shape ``(n, input_dim)``
produces an output of shape ``(n, output_dim)``. A 1-D input is treated
as a batch of one and returned 1-D.
"""

from __future__ import annotations

import copy

import numpy as np
from scipy.special import expit as _sigmoid

ACTIVATIONS = ("relu", "tanh", "silu", "identity")


class NumericError(FloatingPointError):
    """A non-finite value showed up where training cannot continue."""


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "silu":
        return z * _sigmoid(z)
    return z


def _activate_with_grad(name, z):
    """Activation output together with its derivative w.r.t. ``z``."""
    if name == "relu":
        return np.maximum(z, 0.0), (z > 0).astype(z.dtype)
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if name == "silu":
        s = _sigmoid(z)
        a = z * s
        return a, s + a * (1.0 - s)
    return z, None


class DenseNet:
    """A stack of affine layers, each followed by its activation.

    Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
    """

    def __init__(self, sizes, hidden_activation="silu", output_activation="identity",
                 rng=None, activations=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = [hidden_activation] * (n_layers - 1) + [output_activation]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer is required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.sizes = [int(s) for s in sizes]
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @classmethod
    def from_layers(cls, layers):
        """Build from explicit ``(W, b, activation)`` triples."""
        net = cls.__new__(cls)
        net.weights = [np.array(W, dtype=float) for W, _, _ in layers]
        net.biases = [np.array(b, dtype=float).reshape(-1) for _, b, _ in layers]
        net.activations = [a for _, _, a in layers]
        net.sizes = [net.weights[0].shape[1]] + [W.shape[0] for W in net.weights]
        for W_prev, W_next in zip(net.weights[:-1], net.weights[1:]):
            if W_next.shape[1] != W_prev.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for W, b, a in zip(net.weights, net.biases, net.activations):
            if b.shape != (W.shape[0],):
                raise ValueError("bias length must match layer output size")
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        return net

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def output_dim(self):
        return self.sizes[-1]

    @property
    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]``; arrays are shared, not copied."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self):
        return copy.deepcopy(self)

    def same_architecture(self, other):
        return self.sizes == other.sizes and self.activations == other.activations

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of width {self.input_dim}, got shape {x.shape}"
            )
        return x, squeeze

    def forward(self, x):
        x, squeeze = self._as_batch(x)
        h = x
        for W, b, act in zip(self.weights, self.biases, self.activations):
            h = _activate(act, h @ W.T + b)
        return h[0] if squeeze else h

    def forward_tape(self, x):
        """Forward pass that also returns what :meth:`backward_tape` needs."""
        x, squeeze = self._as_batch(x)
        inputs, derivs = [], []
        h = x
        for W, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            h, d = _activate_with_grad(act, h @ W.T + b)
            derivs.append(d)
        tape = (inputs, derivs, h.shape, squeeze)
        return (h[0] if squeeze else h), tape

    def backward_tape(self, tape, grad_out):
        """Gradients of ``sum(grad_out * output)``.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` laid out
        like :attr:`params`.
        """
        inputs, derivs, out_shape, squeeze = tape
        g = np.asarray(grad_out, dtype=float)
        if squeeze:
            g = g[None, :] if g.ndim == 1 else g
        if g.shape != out_shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output {out_shape}")
        grads = [None] * (2 * len(self.weights))
        for i in reversed(range(len(self.weights))):
            dz = g if derivs[i] is None else g * derivs[i]
            grads[2 * i] = dz.T @ inputs[i]
            grads[2 * i + 1] = dz.sum(axis=0)
            g = dz @ self.weights[i]
        return grads, (g[0] if squeeze else g)

    def backward(self, x, grad_out):
        _, tape = self.forward_tape(x)
        return self.backward_tape(tape, grad_out)


def forward(net: DenseNet, x):
    return net.forward(x)


def backward(net: DenseNet, x, grad_out):
    return net.backward(x, grad_out)


def add_grads(acc, grads):
    if acc is None:
        return [g.copy() for g in grads]
    for a, g in zip(acc, grads):
        a += g
    return acc


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient; aborting update")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_dict(self):
        return {
            "lr": self.lr, "betas": [self.beta1, self.beta2], "eps": self.eps,
            "step_count": self.step_count,
            "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v],
        }


def optimizer_step(state: Adam, params, grads):
    return state.step(params, grads)


def soft_update(target: DenseNet, online: DenseNet, eta: float) -> DenseNet:
    """Polyak mixing ``target <- eta * online + (1 - eta) * target`` in place."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"mixing factor must lie in [0, 1], got {eta}")
    if not target.same_architecture(online):
        raise ValueError("target and online networks differ in architecture")
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - eta
        pt += eta * po
    return target
