"""Feed-forward embedding networks and the Adam optimizer.

One MLP class serves the feature embedder, the pairwise relation scorer,
and the label-count predictor; they differ only in widths and output
activation.
"""

from __future__ import annotations

import numpy as np

from .autodiff import NumericalError, Tensor, add, matmul, relu, sigmoid


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Fully connected network: linear layers with ReLU between them.

    ``output_activation`` may be None (linear) or "sigmoid".
    """

    def __init__(self, widths, rng: np.random.Generator, output_activation=None):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if output_activation not in (None, "sigmoid"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.widths = list(widths)
        self.output_activation = output_activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(Tensor(glorot_uniform(rng, fan_in, fan_out),
                                       requires_grad=True))
            # Biases draw from the same bound; exactly-zero biases leave
            # collapsed rows sitting on the ReLU kink.
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.biases.append(Tensor(rng.uniform(-bound, bound, size=fan_out),
                                      requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        """Apply the network to a batch of row vectors."""
        out = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = add(matmul(out, w), b)
            if i < last:
                out = relu(out)
        if self.output_activation == "sigmoid":
            out = sigmoid(out)
        return out

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def set_parameters(self, params):
        if len(params) != 2 * len(self.weights):
            raise ValueError("parameter count mismatch")
        self.weights = list(params[0::2])
        self.biases = list(params[1::2])

    def to_arrays(self):
        return {
            "widths": self.widths,
            "output_activation": self.output_activation,
            "weights": [w.data.tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
        }

    @classmethod
    def from_arrays(cls, payload):
        net = cls.__new__(cls)
        net.widths = list(payload["widths"])
        net.output_activation = payload["output_activation"]
        net.weights = [Tensor(np.array(w), requires_grad=True)
                       for w in payload["weights"]]
        net.biases = [Tensor(np.array(b), requires_grad=True)
                      for b in payload["biases"]]
        return net


class Adam:
    """Adam with bias correction and a step-halving schedule.

    The effective learning rate is ``lr * 0.5 ** (episode // halve_every)``
    where ``episode`` counts completed steps, so the rate halves every
    ``halve_every`` episodes.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, halve_every: int = 10000):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.halve_every = halve_every
        self.steps = 0
        self._m = None
        self._v = None

    def effective_lr(self) -> float:
        return self.lr * 0.5 ** (self.steps // self.halve_every)

    def step(self, params, grads):
        """Return updated parameter tensors; moments update in place."""
        if self._m is None:
            self._m = [np.zeros_like(p.data) for p in params]
            self._v = [np.zeros_like(p.data) for p in params]
        if len(params) != len(self._m) or len(grads) != len(self._m):
            raise ValueError("parameter/gradient count changed between steps")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient at step {self.steps}")
        lr = self.effective_lr()
        self.steps += 1
        t = self.steps
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1 ** t)
            v_hat = self._v[i] / (1.0 - self.beta2 ** t)
            new_value = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(new_value)):
                raise NumericalError(f"non-finite parameter after step {t}")
            updated.append(Tensor(new_value, requires_grad=True))
        return updated
