"""Small dense networks with hand-written reverse-mode gradients.

The learner only ever needs MLPs of the shape in -> hidden... -> out with
SiLU on the hidden layers, so the whole autodiff surface is one forward
cache and one backward sweep, kept in numpy float64 so analytic gradients
can be pinned against central finite differences to 1e-4 relative.

Parameters live in a flat list-of-arrays layout [W0, b0, W1, b1, ...];
the Adam optimizer below operates on that same layout.
"""

from __future__ import annotations

import numpy as np


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


class DenseNet:
    """Affine-SiLU stack: hidden layers use SiLU, output layer is linear."""

    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for fan_in, fan_out in zip(self.widths, self.widths[1:]):
            # LeCun-style scaling keeps SiLU pre-activations O(1)
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, flat: list[np.ndarray]) -> None:
        if len(flat) != 2 * self.n_layers:
            raise ValueError("parameter list length mismatch")
        for i in range(self.n_layers):
            self.weights[i] = flat[2 * i]
            self.biases[i] = flat[2 * i + 1]

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.widths = self.widths
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Batched forward pass; pass a list as `cache` to enable backward."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.widths[0]:
            raise ValueError(
                f"input dim {x.shape[1]} does not match net input {self.widths[0]}"
            )
        h = x
        if cache is not None:
            cache.clear()
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            last = i == self.n_layers - 1
            if cache is not None:
                cache.append((h, z))
            h = z if last else silu(z)
        return h

    def backward(
        self, cache: list, grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Reverse sweep given d(loss)/d(output).

        Returns (param_grads in [dW0, db0, ...] layout, d(loss)/d(input)).
        """
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)  # type: ignore[list-item]
        for i in range(self.n_layers - 1, -1, -1):
            h_in, z = cache[i]
            if i != self.n_layers - 1:
                g = g * silu_grad(z)
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def net_forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def net_gradients(net: DenseNet, loss_fn, x: np.ndarray):
    """Exact parameter gradients of a scalar loss over the net output.

    `loss_fn(y) -> (loss, dloss/dy)` supplies the output-side gradient;
    returns (loss, param grads, input grads).
    """
    cache: list = []
    y = net.forward(x, cache)
    loss, grad_y = loss_fn(y)
    grads, grad_x = net.backward(cache, grad_y)
    return loss, grads, grad_x


def finite_difference_gradients(
    net: DenseNet,
    loss_fn,
    x: np.ndarray,
    h: float = 1e-4,
    coords: list[tuple[int, int]] | None = None,
) -> list[np.ndarray]:
    """Central-difference oracle for the parameter gradients.

    By default perturbs every coordinate; for large nets pass `coords`
    as (param_index, flat_offset) pairs to spot-check a sample (entries
    not probed are returned as NaN).
    """
    params = net.params()
    grads = [np.full(p.shape, np.nan) for p in params]
    if coords is None:
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    for i, j in coords:
        p = params[i]
        orig = p.flat[j]
        p.flat[j] = orig + h
        lp, _ = loss_fn(net.forward(x))
        p.flat[j] = orig - h
        lm, _ = loss_fn(net.forward(x))
        p.flat[j] = orig
        grads[i].flat[j] = (lp - lm) / (2.0 * h)
    return grads


class Adam:
    """Adaptive-moment gradient descent over a list-of-arrays parameter set."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self._buffers: dict[tuple, np.ndarray] = {}

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        scale = self.lr / b1c
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            np.multiply(g, g, out=self._scratch(g))
            sq = self._scratch(g)
            v += (1.0 - self.beta2) * (sq - v)
            np.divide(v, b2c, out=sq)
            np.sqrt(sq, out=sq)
            sq += self.eps
            np.divide(m, sq, out=sq)
            sq *= scale
            p -= sq

    def _scratch(self, like: np.ndarray) -> np.ndarray:
        buf = self._buffers.get(like.shape)
        if buf is None:
            buf = np.empty_like(like)
            self._buffers[like.shape] = buf
        return buf

    def state(self) -> dict:
        return {
            "t": self.t,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.asarray(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.asarray(a, dtype=np.float64) for a in state["v"]]


def polyak_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, in place."""
    for tw, sw in zip(target.weights, source.weights):
        tw += tau * (sw - tw)
    for tb, sb in zip(target.biases, source.biases):
        tb += tau * (sb - tb)
