"""Minimal neural substrate: tiny MLPs with exact reverse-mode gradients,
positional encoding, Adam, and a finite-difference checker.

There is no general autodiff here. Forward passes record a tape (layer inputs
and ReLU masks) and backward replays it exactly once in reverse; everything
else in the package chains these building blocks by hand. Batches are rows:
(N, d_in) -> (N, d_out), parameter gradients are summed over the batch.
"""

from dataclasses import dataclass, field

import numpy as np

from flowtrace.errors import DimensionMismatch


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable on both tails
    return np.logaddexp(0.0, x)


def softplus_inv(y: np.ndarray) -> np.ndarray:
    y = np.maximum(y, 1e-9)
    return y + np.log(-np.expm1(-y))


def positional_encoding(x: np.ndarray, octaves: int) -> np.ndarray:
    """Concatenate x with sin/cos(2^k pi x) for k = 0..octaves-1.

    Output length is 3 + 6 * octaves per point.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    parts = [x]
    for k in range(octaves):
        a = (2.0**k) * np.pi * x
        parts.append(np.sin(a))
        parts.append(np.cos(a))
    return np.concatenate(parts, axis=-1)


@dataclass
class Tape:
    """Record of one MLP forward pass: inputs to each affine layer plus the
    positive-preactivation masks of each hidden ReLU."""

    inputs: list = field(default_factory=list)
    masks: list = field(default_factory=list)


class MLP:
    """Affine->ReLU chain with a linear final layer.

    He initialization for hidden layers; the final layer is zero-initialized
    when zero_last is set so downstream modules start at a known fixed point.
    """

    def __init__(self, sizes, rng: np.random.Generator, zero_last: bool = True):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            last = i == len(sizes) - 2
            if last and zero_last:
                w = np.zeros((fan_out, fan_in))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise DimensionMismatch(
                f"MLP expects input dim {self.sizes[0]}, got {x.shape[1]}"
            )
        tape = Tape()
        h = x
        for i in range(self.n_layers):
            tape.inputs.append(h)
            z = h @ self.weights[i].T + self.biases[i]
            if i < self.n_layers - 1:
                mask = z > 0.0
                tape.masks.append(mask)
                h = np.where(mask, z, 0.0)
            else:
                h = z
        return h, tape

    def backward(self, tape: Tape, upstream: np.ndarray):
        """Exact reverse accumulation over a recorded forward pass.

        Returns ([(gW, gb) per layer], input gradient (N, d_in)); parameter
        gradients are summed over the batch.
        """
        g = np.atleast_2d(upstream)
        grads = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                g = np.where(tape.masks[i], g, 0.0)
            x_in = tape.inputs[i]
            grads[i] = (g.T @ x_in, g.sum(axis=0))
            g = g @ self.weights[i]
        return grads, g

    # parameter-dict plumbing for Adam and checkpoints
    def named_params(self, prefix: str) -> dict:
        out = {}
        for i in range(self.n_layers):
            out[f"{prefix}.W{i}"] = self.weights[i]
            out[f"{prefix}.b{i}"] = self.biases[i]
        return out

    def named_grads(self, prefix: str, grads) -> dict:
        out = {}
        for i, (gw, gb) in enumerate(grads):
            out[f"{prefix}.W{i}"] = gw
            out[f"{prefix}.b{i}"] = gb
        return out

    def load_named(self, prefix: str, params: dict):
        for i in range(self.n_layers):
            self.weights[i] = np.array(params[f"{prefix}.W{i}"], dtype=np.float64)
            self.biases[i] = np.array(params[f"{prefix}.b{i}"], dtype=np.float64)


class Adam:
    """Standard bias-corrected Adam over a dict of named parameter arrays.

    The dict values are mutated in place so live model objects see updates.
    """

    def __init__(self, params: dict, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for k, g in grads.items():
            p = self.params[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}.step": np.array(self.step_count, dtype=np.int64)}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state(self, prefix: str, arrays: dict):
        self.step_count = int(arrays[f"{prefix}.step"])
        for k in self.params:
            self.m[k] = np.array(arrays[f"{prefix}.m.{k}"])
            self.v[k] = np.array(arrays[f"{prefix}.v.{k}"])


def finite_diff_check(f, params: dict, h: float = 1e-4, abs_floor: float = 1e-6) -> float:
    """Worst relative error between f's analytic gradients and central
    differences over every element of every parameter array.

    f(params) must return (scalar, grads_dict) and be deterministic.
    """
    _, grads = f(params)
    worst = 0.0
    for k, p in params.items():
        g = np.atleast_1d(np.asarray(grads[k], dtype=np.float64))
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp, _ = f(params)
            flat[i] = orig - h
            fm, _ = f(params)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            diff = abs(fd - gflat[i])
            if diff < abs_floor:  # absolute-tolerance path for ~zero gradients
                continue
            worst = max(worst, diff / max(abs(fd), abs(gflat[i])))
    return worst
