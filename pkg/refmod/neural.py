"""
Dense feed-forward networks with hand-written reverse-mode gradients.

Inputs are either a single vector of shape (in,) or a batch of shape (B, in);
batch gradients are summed over rows, so callers scale dLoss/dOut for means.
"""

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from refmod.errors import TrainingDivergedError, ValidationError


class Activation(Enum):
    IDENTITY = 0
    RELU = 1
    TANH = 2


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0.0).astype(float)
    if kind is Activation.TANH:
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Mlp:
    """Weights are (out, in) matrices; one bias vector per layer."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output: Activation = Activation.IDENTITY
    hidden: Activation = Activation.RELU

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("an MLP needs one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"layer {i} weight/bias shapes do not match")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValidationError(f"layer {i} input size does not chain with layer {i - 1}")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def init(cls, sizes: Sequence[int], output: Activation = Activation.IDENTITY,
             seed: Union[int, np.random.Generator] = 0) -> "Mlp":
        """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, output)

    @classmethod
    def zeros(cls, sizes: Sequence[int], output: Activation = Activation.IDENTITY) -> "Mlp":
        weights = [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(o) for o in sizes[1:]]
        return cls(weights, biases, output)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output, self.hidden)

    def parameters(self) -> List[np.ndarray]:
        """Flat parameter list: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class Gradients:
    """Parameter gradients, shape-congruent with their network."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def _as_batch(net: Mlp, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.sizes[0]:
        raise ValidationError(f"input has shape {x.shape}, network expects {net.sizes[0]} features")
    return batch, single


def _forward_cache(net: Mlp, batch: np.ndarray):
    activations = [batch]
    pre = []
    last = len(net.weights) - 1
    a = batch
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = _activate(net.output if i == last else net.hidden, z)
        pre.append(z)
        activations.append(a)
    return pre, activations


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a vector or a batch of row vectors."""
    batch, single = _as_batch(net, x)
    _, activations = _forward_cache(net, batch)
    out = activations[-1]
    return out[0] if single else out


def backward(net: Mlp, x: np.ndarray, d_out: np.ndarray) -> Tuple[Gradients, np.ndarray]:
    """
    Reverse-mode gradients of the forward map.

    Args:
        net: the network
        x: input vector or batch
        d_out: dLoss/dOutput, same leading shape as the output

    Returns:
        (parameter gradients, dLoss/dInput)
    """
    batch, single = _as_batch(net, x)
    d = np.asarray(d_out, dtype=float)
    d = d[None, :] if single else d
    if d.shape != (batch.shape[0], net.sizes[-1]):
        raise ValidationError(f"output gradient has shape {np.shape(d_out)}, expected {net.sizes[-1]} outputs")

    pre, activations = _forward_cache(net, batch)
    last = len(net.weights) - 1
    grad_w: List[np.ndarray] = [None] * len(net.weights)
    grad_b: List[np.ndarray] = [None] * len(net.weights)
    for i in range(last, -1, -1):
        kind = net.output if i == last else net.hidden
        dz = d * _activation_grad(kind, pre[i], activations[i + 1])
        grad_w[i] = dz.T @ activations[i]
        grad_b[i] = dz.sum(axis=0)
        d = dz @ net.weights[i]
    return Gradients(grad_w, grad_b), (d[0] if single else d)


@dataclass
class AdamState:
    """First/second moment estimates and step count."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(net: Mlp, grads: Gradients, state: AdamState, lr: float) -> Tuple[Mlp, AdamState]:
    """
    One adaptive-moment update. Returns a new network and optimizer state;
    the inputs are left untouched.
    """
    if not grads.is_finite():
        raise TrainingDivergedError("non-finite gradient rejected by the optimizer")
    g_list = grads.parameters()
    p_list = net.parameters()
    if len(g_list) != len(p_list) or any(g.shape != p.shape for g, p in zip(g_list, p_list)):
        raise ValidationError("gradient shapes do not match the network")

    t = state.t + 1
    m_new, v_new, p_new = [], [], []
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(p_list, g_list, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        p_new.append(p - lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps))
        m_new.append(m)
        v_new.append(v)
    updated = Mlp(p_new[0::2], p_new[1::2], net.output, net.hidden)
    return updated, AdamState(m_new, v_new, t, state.beta1, state.beta2, state.eps)


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """target <- tau * online + (1 - tau) * target"""
    weights = [tau * w + (1.0 - tau) * tw for w, tw in zip(online.weights, target.weights)]
    biases = [tau * b + (1.0 - tau) * tb for b, tb in zip(online.biases, target.biases)]
    return Mlp(weights, biases, target.output, target.hidden)


# Checkpoint layout (all little-endian):
#   b"RMNN", u16 version, u32 n_sizes, u32 sizes[n_sizes], u8 hidden, u8 output,
#   then per layer: float64 weights (row-major, out x in), float64 biases.
_MAGIC = b"RMNN"
_VERSION = 1


def save_network(net: Mlp, path: Union[str, Path]) -> Path:
    path = Path(path)
    sizes = net.sizes
    header = _MAGIC + struct.pack("<HI", _VERSION, len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    header += struct.pack("<BB", net.hidden.value, net.output.value)
    blocks = [header]
    for w, b in zip(net.weights, net.biases):
        blocks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        blocks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    path.write_bytes(b"".join(blocks))
    return path


def load_network(path: Union[str, Path]) -> Mlp:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValidationError(f"{path} is not a refmod network file")
    offset = 4
    version, n_sizes = struct.unpack_from("<HI", data, offset)
    offset += struct.calcsize("<HI")
    if version != _VERSION:
        raise ValidationError(f"unsupported network file version {version}")
    sizes = struct.unpack_from(f"<{n_sizes}I", data, offset)
    offset += 4 * n_sizes
    hidden, output = struct.unpack_from("<BB", data, offset)
    offset += 2
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        count = fan_in * fan_out
        w = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(fan_out, fan_in)
        offset += 8 * count
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if offset != len(data):
        raise ValidationError(f"{path} has {len(data) - offset} trailing bytes")
    return Mlp(weights, biases, Activation(output), Activation(hidden))
