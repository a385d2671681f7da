"""Minimal reverse-mode feed-forward network core.

Everything operates on float64 numpy arrays. Parameters live in a flat
vector (ParamStore) carved into named segments, so a whole model can be
updated by one Adam step and segments can be shared between submodels by
aliasing views of the same storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity", "leaky_relu")

LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer followed by an elementwise activation."""

    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(
                f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}"
            )


class ParamStore:
    """Flat float64 parameter vector with named, shaped segment views.

    Views returned by :meth:`view` alias the flat storage, so in-place
    updates of ``values`` propagate to every view and vice versa.
    """

    def __init__(self, segments: Sequence[tuple[str, np.ndarray]]):
        names = [name for name, _ in segments]
        if len(set(names)) != len(names):
            raise ConfigurationError("segment names must be unique")
        self._slots: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        chunks = []
        for name, arr in segments:
            arr = np.asarray(arr, dtype=np.float64)
            self._slots[name] = (offset, arr.shape)
            chunks.append(arr.reshape(-1))
            offset += arr.size
        self.values = (
            np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float64)
        )

    @property
    def total_len(self) -> int:
        return self.values.size

    @property
    def segment_names(self) -> list[str]:
        return list(self._slots)

    def view(self, name: str) -> np.ndarray:
        offset, shape = self._slots[name]
        size = int(np.prod(shape)) if shape else 1
        return self.values[offset : offset + size].reshape(shape)

    def copy(self) -> "ParamStore":
        dup = self.zeros_like()
        dup.values[:] = self.values
        return dup

    def zeros_like(self) -> "ParamStore":
        dup = ParamStore.__new__(ParamStore)
        dup._slots = dict(self._slots)
        dup.values = np.zeros_like(self.values)
        return dup


@dataclass
class AdamState:
    """Adam optimizer state paired with one ParamStore."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("beta1 and beta2 must lie in [0, 1)")
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise ConfigurationError("lr and eps must be positive")

    @classmethod
    def fresh(cls, store: ParamStore, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            first_moment=np.zeros(store.total_len),
            second_moment=np.zeros(store.total_len),
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def validate_chain(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigurationError("need at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ConfigurationError(
                f"layer chain mismatch: {a.out_dim} feeds a layer expecting {b.in_dim}"
            )


def init_layer(rng: np.random.Generator, in_dim: int, out_dim: int):
    """Weight and bias drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    limit = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    b = rng.uniform(-limit, limit, size=out_dim)
    return w, b


def init_mlp(specs: Sequence[LayerSpec], seed: int) -> ParamStore:
    """Initialize an MLP; segments are named L{i}.W / L{i}.b in layer order."""
    validate_chain(specs)
    rng = np.random.default_rng(seed)
    segments = []
    for i, spec in enumerate(specs):
        w, b = init_layer(rng, spec.in_dim, spec.out_dim)
        segments.append((f"L{i}.W", w))
        segments.append((f"L{i}.b", b))
    return ParamStore(segments)


def mlp_layers(store: ParamStore, specs: Sequence[LayerSpec]):
    """Materialize (W, b, activation) view triples for a plain MLP store."""
    return [
        (store.view(f"L{i}.W"), store.view(f"L{i}.b"), spec.activation)
        for i, spec in enumerate(specs)
    ]


def _activate(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "leaky_relu":
        return np.where(pre > 0.0, pre, LEAKY_SLOPE * pre)
    return pre


def _activation_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    # relu subgradient at 0 is taken as 0
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "leaky_relu":
        return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    return np.ones_like(pre)


def layers_forward(layers, x: np.ndarray) -> np.ndarray:
    """Forward pass through (W, b, activation) triples; rows are batch items."""
    h = x
    for w, b, act in layers:
        if h.shape[1] != w.shape[1]:
            raise ShapeError(f"input width {h.shape[1]} != layer fan-in {w.shape[1]}")
        h = _activate(h @ w.T + b, act)
    return h


def layers_forward_trace(layers, x: np.ndarray):
    """Forward pass that additionally records per-layer inputs and pre-activations."""
    h = x
    trace = []
    for w, b, act in layers:
        if h.shape[1] != w.shape[1]:
            raise ShapeError(f"input width {h.shape[1]} != layer fan-in {w.shape[1]}")
        pre = h @ w.T + b
        post = _activate(pre, act)
        trace.append((h, pre, post))
        h = post
    return h, trace


def layers_backward(layers, trace, upstream: np.ndarray, grad_layers) -> np.ndarray:
    """Reverse pass for the batch-summed dot product <output, upstream>.

    Accumulates (+=) parameter gradients into grad_layers, a parallel list of
    (dW, db) arrays, so shared segments can collect contributions from several
    passes. Returns the gradient with respect to the input batch.
    """
    if upstream.shape != trace[-1][2].shape:
        raise ShapeError(
            f"upstream shape {upstream.shape} != output shape {trace[-1][2].shape}"
        )
    delta = upstream
    for (w, b, act), (inp, pre, post), (dw, db) in zip(
        reversed(layers), reversed(trace), reversed(grad_layers)
    ):
        delta = delta * _activation_grad(pre, post, act)
        dw += delta.T @ inp
        db += delta.sum(axis=0)
        delta = delta @ w
    return delta


def forward(store: ParamStore, specs: Sequence[LayerSpec], x: np.ndarray) -> np.ndarray:
    """MLP forward over a batch (rows are samples)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return layers_forward(mlp_layers(store, specs), x)


def backward(store, specs, x: np.ndarray, upstream: np.ndarray):
    """Exact gradients of sum(output * upstream) w.r.t. all parameters and x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    layers = mlp_layers(store, specs)
    out, trace = layers_forward_trace(layers, x)
    grads = store.zeros_like()
    grad_layers = [
        (grads.view(f"L{i}.W"), grads.view(f"L{i}.b")) for i in range(len(specs))
    ]
    dx = layers_backward(layers, trace, upstream, grad_layers)
    return grads, dx


def adam_step(params: ParamStore, grads, state: AdamState):
    """One in-place Adam update with bias correction; returns (params, state)."""
    g = grads.values if isinstance(grads, ParamStore) else np.asarray(grads)
    if g.shape != params.values.shape:
        raise ShapeError(
            f"gradient length {g.size} != parameter length {params.total_len}"
        )
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * g * g
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    params.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass(frozen=True)
class MixtureArchitecture:
    """Dimensions and layer widths of a mixture of encoder/decoder MLPs.

    Encoders share every layer except the last one; decoders share every
    layer except the first one. Free layers exist once per cluster.
    """

    ambient_dim: int
    latent_dim: int
    hidden: tuple[int, ...]
    clusters: int

    def __post_init__(self):
        if self.ambient_dim < 1 or self.latent_dim < 1 or self.clusters < 1:
            raise ConfigurationError("dimensions and cluster count must be >= 1")
        if not self.hidden or any(hh < 1 for hh in self.hidden):
            raise ConfigurationError("need at least one hidden layer of width >= 1")

    def encoder_dims(self) -> list[int]:
        return [self.ambient_dim, *self.hidden, self.latent_dim]

    def decoder_dims(self) -> list[int]:
        return [self.latent_dim, *reversed(self.hidden), self.ambient_dim]


def param_count(arch: MixtureArchitecture) -> int:
    """Exact number of free scalars (weights plus biases) in the mixture."""

    def affine(i, o):
        return i * o + o

    enc = arch.encoder_dims()
    dec = arch.decoder_dims()
    total = 0
    for i in range(len(enc) - 1):
        mult = arch.clusters if i == len(enc) - 2 else 1
        total += mult * affine(enc[i], enc[i + 1])
    for i in range(len(dec) - 1):
        mult = arch.clusters if i == 0 else 1
        total += mult * affine(dec[i], dec[i + 1])
    return total
