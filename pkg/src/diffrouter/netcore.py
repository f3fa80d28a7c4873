"""Minimal dense-network core: forward, reverse-mode gradients, AdamW.

Parameters are float64 numpy arrays. Weights have shape (out, in); the
forward map for one layer is h @ W.T + b with SiLU between layers (none
after the last). The optimizer operates on flat lists of parameter arrays
so the router can append its embedding table to the network parameters.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

ACTIVATIONS = ("silu", "identity")

CHECKPOINT_MAGIC = "diffrouter-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Raised when non-finite gradients or losses are encountered."""


@dataclass
class DenseNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "silu"

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def param_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class GradBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def param_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def add_(self, other: "GradBuffer") -> None:
        for a, b in zip(self.param_list(), other.param_list()):
            a += b

    def scale_(self, c: float) -> None:
        for a in self.param_list():
            a *= c


def init_dense(widths: list[int], rng: np.random.Generator, activation: str = "silu",
               scale: float | None = None) -> DenseNet:
    """He-style Gaussian init; biases start at zero."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unsupported activation {activation!r}")
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        s = scale if scale is not None else np.sqrt(2.0 / n_in)
        weights.append(rng.normal(0.0, s, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return DenseNet(weights=weights, biases=biases, activation=activation)


def zeros_like_grads(net: DenseNet) -> GradBuffer:
    return GradBuffer(weights=[np.zeros_like(w) for w in net.weights],
                      biases=[np.zeros_like(b) for b in net.biases])


def _activate(net: DenseNet, z: np.ndarray) -> np.ndarray:
    if net.activation == "silu":
        return _kernels.silu(z)
    return z


def _activate_grad(net: DenseNet, z: np.ndarray) -> np.ndarray:
    if net.activation == "silu":
        return _kernels.silu_grad(z)
    return np.ones_like(z)


def forward_cached(net: DenseNet, x: np.ndarray):
    """Forward pass keeping pre-activations for the backward pass.

    x: (B, d_in) or (d_in,). Returns (output, cache).
    """
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.weights[0].shape[1]:
        raise ValueError(f"input width {h.shape[1]} != layer width {net.weights[0].shape[1]}")
    hs = [h]
    zs = []
    n_layers = len(net.weights)
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = _kernels.affine(h, w, b)
        zs.append(z)
        h = _activate(net, z) if li < n_layers - 1 else z
        hs.append(h)
    out = h[0] if squeeze else h
    return out, (hs, zs, squeeze)


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    out, _ = forward_cached(net, x)
    return out


def backward(net: DenseNet, cache, output_grad: np.ndarray):
    """Backpropagate output_grad; returns (GradBuffer, input_grad)."""
    hs, zs, squeeze = cache
    g = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
    if g.shape != zs[-1].shape:
        raise ValueError(f"output grad shape {g.shape} != output shape {zs[-1].shape}")
    grads = GradBuffer(weights=[None] * len(net.weights), biases=[None] * len(net.biases))
    n_layers = len(net.weights)
    for li in range(n_layers - 1, -1, -1):
        if li < n_layers - 1:
            g = g * _activate_grad(net, zs[li])
        grads.weights[li] = g.T @ hs[li]
        grads.biases[li] = g.sum(axis=0)
        g = g @ net.weights[li]
    gx = g[0] if squeeze else g
    return grads, gx


@dataclass
class OptimizerState:
    """AdamW with decoupled weight decay and linear learning-rate warm-up."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def effective_lr(self) -> float:
        if self.warmup_steps > 0 and self.step < self.warmup_steps:
            return self.lr * (self.step + 1) / self.warmup_steps
        return self.lr


def optimizer_step(state: OptimizerState, params: list[np.ndarray] | DenseNet,
                   grads: list[np.ndarray] | GradBuffer) -> None:
    """One in-place AdamW update. Raises DivergenceError on non-finite grads."""
    if isinstance(params, DenseNet):
        params = params.param_list()
    if isinstance(grads, GradBuffer):
        grads = grads.param_list()
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient encountered; run aborted")
    lr = state.effective_lr()
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _kernels.adamw_update(p, g, m, v, lr, state.beta1, state.beta2,
                              state.eps, state.weight_decay, state.step)


def save_params(path, header: dict, arrays: list[np.ndarray]) -> None:
    """Checkpoint format: text header lines "key=value", a "---" separator,
    then per array a little-endian uint32 float count followed by the values
    as little-endian float32."""
    lines = [CHECKPOINT_MAGIC, f"version={CHECKPOINT_VERSION}"]
    for k in sorted(header):
        lines.append(f"{k}={header[k]}")
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in arrays:
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            fh.write(struct.pack("<I", flat.size))
            fh.write(flat.tobytes())


def load_params(path) -> tuple[dict, list[np.ndarray]]:
    """Returns (header dict, flat float64 arrays in file order)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.index(b"---\n")
    text = blob[:sep].decode("utf-8").strip().split("\n")
    if text[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a diffrouter checkpoint")
    header = {}
    for line in text[1:]:
        k, _, val = line.partition("=")
        header[k] = val
    offset = sep + 4
    arrays = []
    while offset < len(blob):
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arrays.append(arr.astype(np.float64))
        offset += 4 * count
    return header, arrays
