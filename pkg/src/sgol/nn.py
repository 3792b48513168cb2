"""Layers, optimizer and checkpoint I/O built on :mod:`sgol.tensor`."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SGOL"
CHECKPOINT_VERSION = 1


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Parameter container; parameters and submodules are found by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, arr in state.items():
            if k not in own:
                continue
            if own[k].shape != arr.shape:
                raise T.ShapeError(f"{k}: expected {own[k].shape}, got {arr.shape}")
            own[k].data = np.array(arr, dtype=np.float64)

    def zero_grad(self) -> None:
        T.zero_grad(self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.weight = xavier_uniform(rng, (d_out, d_in), d_in, d_out)
        self.bias = zeros_param((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.d_in:
        raise T.ShapeError(f"linear expects trailing dim {layer.d_in}, got {x.shape}")
    if x.ndim == 1:
        return (T.matmul(x.reshape((1, -1)), layer.weight.T) + layer.bias).reshape((layer.d_out,))
    return T.matmul(x, layer.weight.T) + layer.bias


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        if k not in (1, 3):
            raise ValueError("kernel size must be 1 or 3")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.padding = stride, padding
        self.weight = xavier_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
        self.bias = zeros_param((c_out,))

    def out_size(self, h: int) -> int:
        return (h + 2 * self.padding - self.k) // self.stride + 1

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d_forward(self, x)


def conv2d_forward(layer: Conv2d, x: Tensor) -> Tensor:
    return T.conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.d, self.eps = d, eps
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm_forward(x, self.gain, self.bias, self.eps)


def layernorm_forward(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = T.mean(x, -1, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, -1, keepdims=True)
    return xc / T.sqrt(var + eps) * gain + bias


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)

    def __call__(self, queries, keys_values, query_pos=None, key_pos=None, return_weights=False):
        return mha_forward(self, queries, keys_values, query_pos, key_pos, return_weights)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = x.reshape(tuple(lead) + (n, heads, d // heads))
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return x.transpose(perm)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return x.transpose(perm).reshape(tuple(lead) + (n, h * dh))


def attention_logits(mha: MultiHeadAttention, queries: Tensor, keys: Tensor) -> Tensor:
    """Scaled per-head logits (..., heads, n_q, n_k); inputs already include positions."""
    q = _split_heads(mha.w_q(queries), mha.heads)
    k = _split_heads(mha.w_k(keys), mha.heads)
    scale = 1.0 / math.sqrt(mha.d // mha.heads)
    kt = k.transpose(tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    return T.matmul(q, kt) * scale


def mha_forward(mha, queries, keys_values, query_pos=None, key_pos=None, return_weights=False):
    """Multi-head attention; positional encodings touch queries and keys, never values."""
    if queries.shape[-1] != mha.d or keys_values.shape[-1] != mha.d:
        raise T.ShapeError("attention inputs must have the model width")
    q_in = queries if query_pos is None else queries + query_pos
    k_in = keys_values if key_pos is None else keys_values + key_pos
    weights = T.softmax(attention_logits(mha, q_in, k_in), -1)
    v = _split_heads(mha.w_v(keys_values), mha.heads)
    out = mha.w_o(_merge_heads(T.matmul(weights, v)))
    return (out, weights) if return_weights else out


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.lin1 = Linear(d, hidden, rng)
        self.lin2 = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer without dropout."""

    def __init__(self, d: int, heads: int, ffn: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, pos: Tensor | None = None) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, pos, pos))
        return self.norm2(x + self.ffn(x))


class TransformerDecoderLayer(Module):
    """Post-norm decoder layer: self-attention, cross-attention, feed-forward."""

    def __init__(self, d: int, heads: int, ffn: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn, rng)
        self.norm3 = LayerNorm(d)

    def __call__(self, tgt, memory, query_pos=None, memory_pos=None, return_weights=False):
        tgt = self.norm1(tgt + self.self_attn(tgt, tgt, query_pos, query_pos))
        att, weights = self.cross_attn(tgt, memory, query_pos, memory_pos, return_weights=True)
        tgt = self.norm2(tgt + att)
        out = self.norm3(tgt + self.ffn(tgt))
        return (out, weights) if return_weights else out


class MLP(Module):
    """Stack of linear layers with relu between them (the box head)."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


def positional_encoding_2d(h: int, w: int, d: int, temperature: float = 10000.0) -> np.ndarray:
    """Sinusoidal (d, h, w) encoding: first d/2 channels follow x, last d/2 follow y.

    Within each half, channels alternate sin/cos at geometric frequencies.
    Coordinates are normalized to [0, 2*pi) so the top-left cell is all sin=0, cos=1.
    """
    if d % 4:
        raise ValueError(f"positional encoding width {d} must be divisible by 4")
    half = d // 2
    freqs = temperature ** (-np.arange(half // 2) * 2.0 / half)
    xs = np.arange(w) / w * 2 * np.pi
    ys = np.arange(h) / h * 2 * np.pi

    def encode(coords: np.ndarray) -> np.ndarray:
        ang = coords[:, None] * freqs[None, :]
        out = np.empty((coords.size, half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    ex, ey = encode(xs), encode(ys)
    pe = np.empty((d, h, w))
    pe[:half] = np.broadcast_to(ex.T[:, None, :], (half, h, w))
    pe[half:] = np.broadcast_to(ey.T[:, :, None], (half, h, w))
    return pe


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    frozen: set[str] = field(default_factory=set)
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: AdamWState, named_params) -> None:
    """One decoupled-weight-decay Adam update, in place, skipping frozen names."""
    named_params = list(named_params)
    for name, p in named_params:
        if name in state.frozen or p.grad is None:
            continue
        if not np.isfinite(p.grad).all():
            raise T.NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    for name, p in named_params:
        if name in state.frozen or p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    """Write the flat binary checkpoint; names are kept in the given order."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SGOL checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
        off += 8 * size
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out
