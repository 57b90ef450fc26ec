"""Gated memory fusion kernels: project, gate, long-span conv, residual.

Forward path for one inserted layer:

    k_m = mem @ W_K            v_m = mem @ W_V
    a   = sigmoid(hidden . k_m / sqrt(d))          (one gate per token)
    g   = a * v_m
    delta = depthwise_conv(g)                      (span w, zero "same" padding)
    fused = hidden + delta

The conv kernel starts at exactly zero, so a freshly inserted layer is an
identity map: fused == hidden until training moves the kernel. Backward
passes are written out analytically and checked against central finite
differences in the test suite.

Every kernel computes in the dtype of its inputs; training runs float32,
gradient checks convert parameters to float64 first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch
from .hashing import mix_seed

_WK_DOMAIN = 0x574B
_WV_DOMAIN = 0x5756


@dataclass
class FusionLayer:
    """Learnable parameters of one inserted memory-fusion layer.

    conv_mode "token" convolves the gated memory feature along the token
    axis. Mode "slot-channel" groups the d channels into `slot_groups`
    contiguous segments (aligned with the slot layout that produced the
    memory vector) and convolves across segments instead.
    """

    layer: int
    w_k: np.ndarray          # (d_m, d)
    w_v: np.ndarray          # (d_m, d)
    conv_kernel: np.ndarray  # (span, d)
    conv_mode: str = "token"
    slot_groups: int = 1

    def __post_init__(self) -> None:
        if self.w_k.shape != self.w_v.shape:
            raise DimMismatch(f"w_k {self.w_k.shape} vs w_v {self.w_v.shape}")
        d = self.w_k.shape[1]
        if self.conv_kernel.ndim != 2 or self.conv_kernel.shape[1] != d:
            raise DimMismatch(f"conv kernel {self.conv_kernel.shape} does not end in d={d}")
        if self.conv_mode not in ("token", "slot-channel"):
            raise ValueError(f"unknown conv mode {self.conv_mode!r}")
        if self.conv_mode == "slot-channel" and d % self.slot_groups != 0:
            raise DimMismatch(f"d={d} not divisible by slot_groups={self.slot_groups}")

    @property
    def memory_width(self) -> int:
        return self.w_k.shape[0]

    @property
    def model_width(self) -> int:
        return self.w_k.shape[1]

    @property
    def span(self) -> int:
        return self.conv_kernel.shape[0]

    def astype(self, dtype) -> "FusionLayer":
        return FusionLayer(self.layer, self.w_k.astype(dtype), self.w_v.astype(dtype),
                           self.conv_kernel.astype(dtype), self.conv_mode, self.slot_groups)


def create_fusion_layer(
    layer: int,
    memory_width: int,
    model_width: int,
    span: int,
    seed: int,
    conv_mode: str = "token",
    slot_groups: int = 1,
) -> FusionLayer:
    """Seeded init: W uniform in +-1/sqrt(d_m), conv kernel exactly zero."""
    bound = 1.0 / math.sqrt(memory_width)
    shape = (memory_width, model_width)
    w_k = np.random.default_rng(mix_seed(seed, _WK_DOMAIN, layer)).uniform(
        -bound, bound, shape).astype(np.float32)
    w_v = np.random.default_rng(mix_seed(seed, _WV_DOMAIN, layer)).uniform(
        -bound, bound, shape).astype(np.float32)
    kernel = np.zeros((span, model_width), dtype=np.float32)
    return FusionLayer(layer, w_k, w_v, kernel, conv_mode, slot_groups)


def project(memory_vec: np.ndarray, params: FusionLayer) -> tuple[np.ndarray, np.ndarray]:
    """Memory vector (B, d_m) -> key/value projections (B, d)."""
    if memory_vec.ndim != 2 or memory_vec.shape[1] != params.memory_width:
        raise DimMismatch(
            f"memory {memory_vec.shape} vs projection rows {params.memory_width}")
    return memory_vec @ params.w_k, memory_vec @ params.w_v


def gate(hidden: np.ndarray, k_m: np.ndarray) -> np.ndarray:
    """Token-wise relevance gates in (0, 1); shape (B, L, 1)."""
    if hidden.ndim != 3 or k_m.ndim != 2 or hidden.shape[::2] != k_m.shape:
        raise DimMismatch(f"hidden {hidden.shape} vs k_m {k_m.shape}")
    d = hidden.shape[-1]
    logits = np.einsum("bld,bd->bl", hidden, k_m)[..., None] / math.sqrt(d)
    return _sigmoid(logits)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _shift(x: np.ndarray, offset: int, axis: int) -> np.ndarray:
    """out[i] = x[i + offset] along `axis`, zero-filled at the boundary."""
    if offset == 0:
        return x
    out = np.zeros_like(x)
    n = x.shape[axis]
    if abs(offset) >= n:
        return out
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if offset > 0:
        dst[axis] = slice(0, n - offset)
        src[axis] = slice(offset, n)
    else:
        dst[axis] = slice(-offset, n)
        src[axis] = slice(0, n + offset)
    out[tuple(dst)] = x[tuple(src)]
    return out


def _conv_axes(gated: np.ndarray, params: FusionLayer):
    """(reshaped input, kernel view, conv axis) for the configured mode."""
    if params.conv_mode == "token":
        return gated, params.conv_kernel[:, None, :], 1
    b, l, d = gated.shape
    g = params.slot_groups
    shaped = gated.reshape(b, l, g, d // g)
    kernel = params.conv_kernel.reshape(params.span, 1, g, d // g)
    return shaped, kernel, 2


def conv_span(gated: np.ndarray, params: FusionLayer) -> np.ndarray:
    """Bias-free depthwise convolution with left-biased "same" zero padding."""
    x, kernel, axis = _conv_axes(gated, params)
    pad_left = (params.span - 1) // 2
    out = np.zeros_like(x)
    for t in range(params.span):
        out += kernel[t] * _shift(x, t - pad_left, axis)
    return out.reshape(gated.shape)


def fuse(hidden: np.ndarray, gates: np.ndarray, v_m: np.ndarray, params: FusionLayer
         ) -> tuple[np.ndarray, np.ndarray]:
    """Gated memory feature -> conv -> residual. Returns (delta, fused)."""
    if gates.shape != hidden.shape[:2] + (1,):
        raise DimMismatch(f"gates {gates.shape} vs hidden {hidden.shape}")
    if v_m.shape != hidden.shape[::2]:
        raise DimMismatch(f"v_m {v_m.shape} vs hidden {hidden.shape}")
    gated = gates * v_m[:, None, :]
    delta = conv_span(gated, params)
    return delta, hidden + delta


@dataclass
class FusionCache:
    """Forward intermediates needed by the analytic backward pass."""

    hidden: np.ndarray
    memory_vec: np.ndarray
    k_m: np.ndarray
    v_m: np.ndarray
    gates: np.ndarray
    gated: np.ndarray


@dataclass
class FusionGrads:
    d_hidden: np.ndarray
    d_memory: np.ndarray
    d_w_k: np.ndarray
    d_w_v: np.ndarray
    d_kernel: np.ndarray


def fusion_forward(params: FusionLayer, hidden: np.ndarray, memory_vec: np.ndarray
                   ) -> tuple[np.ndarray, FusionCache]:
    """Full forward for one layer; returns (fused hidden, backward cache)."""
    k_m, v_m = project(memory_vec, params)
    gates = gate(hidden, k_m)
    gated = gates * v_m[:, None, :]
    delta = conv_span(gated, params)
    cache = FusionCache(hidden=hidden, memory_vec=memory_vec, k_m=k_m, v_m=v_m,
                        gates=gates, gated=gated)
    return hidden + delta, cache


def fusion_backward(params: FusionLayer, cache: FusionCache, d_out: np.ndarray
                    ) -> FusionGrads:
    """Analytic gradients of the composed project -> gate -> fuse map."""
    if d_out.shape != cache.hidden.shape:
        raise DimMismatch(f"upstream {d_out.shape} vs hidden {cache.hidden.shape}")
    d = cache.hidden.shape[-1]
    scale = 1.0 / math.sqrt(d)

    # conv adjoint: d_gated and the kernel gradient
    x, kernel, axis = _conv_axes(cache.gated, params)
    dy = d_out.reshape(x.shape)
    pad_left = (params.span - 1) // 2
    d_gated = np.zeros_like(x)
    d_kernel = np.zeros_like(params.conv_kernel)
    for t in range(params.span):
        offset = t - pad_left
        # Shift the kernel*upstream product: in slot-channel mode the kernel
        # varies along the conv axis, so it must move with the output index.
        d_gated += _shift(kernel[t] * dy, -offset, axis)
        d_kernel[t] = (dy * _shift(x, offset, axis)).sum(axis=(0, 1)).reshape(-1)
    d_gated = d_gated.reshape(cache.gated.shape)

    d_gates = np.einsum("bld,bd->bl", d_gated, cache.v_m)[..., None]
    d_v_m = np.einsum("bld,blx->bd", d_gated, cache.gates)
    d_logits = d_gates * cache.gates * (1.0 - cache.gates)
    d_hidden = d_out + d_logits * cache.k_m[:, None, :] * scale
    d_k_m = np.einsum("blx,bld->bd", d_logits, cache.hidden) * scale
    d_memory = d_k_m @ params.w_k.T + d_v_m @ params.w_v.T
    d_w_k = cache.memory_vec.T @ d_k_m
    d_w_v = cache.memory_vec.T @ d_v_m
    return FusionGrads(d_hidden=d_hidden, d_memory=d_memory, d_w_k=d_w_k,
                       d_w_v=d_w_v, d_kernel=d_kernel)


def extend_projections(
    params: FusionLayer,
    old_labels: list[tuple[int, int, int]],
    new_labels: list[tuple[int, int, int]],
) -> FusionLayer:
    """Re-layout W_K/W_V after a memory expansion.

    Labels are the (slot, head, generation) tags of each d_h-wide segment
    of the memory vector, before and after expansion. Surviving segments
    keep their rows bit for bit; segments new to the layout get zero rows,
    so the composed model output is unchanged until those rows train.
    """
    if len(new_labels) < len(old_labels):
        raise ValueError("new layout is smaller than the old one")
    if params.memory_width % len(old_labels) != 0:
        raise ValueError(f"{params.memory_width} rows not divisible into "
                         f"{len(old_labels)} segments")
    seg = params.memory_width // len(old_labels)
    position = {label: i for i, label in enumerate(old_labels)}
    if len(position) != len(old_labels):
        raise ValueError("duplicate segment labels")

    new_rows = len(new_labels) * seg
    w_k = np.zeros((new_rows, params.model_width), dtype=params.w_k.dtype)
    w_v = np.zeros((new_rows, params.model_width), dtype=params.w_v.dtype)
    matched = 0
    for i, label in enumerate(new_labels):
        j = position.get(label)
        if j is None:
            continue
        w_k[i * seg:(i + 1) * seg] = params.w_k[j * seg:(j + 1) * seg]
        w_v[i * seg:(i + 1) * seg] = params.w_v[j * seg:(j + 1) * seg]
        matched += 1
    if matched != len(old_labels):
        raise ValueError("old layout is not a subset of the new layout")
    return FusionLayer(params.layer, w_k, w_v, params.conv_kernel.copy(),
                       params.conv_mode, params.slot_groups)


@dataclass
class GateTrace:
    """Recorded gate activations for one probed layer."""

    layer: int
    mean_gate: float
    gates: np.ndarray  # (B, L, 1)
