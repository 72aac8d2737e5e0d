"""ST-GCN in numpy with an explicit backward pass, MAE loss, Adam with
decoupled weight decay, StepLR, parameter flattening and checkpoints.

Inputs are ``(batch, time, nodes)``; internally feature maps are laid out
``(time, nodes, batch, channels)`` so temporal convolutions slice contiguously
and the graph product is a short stack of GEMMs. Each ST-block is
gated temporal conv -> Chebyshev graph conv (ReLU) -> temporal conv (ReLU) ->
dropout. The head collapses the remaining time steps with one temporal conv
(ReLU) and maps each node to a single value with a linear layer.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    st_blocks: int = 2
    cheb_K: int = 3
    temporal_kernel: int = 3
    channels: tuple[int, int, int] = (64, 16, 64)
    head_channels: int = 16
    input_window: int = 12
    in_channels: int = 1
    dropout_rate: float = 0.5
    hops_override: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 3:
            raise ValueError("channels must be (temporal, spatial, temporal) widths")
        if self.st_blocks < 1 or self.cheb_K < 1 or self.temporal_kernel < 1:
            raise ValueError("st_blocks, cheb_K and temporal_kernel must be >= 1")
        if self.remaining_time < 1:
            raise ValueError(
                f"input_window {self.input_window} too short for {self.st_blocks} blocks "
                f"with temporal kernel {self.temporal_kernel}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def remaining_time(self) -> int:
        return self.input_window - self.st_blocks * 2 * (self.temporal_kernel - 1)


TINY_CONFIG = ModelConfig(channels=(4, 3, 4), head_channels=3)


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Canonical parameter names and shapes, in flattening order."""
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    kt, K = config.temporal_kernel, config.cheb_K
    c_t, c_s, c_o = config.channels
    c_in = config.in_channels
    for b in range(config.st_blocks):
        p = f"block{b}"
        shapes[f"{p}.t1.weight"] = (kt, c_in, 2 * c_t)
        shapes[f"{p}.t1.bias"] = (2 * c_t,)
        shapes[f"{p}.cheb.weight"] = (K, c_t, c_s)
        shapes[f"{p}.cheb.bias"] = (c_s,)
        shapes[f"{p}.t2.weight"] = (kt, c_s, c_o)
        shapes[f"{p}.t2.bias"] = (c_o,)
        c_in = c_o
    shapes["head.t.weight"] = (config.remaining_time, c_in, config.head_channels)
    shapes["head.t.bias"] = (config.head_channels,)
    shapes["head.fc.weight"] = (config.head_channels, 1)
    shapes["head.fc.bias"] = (1,)
    return shapes


class ModelParams:
    """Named parameter tensors with a canonical flat view.

    The tensors are views into one contiguous buffer, so flattening is a
    copy and in-place updates of ``flat`` are seen by every tensor.
    """

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, np.ndarray]"):
        self.config = config
        dtype = np.result_type(*tensors.values()) if tensors else np.float32
        self.flat = np.concatenate([np.asarray(t, dtype=dtype).ravel() for t in tensors.values()])
        self.tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        pos = 0
        for name, t in tensors.items():
            self.tensors[name] = self.flat[pos:pos + t.size].reshape(t.shape)
            pos += t.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def param_count(self) -> int:
        return self.flat.size

    @property
    def dtype(self):
        return self.flat.dtype

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.shape != self.flat.shape:
            raise ShapeError(f"flat vector has {flat.size} values, model has {self.flat.size}")
        self.flat[...] = flat

    @classmethod
    def unflatten(cls, config: ModelConfig, flat: np.ndarray, dtype=None) -> "ModelParams":
        flat = np.asarray(flat)
        dtype = dtype or flat.dtype
        shapes = param_shapes(config)
        total = sum(int(np.prod(s)) for s in shapes.values())
        if flat.ndim != 1 or flat.size != total:
            raise ShapeError(f"flat vector has {flat.size} values, config needs {total}")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        pos = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            out[name] = np.asarray(flat[pos:pos + size], dtype=dtype).reshape(shape)
            pos += size
        return cls(config, out)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.tensors)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, OrderedDict((k, v.astype(dtype)) for k, v in self.tensors.items()))


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
        fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(config, tensors)


def param_bytes(params: ModelParams | int) -> int:
    """Single-precision payload size."""
    count = params if isinstance(params, int) else params.param_count
    return 4 * count


# -- layers -------------------------------------------------------------------

def _sigmoid(x):
    out = np.multiply(x, 0.5)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def _colsum(a):
    # a GEMV is far faster than a strided axis-0 reduction on tall arrays
    return np.ones(a.shape[0], dtype=a.dtype) @ a


def temporal_conv_forward(x, weight, bias):
    """Valid 1-D convolution along time. x: (T, ..., C) -> (T-k+1, ..., C_out)."""
    k, c_in, c_out = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"channel dimension: input has {x.shape[-1]}, weight expects {c_in}")
    t_out = x.shape[0] - k + 1
    if t_out < 1:
        raise ShapeError(f"time dimension: length {x.shape[0]} shorter than kernel {k}")
    lead = (t_out,) + x.shape[1:-1]
    if c_in == 1:
        # im2col is a cheap gather here and turns k skinny GEMMs into one
        cols = np.concatenate([x[i:i + t_out] for i in range(k)], axis=-1)
        y = cols.reshape(-1, k) @ weight.reshape(k, c_out)
    else:
        y = x[0:t_out].reshape(-1, c_in) @ weight[0]
        for i in range(1, k):
            y += x[i:i + t_out].reshape(-1, c_in) @ weight[i]
    y += bias
    return y.reshape(lead + (c_out,))


def temporal_conv_backward(dy, x, weight, need_dx=True):
    k, c_in, c_out = weight.shape
    t_out = dy.shape[0]
    flat_dy = dy.reshape(-1, c_out)
    dW = np.empty_like(weight)
    for i in range(k):
        dW[i] = x[i:i + t_out].reshape(-1, c_in).T @ flat_dy
    db = _colsum(flat_dy)
    if not need_dx:
        return None, dW, db
    dx = np.zeros(x.shape, dtype=dy.dtype)
    for i in range(k):
        dx[i:i + t_out] += (flat_dy @ weight[i].T).reshape(dy.shape[:-1] + (c_in,))
    return dx, dW, db


def glu_forward(y):
    c = y.shape[-1] // 2
    p, q = y[..., :c], y[..., c:]
    s = _sigmoid(q)
    return p * s, (p, s)


def glu_backward(dout, cache):
    p, s = cache
    return np.concatenate([dout * s, dout * p * s * (1.0 - s)], axis=-1)


def gated_temporal_forward(x, weight, bias):
    """Temporal conv with 2C outputs followed by GLU: value = first C
    channels, gate = last C. Each half is convolved separately so both stay
    contiguous."""
    c = weight.shape[-1] // 2
    p = temporal_conv_forward(x, np.ascontiguousarray(weight[..., :c]), bias[:c])
    s = _sigmoid(temporal_conv_forward(x, np.ascontiguousarray(weight[..., c:]), bias[c:]))
    return p * s, (p, s)


def gated_temporal_backward(dout, x, weight, cache, need_dx=True):
    p, s = cache
    c = weight.shape[-1] // 2
    dp = dout * s
    dq = 1.0 - s
    dq *= s
    dq *= p
    dq *= dout
    dx_p, dw_p, db_p = temporal_conv_backward(dp, x, weight[..., :c], need_dx)
    dx_q, dw_q, db_q = temporal_conv_backward(dq, x, weight[..., c:], need_dx)
    dx = dx_p + dx_q if need_dx else None
    return dx, np.concatenate([dw_p, dw_q], axis=-1), np.concatenate([db_p, db_q])


def cheb_conv_forward(x, basis, weight, bias, sel=None):
    """sum_k T_k x Theta_k + b.

    x: (T, N_in, B, C_in); basis: (K, N_out, N_in), the rows of the full
    basis for the output nodes; ``sel`` locates output nodes among input
    nodes (None when they coincide) and stands in for the identity T_0.
    """
    T, n_in, B, c_in = x.shape
    K, n_out = weight.shape[0], basis.shape[1]
    c_out = weight.shape[2]
    if basis.shape[0] != K or basis.shape[2] != n_in:
        raise ShapeError(f"node dimension: basis {basis.shape} incompatible with {n_in} nodes and K={K}")
    if c_in != weight.shape[1]:
        raise ShapeError(f"channel dimension: input has {c_in}, weight expects {weight.shape[1]}")
    xf = x.reshape(-1, c_in)
    x0 = xf if sel is None else x[:, sel].reshape(-1, c_in)
    y = (x0 @ weight[0]).reshape(T, n_out, B * c_out)
    for k in range(1, K):
        z = (xf @ weight[k]).reshape(T, n_in, B * c_out)
        y += np.matmul(basis[k], z)
    y = y.reshape(T, n_out, B, c_out)
    y += bias
    return y


def cheb_conv_backward(dy, x, basis, weight, sel=None):
    T, n_in, B, c_in = x.shape
    K, _, c_out = weight.shape
    xf = x.reshape(-1, c_in)
    dyf = dy.reshape(-1, c_out)
    db = _colsum(dyf)
    dW = np.empty_like(weight)
    dx0 = dyf @ weight[0].T
    if sel is None:
        dW[0] = xf.T @ dyf
        dx = dx0
    else:
        dW[0] = x[:, sel].reshape(-1, c_in).T @ dyf
        dx = np.zeros(x.shape, dtype=dy.dtype)
        dx[:, sel] = dx0.reshape(dy.shape[:-1] + (c_in,))
        dx = dx.reshape(-1, c_in)
    dy3 = dy.reshape(T, -1, B * c_out)
    for k in range(1, K):
        dz = np.matmul(basis[k].T, dy3).reshape(-1, c_out)
        dW[k] = xf.T @ dz
        dx += dz @ weight[k].T
    return dx.reshape(x.shape), dW, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, out):
    return dout * (out > 0)


def dropout_mask(shape, rate, rng, dtype):
    keep = 1.0 - rate
    return np.multiply(rng.random(shape, dtype=np.float32) < keep, 1.0 / keep, dtype=dtype)


# -- network ------------------------------------------------------------------

@dataclass(frozen=True)
class NodePlan:
    """Per-block node sets for a forward pass whose outputs are only needed
    on ``out_nodes``.

    Block b reads its input on ``inputs[b]`` and produces output on
    ``outputs[b]``; ``inputs[b]`` is the graph reach of ``outputs[b]`` under
    the Chebyshev basis, so restricting rows never changes the values on the
    requested nodes.
    """

    n_nodes: int
    out_nodes: np.ndarray
    inputs: tuple[np.ndarray, ...]
    outputs: tuple[np.ndarray, ...]
    bases: tuple[np.ndarray, ...]  # (K, |outputs[b]|, |inputs[b]|)
    sels: tuple[np.ndarray | None, ...]


def _stack_basis(basis, dtype):
    return np.asarray(np.stack(basis) if isinstance(basis, (list, tuple)) else basis, dtype=dtype)


def node_plan(basis, st_blocks: int, out_nodes: Sequence[int] | None = None, dtype=np.float32) -> NodePlan:
    """Build the pruned node sets for ``out_nodes`` (all nodes by default)."""
    basis = _stack_basis(basis, dtype)
    n = basis.shape[1]
    if basis.ndim != 3 or basis.shape[2] != n:
        raise ShapeError(f"node dimension: basis must be (K, N, N), got {basis.shape}")
    everything = np.arange(n)
    if out_nodes is None:
        return NodePlan(n, everything, (everything,) * st_blocks, (everything,) * st_blocks,
                        (basis,) * st_blocks, (None,) * st_blocks)
    out_nodes = np.asarray(out_nodes, dtype=np.int64)
    if out_nodes.ndim != 1 or len(out_nodes) == 0 or np.any(np.diff(out_nodes) <= 0):
        raise ValueError("out_nodes must be a non-empty increasing index list")
    if out_nodes[0] < 0 or out_nodes[-1] >= n:
        raise ShapeError(f"node dimension: out_nodes exceed {n} nodes")
    pattern = np.eye(n, dtype=bool) | np.any(basis[1:] != 0, axis=0)
    inputs, outputs, bases, sels = [], [], [], []
    out = out_nodes
    for _ in range(st_blocks):
        inp = np.flatnonzero(pattern[out].any(axis=0))
        full = len(inp) == len(out)
        outputs.append(out)
        inputs.append(inp)
        bases.append(basis if full and len(inp) == n else np.ascontiguousarray(basis[:, out][:, :, inp]))
        sels.append(None if full else np.searchsorted(inp, out))
        out = inp
    return NodePlan(n, out_nodes, tuple(inputs[::-1]), tuple(outputs[::-1]),
                    tuple(bases[::-1]), tuple(sels[::-1]))


def forward(params: ModelParams, x: np.ndarray, basis, *, train: bool = False,
            rng: np.random.Generator | None = None, return_cache: bool = False,
            plan: NodePlan | None = None):
    """Predict one value per node. x: (B, window, N) or (B, window, N, 1).

    With a ``plan`` the output covers ``plan.out_nodes`` only, shape
    (B, len(out_nodes)); otherwise every node, shape (B, N).
    """
    cfg = params.config
    dtype = params.dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4:
        raise ShapeError(f"input must be (B, T, N[, C]), got {x.shape}")
    if x.shape[1] != cfg.input_window:
        raise ShapeError(f"time dimension: expected {cfg.input_window}, got {x.shape[1]}")
    if x.shape[3] != cfg.in_channels:
        raise ShapeError(f"channel dimension: expected {cfg.in_channels}, got {x.shape[3]}")
    if plan is None:
        basis = _stack_basis(basis, dtype)
        if basis.shape[0] != cfg.cheb_K or basis.shape[1] != x.shape[2]:
            raise ShapeError(f"node dimension: basis {basis.shape} vs input with {x.shape[2]} nodes")
        plan = node_plan(basis, cfg.st_blocks, dtype=dtype)
    elif plan.n_nodes != x.shape[2]:
        raise ShapeError(f"node dimension: plan covers {plan.n_nodes} nodes, input has {x.shape[2]}")
    if plan.bases[0].shape[0] != cfg.cheb_K:
        raise ShapeError(f"basis has {plan.bases[0].shape[0]} terms, config expects K={cfg.cheb_K}")
    if train and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("train mode with dropout requires an rng")

    caches = []
    first = plan.inputs[0]
    if len(first) != x.shape[2]:
        x = x[:, :, first]
    h = np.ascontiguousarray(x.transpose(1, 2, 0, 3))
    for b in range(cfg.st_blocks):
        p = f"block{b}"
        c = {"x": h}
        h1, c["glu"] = gated_temporal_forward(h, params[f"{p}.t1.weight"], params[f"{p}.t1.bias"])
        c["h1"] = h1
        y2 = cheb_conv_forward(h1, plan.bases[b], params[f"{p}.cheb.weight"], params[f"{p}.cheb.bias"],
                               plan.sels[b])
        h2 = relu_forward(y2)
        c["h2"] = h2
        y3 = temporal_conv_forward(h2, params[f"{p}.t2.weight"], params[f"{p}.t2.bias"])
        h3 = relu_forward(y3)
        c["h3"] = h3
        if train and cfg.dropout_rate > 0:
            mask = dropout_mask(h3.shape, cfg.dropout_rate, rng, np.dtype(dtype))
            c["mask"] = mask
            h = h3 * mask
        else:
            c["mask"] = None
            h = h3
        caches.append(c)

    head = {"x": h}
    y4 = temporal_conv_forward(h, params["head.t.weight"], params["head.t.bias"])
    h4 = relu_forward(y4)  # (1, N_out, B, Ch)
    head["h4"] = h4
    _, N, B, ch = h4.shape
    out = (h4.reshape(-1, ch) @ params["head.fc.weight"] + params["head.fc.bias"]).reshape(N, B).T
    if return_cache:
        return out, (caches, head, plan)
    return out


def backward(params: ModelParams, dout: np.ndarray, cache) -> "OrderedDict[str, np.ndarray]":
    """Gradients of a scalar loss given d(loss)/d(output)."""
    cfg = params.config
    caches, head, plan = cache
    grads: dict[str, np.ndarray] = {}
    h4 = head["h4"]
    dout = np.asarray(dout, dtype=params.dtype)
    dflat = np.ascontiguousarray(dout.T).reshape(-1, 1)
    grads["head.fc.weight"] = h4.reshape(-1, h4.shape[-1]).T @ dflat
    grads["head.fc.bias"] = np.array([dflat.sum()], dtype=params.dtype)
    dh4 = (dflat @ params["head.fc.weight"].T).reshape(h4.shape)
    dy4 = relu_backward(dh4, h4)
    dh, grads["head.t.weight"], grads["head.t.bias"] = temporal_conv_backward(
        dy4, head["x"], params["head.t.weight"])

    for b in reversed(range(cfg.st_blocks)):
        p = f"block{b}"
        c = caches[b]
        if c["mask"] is not None:
            dh = dh * c["mask"]
        dy3 = relu_backward(dh, c["h3"])
        dh2, grads[f"{p}.t2.weight"], grads[f"{p}.t2.bias"] = temporal_conv_backward(
            dy3, c["h2"], params[f"{p}.t2.weight"])
        dy2 = relu_backward(dh2, c["h2"])
        dh1, grads[f"{p}.cheb.weight"], grads[f"{p}.cheb.bias"] = cheb_conv_backward(
            dy2, c["h1"], plan.bases[b], params[f"{p}.cheb.weight"], plan.sels[b])
        dh, grads[f"{p}.t1.weight"], grads[f"{p}.t1.bias"] = gated_temporal_backward(
            dh1, c["x"], params[f"{p}.t1.weight"], c["glu"], need_dx=b > 0)
    return OrderedDict((name, grads[name]) for name in params.names())


def mae_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Masked mean absolute error and its gradient w.r.t. ``pred``.

    The subgradient at a zero residual is 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("empty effective batch: every entry is masked")
    resid = pred - target
    loss = float(np.abs(resid[mask]).sum(dtype=np.float64) / count)
    grad = (np.sign(resid) * mask / count).astype(pred.dtype)
    return loss, grad


def loss_and_grads(params, x, target, basis, mask=None, *, train=False, rng=None, plan=None):
    pred, cache = forward(params, x, basis, train=train, rng=rng, return_cache=True, plan=plan)
    loss, dpred = mae_loss(pred, target, mask)
    return loss, backward(params, dpred, cache)


# -- optimization -------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moments (flat, aligned with ``ModelParams.flat``), step counter
    and StepLR settings."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    base_lr: float = 1e-4
    lr: float = 1e-4
    step_size: int = 5
    gamma: float = 0.7
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: ModelParams, *, lr: float = 1e-4, step_size: int = 5,
                   gamma: float = 0.7, weight_decay: float = 1e-5) -> OptimizerState:
    return OptimizerState(np.zeros_like(params.flat), np.zeros_like(params.flat), 0, lr, lr,
                          step_size, gamma, weight_decay)


def steplr(base_lr: float, epoch: int, step_size: int = 5, gamma: float = 0.7) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma ** (epoch // step_size)


def steplr_epoch(state: OptimizerState, epoch: int) -> float:
    state.lr = steplr(state.base_lr, epoch, state.step_size, state.gamma)
    return state.lr


def adam_step(params: ModelParams, grads, state: OptimizerState) -> ModelParams:
    """In-place Adam update with decoupled weight decay; returns ``params``.
    ``grads`` is a name->tensor mapping in canonical order or a flat vector."""
    if isinstance(grads, dict):
        for (name, p), g in zip(params.tensors.items(), grads.values()):
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        g = np.concatenate([g.ravel() for g in grads.values()])
    else:
        g = np.asarray(grads)
    if g.shape != params.flat.shape:
        raise ShapeError(f"gradient has {g.size} values, model has {params.flat.size}")
    g = g.astype(params.dtype, copy=False)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    lr = state.lr
    p, m, v = params.flat, state.m, state.v
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    if state.weight_decay:
        p -= (lr * state.weight_decay) * p
    denom = np.sqrt(v / c2)
    denom += state.eps
    p -= (lr / c1) * m / denom
    return params


def average_params(models: Sequence[np.ndarray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Convex combination of flat parameter vectors."""
    if len(models) == 0:
        raise ValueError("nothing to average")
    size = models[0].shape
    for v in models:
        if v.shape != size:
            raise ShapeError(f"length mismatch: {v.shape} vs {size}")
    if weights is None:
        weights = np.ones(len(models))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(models),) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per model, with positive sum")
    w = w / w.sum()
    if len(models) == 1:
        return np.array(models[0], copy=True)
    out = np.zeros(size, dtype=np.float64)
    for wi, v in zip(w, models):
        out += wi * v
    # coordinates where all inputs agree stay bit-identical
    first = models[0]
    agree = np.all([v == first for v in models[1:]], axis=0)
    out[agree] = first[agree]
    return out.astype(models[0].dtype)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"STGC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, flat: np.ndarray) -> None:
    """16-byte header (magic, uint32 version, uint64 count), then LE float32."""
    flat = np.asarray(flat)
    header = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, flat.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, count = struct.unpack("<IQ", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    body = np.frombuffer(data[16:], dtype="<f4")
    if body.size != count:
        raise ValueError(f"{path}: header says {count} values, body has {body.size}")
    return body.astype(np.float32)
