"""Desk-scale three-branch attention block with a hand-written backward pass.

The block mirrors a control-augmented transformer layer: a frozen global
self-attention branch, an exploration branch that attends over video tokens
concatenated with route-condition tokens, and a sphere branch whose attention
is restricted by a spherical-distance mask.  Both added branches end in a
zero-initialized linear map, so a freshly initialized block reproduces the
global branch exactly, bit for bit.

Everything runs in float64.  This module is a correctness artifact: the
backward pass is written out explicitly and is validated against central
finite differences (see :func:`grad_check`).

Shapes (N tokens, model width dm, h heads, dh = dm / h):

    x, condition        N x dm
    projections         dm x dm     (condition encoder: 6 x dm)
    per-head attention  softmax(Q K^T / sqrt(dh) + bias) V

The backward of a single attention head, given dO:

    dP = dO V^T                  dV = P^T dO
    dS = P o (dP - rowsum(dP o P))          (softmax Jacobian)
    dQ = dS K / sqrt(dh)         dK = dS^T Q / sqrt(dh)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from .mask import SphereMask, TokenGrid, mask_to_bias
from .geometry import ErpGrid
from .plucker import PluckerField, downsample_field

WEIGHTS_MAGIC = b"PWXB"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class BlockConfig:
    d_model: int
    heads: int
    grid: TokenGrid
    tau: float

    def __post_init__(self) -> None:
        if self.d_model < 1 or self.heads < 1:
            raise ValueError("d_model and heads must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def n(self) -> int:
        return self.grid.n


@dataclass
class BlockWeights:
    """Parameter arrays; field order is the checkpoint declaration order."""

    global_q: np.ndarray
    global_k: np.ndarray
    global_v: np.ndarray
    global_out: np.ndarray
    cond_in: np.ndarray
    exp_q: np.ndarray
    exp_k: np.ndarray
    exp_v: np.ndarray
    exp_out: np.ndarray
    exp_zero: np.ndarray
    sph_q: np.ndarray
    sph_k: np.ndarray
    sph_v: np.ndarray
    sph_zero: np.ndarray
    global_frozen: bool = True

    def param_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in fields(self) if f.name != "global_frozen")

    def trainable_names(self) -> tuple[str, ...]:
        names = self.param_names()
        if self.global_frozen:
            names = tuple(n for n in names if not n.startswith("global_"))
        return names

    def copy(self) -> "BlockWeights":
        return replace(
            self, **{n: getattr(self, n).copy() for n in self.param_names()}
        )


def init_weights(config: BlockConfig, seed: int = 0) -> BlockWeights:
    """Fresh weights: scaled orthogonal projections, exact-zero output maps.

    The exploration and sphere attention projections start as copies of the
    global ones, and both zero-linear layers are exact zero matrices, so the
    new branches contribute nothing until trained.
    """
    rng = np.random.default_rng(seed)
    dm = config.d_model
    scale = 0.25

    def ortho() -> np.ndarray:
        a = rng.standard_normal((dm, dm))
        q, r = np.linalg.qr(a)
        return scale * (q * np.sign(np.diag(r)))

    gq, gk, gv, go = ortho(), ortho(), ortho(), ortho()
    return BlockWeights(
        global_q=gq,
        global_k=gk,
        global_v=gv,
        global_out=go,
        cond_in=rng.standard_normal((6, dm)) * (scale / np.sqrt(6.0)),
        exp_q=gq.copy(),
        exp_k=gk.copy(),
        exp_v=gv.copy(),
        exp_out=go.copy(),
        exp_zero=np.zeros((dm, dm)),
        sph_q=gq.copy(),
        sph_k=gk.copy(),
        sph_v=gv.copy(),
        sph_zero=np.zeros((dm, dm)),
    )


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def _split_heads(m: np.ndarray, heads: int) -> np.ndarray:
    n, dm = m.shape
    return m.reshape(n, heads, dm // heads).transpose(1, 0, 2)


def _merge_heads(m: np.ndarray) -> np.ndarray:
    h, n, dh = m.shape
    return m.transpose(1, 0, 2).reshape(n, h * dh)


def _attention_forward(q, k, v, heads: int, bias):
    qh, kh, vh = (_split_heads(m, heads) for m in (q, k, v))
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(qh.shape[2])
    if bias is not None:
        scores = scores + bias[None, :, :]
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = _merge_heads(p @ vh)
    return out, (qh, kh, vh, p)


def _attention_backward(d_out, saved, heads: int):
    qh, kh, vh, p = saved
    doh = _split_heads(d_out, heads)
    dp = doh @ vh.transpose(0, 2, 1)
    dv = p.transpose(0, 2, 1) @ doh
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    inv_sqrt = 1.0 / np.sqrt(qh.shape[2])
    dq = ds @ kh * inv_sqrt
    dk = ds.transpose(0, 2, 1) @ qh * inv_sqrt
    return _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)


def attention(q, k, v, heads: int, bias=None, return_weights: bool = False):
    """Multi-head scaled-dot-product attention with an optional additive bias.

    ``q`` is (Nq, dm), ``k`` and ``v`` are (Nk, dm); ``bias`` (if given) is
    Nq x Nk and added to every head's logits.  Softmax rows sum to 1; keys
    biased by a large negative value receive no weight.
    """
    q, k, v = (np.asarray(m, dtype=np.float64) for m in (q, k, v))
    if q.ndim != 2 or k.shape != v.shape or q.shape[1] != k.shape[1]:
        raise ValueError(
            f"inconsistent attention shapes q={q.shape} k={k.shape} v={v.shape}"
        )
    if q.shape[1] % heads != 0:
        raise ValueError(f"width {q.shape[1]} not divisible by {heads} heads")
    if bias is not None and bias.shape != (q.shape[0], k.shape[0]):
        raise ValueError(
            f"bias shape {bias.shape} does not match ({q.shape[0]}, {k.shape[0]})"
        )
    out, (_, _, _, p) = _attention_forward(q, k, v, heads, bias)
    if return_weights:
        return out, p
    return out


# ---------------------------------------------------------------------------
# Branches and the full block
# ---------------------------------------------------------------------------


def global_branch(x, weights: BlockWeights, config: BlockConfig) -> np.ndarray:
    a, _ = _attention_forward(
        x @ weights.global_q, x @ weights.global_k, x @ weights.global_v,
        config.heads, None,
    )
    return a @ weights.global_out


def sphere_branch(x, bias, weights: BlockWeights, config: BlockConfig) -> np.ndarray:
    a, _ = _attention_forward(
        x @ weights.sph_q, x @ weights.sph_k, x @ weights.sph_v,
        config.heads, bias,
    )
    return a @ weights.sph_zero


def exploration_branch(x, condition, weights: BlockWeights, config: BlockConfig) -> np.ndarray:
    xc = np.vstack([x, condition])
    a, _ = _attention_forward(
        xc @ weights.exp_q, xc @ weights.exp_k, xc @ weights.exp_v,
        config.heads, None,
    )
    return (a[: x.shape[0]] @ weights.exp_out) @ weights.exp_zero


def encode_condition(field: PluckerField, config: BlockConfig, weights: BlockWeights) -> np.ndarray:
    """Pool a ray field down to the token grid and project 6 -> d_model.

    The projection has no bias term, so a zero field yields zero condition
    tokens and the map is linear in the field.
    """
    tokens6 = _condition_tokens(field, config)
    return tokens6 @ weights.cond_in


def _condition_tokens(field: PluckerField, config: BlockConfig) -> np.ndarray:
    g = config.grid
    for dim, target, name in (
        (field.frames, g.frames, "frames"),
        (field.height, g.rows, "height"),
        (field.width, g.cols, "width"),
    ):
        if dim % target != 0:
            raise ValueError(
                f"field {name} {dim} not divisible by grid target {target}"
            )
    down = downsample_field(
        field, field.frames // g.frames, field.height // g.rows, field.width // g.cols
    )
    return down.data.reshape(g.n, 6)


def forward_block(x, condition, mask: SphereMask, weights: BlockWeights, config: BlockConfig) -> np.ndarray:
    """Sum of the frozen global branch and the two zero-gated control branches."""
    x = np.asarray(x, dtype=np.float64)
    condition = np.asarray(condition, dtype=np.float64)
    if x.shape != (config.n, config.d_model):
        raise ValueError(
            f"token tensor shape {x.shape} does not match "
            f"(n={config.n}, d_model={config.d_model})"
        )
    if condition.shape != x.shape:
        raise ValueError(
            f"condition shape {condition.shape} does not match tokens {x.shape}"
        )
    if mask.n != config.n:
        raise ValueError(f"mask has {mask.n} tokens, block expects {config.n}")
    bias = mask_to_bias(mask)
    return (
        global_branch(x, weights, config)
        + exploration_branch(x, condition, weights, config)
        + sphere_branch(x, bias, weights, config)
    )


# ---------------------------------------------------------------------------
# Loss and analytic gradients
# ---------------------------------------------------------------------------


def block_loss(x, field: PluckerField, mask: SphereMask, weights: BlockWeights, config: BlockConfig) -> float:
    """Sum of squares of the block output, with the condition encoder inlined."""
    condition = encode_condition(field, config, weights)
    out = forward_block(x, condition, mask, weights, config)
    return float(np.sum(out * out))


def _loss_cached(x, tokens6, bias, weights: BlockWeights, config: BlockConfig) -> float:
    # forward-only path reusing precomputed condition tokens and mask bias
    condition = tokens6 @ weights.cond_in
    out = (
        global_branch(x, weights, config)
        + exploration_branch(x, condition, weights, config)
        + sphere_branch(x, bias, weights, config)
    )
    return float(np.sum(out * out))


def loss_and_gradients(x, field: PluckerField, mask: SphereMask, weights: BlockWeights, config: BlockConfig):
    """Loss plus analytic d(loss)/d(parameter) for every parameter array.

    Frozen global parameters get exact-zero gradients by contract.  Returns
    ``(loss, grads)`` with ``grads`` keyed by the weight field names.
    """
    x = np.asarray(x, dtype=np.float64)
    w = weights
    heads = config.heads
    n = config.n

    tokens6 = _condition_tokens(field, config)
    condition = tokens6 @ w.cond_in
    bias = mask_to_bias(mask)

    a_g, saved_g = _attention_forward(
        x @ w.global_q, x @ w.global_k, x @ w.global_v, heads, None
    )
    out_g = a_g @ w.global_out

    a_s, saved_s = _attention_forward(
        x @ w.sph_q, x @ w.sph_k, x @ w.sph_v, heads, bias
    )
    out_s = a_s @ w.sph_zero

    xc = np.vstack([x, condition])
    a_e, saved_e = _attention_forward(
        xc @ w.exp_q, xc @ w.exp_k, xc @ w.exp_v, heads, None
    )
    e_vid = a_e[:n]
    e_proj = e_vid @ w.exp_out
    out_e = e_proj @ w.exp_zero

    out = out_g + out_e + out_s
    loss = float(np.sum(out * out))
    d_out = 2.0 * out

    grads: dict[str, np.ndarray] = {}

    # sphere branch
    grads["sph_zero"] = a_s.T @ d_out
    d_as = d_out @ w.sph_zero.T
    dq, dk, dv = _attention_backward(d_as, saved_s, heads)
    grads["sph_q"] = x.T @ dq
    grads["sph_k"] = x.T @ dk
    grads["sph_v"] = x.T @ dv

    # exploration branch
    grads["exp_zero"] = e_proj.T @ d_out
    d_eproj = d_out @ w.exp_zero.T
    grads["exp_out"] = e_vid.T @ d_eproj
    d_evid = d_eproj @ w.exp_out.T
    d_ae = np.zeros_like(a_e)
    d_ae[:n] = d_evid
    dq, dk, dv = _attention_backward(d_ae, saved_e, heads)
    grads["exp_q"] = xc.T @ dq
    grads["exp_k"] = xc.T @ dk
    grads["exp_v"] = xc.T @ dv
    d_xc = dq @ w.exp_q.T + dk @ w.exp_k.T + dv @ w.exp_v.T
    grads["cond_in"] = tokens6.T @ d_xc[n:]

    # global branch
    if w.global_frozen:
        grads["global_q"] = np.zeros_like(w.global_q)
        grads["global_k"] = np.zeros_like(w.global_k)
        grads["global_v"] = np.zeros_like(w.global_v)
        grads["global_out"] = np.zeros_like(w.global_out)
    else:
        grads["global_out"] = a_g.T @ d_out
        d_ag = d_out @ w.global_out.T
        dq, dk, dv = _attention_backward(d_ag, saved_g, heads)
        grads["global_q"] = x.T @ dq
        grads["global_k"] = x.T @ dk
        grads["global_v"] = x.T @ dv

    return loss, grads


def grad_check(
    weights: BlockWeights,
    config: BlockConfig,
    x,
    field: PluckerField,
    mask: SphereMask,
    epsilon: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Sweeps every trainable parameter element by default; ``sample`` limits the
    probe to that many randomly chosen elements per parameter (for quick
    smoke checks at larger token counts).  Relative error uses
    ``|a - f| / max(|a| + |f|, 1e-6)`` so exact-zero pairs compare cleanly.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon outside [1e-7, 1e-4]: {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    _, grads = loss_and_gradients(x, field, mask, weights, config)
    tokens6 = _condition_tokens(field, config)
    bias = mask_to_bias(mask)
    rng = np.random.default_rng(seed)
    worst = 0.0
    probe = weights.copy()
    for name in weights.trainable_names():
        arr = getattr(probe, name)
        analytic = grads[name]
        flat_indices = np.arange(arr.size)
        if sample is not None and sample < arr.size:
            flat_indices = np.sort(rng.choice(arr.size, size=sample, replace=False))
        flat = arr.reshape(-1)
        flat_analytic = analytic.reshape(-1)
        for i in flat_indices:
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = _loss_cached(x, tokens6, bias, probe, config)
            flat[i] = orig - epsilon
            lo = _loss_cached(x, tokens6, bias, probe, config)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * epsilon)
            a = flat_analytic[i]
            rel = abs(a - fd) / max(abs(a) + abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------


def write_weights(weights: BlockWeights, config: BlockConfig, path) -> None:
    """Serialize config and parameter arrays ("PWXB", float64 little-endian)."""
    g = config.grid
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<H", WEIGHTS_VERSION))
        fh.write(
            struct.pack(
                "<IIIIIII",
                config.d_model,
                config.heads,
                g.frames,
                g.rows,
                g.cols,
                g.source.width,
                g.source.height,
            )
        )
        fh.write(struct.pack("<d", config.tau))
        fh.write(struct.pack("<B", 1 if weights.global_frozen else 0))
        for name in weights.param_names():
            fh.write(np.ascontiguousarray(getattr(weights, name), dtype="<f8").tobytes())


def read_weights(path) -> tuple[BlockWeights, BlockConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"bad weights magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        dm, heads, frames, rows, cols, sw, sh = struct.unpack("<IIIIIII", fh.read(28))
        (tau,) = struct.unpack("<d", fh.read(8))
        (frozen,) = struct.unpack("<B", fh.read(1))
        config = BlockConfig(
            d_model=dm,
            heads=heads,
            grid=TokenGrid(frames, rows, cols, ErpGrid(sw, sh)),
            tau=tau,
        )

        def read_arr(shape):
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError("truncated weights data")
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        arrays = {}
        for f in fields(BlockWeights):
            if f.name == "global_frozen":
                continue
            shape = (6, dm) if f.name == "cond_in" else (dm, dm)
            arrays[f.name] = read_arr(shape)
    return BlockWeights(**arrays, global_frozen=bool(frozen)), config


__all__ = [
    "BlockConfig",
    "BlockWeights",
    "init_weights",
    "attention",
    "global_branch",
    "sphere_branch",
    "exploration_branch",
    "encode_condition",
    "forward_block",
    "block_loss",
    "loss_and_gradients",
    "grad_check",
    "write_weights",
    "read_weights",
]
