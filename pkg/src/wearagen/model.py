"""Decoder-only multi-task transformer with an exact hand-written backward pass.

Inputs are windows of per-channel bin indices, shape ``(batch, seq_len, 3)``.
Each channel has its own token-embedding table; the three looked-up rows and
a learned positional row are summed into one ``d_model`` vector per day.
The stack is pre-norm: every block applies layer norm before causal
multi-head self-attention and before a GeLU feed-forward network, each with a
residual connection. A final layer norm feeds three independent linear heads
producing ``num_bins`` logits per task.

Parameters live in a flat ``dict[str, ndarray]``; forward caches everything
backward needs, including dropout masks.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import NumericalError, ValidationError

NUM_TASKS = 3
LN_EPS = 1e-5
INIT_SCALE = 0.02

CHECKPOINT_MAGIC = b"AGCK"
CHECKPOINT_VERSION = 1
_CK_PREFIX = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    num_heads: int = 4
    num_blocks: int = 3
    ffn_hidden: int = 256
    num_bins: int = 100
    num_channels: int = 3
    seq_len: int = 21
    dropout_p: float = 0.1

    def __post_init__(self):
        for name in ("d_model", "num_heads", "num_blocks", "ffn_hidden", "num_bins",
                     "num_channels", "seq_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise ValidationError("d_model must be divisible by num_heads")
        if self.num_channels != NUM_TASKS:
            raise ValidationError(f"num_channels must be {NUM_TASKS}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError("dropout_p must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small configuration used for gradient checks and overfit tests."""
        base = dict(d_model=8, num_heads=2, num_blocks=1, ffn_hidden=16, num_bins=5,
                    seq_len=4, dropout_p=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every learned tensor, in canonical order."""
    d, h, nb = config.d_model, config.ffn_hidden, config.num_bins
    shapes: dict[str, tuple[int, ...]] = {}
    for c in range(config.num_channels):
        shapes[f"embed.token{c}"] = (nb, d)
    shapes["embed.pos"] = (config.seq_len, d)
    for i in range(config.num_blocks):
        p = f"block{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + w] = (d, d)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, h)
        shapes[p + "ffn.b1"] = (h,)
        shapes[p + "ffn.w2"] = (h, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    for c in range(NUM_TASKS):
        shapes[f"head{c}.weight"] = (d, nb)
        shapes[f"head{c}.bias"] = (nb,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator | int | None = None,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 0.02^2); biases zero; layer-norm gains one."""
    rng = np.random.default_rng(rng)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith("bias") or name.endswith(".b1") or name.endswith(".b2"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (INIT_SCALE * rng.standard_normal(shape)).astype(dtype)
    return params


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    expected = param_shapes(config)
    missing = set(expected) - set(params)
    if missing:
        raise ValidationError(f"missing parameters: {sorted(missing)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValidationError(f"{name}: shape {params[name].shape} != expected {shape}")


# --------------------------------------------------------------------------
# primitives


def gelu(x):
    # tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    # d/dx of the tanh form:
    # 0.5 (1 + t) + 0.5 x (1 - t^2) sqrt(2/pi) (1 + 3 * 0.044715 x^2)
    c = math.sqrt(2.0 / math.pi)
    t = np.tanh(c * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def causal_mask(n: int) -> np.ndarray:
    """Boolean ``(n, n)`` mask, True where attention is allowed (s <= t)."""
    return np.tril(np.ones((n, n), dtype=bool))


def _attention(q, k, v):
    n = q.shape[-2]
    scores = (q @ np.swapaxes(k, -1, -2)) / math.sqrt(q.shape[-1])
    scores = np.where(causal_mask(n), scores, -np.inf)
    probs = softmax(scores, axis=-1)
    return probs @ v, probs


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Causal scaled dot-product attention over the last two axes.

    The strictly upper triangle of the score matrix is excluded, so row ``t``
    of the output is a convex combination of ``v[0..t]``.
    """
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ValidationError("attention: incompatible Q/K/V shapes")
    return _attention(q, k, v)[0]


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd)


def _layer_norm_backward(dy, gain, cache):
    xhat, rstd = cache
    lead = tuple(range(dy.ndim - 1))
    dgain = np.sum(dy * xhat, axis=lead)
    dbias = np.sum(dy, axis=lead)
    dxhat = dy * gain
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def _dropout_mask(shape, p, rng, dtype):
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype(1.0 - p)


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# --------------------------------------------------------------------------
# forward / backward


def embed(windows: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Sum of the three per-channel token rows plus the positional row."""
    windows = np.asarray(windows)
    pos = params["embed.pos"]
    num_bins = params["embed.token0"].shape[0]
    if windows.ndim != 3 or windows.shape[2] != NUM_TASKS:
        raise ValidationError(f"windows must have shape (batch, len, 3), got {windows.shape}")
    if windows.shape[1] > pos.shape[0]:
        raise ValidationError(f"window length {windows.shape[1]} exceeds seq_len {pos.shape[0]}")
    if windows.size and (windows.min() < 0 or windows.max() >= num_bins):
        raise ValidationError(f"bin index outside [0, {num_bins - 1}]")
    x = pos[: windows.shape[1]][None, :, :].repeat(windows.shape[0], axis=0)
    for c in range(NUM_TASKS):
        x = x + params[f"embed.token{c}"][windows[:, :, c]]
    return x


@dataclass
class ForwardOutput:
    logits: np.ndarray
    cache: dict | None = field(default=None, repr=False)


def _check_finite(x, layer):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite activations in {layer}")


def forward(windows, params: dict[str, np.ndarray], config: ModelConfig,
            training: bool = False, rng: np.random.Generator | None = None,
            keep_cache: bool = True) -> ForwardOutput:
    """Logits of shape ``(batch, seq_len, 3, num_bins)``.

    Dropout is applied to the attention and feed-forward outputs only when
    ``training`` is set, drawing masks from ``rng``.
    """
    windows = np.asarray(windows, dtype=np.int64)
    drop = training and config.dropout_p > 0.0
    if drop and rng is None:
        raise ValidationError("training forward with dropout needs an rng")
    dtype = params["embed.pos"].dtype.type
    H = config.num_heads

    x = embed(windows, params)
    _check_finite(x, "embed")
    blocks = []
    for i in range(config.num_blocks):
        p = f"block{i}."
        h1, ln1 = _layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
        q = _split_heads(h1 @ params[p + "attn.wq"], H)
        k = _split_heads(h1 @ params[p + "attn.wk"], H)
        v = _split_heads(h1 @ params[p + "attn.wv"], H)
        a, probs = _attention(q, k, v)
        am = _merge_heads(a)
        o = am @ params[p + "attn.wo"]
        m1 = _dropout_mask(o.shape, config.dropout_p, rng, dtype) if drop else None
        x = x + (o * m1 if drop else o)

        h2, ln2 = _layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        z1 = h2 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        g = gelu(z1)
        z2 = g @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        m2 = _dropout_mask(z2.shape, config.dropout_p, rng, dtype) if drop else None
        x = x + (z2 * m2 if drop else z2)
        _check_finite(x, f"block{i}")
        if keep_cache:
            blocks.append(dict(h1=h1, ln1=ln1, q=q, k=k, v=v, probs=probs, am=am, m1=m1,
                               h2=h2, ln2=ln2, z1=z1, g=g, m2=m2))

    hf, lnf = _layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    logits = np.stack(
        [hf @ params[f"head{c}.weight"] + params[f"head{c}.bias"] for c in range(NUM_TASKS)],
        axis=2,
    )
    _check_finite(logits, "heads")
    cache = dict(windows=windows, blocks=blocks, hf=hf, lnf=lnf) if keep_cache else None
    return ForwardOutput(logits, cache)


def backward(output: ForwardOutput, dlogits: np.ndarray, params: dict[str, np.ndarray],
             config: ModelConfig) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter given dLoss/dlogits."""
    if output.cache is None:
        raise ValidationError("backward needs a forward output with cached activations")
    cache = output.cache
    if dlogits.shape != output.logits.shape:
        raise ValidationError(f"dlogits shape {dlogits.shape} != logits shape {output.logits.shape}")
    dlogits = dlogits.astype(output.logits.dtype, copy=False)
    H = config.num_heads
    hf = cache["hf"]
    grads: dict[str, np.ndarray] = {}

    dhf = np.zeros_like(hf)
    for c in range(NUM_TASKS):
        dl = dlogits[:, :, c, :]
        grads[f"head{c}.weight"] = _flat(hf).T @ _flat(dl)
        grads[f"head{c}.bias"] = _flat(dl).sum(axis=0)
        dhf += dl @ params[f"head{c}.weight"].T
    dx, grads["final_ln.gain"], grads["final_ln.bias"] = _layer_norm_backward(
        dhf, params["final_ln.gain"], cache["lnf"])

    for i in reversed(range(config.num_blocks)):
        p = f"block{i}."
        bc = cache["blocks"][i]
        # feed-forward branch
        dz2 = dx * bc["m2"] if bc["m2"] is not None else dx
        grads[p + "ffn.w2"] = _flat(bc["g"]).T @ _flat(dz2)
        grads[p + "ffn.b2"] = _flat(dz2).sum(axis=0)
        dz1 = (dz2 @ params[p + "ffn.w2"].T) * gelu_grad(bc["z1"])
        grads[p + "ffn.w1"] = _flat(bc["h2"]).T @ _flat(dz1)
        grads[p + "ffn.b1"] = _flat(dz1).sum(axis=0)
        dh2 = dz1 @ params[p + "ffn.w1"].T
        dln, grads[p + "ln2.gain"], grads[p + "ln2.bias"] = _layer_norm_backward(
            dh2, params[p + "ln2.gain"], bc["ln2"])
        dx = dx + dln
        # attention branch
        do = dx * bc["m1"] if bc["m1"] is not None else dx
        grads[p + "attn.wo"] = _flat(bc["am"]).T @ _flat(do)
        da = _split_heads(do @ params[p + "attn.wo"].T, H)
        probs, q, k, v = bc["probs"], bc["q"], bc["k"], bc["v"]
        dprobs = da @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(probs, -1, -2) @ da
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dscores = dscores / math.sqrt(config.head_dim)
        dq = dscores @ k
        dk = np.swapaxes(dscores, -1, -2) @ q
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        h1 = _flat(bc["h1"])
        grads[p + "attn.wq"] = h1.T @ _flat(dq)
        grads[p + "attn.wk"] = h1.T @ _flat(dk)
        grads[p + "attn.wv"] = h1.T @ _flat(dv)
        dh1 = (dq @ params[p + "attn.wq"].T + dk @ params[p + "attn.wk"].T
               + dv @ params[p + "attn.wv"].T)
        dln, grads[p + "ln1.gain"], grads[p + "ln1.bias"] = _layer_norm_backward(
            dh1, params[p + "ln1.gain"], bc["ln1"])
        dx = dx + dln

    windows = cache["windows"]
    t = windows.shape[1]
    dpos = np.zeros_like(params["embed.pos"])
    dpos[:t] = dx.sum(axis=0)
    grads["embed.pos"] = dpos
    flat_dx = _flat(dx)
    for c in range(NUM_TASKS):
        dtok = np.zeros_like(params[f"embed.token{c}"])
        np.add.at(dtok, windows[:, :, c].reshape(-1), flat_dx)
        grads[f"embed.token{c}"] = dtok

    return {name: grads[name] for name in param_shapes(config)}


def predict_proba_last(windows, params, config) -> np.ndarray:
    """Next-day distributions from the last position, shape ``(batch, 3, num_bins)``."""
    out = forward(windows, params, config, training=False, keep_cache=False)
    return softmax(out.logits[:, -1].astype(np.float64), axis=-1)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig,
                    extra: dict | None = None) -> None:
    """Write an ``AGCK`` checkpoint: magic, version, JSON header, float32 payload."""
    check_params(params, config)
    manifest, chunks, offset = [], [], 0
    for name in param_shapes(config):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "dtype": "float32",
        "tensors": manifest,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CK_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path, dtype=np.float32) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CK_PREFIX.size:
        raise ValidationError(f"{path}: truncated checkpoint")
    magic, version, hlen = _CK_PREFIX.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    start = _CK_PREFIX.size
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    payload = memoryview(raw)[start + hlen:]
    config = ModelConfig.from_dict(header["config"])
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        buf = payload[entry["offset"]: entry["offset"] + 4 * n]
        if len(buf) != 4 * n:
            raise ValidationError(f"{path}: payload truncated at tensor {entry['name']}")
        params[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(dtype)
    check_params(params, config)
    return params, config, header.get("extra", {})
