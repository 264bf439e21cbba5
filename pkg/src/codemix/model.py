"""BERT-style post-LN transformer encoder with a swappable output head.

Parameters live in a flat ``name -> ndarray`` dict. The forward pass keeps
the activations needed by the hand-written backward pass, so a loss and its
gradient for every parameter come from one call to :func:`loss_and_grads`.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    ShapeMismatch, cross_entropy, gelu, gelu_backward, layer_norm,
    layer_norm_backward, matmul_backward, softmax, softmax_backward,
)
from .corpus import Sentiment
from .tokenizer import TokenSequence, batch_arrays

__all__ = [
    "ModelError", "InvalidConfig", "WrongHead", "IdOutOfRange",
    "CheckpointError", "CheckpointIOError", "BadMagic", "VersionMismatch", "ChecksumMismatch",
    "ModelConfig", "Model", "MLM", "CLASSIFIER",
    "init_model", "forward_encoder", "forward_mlm", "forward_classify", "predict",
    "swap_head", "loss_and_grads", "count_parameters",
    "save_checkpoint", "load_checkpoint",
]

MLM = "mlm"
CLASSIFIER = "classifier"
INIT_STD = 0.02
LN_EPS = 1e-12
MASK_NEG = -1e9

# classifier input: mean of the real-token states, or the CLS state alone
POOLINGS = ("mean", "cls")

MAGIC = b"MXL1"
VERSION = 1

_LAYER_PARAMS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo",
                 "ln1.gamma", "ln1.beta", "w1", "b1", "w2", "b2",
                 "ln2.gamma", "ln2.beta")


class ModelError(ValueError):
    pass


class InvalidConfig(ModelError):
    pass


class WrongHead(ModelError):
    pass


class IdOutOfRange(ModelError):
    pass


class CheckpointError(ModelError):
    pass


class CheckpointIOError(CheckpointError, OSError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    hidden: int = 128
    n_heads: int = 4
    ff_dim: int = 512
    vocab_size: int = 8000
    max_len: int = 70
    n_classes: int = 3
    dropout: float = 0.1
    pooling: str = "cls"

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden < 1 or self.n_heads < 1 or self.ff_dim < 1:
            raise InvalidConfig("layer, hidden, head and ff sizes must be positive")
        if self.hidden % self.n_heads:
            raise InvalidConfig(f"hidden={self.hidden} not divisible by n_heads={self.n_heads}")
        if self.max_len < 3:
            raise InvalidConfig("max_len must be >= 3")
        if self.n_classes != 3:
            raise InvalidConfig("n_classes is fixed at 3")
        if self.vocab_size < 6:
            raise InvalidConfig("vocab_size must be >= 6")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.pooling not in POOLINGS:
            raise InvalidConfig(f"pooling must be one of {POOLINGS}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads


def _param_shapes(cfg: ModelConfig, head: str) -> dict[str, tuple]:
    H, F = cfg.hidden, cfg.ff_dim
    shapes = {
        "embeddings.token": (cfg.vocab_size, H),
        "embeddings.position": (cfg.max_len, H),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + name] = (H, H)
        for name in ("bq", "bv", "bo", "ln1.gamma", "ln1.beta", "b2", "ln2.gamma", "ln2.beta"):
            shapes[p + name] = (H,)
        shapes[p + "w1"] = (H, F)
        shapes[p + "b1"] = (F,)
        shapes[p + "w2"] = (F, H)
    shapes.update(_head_shapes(cfg, head))
    return shapes


def _head_shapes(cfg: ModelConfig, head: str) -> dict[str, tuple]:
    if head == MLM:
        out = cfg.vocab_size
    elif head == CLASSIFIER:
        out = cfg.n_classes
    else:
        raise ValueError(f"unknown head {head!r}")
    return {"head.weight": (cfg.hidden, out), "head.bias": (out,)}


def count_parameters(cfg: ModelConfig, head: str = MLM) -> int:
    return sum(math.prod(s) for s in _param_shapes(cfg, head).values())


def _init_value(name: str, shape: tuple, rng) -> np.ndarray:
    if name.endswith("gamma"):
        return np.ones(shape)
    if name.endswith("beta") or len(shape) == 1:
        return np.zeros(shape)
    return rng.normal(0.0, INIT_STD, size=shape)


class Model:
    """Encoder parameters plus exactly one head (``"mlm"`` or ``"classifier"``)."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], head: str):
        expected = _param_shapes(config, head)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ModelError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeMismatch(f"{name}: {params[name].shape} != {shape}")
        self.config = config
        self.head = head
        self.params = {name: np.ascontiguousarray(params[name], dtype=np.float64)
                       for name in self._ordered_names()}

    def _ordered_names(self) -> list[str]:
        return [n for group in self.groups for n in group]

    @property
    def groups(self) -> list[list[str]]:
        """Parameter names grouped head-first: head, top layer, ..., layer 0, embeddings."""
        cfg = self.config
        groups = [["head.weight", "head.bias"]]
        for i in reversed(range(cfg.n_layers)):
            groups.append([f"layers.{i}.{p}" for p in _LAYER_PARAMS])
        groups.append(["embeddings.token", "embeddings.position"])
        return groups

    @property
    def group_names(self) -> list[str]:
        n = self.config.n_layers
        return ["head"] + [f"layer{i}" for i in reversed(range(n))] + ["embeddings"]

    @property
    def n_groups(self) -> int:
        return self.config.n_layers + 2

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def checksum(self, groups: Sequence[int] | None = None) -> str:
        """SHA-256 over the raw bytes of the selected groups (all by default)."""
        h = hashlib.sha256()
        all_groups = self.groups
        for g in range(len(all_groups)) if groups is None else groups:
            for name in all_groups[g]:
                h.update(name.encode())
                h.update(self.params[name].tobytes())
        return h.hexdigest()

    def encoder_checksum(self) -> str:
        return self.checksum(range(1, self.n_groups))

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.head)


def _head_rng(seed: int):
    return np.random.default_rng([seed, 1])


def init_model(config: ModelConfig, seed: int) -> Model:
    """Seeded N(0, 0.02) weights, zero biases, unit layer-norm gains, MLM head."""
    if not isinstance(config, ModelConfig):
        raise InvalidConfig("config must be a ModelConfig")
    rng = np.random.default_rng([seed, 0])
    params = {}
    for name, shape in _param_shapes(config, MLM).items():
        if not name.startswith("head."):
            params[name] = _init_value(name, shape, rng)
    hrng = _head_rng(seed)
    for name, shape in _head_shapes(config, MLM).items():
        params[name] = _init_value(name, shape, hrng)
    return Model(config, params, MLM)


def swap_head(model: Model, target: str, seed: int) -> Model:
    """Replace the head with a freshly initialized one; the encoder is shared
    bit-for-bit (arrays are copied)."""
    hrng = _head_rng(seed)
    params = {k: v.copy() for k, v in model.params.items() if not k.startswith("head.")}
    for name, shape in _head_shapes(model.config, target).items():
        params[name] = _init_value(name, shape, hrng)
    return Model(model.config, params, target)


# ---------------------------------------------------------------------------
# forward / backward


def _dropout(x, p, rng):
    if rng is None or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


def _block_forward(P, i, x, maskbias, cfg, rng):
    pre = f"layers.{i}."
    b, L, H = x.shape
    nh, dh = cfg.n_heads, cfg.head_dim

    def split(t):
        return t.reshape(b, L, nh, dh).transpose(0, 2, 1, 3)

    q = split(x @ P[pre + "wq"] + P[pre + "bq"])
    # no key bias: it shifts every score of a query equally and softmax cancels it
    k = split(x @ P[pre + "wk"])
    v = split(x @ P[pre + "wv"] + P[pre + "bv"])
    scale = 1.0 / math.sqrt(dh)
    a = softmax(q @ k.transpose(0, 1, 3, 2) * scale + maskbias)
    ctx = (a @ v).transpose(0, 2, 1, 3).reshape(b, L, H)
    o, d1 = _dropout(ctx @ P[pre + "wo"] + P[pre + "bo"], cfg.dropout, rng)
    h1, ln1 = layer_norm(x + o, P[pre + "ln1.gamma"], P[pre + "ln1.beta"], LN_EPS)
    u = h1 @ P[pre + "w1"] + P[pre + "b1"]
    g = gelu(u)
    f, d2 = _dropout(g @ P[pre + "w2"] + P[pre + "b2"], cfg.dropout, rng)
    y, ln2 = layer_norm(h1 + f, P[pre + "ln2.gamma"], P[pre + "ln2.beta"], LN_EPS)
    return y, (x, q, k, v, a, ctx, d1, h1, ln1, u, g, d2, ln2)


def _block_backward(P, i, dy, cache, cfg, grads):
    x, q, k, v, a, ctx, d1, h1, ln1, u, g, d2, ln2 = cache
    pre = f"layers.{i}."
    b, L, H = x.shape
    nh, dh = cfg.n_heads, cfg.head_dim

    def split(t):
        return t.reshape(b, L, nh, dh).transpose(0, 2, 1, 3)

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(b, L, H)

    dsum2, grads[pre + "ln2.gamma"], grads[pre + "ln2.beta"] = layer_norm_backward(dy, ln2)
    df = dsum2 if d2 is None else dsum2 * d2
    dg, grads[pre + "w2"] = matmul_backward(df, g, P[pre + "w2"])
    grads[pre + "b2"] = df.sum(axis=(0, 1))
    du = gelu_backward(dg, u)
    dh1, grads[pre + "w1"] = matmul_backward(du, h1, P[pre + "w1"])
    grads[pre + "b1"] = du.sum(axis=(0, 1))
    dh1 = dh1 + dsum2

    dsum1, grads[pre + "ln1.gamma"], grads[pre + "ln1.beta"] = layer_norm_backward(dh1, ln1)
    do = dsum1 if d1 is None else dsum1 * d1
    dctx, grads[pre + "wo"] = matmul_backward(do, ctx, P[pre + "wo"])
    grads[pre + "bo"] = do.sum(axis=(0, 1))

    dctx = split(dctx)
    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    ds = softmax_backward(da, a) / math.sqrt(dh)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q

    dx = dsum1
    for name, dt in (("q", dq), ("k", dk), ("v", dv)):
        dt = merge(dt)
        dxt, grads[pre + "w" + name] = matmul_backward(dt, x, P[pre + "w" + name])
        if name != "k":
            grads[pre + "b" + name] = dt.sum(axis=(0, 1))
        dx = dx + dxt
    return dx


def _dropout_rng(cfg, train, seed):
    if not train or cfg.dropout == 0.0:
        return None
    return np.random.default_rng([seed, 2])


def _check_ids(model, ids, mask):
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty [batch, length] id array, got {ids.shape}")
    if ids.shape != mask.shape:
        raise ShapeMismatch("ids and attention mask differ in shape")
    if ids.shape[1] > model.config.max_len:
        raise ShapeMismatch(f"sequence length {ids.shape[1]} exceeds max_len {model.config.max_len}")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise IdOutOfRange(f"token id outside [0, {model.config.vocab_size})")


def _encode(model: Model, ids, mask, train=False, seed=0):
    P, cfg = model.params, model.config
    _check_ids(model, ids, mask)
    L = ids.shape[1]
    rng = _dropout_rng(cfg, train, seed)
    x, d0 = _dropout(P["embeddings.token"][ids] + P["embeddings.position"][:L], cfg.dropout, rng)
    maskbias = ((1.0 - mask[:, None, None, :]) * MASK_NEG).astype(np.float64)
    caches = []
    for i in range(cfg.n_layers):
        x, c = _block_forward(P, i, x, maskbias, cfg, rng)
        caches.append(c)
    return x, (ids, d0, caches)


def _encode_backward(model: Model, dx, state, depth: int, grads: dict):
    """Backpropagate through the top ``depth - 1`` groups below the head."""
    P, cfg = model.params, model.config
    ids, d0, caches = state
    n = cfg.n_layers
    for i in reversed(range(n)):
        if n - i >= depth:
            return
        dx = _block_backward(P, i, dx, caches[i], cfg, grads)
    if depth < n + 2:
        return
    if d0 is not None:
        dx = dx * d0
    dtok = np.zeros_like(P["embeddings.token"])
    np.add.at(dtok, ids.reshape(-1), dx.reshape(-1, cfg.hidden))
    dpos = np.zeros_like(P["embeddings.position"])
    dpos[: ids.shape[1]] = dx.sum(axis=0)
    grads["embeddings.token"] = dtok
    grads["embeddings.position"] = dpos


def _as_arrays(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return batch
    if not batch:
        raise ShapeMismatch("empty batch")
    return batch_arrays(batch)


def forward_encoder(model: Model, batch, train_mode: bool = False, seed: int = 0,
                    return_attention: bool = False):
    """Hidden states ``[b, max_len, hidden]`` for a batch of token sequences."""
    ids, mask = _as_arrays(batch)
    x, (_, _, caches) = _encode(model, ids, mask, train_mode, seed)
    if return_attention:
        return x, [c[4] for c in caches]
    return x


def _require(model, head):
    if model.head != head:
        raise WrongHead(f"model has a {model.head} head, {head} required")


def forward_mlm(model: Model, batch, masked_positions: Sequence[tuple[int, int]],
                train_mode: bool = False, seed: int = 0) -> np.ndarray:
    """Vocabulary logits ``[#masked, vocab_size]`` at (row, position) pairs."""
    _require(model, MLM)
    if len(masked_positions) == 0:
        return np.zeros((0, model.config.vocab_size))
    x = forward_encoder(model, batch, train_mode, seed)
    rows, cols = np.asarray(masked_positions, dtype=np.int64).T
    return x[rows, cols] @ model.params["head.weight"] + model.params["head.bias"]


def _pool(x, mask, pooling):
    if pooling == "cls":
        return x[:, 0]
    m = mask[..., None].astype(np.float64)
    return (x * m).sum(axis=1) / m.sum(axis=1)


def _pool_backward(dpooled, x, mask, pooling):
    dx = np.zeros_like(x)
    if pooling == "cls":
        dx[:, 0] = dpooled
    else:
        m = mask[..., None].astype(np.float64)
        dx += dpooled[:, None, :] * (m / m.sum(axis=1, keepdims=True))
    return dx


def forward_classify(model: Model, batch, train_mode: bool = False, seed: int = 0) -> np.ndarray:
    """Class logits ``[b, 3]``: one affine map of the pooled encoder output."""
    _require(model, CLASSIFIER)
    ids, mask = _as_arrays(batch)
    x = forward_encoder(model, (ids, mask), train_mode, seed)
    return _pool(x, mask, model.config.pooling) @ model.params["head.weight"] + model.params["head.bias"]


def predict(logits: np.ndarray) -> list[Sentiment]:
    # argmax returns the first maximum, i.e. ties go to the earlier Sentiment
    return [Sentiment(int(i)) for i in np.argmax(logits, axis=1)]


def loss_and_grads(model: Model, ids: np.ndarray, mask: np.ndarray, targets,
                   positions=None, train: bool = False, seed: int = 0,
                   depth: int | None = None):
    """Cross-entropy of the attached head and gradients of the top ``depth``
    parameter groups (all groups by default).

    For the MLM head ``positions`` is a ``[m, 2]`` array of (row, column)
    pairs and ``targets`` the original ids there; for the classifier
    ``targets`` are class indices, one per row.
    Returns ``(loss, grads, logits)``.
    """
    P = model.params
    depth = model.n_groups if depth is None else depth
    x, state = _encode(model, ids, mask, train, seed)
    if model.head == MLM:
        rows, cols = np.asarray(positions, dtype=np.int64).reshape(-1, 2).T
        hs = x[rows, cols]
    else:
        hs = _pool(x, mask, model.config.pooling)
    logits = hs @ P["head.weight"] + P["head.bias"]
    loss, dlogits = cross_entropy(logits, targets)
    grads: dict[str, np.ndarray] = {}
    if depth < 1:
        return loss, grads, logits
    dhs, grads["head.weight"] = matmul_backward(dlogits, hs, P["head.weight"])
    grads["head.bias"] = dlogits.sum(axis=0)
    if depth > 1:
        if model.head == MLM:
            dx = np.zeros_like(x)
            np.add.at(dx, (rows, cols), dhs)
        else:
            dx = _pool_backward(dhs, x, mask, model.config.pooling)
        _encode_backward(model, dx, state, depth, grads)
    return loss, grads, logits


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path) -> None:
    """Write the binary checkpoint (magic, version, config record, tensors, CRC-32)."""
    record = json.dumps({"config": asdict(model.config), "head": model.head},
                        sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(record)), record]
    for name, arr in model.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    try:
        with open(path, "wb") as fh:
            fh.write(body + struct.pack("<I", zlib.crc32(body)))
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Model:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 16:
        raise ChecksumMismatch(f"{path}: truncated checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch(f"{path}: CRC-32 mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    try:
        (rlen,) = struct.unpack_from("<I", body, 8)
        off = 12
        meta = json.loads(body[off:off + rlen].decode("utf-8"))
        off += rlen
        config = ModelConfig(**meta["config"])
        params = {}
        while off < len(body):
            (nlen,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            n = math.prod(shape)
            params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
        return Model(config, params, meta["head"])
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint body: {exc}") from exc
