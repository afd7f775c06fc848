"""Small decoder-only transformer: numpy forward/backward, Adam training, sampling.

Pre-norm residual blocks, causal attention, GELU MLP. Everything is a pure
function of its inputs and seeds; no wall-clock or platform entropy anywhere.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
# Output head is initialized small so the untrained model is near-uniform.
HEAD_INIT_SCALE = 0.02
CHECKPOINT_MAGIC = b"IMBLM1"


class LMError(Exception):
    pass


class CheckpointError(LMError):
    pass


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_k: int = 16
    d_ff: int = 128
    max_len: int = 256

    def __post_init__(self):
        if self.n_heads * self.d_k != self.d_model:
            raise LMError("n_heads * d_k must equal d_model")
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads,
               self.d_ff, self.max_len) < 1:
            raise LMError("all LMConfig dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model,
            "n_layers": self.n_layers, "n_heads": self.n_heads,
            "d_k": self.d_k, "d_ff": self.d_ff, "max_len": self.max_len,
        }


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 3e-4
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise LMError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise LMError("learning_rate and grad_clip must be positive")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "epochs": self.epochs,
            "learning_rate": self.learning_rate, "seed": self.seed,
            "grad_clip": self.grad_clip,
        }


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.7
    allowed_mask: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise LMError("temperature must be positive")


@dataclass
class LMParams:
    """Named tensors in a fixed manifest order (the checkpoint layout)."""
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "LMParams":
        return LMParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "LMParams":
        return LMParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def zeros_like(self) -> "LMParams":
        return LMParams({k: np.zeros_like(v) for k, v in self.tensors.items()})


def param_shapes(config: LMConfig) -> dict[str, tuple[int, ...]]:
    d, V = config.d_model, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (V, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1_g"] = (d,)
        shapes[p + "ln1_b"] = (d,)
        shapes[p + "wq"] = (d, d)
        shapes[p + "wk"] = (d, d)
        shapes[p + "wv"] = (d, d)
        shapes[p + "wo"] = (d, d)
        shapes[p + "ln2_g"] = (d,)
        shapes[p + "ln2_b"] = (d,)
        shapes[p + "w1"] = (d, config.d_ff)
        shapes[p + "b1"] = (config.d_ff,)
        shapes[p + "w2"] = (config.d_ff, d)
        shapes[p + "b2"] = (d,)
    shapes["lnf_g"] = (d,)
    shapes["lnf_b"] = (d,)
    shapes["head"] = (d, V)
    return shapes


def init_params(config: LMConfig, seed: int, dtype=np.float32) -> LMParams:
    """Weights ~ N(0, 1/fan_in); layer-norm scales 1, offsets 0; small head."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        base = name.split(".")[-1]
        if base.startswith("ln") and base.endswith("_g"):
            arr = np.ones(shape)
        elif base.startswith("ln") or base.startswith("b"):
            arr = np.zeros(shape)
        elif name == "head":
            arr = rng.normal(0.0, HEAD_INIT_SCALE, size=shape)
        elif name in ("tok_emb", "pos_emb"):
            arr = rng.normal(0.0, 1.0 / np.sqrt(config.d_model), size=shape)
        else:
            arr = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        tensors[name] = arr.astype(dtype)
    return LMParams(tensors)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * g + b, (xhat, inv_std, g)


def _layer_norm_backward(dy, cache):
    xhat, inv_std, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    phi = 0.5 * (1.0 + erf(x / _SQRT_2))
    return x * phi, phi


def _gelu_backward(du, x, phi):
    return du * (phi + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI)


def _forward_batch(params: LMParams, ids: np.ndarray, config: LMConfig,
                   need_cache: bool = False):
    """Run the model on an int array (B, L); returns logits (B, L, V) and cache."""
    B, L = ids.shape
    if L > config.max_len:
        raise LMError(f"sequence length {L} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise LMError("token id out of range")
    dtype = params.dtype

    h = params["tok_emb"][ids] + params["pos_emb"][:L]
    causal = np.tril(np.ones((L, L), dtype=bool))
    neg_inf = np.array(-np.inf, dtype=dtype)
    caches = []
    H, dk = config.n_heads, config.d_k

    for i in range(config.n_layers):
        p = f"layer{i}."
        h_in = h
        a, ln1_cache = _layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        q = (a @ params[p + "wq"]).reshape(B, L, H, dk).transpose(0, 2, 1, 3)
        k = (a @ params[p + "wk"]).reshape(B, L, H, dk).transpose(0, 2, 1, 3)
        v = (a @ params[p + "wv"]).reshape(B, L, H, dk).transpose(0, 2, 1, 3)
        scores = q @ k.swapaxes(-1, -2) / np.sqrt(dk).astype(dtype)
        scores = np.where(causal, scores, neg_inf)
        scores -= scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores)
        attn = expd / expd.sum(axis=-1, keepdims=True)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, config.d_model)
        attn_out = ctx @ params[p + "wo"]
        h = h_in + attn_out

        h_mid = h
        a2, ln2_cache = _layer_norm(h, params[p + "ln2_g"], params[p + "ln2_b"])
        u = a2 @ params[p + "w1"] + params[p + "b1"]
        gact, phi = _gelu(u)
        m = gact @ params[p + "w2"] + params[p + "b2"]
        h = h_mid + m

        if need_cache:
            caches.append((a, ln1_cache, q, k, v, attn, ctx, a2, ln2_cache, u, phi, gact))

    hf, lnf_cache = _layer_norm(h, params["lnf_g"], params["lnf_b"])
    logits = hf @ params["head"]
    full_cache = (ids, caches, hf, lnf_cache) if need_cache else None
    return logits, full_cache


def forward(params: LMParams, tokens: list[int], config: LMConfig) -> np.ndarray:
    """Logits matrix (len, vocab_size); logits[k] depends only on tokens[0..k]."""
    if not tokens:
        raise LMError("empty token sequence")
    ids = np.asarray([tokens], dtype=np.int64)
    logits, _ = _forward_batch(params, ids, config)
    return logits[0]


def _pad_batch(batch: list[list[int]], pad_id: int = 0):
    if not batch:
        raise LMError("empty batch")
    lengths = np.array([len(seq) for seq in batch], dtype=np.int64)
    if lengths.min() < 2:
        raise LMError("every sequence needs length >= 2")
    L = int(lengths.max())
    ids = np.full((len(batch), L), pad_id, dtype=np.int64)
    for i, seq in enumerate(batch):
        ids[i, : len(seq)] = seq
    return ids, lengths


def _loss_from_logits(logits: np.ndarray, ids: np.ndarray, lengths: np.ndarray):
    """Mean next-token NLL over non-padding positions; also the logits gradient."""
    B, L, V = logits.shape
    targets = ids[:, 1:]
    pos = np.arange(L - 1)
    mask = pos[None, :] < (lengths[:, None] - 1)

    z = logits[:, :-1, :].astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1))
    tgt_logit = np.take_along_axis(z, targets[:, :, None], axis=-1)[:, :, 0]
    nll = (logsumexp - tgt_logit) * mask
    count = int(mask.sum())
    loss = float(nll.sum() / count)

    probs = np.exp(z - logsumexp[:, :, None])
    dlogits = probs
    np.put_along_axis(
        dlogits, targets[:, :, None],
        np.take_along_axis(dlogits, targets[:, :, None], axis=-1) - 1.0, axis=-1,
    )
    dlogits *= mask[:, :, None] / count
    full = np.zeros_like(logits, dtype=logits.dtype)
    full[:, :-1, :] = dlogits.astype(logits.dtype)
    return loss, full


def nll_loss(params: LMParams, batch: list[list[int]], config: LMConfig) -> float:
    ids, lengths = _pad_batch(batch)
    logits, _ = _forward_batch(params, ids, config)
    loss, _ = _loss_from_logits(logits, ids, lengths)
    return loss


def loss_and_grad(params: LMParams, batch: list[list[int]], config: LMConfig):
    """Exact analytic gradient of nll_loss, congruent with LMParams."""
    ids, lengths = _pad_batch(batch)
    logits, cache = _forward_batch(params, ids, config, need_cache=True)
    loss, dlogits = _loss_from_logits(logits, ids, lengths)
    grads = _backward_batch(params, dlogits, cache, config)
    return loss, grads


def grad(params: LMParams, batch: list[list[int]], config: LMConfig) -> LMParams:
    return loss_and_grad(params, batch, config)[1]


def _backward_batch(params: LMParams, dlogits, cache, config: LMConfig) -> LMParams:
    ids, caches, hf, lnf_cache = cache
    B, L = ids.shape
    d, H, dk = config.d_model, config.n_heads, config.d_k
    g = params.zeros_like()
    t = g.tensors

    t["head"] += hf.reshape(-1, d).T @ dlogits.reshape(-1, config.vocab_size)
    dhf = dlogits @ params["head"].T
    dh, t["lnf_g"][...], t["lnf_b"][...] = _layer_norm_backward(dhf, lnf_cache)

    for i in reversed(range(config.n_layers)):
        p = f"layer{i}."
        a, ln1_cache, q, k, v, attn, ctx, a2, ln2_cache, u, phi, gact = caches[i]

        # MLP block (residual: dh flows through unchanged plus the branch).
        dm = dh
        t[p + "w2"] += gact.reshape(-1, config.d_ff).T @ dm.reshape(-1, d)
        t[p + "b2"] += dm.sum(axis=(0, 1))
        dgact = dm @ params[p + "w2"].T
        du = _gelu_backward(dgact, u, phi)
        t[p + "w1"] += a2.reshape(-1, d).T @ du.reshape(-1, config.d_ff)
        t[p + "b1"] += du.sum(axis=(0, 1))
        da2 = du @ params[p + "w1"].T
        dx, dg2, db2 = _layer_norm_backward(da2, ln2_cache)
        t[p + "ln2_g"] += dg2
        t[p + "ln2_b"] += db2
        dh = dh + dx

        # Attention block.
        dattn_out = dh
        t[p + "wo"] += ctx.reshape(-1, d).T @ dattn_out.reshape(-1, d)
        dctx = (dattn_out @ params[p + "wo"].T).reshape(B, L, H, dk).transpose(0, 2, 1, 3)
        dA = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        dscores = attn * (dA - (dA * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dk)
        dq = dscores @ k
        dk_ = dscores.swapaxes(-1, -2) @ q

        def _merge(x):
            return x.transpose(0, 2, 1, 3).reshape(B, L, d)

        dq, dk_, dv = _merge(dq), _merge(dk_), _merge(dv)
        a_flat = a.reshape(-1, d)
        t[p + "wq"] += a_flat.T @ dq.reshape(-1, d)
        t[p + "wk"] += a_flat.T @ dk_.reshape(-1, d)
        t[p + "wv"] += a_flat.T @ dv.reshape(-1, d)
        da = dq @ params[p + "wq"].T + dk_ @ params[p + "wk"].T + dv @ params[p + "wv"].T
        dx, dg1, db1 = _layer_norm_backward(da, ln1_cache)
        t[p + "ln1_g"] += dg1
        t[p + "ln1_b"] += db1
        dh = dh + dx

    np.add.at(t["tok_emb"], ids, dh)
    t["pos_emb"][:L] += dh.sum(axis=0)
    return g


def _global_norm(grads: LMParams) -> float:
    total = 0.0
    for v in grads.tensors.values():
        total += float(np.sum(v.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def train(params: LMParams, corpus: list[list[int]], tcfg: TrainConfig,
          config: LMConfig) -> LMParams:
    """Adam with gradient-norm clipping; per-epoch reshuffle driven by tcfg.seed."""
    if not corpus:
        raise LMError("empty training corpus")
    params = params.copy()
    rng = np.random.default_rng(tcfg.seed)
    m = params.zeros_like()
    v = params.zeros_like()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(corpus))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(corpus), tcfg.batch_size):
            batch = [corpus[i] for i in order[start:start + tcfg.batch_size]]
            loss, grads = loss_and_grad(params, batch, config)
            if not np.isfinite(loss):
                raise LMError(f"training diverged: non-finite loss at epoch {epoch}")
            norm = _global_norm(grads)
            scale = min(1.0, tcfg.grad_clip / (norm + 1e-12))
            step += 1
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for name, gt in grads.tensors.items():
                gt = gt * scale
                m.tensors[name] = beta1 * m.tensors[name] + (1 - beta1) * gt
                v.tensors[name] = beta2 * v.tensors[name] + (1 - beta2) * gt * gt
                mhat = m.tensors[name] / bc1
                vhat = v.tensors[name] / bc2
                params.tensors[name] -= (tcfg.learning_rate * mhat /
                                         (np.sqrt(vhat) + eps)).astype(params.dtype)
            epoch_loss += loss
            n_batches += 1
        logger.info("epoch %d mean loss %.6f", epoch, epoch_loss / n_batches)
    return params


def dist_entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def next_token_dist(params: LMParams, prefix: list[int], scfg: SamplerConfig,
                    config: LMConfig) -> np.ndarray:
    """Temperature softmax over the allowed token set; disallowed tokens get 0."""
    logits = forward(params, prefix, config)[-1].astype(np.float64)
    allowed = scfg.allowed_mask
    if allowed is not None:
        if len(allowed) == 0:
            raise LMError("empty allowed token set")
        mask = np.zeros(config.vocab_size, dtype=bool)
        mask[list(allowed)] = True
    else:
        mask = np.ones(config.vocab_size, dtype=bool)
    z = logits / scfg.temperature
    z[~mask] = -np.inf
    z -= z[mask].max()
    expz = np.where(mask, np.exp(z), 0.0)
    probs = expz / expz.sum()
    return probs


@dataclass
class SampleResult:
    tokens: list[int]
    truncated: bool
    step_entropies: list[float] = field(default_factory=list)


def sample_sequence(params: LMParams, prompt: list[int], scfg: SamplerConfig,
                    step_mask_fn, rng: np.random.Generator, max_steps: int,
                    config: LMConfig, eos_id: int,
                    collect_entropy: bool = False) -> SampleResult:
    """Append sampled tokens until EOS or max_steps (then the result is truncated).

    step_mask_fn(seq) returns the allowed token-id collection for the next step,
    or None for unrestricted sampling. Singleton allowed sets are emitted without
    consuming randomness.
    """
    seq = list(prompt)
    entropies: list[float] = []
    for _ in range(max_steps):
        allowed = step_mask_fn(seq) if step_mask_fn is not None else None
        if allowed is not None and len(allowed) == 0:
            raise LMError("step mask produced an empty allowed set")
        if allowed is not None and len(allowed) == 1:
            tok = int(next(iter(allowed)))
            if collect_entropy:
                entropies.append(0.0)
        else:
            step_cfg = SamplerConfig(
                temperature=scfg.temperature,
                allowed_mask=tuple(allowed) if allowed is not None else None,
            )
            probs = next_token_dist(params, seq, step_cfg, config)
            if collect_entropy:
                entropies.append(dist_entropy(probs))
            tok = int(rng.choice(config.vocab_size, p=probs / probs.sum()))
        seq.append(tok)
        if tok == eos_id:
            return SampleResult(seq, truncated=False, step_entropies=entropies)
    return SampleResult(seq, truncated=True, step_entropies=entropies)


def save_checkpoint(params: LMParams, config: LMConfig, path) -> None:
    """Magic, uint32 header length, JSON header, float32 LE payloads in manifest order."""
    manifest = []
    offset = 0
    order = list(param_shapes(config))
    for name in order:
        arr = params[name]
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = json.dumps({"config": config.to_dict(), "manifest": manifest},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in order:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path, expect_config: LMConfig | None = None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not an IMBLM1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(blob) < pos + 4:
        raise CheckpointError("truncated checkpoint header")
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[pos: pos + header_len].decode("utf-8"))
        config = LMConfig(**header["config"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    if expect_config is not None and config != expect_config:
        raise CheckpointError("checkpoint config does not match the expected config")
    payload = blob[pos + header_len:]
    tensors: dict[str, np.ndarray] = {}
    expected = param_shapes(config)
    for entry in manifest:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in expected or shape != expected[name]:
            raise CheckpointError(f"tensor {name!r} has unexpected shape {shape}")
        n = int(np.prod(shape))
        if offset + n * 4 > len(payload):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    if set(tensors) != set(expected):
        raise CheckpointError("checkpoint manifest is missing tensors")
    return LMParams(tensors), config
