"""A small conditional masked language model (CMLM) for non-autoregressive
translation, with AdamW training and iterative mask-predict decoding.

The decoder has no causal mask: every target position sees every other one,
and the training signal is the cross-entropy at randomly masked positions.
A length head on the pooled encoder output predicts the target length as an
offset from the source length.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import MASK, PAD
from .errors import NumericError

logger = logging.getLogger(__name__)

MAX_OFFSET = 8
OFFSETS = np.arange(-MAX_OFFSET, MAX_OFFSET + 1)
_MAGIC = b"PMGNAT01"


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 2
    max_length: int = 64
    dropout: float = 0.2
    label_smoothing: float = 0.1
    length_loss_weight: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        dims = (self.vocab_size, self.embed_dim, self.hidden_dim, self.heads, self.max_length)
        if any(d <= 0 for d in dims) or self.encoder_layers < 0 or self.decoder_layers < 0:
            raise ValueError(f"model dimensions must be positive: {self}")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def parameter_count(self) -> int:
        d, h, V = self.embed_dim, self.hidden_dim, self.vocab_size
        attn = 4 * (d * d + d)
        ffn = d * h + h + h * d + d
        ln = 2 * d
        enc = attn + ffn + 2 * ln
        dec = 2 * attn + ffn + 3 * ln
        n_len = 2 * MAX_OFFSET + 1
        return (V * d + self.max_length * d
                + self.encoder_layers * enc + self.decoder_layers * dec
                + 2 * ln
                + d * V + V
                + d * n_len + n_len)


@dataclass
class OptimizerConfig:
    lr: float = 5e-4
    warmup: int = 10_000
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    weight_decay: float = 0.01


def lr_at(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then inverse square root."""
    if step <= 0:
        return 0.0
    if warmup <= 0:
        return peak
    return peak * min(step / warmup, math.sqrt(warmup / step))


def _dropout(x: torch.Tensor, p: float, gen: torch.Generator | None) -> torch.Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, mem, key_pad):
        B, Lq, D = x.shape
        Lk = mem.shape[1]
        H = self.heads
        q = self.q(x).view(B, Lq, H, D // H).transpose(1, 2)
        k = self.k(mem).view(B, Lk, H, D // H).transpose(1, 2)
        v = self.v(mem).view(B, Lk, H, D // H).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // H)
        scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, D)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = Attention(cfg.embed_dim, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.hidden_dim)

    def forward(self, x, pad, p, gen):
        h = self.ln1(x)
        x = x + _dropout(self.attn(h, h, pad), p, gen)
        return x + _dropout(self.ffn(self.ln2(x)), p, gen)


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.embed_dim)
        self.self_attn = Attention(cfg.embed_dim, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.embed_dim)
        self.cross_attn = Attention(cfg.embed_dim, cfg.heads)
        self.ln3 = nn.LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.hidden_dim)

    def forward(self, y, tgt_pad, enc, src_pad, p, gen):
        h = self.ln1(y)
        y = y + _dropout(self.self_attn(h, h, tgt_pad), p, gen)
        y = y + _dropout(self.cross_attn(self.ln2(y), enc, src_pad), p, gen)
        return y + _dropout(self.ffn(self.ln3(y)), p, gen)


class CMLM(nn.Module):
    """Pre-norm encoder-decoder; the decoder attends bidirectionally.

    Dropout acts on embeddings and on every residual branch output.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.pos_embed = nn.Embedding(cfg.max_length, cfg.embed_dim)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.encoder_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.decoder_layers))
        self.enc_ln = nn.LayerNorm(cfg.embed_dim)
        self.dec_ln = nn.LayerNorm(cfg.embed_dim)
        self.out = nn.Linear(cfg.embed_dim, cfg.vocab_size)
        self.length_head = nn.Linear(cfg.embed_dim, 2 * MAX_OFFSET + 1)

    def _embed(self, tokens, p, gen):
        pos = torch.arange(tokens.shape[1])
        return _dropout(self.tok_embed(tokens) + self.pos_embed(pos)[None], p, gen)

    def encode(self, src, p=0.0, gen=None):
        pad = src.eq(PAD)
        x = self._embed(src, p, gen)
        for layer in self.encoder:
            x = layer(x, pad, p, gen)
        return self.enc_ln(x), pad

    def length_logits(self, enc, src_pad):
        keep = (~src_pad).to(enc.dtype)[..., None]
        pooled = (enc * keep).sum(1) / keep.sum(1)
        return self.length_head(pooled)

    def decode(self, tgt_in, enc, src_pad, p=0.0, gen=None):
        tgt_pad = tgt_in.eq(PAD)
        y = self._embed(tgt_in, p, gen)
        for layer in self.decoder:
            y = layer(y, tgt_pad, enc, src_pad, p, gen)
        return self.out(self.dec_ln(y))

    def forward(self, src, tgt_in, p=0.0, gen=None):
        enc, src_pad = self.encode(src, p, gen)
        return self.decode(tgt_in, enc, src_pad, p, gen), self.length_logits(enc, src_pad)


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    model: CMLM
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]
    step: int = 0
    seed: int = 0
    valid_bleu: float | None = None
    extra: dict = field(default_factory=dict)

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        out = [(f"param/{n}", p.detach()) for n, p in self.model.named_parameters()]
        out += [(f"exp_avg/{n}", t) for n, t in self.exp_avg.items()]
        out += [(f"exp_avg_sq/{n}", t) for n, t in self.exp_avg_sq.items()]
        return out


def init_model(config: ModelConfig, seed: int) -> ModelCheckpoint:
    """Fresh model: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Embedding rows use the embedding width as fan-in; LayerNorm starts at
    unit gain and zero shift.
    """
    model = CMLM(config).to(config.torch_dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, mod in model.named_modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.uniform_(-bound, bound, generator=gen)
                mod.bias.uniform_(-bound, bound, generator=gen)
            elif isinstance(mod, nn.Embedding):
                bound = 1.0 / math.sqrt(mod.embedding_dim)
                mod.weight.uniform_(-bound, bound, generator=gen)
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
    zeros = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    return ModelCheckpoint(config, model, zeros, {n: z.clone() for n, z in zeros.items()},
                           step=0, seed=seed)


# -- batching -------------------------------------------------------------------

@dataclass
class TrainBatch:
    src: torch.Tensor        # (B, S) padded source ids
    tgt: torch.Tensor        # (B, T) padded gold target ids
    tgt_in: torch.Tensor     # tgt with MASK at supervised positions
    supervised: torch.Tensor  # (B, T) bool
    length_class: torch.Tensor  # (B,) index into OFFSETS


def pad_batch(seqs: Sequence[Sequence[int]], max_length: int | None = None) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    if max_length is not None and width > max_length:
        raise ValueError(f"sequence of length {width} exceeds max_length {max_length}")
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def length_class(src_len: int, tgt_len: int) -> int:
    return int(np.clip(tgt_len - src_len, -MAX_OFFSET, MAX_OFFSET)) + MAX_OFFSET


def make_train_batch(pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
                     rng: np.random.Generator,
                     masks: Sequence[Sequence[int]] | None = None) -> TrainBatch:
    """Collate (source, target) pairs and choose the supervised positions.

    Unless ``masks`` gives them explicitly, each target masks k positions
    chosen uniformly, with k uniform on 1..len(target). Pairs given an empty
    explicit mask are dropped with a warning.
    """
    if masks is not None:
        keep = [i for i, m in enumerate(masks) if len(m)]
        if len(keep) < len(pairs):
            logger.warning("skipping %d sample(s) without masked positions", len(pairs) - len(keep))
            if not keep:
                raise ValueError("no sample in the batch has a masked position")
            pairs = [pairs[i] for i in keep]
            masks = [masks[i] for i in keep]
    src = pad_batch([s for s, _ in pairs])
    tgt = pad_batch([t for _, t in pairs])
    supervised = torch.zeros(tgt.shape, dtype=torch.bool)
    for i, (_, t) in enumerate(pairs):
        if masks is not None:
            pos = list(masks[i])
        else:
            k = int(rng.integers(1, len(t) + 1))
            pos = rng.choice(len(t), size=k, replace=False)
        supervised[i, torch.as_tensor(pos, dtype=torch.long)] = True
    tgt_in = tgt.masked_fill(supervised, MASK)
    lengths = torch.as_tensor([length_class(len(s), len(t)) for s, t in pairs])
    return TrainBatch(src, tgt, tgt_in, supervised, lengths)


def _check_ids(cfg: ModelConfig, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if t.numel() and int(t.max()) >= cfg.vocab_size:
            raise ValueError(f"token id {int(t.max())} >= vocab size {cfg.vocab_size}")
        if t.shape[-1] > cfg.max_length:
            raise ValueError(f"sequence length {t.shape[-1]} exceeds max_length {cfg.max_length}")


# -- forward / loss -----------------------------------------------------------------

def forward_cmlm(ckpt: ModelCheckpoint, source: Sequence[int] | torch.Tensor,
                 masked_target: Sequence[int] | torch.Tensor, train: bool = False,
                 dropout_seed: int | None = None) -> torch.Tensor:
    """Per-position vocabulary logits, shape (target length, vocab)."""
    src = torch.as_tensor(source, dtype=torch.long).reshape(1, -1)
    tgt = torch.as_tensor(masked_target, dtype=torch.long).reshape(1, -1)
    _check_ids(ckpt.config, src, tgt)
    gen = torch.Generator().manual_seed(dropout_seed or 0) if train else None
    p = ckpt.config.dropout if train else 0.0
    with torch.no_grad():
        logits, _ = ckpt.model(src, tgt, p, gen)
    return logits[0]


def smoothed_cross_entropy(logits: torch.Tensor, gold: torch.Tensor, eps: float) -> torch.Tensor:
    """Per-row (1 - eps) * NLL(gold) + eps * mean over vocab of NLL."""
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, gold[..., None]).squeeze(-1)
    return (1.0 - eps) * nll - eps * logp.mean(-1)


def batch_loss(ckpt: ModelCheckpoint, batch: TrainBatch, eps: float | None = None,
               train: bool = True, dropout_seed: int | None = None) -> torch.Tensor:
    cfg = ckpt.config
    eps = cfg.label_smoothing if eps is None else eps
    _check_ids(cfg, batch.src, batch.tgt_in)
    gen = torch.Generator().manual_seed(dropout_seed) if train and dropout_seed is not None else None
    p = cfg.dropout if gen is not None else 0.0
    logits, len_logits = ckpt.model(batch.src, batch.tgt_in, p, gen)
    sup = batch.supervised
    token_loss = smoothed_cross_entropy(logits[sup], batch.tgt[sup], eps).mean()
    length_loss = F.cross_entropy(len_logits, batch.length_class)
    return token_loss + cfg.length_loss_weight * length_loss


def loss_and_grad(ckpt: ModelCheckpoint, batch: TrainBatch, eps: float | None = None,
                  train: bool = True, dropout_seed: int | None = None
                  ) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and exact gradients (reverse-mode autodiff) per parameter."""
    params = dict(ckpt.model.named_parameters())
    for p in params.values():
        p.grad = None
    loss = batch_loss(ckpt, batch, eps, train, dropout_seed)
    loss.backward()
    grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in params.items()}
    return float(loss.detach()), grads


def train_step(ckpt: ModelCheckpoint, batch: TrainBatch, opt: OptimizerConfig,
               dropout_seed: int | None = None) -> float:
    """One AdamW update in place; returns the loss. ``ckpt.step`` is incremented.

    The update numbered ``ckpt.step + 1`` uses ``lr_at(ckpt.step + 1)``.
    """
    loss, grads = loss_and_grad(ckpt, batch, train=True, dropout_seed=dropout_seed)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} at step {ckpt.step}")
    t = ckpt.step + 1
    lr = lr_at(t, opt.lr, opt.warmup)
    b1, b2 = opt.betas
    with torch.no_grad():
        for name, p in ckpt.model.named_parameters():
            g = grads[name]
            m, v = ckpt.exp_avg[name], ckpt.exp_avg_sq[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / (1 - b2 ** t)).sqrt_().add_(opt.eps)
            p.mul_(1 - lr * opt.weight_decay)
            p.addcdiv_(m, denom, value=-lr / (1 - b1 ** t))
    ckpt.step = t
    return loss


# -- inference -------------------------------------------------------------------

def predict_length(ckpt: ModelCheckpoint, source: Sequence[int]) -> np.ndarray:
    """Probabilities over target-length offsets ``OFFSETS`` (-8..+8)."""
    src = torch.as_tensor(source, dtype=torch.long).reshape(1, -1)
    _check_ids(ckpt.config, src)
    with torch.no_grad():
        enc, pad = ckpt.model.encode(src)
        probs = torch.softmax(ckpt.model.length_logits(enc, pad), dim=-1)[0]
    return probs.numpy().astype(np.float64)


def remask_counts(n: int, iterations: int) -> list[int]:
    """Positions re-masked at iterations 1..T-1: ceil(n * (T - t) / T)."""
    return [-(-n * (iterations - t) // iterations) for t in range(1, iterations)]


def _candidate_lengths(probs: np.ndarray, src_len: int, beam: int,
                       max_length: int) -> list[tuple[int, float]]:
    """Top-``beam`` target lengths with their probabilities.

    Offsets clamped onto the same length (below 1 or above ``max_length``)
    pool their mass; ties go to the shorter length.
    """
    mass: dict[int, float] = {}
    for off, p in zip(OFFSETS, probs):
        length = int(min(max(src_len + off, 1), max_length))
        mass[length] = mass.get(length, 0.0) + float(p)
    return sorted(mass.items(), key=lambda kv: (-kv[1], kv[0]))[:beam]


def mask_predict_batch(ckpt: ModelCheckpoint, sources: Sequence[Sequence[int]],
                       iterations: int = 10, length_beam: int = 3,
                       length_prior: bool = True) -> list[list[int]]:
    """Mask-predict decoding of several sources at once.

    Each source is decoded at its ``length_beam`` most probable lengths. Step
    0 predicts every position from an all-MASK input; step t re-masks the
    ceil(N (T - t) / T) least confident positions and predicts them again.
    The candidate with the best length-normalized log-probability wins:
    (log P(length) + sum of token log-probs) / length, or the plain mean
    token log-probability with ``length_prior=False``.
    """
    if iterations < 1 or length_beam < 1:
        raise ValueError("iterations and length_beam must be >= 1")
    if not sources:
        return []
    cfg = ckpt.config
    model = ckpt.model
    src = pad_batch(sources, cfg.max_length)
    _check_ids(cfg, src)
    with torch.no_grad():
        enc, src_pad = model.encode(src)
        len_probs = torch.softmax(model.length_logits(enc, src_pad), dim=-1).numpy()

        rows, lengths, priors = [], [], []
        for b, s in enumerate(sources):
            for length, p in _candidate_lengths(len_probs[b], len(s), length_beam, cfg.max_length):
                rows.append(b)
                lengths.append(length)
                priors.append(math.log(p) if p > 0 else -math.inf)
        rows_t = torch.as_tensor(rows)
        lens_t = torch.as_tensor(lengths)
        enc_r, pad_r = enc[rows_t], src_pad[rows_t]
        width = max(lengths)
        real = torch.arange(width)[None, :] < lens_t[:, None]
        tokens = torch.full((len(rows), width), MASK, dtype=torch.long).masked_fill(~real, PAD)

        logp = torch.log_softmax(model.decode(tokens, enc_r, pad_r), dim=-1)
        scores, tokens = logp.max(-1)
        tokens = tokens.masked_fill(~real, PAD)
        for t in range(1, iterations):
            n = -(-lens_t * (iterations - t) // iterations)
            conf = scores.masked_fill(~real, float("inf"))
            order = torch.argsort(conf, dim=-1, stable=True)
            rank = torch.empty_like(order).scatter_(1, order, torch.arange(width).expand_as(order).contiguous())
            remask = rank < n[:, None]
            logp = torch.log_softmax(model.decode(tokens.masked_fill(remask, MASK), enc_r, pad_r), dim=-1)
            new_scores, new_tokens = logp.max(-1)
            tokens = torch.where(remask, new_tokens, tokens)
            scores = torch.where(remask, new_scores, scores)

        total = scores.masked_fill(~real, 0.0).sum(-1).numpy()
        if length_prior:
            total = total + np.asarray(priors)
        avg = total / np.asarray(lengths)
    best: dict[int, int] = {}
    for r, b in enumerate(rows):
        if b not in best or avg[r] > avg[best[b]]:
            best[b] = r
    return [tokens[best[b], : lengths[best[b]]].tolist() for b in range(len(sources))]


def mask_predict_decode(ckpt: ModelCheckpoint, source: Sequence[int], iterations: int = 10,
                        length_beam: int = 3, length_prior: bool = True) -> list[int]:
    return mask_predict_batch(ckpt, [source], iterations, length_beam, length_prior)[0]


def decode_all(ckpt: ModelCheckpoint, sources: Sequence[Sequence[int]], iterations: int = 10,
               length_beam: int = 3, batch_size: int = 64, length_prior: bool = True) -> list[list[int]]:
    out = []
    for i in range(0, len(sources), batch_size):
        out.extend(mask_predict_batch(ckpt, sources[i:i + batch_size], iterations, length_beam, length_prior))
    return out


# -- persistence -------------------------------------------------------------------

def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    """Binary tensor container plus a JSON sidecar at ``<path>.json``.

    Layout: 8-byte magic, little-endian uint64 header size, JSON header
    listing (name, shape, offset), then row-major little-endian float64 data.
    """
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, t in ckpt.named_tensors():
        arr = np.ascontiguousarray(t.detach().numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "step": ckpt.step, "seed": ckpt.seed},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    sidecar = {"config": asdict(ckpt.config), "step": ckpt.step, "seed": ckpt.seed,
               "valid_bleu": ckpt.valid_bleu, **ckpt.extra}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    config = ModelConfig(**meta.pop("config"))
    data = path.read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    body = data[16 + hlen:]
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.float64)).to(config.torch_dtype)
    ckpt = init_model(config, seed=header["seed"])
    with torch.no_grad():
        for name, p in ckpt.model.named_parameters():
            p.copy_(tensors[f"param/{name}"])
            ckpt.exp_avg[name] = tensors[f"exp_avg/{name}"].clone()
            ckpt.exp_avg_sq[name] = tensors[f"exp_avg_sq/{name}"].clone()
    ckpt.step = header["step"]
    ckpt.valid_bleu = meta.pop("valid_bleu", None)
    for k in ("step", "seed"):
        meta.pop(k, None)
    ckpt.extra = meta
    return ckpt
