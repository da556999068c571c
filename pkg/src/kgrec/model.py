"""Bidirectional Transformer recommender.

Input embeddings are entity + learnable position embeddings; each encoder
layer applies a position-wise feed-forward sub-layer and a multi-head
self-attention sub-layer, each wrapped in residual + dropout + layer norm.
Attention is fully bidirectional over valid positions; PAD keys are blocked
with -inf logits. The prediction head is a two-layer FFN with GELU whose
output projection is tied to the entity table, and every non-item (or
special-token) logit is forced to probability zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import MASK, ClozeSample, Vocab, pad_truncate

INIT_STD = 0.02


@dataclass
class ModelConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 2
    max_len: int = 100
    dropout: float = 0.2
    mask_proportion: float = 0.5

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("hidden dimensionality must be divisible by heads")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")

    def to_kv(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "heads": self.heads,
                "max_len": self.max_len, "dropout": self.dropout,
                "mask_proportion": self.mask_proportion}

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        return cls(dim=int(kv["dim"]), layers=int(kv["layers"]),
                   heads=int(kv["heads"]), max_len=int(kv["max_len"]),
                   dropout=float(kv["dropout"]),
                   mask_proportion=float(kv["mask_proportion"]))


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    for _ in range(8):
        bad = np.abs(out) > 2 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -2 * std, 2 * std)


class Recommender:
    def __init__(self, config: ModelConfig, vocab: Vocab, seed: int = 0,
                 entity_init: np.ndarray | None = None, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        self.dtype = dtype
        # items are the only legal prediction targets
        self.item_valid = np.asarray(vocab.is_item, dtype=bool).copy()
        rng = np.random.default_rng(seed)
        d, v = config.dim, len(vocab)

        def weight(name, shape):
            self.params[name] = T.Tensor(_trunc_normal(rng, shape, INIT_STD),
                                         requires_grad=True, dtype=dtype)

        def zeros(name, shape):
            self.params[name] = T.Tensor(np.zeros(shape), requires_grad=True,
                                         dtype=dtype)

        def ones(name, shape):
            self.params[name] = T.Tensor(np.ones(shape), requires_grad=True,
                                         dtype=dtype)

        self.params: dict[str, T.Tensor] = {}
        weight("entity_table", (v, d))
        weight("position_table", (config.max_len, d))
        if entity_init is not None:
            if entity_init.shape != (v, d):
                raise ValueError(
                    f"offline embeddings of shape {entity_init.shape} do not "
                    f"match the entity table {(v, d)}")
            self.params["entity_table"].data = entity_init.astype(dtype).copy()
        for n in range(config.layers):
            for proj in ("wq", "wk", "wv", "wo"):
                weight(f"layer{n}.attn.{proj}", (d, d))
            for proj in ("bq", "bk", "bv", "bo"):
                zeros(f"layer{n}.attn.{proj}", (d,))
            weight(f"layer{n}.pffn.w1", (d, 4 * d))
            zeros(f"layer{n}.pffn.b1", (4 * d,))
            weight(f"layer{n}.pffn.w2", (4 * d, d))
            zeros(f"layer{n}.pffn.b2", (d,))
            for ln in ("ln1", "ln2"):
                ones(f"layer{n}.{ln}.gamma", (d,))
                zeros(f"layer{n}.{ln}.beta", (d,))
        weight("head.w1", (d, d))
        zeros("head.b1", (d,))
        zeros("head.bias", (v,))

    # -- forward -------------------------------------------------------------

    def embed_inputs(self, ids: np.ndarray, valid: np.ndarray) -> T.Tensor:
        """Entity + position embeddings for [B, K] ids; PAD rows zeroed."""
        b, k = ids.shape
        if ids.min() < 0 or ids.max() >= len(self.vocab):
            raise IndexError("input id outside the vocabulary")
        ent = T.reshape(T.index_select0(self.params["entity_table"],
                                        ids.reshape(-1)), (b, k, self.config.dim))
        pos = T.reshape(T.index_select0(self.params["position_table"],
                                        np.arange(k)), (1, k, self.config.dim))
        h0 = T.add(ent, pos)
        return T.mul(h0, T.constant(valid[..., None].astype(self.dtype)))

    def _attention(self, x: T.Tensor, valid: np.ndarray, n: int) -> T.Tensor:
        cfg = self.config
        b, k, d = x.data.shape
        heads, dh = cfg.heads, d // cfg.heads
        p = self.params

        def proj(which_w, which_b):
            y = T.add(T.matmul(x, p[f"layer{n}.attn.{which_w}"]),
                      p[f"layer{n}.attn.{which_b}"])
            return T.transpose(T.reshape(y, (b, k, heads, dh)), (0, 2, 1, 3))

        q = proj("wq", "bq")
        key = proj("wk", "bk")
        val = proj("wv", "bv")
        scores = T.scale(T.matmul(q, T.transpose(key, (0, 1, 3, 2))),
                         1.0 / np.sqrt(dh))
        att = T.masked_softmax(scores, valid[:, None, None, :])
        ctx = T.matmul(att, val)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, k, d))
        return T.add(T.matmul(ctx, p[f"layer{n}.attn.wo"]),
                     p[f"layer{n}.attn.bo"])

    def _pffn(self, x: T.Tensor, n: int) -> T.Tensor:
        p = self.params
        inner = T.gelu(T.add(T.matmul(x, p[f"layer{n}.pffn.w1"]),
                             p[f"layer{n}.pffn.b1"]))
        return T.add(T.matmul(inner, p[f"layer{n}.pffn.w2"]),
                     p[f"layer{n}.pffn.b2"])

    def encoder_layer(self, h: T.Tensor, valid: np.ndarray, n: int,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> T.Tensor:
        p = self.params

        def drop(y):
            return T.dropout(y, self.config.dropout, rng, training)

        a = T.layer_norm(T.add(h, drop(self._pffn(h, n))),
                         p[f"layer{n}.ln1.gamma"], p[f"layer{n}.ln1.beta"])
        return T.layer_norm(T.add(a, drop(self._attention(a, valid, n))),
                            p[f"layer{n}.ln2.gamma"], p[f"layer{n}.ln2.beta"])

    def forward(self, ids: np.ndarray, valid: np.ndarray,
                training: bool = False,
                rng: np.random.Generator | None = None) -> T.Tensor:
        if training and self.config.dropout > 0 and rng is None:
            raise ValueError("training forward pass needs an RNG for dropout")
        h = self.embed_inputs(ids, valid)
        for n in range(self.config.layers):
            h = self.encoder_layer(h, valid, n, training, rng)
        return h

    def predict_scores(self, hidden: T.Tensor,
                       positions: np.ndarray) -> T.Tensor:
        """Item distributions for the given (batch, position) pairs.

        `positions` is [M, 2]; the output is [M, |vocab|] with exact zeros on
        every non-item entity and special token.
        """
        b, k, d = hidden.data.shape
        flat = T.reshape(hidden, (b * k, d))
        sel = T.index_select0(flat, positions[:, 0] * k + positions[:, 1])
        x = T.gelu(T.add(T.matmul(sel, self.params["head.w1"]),
                         self.params["head.b1"]))
        logits = T.add(T.matmul(x, T.transpose(self.params["entity_table"],
                                               (1, 0))),
                       self.params["head.bias"])
        return T.masked_softmax(logits, self.item_valid[None, :])

    # -- persistence ---------------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in self.params.items():
            arr = arrays[name].astype(self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != "
                                 f"{p.data.shape}")
            p.data = arr

    def no_decay_names(self) -> frozenset:
        return frozenset(n for n in self.params
                         if ".ln" in n or n == "position_table")


def cloze_loss(distributions: T.Tensor, targets: np.ndarray,
               weights: np.ndarray) -> T.Tensor:
    """Weighted negative log-likelihood of the masked targets.

    `weights` carries 1/(masks in sample * batch size) per row, so the sum
    realizes per-sample averaging followed by the batch mean.
    """
    picked = T.take_per_row(distributions, targets)
    nll = T.neg(T.log_clamped(picked))
    return T.sum_all(T.mul(nll, T.constant(weights, dtype=nll.data.dtype)))


def batch_arrays(samples: list[ClozeSample]):
    """Stack padded samples into model inputs plus mask bookkeeping."""
    ids = np.asarray([s.input_ids for s in samples], dtype=np.int64)
    valid = np.asarray([s.valid for s in samples], dtype=bool)
    positions, targets, weights = [], [], []
    for i, s in enumerate(samples):
        for pos in sorted(s.targets):
            positions.append((i, pos))
            targets.append(s.targets[pos])
            weights.append(1.0 / (len(s.targets) * len(samples)))
    return (ids, valid, np.asarray(positions, dtype=np.int64),
            np.asarray(targets, dtype=np.int64),
            np.asarray(weights, dtype=np.float64))


def batch_loss(model: Recommender, samples: list[ClozeSample],
               training: bool = False,
               rng: np.random.Generator | None = None) -> T.Tensor:
    ids, valid, positions, targets, weights = batch_arrays(samples)
    hidden = model.forward(ids, valid, training, rng)
    probs = model.predict_scores(hidden, positions)
    return cloze_loss(probs, targets, weights)


def score_context(model: Recommender, context_ids: list[int]) -> np.ndarray:
    """Probabilities over the vocabulary for the next item after `context`."""
    sample = pad_truncate(
        ClozeSample("query", list(context_ids) + [MASK],
                    {len(context_ids): 0}, []),
        model.config.max_len)
    ids = np.asarray([sample.input_ids], dtype=np.int64)
    valid = np.asarray([sample.valid], dtype=bool)
    hidden = model.forward(ids, valid, training=False)
    probs = model.predict_scores(
        hidden, np.asarray([[0, model.config.max_len - 1]], dtype=np.int64))
    return probs.data[0]


def recommend_topk(model: Recommender, context_ids: list[int],
                   k: int) -> list[tuple[int, float]]:
    """Top-k items by probability, descending, ties to the smaller id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = score_context(model, context_ids)
    items = np.flatnonzero(model.item_valid)
    order = np.lexsort((items, -scores[items]))
    top = items[order][:k]
    return [(int(i), float(scores[i])) for i in top]
