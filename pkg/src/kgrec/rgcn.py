"""Offline entity-embedding pretraining with relational graph convolution.

One convolution layer aggregates, per relation, the transformed embeddings
of the heads pointing at each node, plus a self transform, through a ReLU.
Embeddings are trained with a link-prediction objective (bilinear diagonal
relation scoring, uniform negative corruptions, binary cross-entropy) and
the top-layer representations seed the recommender's entity table.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .corpus import NUM_SPECIALS, Vocab
from .kg import KnowledgeGraph

EMBEDDING_TENSOR_NAME = "entity_embeddings"


class RgcnError(ValueError):
    pass


@dataclass
class RgcnConfig:
    dim: int = 32
    layers: int = 1
    epochs: int = 200
    negatives: int = 5
    lr: float = 1e-2
    seed: int = 0
    # normalization constant Z_{e,r}; kept at 1 rather than degree-based
    z: float = 1.0


@dataclass
class RgcnLayer:
    w_self: T.Tensor
    w_rel: list[T.Tensor]   # one [d, d] transform per relation
    z: float = 1.0


def init_layer(num_relations: int, dim: int, rng: np.random.Generator,
               z: float = 1.0, dtype=np.float32) -> RgcnLayer:
    def mat():
        return T.Tensor(rng.normal(0.0, 0.1, size=(dim, dim)),
                        requires_grad=True, dtype=dtype)
    return RgcnLayer(mat(), [mat() for _ in range(num_relations)], z)


def _relation_index(g: KnowledgeGraph):
    heads = {r: [] for r in range(g.num_relations)}
    tails = {r: [] for r in range(g.num_relations)}
    for t in g.triples:
        heads[t.relation].append(t.head)
        tails[t.relation].append(t.tail)
    return {r: (np.asarray(heads[r]), np.asarray(tails[r]))
            for r in heads if heads[r]}


def rgcn_forward(g: KnowledgeGraph, emb_in: T.Tensor,
                 layer: RgcnLayer) -> T.Tensor:
    """One convolution step over the whole entity table [|E| x d]."""
    num_rows = emb_in.data.shape[0]
    out = T.matmul(emb_in, layer.w_self)
    for r, (heads, tails) in _relation_index(g).items():
        messages = T.matmul(T.index_select0(emb_in, heads), layer.w_rel[r])
        agg = T.scatter_add0(messages, tails, num_rows)
        out = T.add(out, T.scale(agg, 1.0 / layer.z))
    return T.relu(out)


@dataclass
class PretrainResult:
    embeddings: np.ndarray       # full-vocabulary matrix [|vocab| x d]
    top_layer: np.ndarray        # raw top-layer table used for scoring
    relation_weights: np.ndarray # trained diagonal relation vectors [R x d]


def pretrain_embeddings(g: KnowledgeGraph, vocab: Vocab,
                        config: RgcnConfig) -> np.ndarray:
    """Train and return an embedding matrix covering the full vocabulary.

    KG entities get their top-layer representations; special tokens and
    entities the graph never mentions keep their seeded random rows (the
    convolution cannot produce anything for them).
    """
    return pretrain_with_report(g, vocab, config).embeddings


def pretrain_with_report(g: KnowledgeGraph, vocab: Vocab,
                         config: RgcnConfig) -> PretrainResult:
    if g.triple_count == 0:
        raise RgcnError("cannot pretrain on a graph with zero triples")
    rng = np.random.default_rng(config.seed)
    n_rows = len(vocab)
    base = T.Tensor(rng.normal(0.0, 0.1, size=(n_rows, config.dim)),
                    requires_grad=True)
    init_rows = base.data.copy()
    layers = [init_layer(g.num_relations, config.dim, rng, config.z)
              for _ in range(config.layers)]
    rel_vec = T.Tensor(rng.normal(0.0, 0.1, size=(g.num_relations, config.dim)),
                       requires_grad=True)

    params = {"base": base, "rel_vec": rel_vec}
    for li, layer in enumerate(layers):
        params[f"layer{li}.w_self"] = layer.w_self
        for ri, w in enumerate(layer.w_rel):
            params[f"layer{li}.w_rel{ri}"] = w

    heads = np.asarray([t.head for t in g.triples])
    rels = np.asarray([t.relation for t in g.triples])
    tails = np.asarray([t.tail for t in g.triples])
    entities = np.asarray(sorted(g.neighbors))
    state = T.AdamState()

    def top_layer(table: T.Tensor) -> T.Tensor:
        for layer in layers:
            table = rgcn_forward(g, table, layer)
        return table

    if config.epochs == 0:
        return PretrainResult(init_rows, init_rows.copy(), rel_vec.data.copy())

    def triple_scores(top: T.Tensor, tail_ids: np.ndarray) -> T.Tensor:
        h = T.index_select0(top, heads)
        t = T.index_select0(top, tail_ids)
        w = T.index_select0(rel_vec, rels)
        return T.sum_last(T.mul(T.mul(h, w), t))

    for _ in range(config.epochs):
        neg_tails = rng.choice(entities, size=(config.negatives, len(tails)))
        with T.Tape() as tape:
            top = top_layer(base)
            pos = triple_scores(top, tails)
            loss = T.mean_all(T.softplus(T.neg(pos)))
            for k in range(config.negatives):
                neg = triple_scores(top, neg_tails[k])
                loss = T.add(loss, T.scale(T.mean_all(T.softplus(neg)),
                                           1.0 / config.negatives))
        grads = T.backward(tape, loss)
        named = {name: grads.get(p) for name, p in params.items()}
        T.adam_step(params, named, state, config.lr)

    final = top_layer(base).data.copy()
    result = init_rows
    kg_rows = entities[entities >= NUM_SPECIALS]
    result[kg_rows] = final[kg_rows]
    return PretrainResult(result, final, rel_vec.data.copy())


def score_separation(g: KnowledgeGraph, result: PretrainResult,
                     seed: int = 0) -> tuple[float, float]:
    """Mean link-prediction score of true triples vs tail-corrupted ones,
    using the same bilinear scoring the training ran."""
    rng = np.random.default_rng(seed)
    entities = np.asarray(sorted(g.neighbors))
    heads = np.asarray([t.head for t in g.triples])
    rels = np.asarray([t.relation for t in g.triples])
    tails = np.asarray([t.tail for t in g.triples])
    neg_tails = rng.choice(entities, size=len(tails))
    emb, w = result.top_layer, result.relation_weights
    pos = float(np.mean(np.sum(emb[heads] * w[rels] * emb[tails], axis=-1)))
    neg = float(np.mean(np.sum(emb[heads] * w[rels] * emb[neg_tails], axis=-1)))
    return pos, neg


def export_embeddings(embeddings: np.ndarray, path) -> None:
    save_tensors(path, {EMBEDDING_TENSOR_NAME: embeddings})


def load_embeddings(path, expected_dim: int | None = None) -> np.ndarray:
    tensors = load_tensors(path)
    if EMBEDDING_TENSOR_NAME not in tensors:
        raise CheckpointError(f"{path}: no '{EMBEDDING_TENSOR_NAME}' tensor")
    emb = tensors[EMBEDDING_TENSOR_NAME]
    if expected_dim is not None and emb.shape[1] != expected_dim:
        raise CheckpointError(
            f"{path}: embedding dimension {emb.shape[1]} does not match "
            f"model dimension {expected_dim}")
    return emb
