"""Training orchestration: sample building with ablation switches, the
epoch loop with Adam and global-norm clipping, and checkpointing.

Two variants share the code path: "base" trains on the original mention
sequences only; "kg" additionally trains on path-augmented sequences and
initializes the entity table from offline graph embeddings. Ablations:
no_entity (item-only context), no_item (entity-only context, targets kept),
no_offline (random entity-table init), no_kgseq (drop augmented sequences).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .config import parse_bool, parse_kv, write_kv
from .corpus import (ClozeSample, UserSequence, Vocab, make_test_samples,
                     make_training_samples, pad_truncate)
from .evaluation import evaluate
from .kg import KnowledgeGraph, augment_sequence
from .model import ModelConfig, Recommender, batch_loss

VARIANT_BASE = "base"
VARIANT_KG = "kg"


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    variant: str = VARIANT_BASE
    batch_size: int = 256
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    epochs: int = 50
    seed: int = 0
    max_hops: int = 4
    no_entity: bool = False
    no_item: bool = False
    no_offline: bool = False
    no_kgseq: bool = False

    def __post_init__(self):
        if self.variant not in (VARIANT_BASE, VARIANT_KG):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def uses_kg_sequences(self) -> bool:
        return self.variant == VARIANT_KG and not self.no_kgseq

    @property
    def uses_offline_init(self) -> bool:
        return self.variant == VARIANT_KG and not self.no_offline

    def to_kv(self) -> dict:
        kv = dict(self.model.to_kv())
        kv.update({
            "variant": self.variant, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay, "grad_clip": self.grad_clip,
            "epochs": self.epochs, "seed": self.seed,
            "max_hops": self.max_hops,
            "no_entity": int(self.no_entity), "no_item": int(self.no_item),
            "no_offline": int(self.no_offline), "no_kgseq": int(self.no_kgseq),
        })
        return kv

    @classmethod
    def from_kv(cls, kv: dict) -> "TrainConfig":
        defaults = cls()
        model_kv = defaults.model.to_kv()
        model_kv.update({k: kv[k] for k in model_kv if k in kv})

        def get(key, cast, fallback):
            return cast(kv[key]) if key in kv else fallback

        return cls(
            model=ModelConfig.from_kv(model_kv),
            variant=get("variant", str, defaults.variant),
            batch_size=get("batch_size", int, defaults.batch_size),
            learning_rate=get("learning_rate", float, defaults.learning_rate),
            weight_decay=get("weight_decay", float, defaults.weight_decay),
            grad_clip=get("grad_clip", float, defaults.grad_clip),
            epochs=get("epochs", int, defaults.epochs),
            seed=get("seed", int, defaults.seed),
            max_hops=get("max_hops", int, defaults.max_hops),
            no_entity=get("no_entity", parse_bool, False),
            no_item=get("no_item", parse_bool, False),
            no_offline=get("no_offline", parse_bool, False),
            no_kgseq=get("no_kgseq", parse_bool, False),
        )


# --- ablation filters -------------------------------------------------------

def strip_entities(seq: UserSequence, vocab: Vocab) -> UserSequence:
    """Drop non-item elements, remapping ground-truth positions."""
    keep = [i for i, e in enumerate(seq.elements) if vocab.is_item[e]]
    remap = {old: new for new, old in enumerate(keep)}
    return replace(seq,
                   elements=[seq.elements[i] for i in keep],
                   ground_truth=sorted(remap[p] for p in seq.ground_truth
                                       if p in remap),
                   inserted=[seq.inserted[i] for i in keep])


def strip_items(sample: ClozeSample, vocab: Vocab) -> ClozeSample:
    """Drop unmasked item positions from a sample's context; masked targets
    stay in place (the ablation removes item CONTEXT, not the prediction)."""
    keep = [i for i, e in enumerate(sample.input_ids)
            if i in sample.targets or not vocab.is_item[e]]
    remap = {old: new for new, old in enumerate(keep)}
    return replace(sample,
                   input_ids=[sample.input_ids[i] for i in keep],
                   targets={remap[p]: t for p, t in sample.targets.items()},
                   valid=[sample.valid[i] for i in keep])


def _sequence_pool(sequences: list[UserSequence], kg: KnowledgeGraph | None,
                   config: TrainConfig, vocab: Vocab,
                   originals_too: bool = True) -> list[UserSequence]:
    seqs = [s for s in sequences if not s.is_empty()]
    pool = list(seqs) if originals_too else []
    if config.uses_kg_sequences:
        if kg is None:
            raise TrainError("the kg variant needs a knowledge graph")
        pool.extend(augment_sequence(kg, s, config.max_hops) for s in seqs)
    if config.no_entity:
        pool = [strip_entities(s, vocab) for s in pool]
    return pool


def build_training_set(sequences: list[UserSequence],
                       kg: KnowledgeGraph | None, config: TrainConfig,
                       vocab: Vocab,
                       rng: np.random.Generator) -> list[ClozeSample]:
    """Cloze samples for one epoch: masks are drawn fresh from `rng`."""
    samples: list[ClozeSample] = []
    for seq in _sequence_pool(sequences, kg, config, vocab):
        samples.extend(make_training_samples(
            seq, config.model.mask_proportion, rng, vocab))
    if config.no_item:
        samples = [strip_items(s, vocab) for s in samples]
    padded = [pad_truncate(s, config.model.max_len) for s in samples]
    padded = [s for s in padded if s.targets]
    if not padded:
        raise TrainError("the configured filters left nothing to train on")
    return padded


def build_test_samples(sequences: list[UserSequence],
                       kg: KnowledgeGraph | None, config: TrainConfig,
                       vocab: Vocab) -> list[ClozeSample]:
    """Terminal-mask evaluation samples, one per ground-truth item.

    The kg variant evaluates on augmented contexts so path bridges are
    visible at prediction time, mirroring its training distribution.
    """
    pool = _sequence_pool(sequences, kg, config, vocab,
                          originals_too=not config.uses_kg_sequences)
    samples: list[ClozeSample] = []
    for seq in pool:
        samples.extend(make_test_samples(seq))
    if config.no_item:
        samples = [strip_items(s, vocab) for s in samples]
    return samples


# --- checkpointing ----------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: TrainConfig
    epoch: int
    history: list[dict]

    def save(self, path) -> None:
        save_tensors(path, self.params)
        meta = dict(self.config.to_kv())
        meta["epoch"] = self.epoch
        meta["history"] = json.dumps(self.history, sort_keys=True)
        write_kv(str(path) + ".meta", meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params = load_tensors(path)
        meta = parse_kv(str(path) + ".meta")
        config = TrainConfig.from_kv(meta)
        history = json.loads(meta.get("history", "[]"))
        return cls(params, config, int(meta.get("epoch", 0)), history)

    def build_model(self, vocab: Vocab) -> Recommender:
        model = Recommender(self.config.model, vocab, seed=0)
        model.load_arrays(self.params)
        return model


# --- training loop ----------------------------------------------------------

def train(config: TrainConfig, train_seqs: list[UserSequence],
          valid_seqs: list[UserSequence], vocab: Vocab,
          kg: KnowledgeGraph | None = None,
          offline_embeddings: np.ndarray | None = None) -> Checkpoint:
    if not train_seqs:
        raise TrainError("empty training corpus")
    if config.uses_offline_init:
        if offline_embeddings is None:
            raise TrainError("the kg variant needs offline embeddings "
                             "(or the no_offline ablation)")
        if offline_embeddings.shape != (len(vocab), config.model.dim):
            raise TrainError(
                f"offline embeddings {offline_embeddings.shape} do not match "
                f"the entity table {(len(vocab), config.model.dim)}")
        entity_init = offline_embeddings
    else:
        entity_init = None

    seed_seq = np.random.SeedSequence(config.seed)
    init_seed, dropout_seed, data_seed = seed_seq.spawn(3)
    model = Recommender(config.model, vocab,
                        seed=init_seed.generate_state(1)[0],
                        entity_init=entity_init)
    dropout_rng = np.random.default_rng(dropout_seed)
    data_root = data_seed

    state = T.AdamState()
    no_decay = model.no_decay_names()
    valid_samples = build_test_samples(valid_seqs, kg, config, vocab) \
        if valid_seqs else []

    history: list[dict] = []
    best = Checkpoint(model.parameter_arrays(), config, 0, [])
    best_metric = -np.inf
    for epoch in range(1, config.epochs + 1):
        epoch_rng = np.random.default_rng(data_root.spawn(1)[0])
        samples = build_training_set(train_seqs, kg, config, vocab, epoch_rng)
        order = epoch_rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), config.batch_size):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            try:
                with T.Tape() as tape:
                    loss = batch_loss(model, batch, training=True,
                                      rng=dropout_rng)
            except T.NumericError as exc:
                raise TrainError(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch starting at {start}: {exc}") from exc
            grads = T.backward(tape, loss)
            named = {name: grads[p] for name, p in model.params.items()
                     if p in grads}
            named = T.clip_global_norm(named, config.grad_clip)
            T.adam_step(model.params, named, state, config.learning_rate,
                        config.weight_decay, no_decay)
            losses.append(float(loss.data))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if valid_samples:
            val = evaluate(model, valid_samples)
            record["val_recall10"] = val.recall[10]
            metric = val.recall[10]
        else:
            # no validation split: prefer the lowest training loss
            metric = -record["train_loss"]
        history.append(record)
        if metric > best_metric:
            best_metric = metric
            best = Checkpoint(model.parameter_arrays(), config, epoch, [])
    best.history = history
    return best
