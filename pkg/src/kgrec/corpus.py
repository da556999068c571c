"""Conversation-log ingestion: vocabulary, mention sequences, splits, and
masked (Cloze) training/test samples.

Dialog files are JSON-lines, one dialog per line:
    {"id": str, "turns": [{"role": "seeker"|"recommender",
                           "text": str, "mentions": [external ids]}]}
The entity dictionary is a TSV with columns external_id, surface_form,
is_item (0/1). Ids 0 and 1 are reserved for the PAD and MASK tokens.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

PAD = 0
MASK = 1
NUM_SPECIALS = 2

ROLE_SEEKER = "seeker"
ROLE_RECOMMENDER = "recommender"


class CorpusError(ValueError):
    pass


@dataclass
class Vocab:
    external: list[str]          # dense id -> external id ("" for specials)
    surface: list[str]           # dense id -> surface form
    is_item: np.ndarray          # bool per dense id; specials are never items
    id_of: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id_of:
            self.id_of = {ext: i for i, ext in enumerate(self.external)
                          if i >= NUM_SPECIALS}

    def __len__(self):
        return len(self.external)

    @property
    def item_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_item)

    def entity_count(self) -> int:
        return len(self.external) - NUM_SPECIALS


@dataclass
class Turn:
    role: str
    text: str
    mentions: list[int]


@dataclass
class Dialog:
    dialog_id: str
    turns: list[Turn]


@dataclass
class UserSequence:
    dialog_id: str
    elements: list[int]
    ground_truth: list[int]      # positions of recommender-mentioned items
    inserted: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.inserted:
            self.inserted = [False] * len(self.elements)

    def is_empty(self) -> bool:
        return not self.elements


@dataclass
class ClozeSample:
    dialog_id: str
    input_ids: list[int]
    targets: dict[int, int]      # position -> true item id
    valid: list[bool]            # attention-valid (False on PAD)
    ordinal: int | None = None   # 1-based item ordinal for test samples

    def __post_init__(self):
        if not self.valid:
            self.valid = [True] * len(self.input_ids)


@dataclass
class CorpusLoad:
    dialogs: list[Dialog]
    vocab: Vocab
    dropped_mentions: int = 0


def load_vocab(path) -> Vocab:
    external = ["[pad]", "[mask]"]
    surface = ["[pad]", "[mask]"]
    items = [False, False]
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise CorpusError(f"{path}:{lineno}: malformed entity row")
            ext, surf, flag = parts
            if ext in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate external id {ext!r}")
            seen.add(ext)
            external.append(ext)
            surface.append(surf)
            items.append(flag == "1")
    return Vocab(external, surface, np.asarray(items, dtype=bool))


def load_dialogs(path, vocab_path) -> CorpusLoad:
    """Parse dialogs, resolving mentions through the entity dictionary.

    Unknown mentions are dropped and counted rather than mapped to an UNK id:
    the model vocabulary is closed over the dictionary.
    """
    vocab = load_vocab(vocab_path)
    dialogs: list[Dialog] = []
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(record, dict) or "id" not in record or "turns" not in record:
                raise CorpusError(f"{path}:{lineno}: dialog record needs 'id' and 'turns'")
            turns = []
            for turn in record["turns"]:
                role = turn.get("role")
                if role not in (ROLE_SEEKER, ROLE_RECOMMENDER):
                    raise CorpusError(f"{path}:{lineno}: unknown role {role!r}")
                mentions = []
                for ext in turn.get("mentions", []):
                    ent = vocab.id_of.get(ext)
                    if ent is None:
                        dropped += 1
                    else:
                        mentions.append(ent)
                turns.append(Turn(role, turn.get("text", ""), mentions))
            dialogs.append(Dialog(str(record["id"]), turns))
    return CorpusLoad(dialogs, vocab, dropped)


def dump_dialogs(path, dialogs: list[Dialog], vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogs:
            record = {"id": d.dialog_id,
                      "turns": [{"role": t.role, "text": t.text,
                                 "mentions": [vocab.external[m] for m in t.mentions]}
                                for t in d.turns]}
            f.write(json.dumps(record) + "\n")


def extract_sequence(dialog: Dialog, vocab: Vocab) -> UserSequence:
    """Chronological mention sequence over both roles; ground truths are the
    recommender's item mentions only."""
    elements: list[int] = []
    truths: list[int] = []
    for turn in dialog.turns:
        for ent in turn.mentions:
            if turn.role == ROLE_RECOMMENDER and vocab.is_item[ent]:
                truths.append(len(elements))
            elements.append(ent)
    return UserSequence(dialog.dialog_id, elements, truths)


def split_dataset(dialogs: list[Dialog], seed: int):
    """8:1:1 split at dialog granularity, deterministic under the seed."""
    if len(dialogs) < 10:
        raise CorpusError("need at least 10 dialogs to split 8:1:1")
    order = np.random.default_rng(seed).permutation(len(dialogs))
    n = len(dialogs)
    n_valid = int(round(n * 0.1))
    n_test = int(round(n * 0.1))
    valid_idx = order[:n_valid]
    test_idx = order[n_valid:n_valid + n_test]
    train_idx = order[n_valid + n_test:]
    pick = lambda idx: [dialogs[i] for i in sorted(idx)]
    return pick(train_idx), pick(valid_idx), pick(test_idx)


def _maskable_positions(seq: UserSequence, vocab: Vocab) -> list[int]:
    # only originally-mentioned items may become Cloze targets; entities and
    # KG-inserted bridge elements are context-only
    return [i for i, ent in enumerate(seq.elements)
            if vocab.is_item[ent] and not seq.inserted[i]]


def make_training_samples(seq: UserSequence, p: float, rng: np.random.Generator,
                          vocab: Vocab) -> list[ClozeSample]:
    """Two samples per sequence: random item masking, and last-item masking."""
    if not 0.0 < p < 1.0:
        raise ValueError("mask proportion must be in (0, 1)")
    positions = _maskable_positions(seq, vocab)
    if not positions:
        return []
    n_mask = max(1, int(p * len(positions) + 0.5))
    chosen = sorted(rng.choice(len(positions), size=n_mask, replace=False))
    masked_a = {positions[i] for i in chosen}
    samples = []
    for masked in (masked_a, {positions[-1]}):
        ids = [MASK if i in masked else e for i, e in enumerate(seq.elements)]
        targets = {i: seq.elements[i] for i in masked}
        samples.append(ClozeSample(seq.dialog_id, ids, targets, []))
    return samples


def make_test_samples(seq: UserSequence) -> list[ClozeSample]:
    """One terminal-mask sample per ground-truth item, in dialog order.

    The i-th sample sees everything strictly before the i-th ground-truth
    item, followed by MASK; its ordinal drives per-position reporting.
    """
    samples = []
    for ordinal, pos in enumerate(sorted(seq.ground_truth), start=1):
        ids = list(seq.elements[:pos]) + [MASK]
        samples.append(ClozeSample(seq.dialog_id, ids,
                                   {len(ids) - 1: seq.elements[pos]}, [],
                                   ordinal=ordinal))
    return samples


def pad_truncate(sample: ClozeSample, k: int) -> ClozeSample:
    """Left-truncate to the most recent k elements, then left-pad with PAD so
    the terminal element's position index is stable."""
    if k < 2:
        raise ValueError("max length must be at least 2")
    ids = sample.input_ids
    targets = sample.targets
    if len(ids) > k:
        offset = len(ids) - k
        ids = ids[offset:]
        targets = {pos - offset: t for pos, t in targets.items() if pos >= offset}
    pad = k - len(ids)
    ids = [PAD] * pad + ids
    targets = {pos + pad: t for pos, t in targets.items()}
    valid = [False] * pad + [True] * (k - pad)
    return replace(sample, input_ids=ids, targets=targets, valid=valid)


# --- sequence dump (JSON-lines) --------------------------------------------

def sequence_to_json(seq: UserSequence, vocab: Vocab,
                     with_inserted: bool = False) -> str:
    record = {"id": seq.dialog_id,
              "elements": [vocab.external[e] for e in seq.elements],
              "ground_truth": list(seq.ground_truth)}
    if with_inserted:
        record["inserted"] = list(seq.inserted)
    return json.dumps(record)


def sequence_from_json(line: str, vocab: Vocab) -> UserSequence:
    record = json.loads(line)
    elements = [vocab.id_of[e] for e in record["elements"]]
    inserted = record.get("inserted") or [False] * len(elements)
    return UserSequence(record["id"], elements, list(record["ground_truth"]),
                        list(inserted))
