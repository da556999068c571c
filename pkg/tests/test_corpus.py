import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrec import corpus
from kgrec.corpus import MASK, PAD, ClozeSample, CorpusError, UserSequence


def write_vocab(path, rows):
    path.write_text("".join(f"{e}\t{s}\t{i}\n" for e, s, i in rows))


def write_dialogs(path, dialogs):
    path.write_text("".join(json.dumps(d) + "\n" for d in dialogs))


@pytest.fixture
def small_vocab(tmp_path):
    path = tmp_path / "entities.tsv"
    write_vocab(path, [("m1", "Movie One", 1), ("m2", "Movie Two", 1),
                       ("e1", "thriller", 0), ("e2", "action", 0)])
    return path


class TestLoadDialogs:
    def test_empty_file(self, tmp_path):
        dialogs_path = tmp_path / "dialogs.jsonl"
        vocab_path = tmp_path / "entities.tsv"
        dialogs_path.write_text("")
        vocab_path.write_text("")
        load = corpus.load_dialogs(dialogs_path, vocab_path)
        assert load.dialogs == []
        assert len(load.vocab) == corpus.NUM_SPECIALS

    def test_mentions_resolved_in_text_order(self, tmp_path, small_vocab):
        path = tmp_path / "dialogs.jsonl"
        write_dialogs(path, [{
            "id": "d0",
            "turns": [
                {"role": "seeker", "text": "hi", "mentions": ["e1", "m1"]},
                {"role": "recommender", "text": "try", "mentions": ["m2"]},
            ],
        }])
        load = corpus.load_dialogs(path, small_vocab)
        (dialog,) = load.dialogs
        mentions = [m for t in dialog.turns for m in t.mentions]
        assert [load.vocab.external[m] for m in mentions] == ["e1", "m1", "m2"]

    def test_unknown_mentions_dropped_and_counted(self, tmp_path, small_vocab):
        path = tmp_path / "dialogs.jsonl"
        write_dialogs(path, [{
            "id": "d0",
            "turns": [{"role": "seeker", "text": "",
                       "mentions": ["m1", "nope", "e1", "m2"]}],
        }])
        load = corpus.load_dialogs(path, small_vocab)
        assert load.dropped_mentions == 1
        assert len(load.dialogs[0].turns[0].mentions) == 3

    def test_malformed_record_names_line(self, tmp_path, small_vocab):
        path = tmp_path / "dialogs.jsonl"
        path.write_text('{"id": "ok", "turns": []}\nnot json\n')
        with pytest.raises(CorpusError, match=":2"):
            corpus.load_dialogs(path, small_vocab)

    def test_bad_role_rejected(self, tmp_path, small_vocab):
        path = tmp_path / "dialogs.jsonl"
        write_dialogs(path, [{"id": "d", "turns": [
            {"role": "narrator", "text": "", "mentions": []}]}])
        with pytest.raises(CorpusError, match="role"):
            corpus.load_dialogs(path, small_vocab)

    def test_round_trip(self, tmp_path, small_vocab):
        path = tmp_path / "dialogs.jsonl"
        write_dialogs(path, [{
            "id": "d0",
            "turns": [
                {"role": "seeker", "text": "hello", "mentions": ["e1"]},
                {"role": "recommender", "text": "sure", "mentions": ["m1", "e2"]},
            ],
        }])
        load = corpus.load_dialogs(path, small_vocab)
        out = tmp_path / "again.jsonl"
        corpus.dump_dialogs(out, load.dialogs, load.vocab)
        again = corpus.load_dialogs(out, small_vocab)
        assert again.dialogs == load.dialogs


class TestVocab:
    def test_specials_reserved_and_not_items(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        assert PAD == 0 and MASK == 1
        assert not vocab.is_item[PAD] and not vocab.is_item[MASK]
        assert vocab.id_of["m1"] == 2  # dense, contiguous after specials

    def test_items_subset_of_entities(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        assert set(vocab.item_ids) <= set(range(corpus.NUM_SPECIALS, len(vocab)))

    def test_duplicate_external_id_rejected(self, tmp_path):
        path = tmp_path / "v.tsv"
        path.write_text("a\tA\t1\na\tA again\t0\n")
        with pytest.raises(CorpusError, match=":2"):
            corpus.load_vocab(path)


def seq_fixture(vocab):
    # [thriller, Movie One, action, Movie Two], truths at the item positions
    ids = [vocab.id_of["e1"], vocab.id_of["m1"], vocab.id_of["e2"],
           vocab.id_of["m2"]]
    return UserSequence("d", ids, [1, 3])


class TestExtractSequence:
    def test_interleaves_roles_chronologically(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        d = corpus.Dialog("d", [
            corpus.Turn("seeker", "", [vocab.id_of["e1"]]),
            corpus.Turn("recommender", "", [vocab.id_of["m1"]]),
        ])
        seq = corpus.extract_sequence(d, vocab)
        assert seq.elements == [vocab.id_of["e1"], vocab.id_of["m1"]]
        assert seq.ground_truth == [1]

    def test_recommender_entities_are_not_ground_truth(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        d = corpus.Dialog("d", [
            corpus.Turn("recommender", "", [vocab.id_of["e2"]]),
        ])
        seq = corpus.extract_sequence(d, vocab)
        assert seq.elements == [vocab.id_of["e2"]]
        assert seq.ground_truth == []

    def test_seeker_items_are_not_ground_truth(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        d = corpus.Dialog("d", [
            corpus.Turn("seeker", "", [vocab.id_of["m1"]]),
        ])
        assert corpus.extract_sequence(d, vocab).ground_truth == []

    def test_example_dialog_shape(self, tmp_path):
        # three related entities discussed, then three movies, two of them
        # recommended: a 7-element sequence with 2 ground truths
        vpath = tmp_path / "v.tsv"
        write_vocab(vpath, [("thriller", "thriller", 0), ("action", "action", 0),
                            ("suspense", "suspense", 0), ("ff1", "F&F 1", 1),
                            ("ff4", "F&F 4", 1), ("ff8", "F&F 8", 1),
                            ("extra", "extra", 0)])
        vocab = corpus.load_vocab(vpath)
        d = corpus.Dialog("fig", [
            corpus.Turn("seeker", "", [vocab.id_of["thriller"]]),
            corpus.Turn("recommender", "", [vocab.id_of["action"],
                                            vocab.id_of["suspense"]]),
            corpus.Turn("recommender", "", [vocab.id_of["thriller"],
                                            vocab.id_of["ff1"]]),
            corpus.Turn("recommender", "", [vocab.id_of["ff4"]]),
            corpus.Turn("seeker", "", [vocab.id_of["ff8"]]),
        ])
        seq = corpus.extract_sequence(d, vocab)
        assert len(seq.elements) == 7
        assert len(seq.ground_truth) == 2

    def test_empty_dialog_yields_empty_marker(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = corpus.extract_sequence(corpus.Dialog("d", []), vocab)
        assert seq.is_empty()


class TestSplitDataset:
    def _dialogs(self, n):
        return [corpus.Dialog(f"d{i}", []) for i in range(n)]

    def test_ten_dialogs(self):
        tr, va, te = corpus.split_dataset(self._dialogs(10), seed=1)
        assert (len(tr), len(va), len(te)) == (8, 1, 1)

    def test_hundred_dialogs(self):
        tr, va, te = corpus.split_dataset(self._dialogs(100), seed=1)
        assert (len(tr), len(va), len(te)) == (80, 10, 10)

    def test_deterministic_and_partitioning(self):
        ds = self._dialogs(37)
        a = corpus.split_dataset(ds, seed=9)
        b = corpus.split_dataset(ds, seed=9)
        assert [[d.dialog_id for d in part] for part in a] == \
               [[d.dialog_id for d in part] for part in b]
        ids = [d.dialog_id for part in a for d in part]
        assert sorted(ids) == sorted(d.dialog_id for d in ds)

    def test_too_few_dialogs(self):
        with pytest.raises(CorpusError):
            corpus.split_dataset(self._dialogs(9), seed=0)


class TestTrainingSamples:
    def test_mask_count_follows_rounding_rule(self, tmp_path):
        vpath = tmp_path / "v.tsv"
        write_vocab(vpath, [(f"m{i}", f"M{i}", 1) for i in range(5)])
        vocab = corpus.load_vocab(vpath)
        seq = UserSequence("d", [vocab.id_of[f"m{i}"] for i in range(5)],
                           [0, 1, 2, 3, 4])
        rng = np.random.default_rng(0)
        sample_a, sample_b = corpus.make_training_samples(seq, 0.4, rng, vocab)
        assert sum(1 for t in sample_a.input_ids if t == MASK) == 2
        assert len(sample_a.targets) == 2
        # sample B masks exactly the final item
        assert list(sample_b.targets) == [4]

    def test_single_item_masked_in_both_samples(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = UserSequence("d", [vocab.id_of["e1"], vocab.id_of["m1"]], [1])
        rng = np.random.default_rng(0)
        a, b = corpus.make_training_samples(seq, 0.5, rng, vocab)
        assert list(a.targets) == [1] and list(b.targets) == [1]

    def test_entities_never_masked(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = seq_fixture(vocab)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            for sample in corpus.make_training_samples(seq, 0.5, rng, vocab):
                for pos in sample.targets:
                    assert vocab.is_item[seq.elements[pos]]
                assert sample.input_ids[0] != MASK  # e1 stays
                assert sample.input_ids[2] != MASK  # e2 stays

    def test_targets_are_item_positions(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = seq_fixture(vocab)
        rng = np.random.default_rng(4)
        item_positions = {i for i, e in enumerate(seq.elements)
                          if vocab.is_item[e]}
        for sample in corpus.make_training_samples(seq, 0.6, rng, vocab):
            assert set(sample.targets) <= item_positions

    def test_no_items_yields_no_samples(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = UserSequence("d", [vocab.id_of["e1"]], [])
        assert corpus.make_training_samples(
            seq, 0.5, np.random.default_rng(0), vocab) == []

    def test_invalid_proportion(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        with pytest.raises(ValueError):
            corpus.make_training_samples(seq_fixture(vocab), 1.0,
                                         np.random.default_rng(0), vocab)


class TestTestSamples:
    def test_cold_start_is_bare_mask(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = UserSequence("d", [vocab.id_of["m1"]], [0])
        (sample,) = corpus.make_test_samples(seq)
        assert sample.input_ids == [MASK]
        assert sample.targets == {0: vocab.id_of["m1"]}
        assert sample.ordinal == 1

    def test_protocol_unrolling(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = seq_fixture(vocab)
        samples = corpus.make_test_samples(seq)
        assert len(samples) == 2
        first, second = samples
        assert first.input_ids == [seq.elements[0], MASK]
        assert first.targets == {1: seq.elements[1]}
        assert second.input_ids == seq.elements[:3] + [MASK]
        assert second.targets == {3: seq.elements[3]}
        assert [s.ordinal for s in samples] == [1, 2]

    def test_no_future_leakage(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = seq_fixture(vocab)
        for sample in corpus.make_test_samples(seq):
            target_pos = max(sample.targets)
            context = sample.input_ids[:target_pos]
            # everything in the context occurs strictly before the target
            cutoff = sorted(seq.ground_truth)[sample.ordinal - 1]
            assert context == seq.elements[:cutoff]


class TestPadTruncate:
    def test_left_pad(self):
        sample = ClozeSample("d", [5, 6, MASK], {2: 6}, [])
        out = corpus.pad_truncate(sample, 5)
        assert out.input_ids == [PAD, PAD, 5, 6, MASK]
        assert out.targets == {4: 6}
        assert out.valid == [False, False, True, True, True]

    def test_recency_truncation(self):
        sample = ClozeSample("d", [2, 3, 4, 5, 6, 7, MASK], {6: 7}, [])
        out = corpus.pad_truncate(sample, 5)
        assert out.input_ids == [4, 5, 6, 7, MASK]
        assert out.targets == {4: 7}

    def test_terminal_mask_survives(self):
        for n in range(1, 12):
            sample = ClozeSample("d", list(range(2, 2 + n)) + [MASK],
                                 {n: 2}, [])
            out = corpus.pad_truncate(sample, 5)
            assert out.input_ids[-1] == MASK
            assert out.targets.get(4) == 2

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            corpus.pad_truncate(ClozeSample("d", [MASK], {0: 2}, []), 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 30), st.integers(2, 12))
    def test_length_always_k(self, n, k):
        sample = ClozeSample("d", [2] * n + [MASK], {n: 2}, [])
        out = corpus.pad_truncate(sample, k)
        assert len(out.input_ids) == k
        assert len(out.valid) == k


class TestSequenceDump:
    def test_round_trip_with_inserted(self, small_vocab):
        vocab = corpus.load_vocab(small_vocab)
        seq = UserSequence("d", [2, 3, 4], [1], [False, True, False])
        line = corpus.sequence_to_json(seq, vocab, with_inserted=True)
        again = corpus.sequence_from_json(line, vocab)
        assert again == seq
