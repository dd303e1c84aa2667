import json
from pathlib import Path

import numpy as np
import pytest

from edst.corpus import (
    Dialog,
    SamplerConfig,
    Turn,
    class_groups,
    corpus_to_json,
    decompose,
    dumps_canonical,
    load_corpus,
    load_ontology,
    parse_corpus,
    ratio_counts,
    sample_minibatch,
    save_corpus,
    split_corpus,
)
from edst.errors import DataError, FormatError, SamplingError, ValidationError
from edst.features import load_embeddings
from edst.state_model import (
    Ontology,
    SlotLabel,
    ValueLabel,
    accumulate_turn,
    all_not_mentioned,
    slot_label_constraint,
)
from edst.synthetic import (
    SyntheticSpec,
    build_dictionary,
    build_embeddings_text,
    build_ontology,
    generate_synthetic,
    vocabulary,
)
from edst.tracker import TrackerMode

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_ontology():
    return Ontology(
        informable={"genre": ("thriller", "comedy"), "country": ("china", "france")},
        requestable=("length", "rating"),
    )


GOLDEN = FIXTURES / "golden_corpus.json"
GOLDEN_ONTOLOGY = FIXTURES / "golden_ontology.json"


class TestLoadCorpus:
    def test_golden_fixture_parses(self):
        ont = load_ontology(str(GOLDEN_ONTOLOGY))
        dialogs = load_corpus(str(GOLDEN), ont)
        assert len(dialogs) == 2
        first = dialogs[0]
        assert first.turns[0].gold_turn is not None
        assert first.turns[0].requested_gold == {"length"}
        # second turn answers a confirm with a bare yes
        assert first.turns[1].system_acts[0].kind == "confirm"

    def test_golden_fixture_round_trips_bit_exact(self, tmp_path):
        ont = load_ontology(str(GOLDEN_ONTOLOGY))
        dialogs = load_corpus(str(GOLDEN), ont)
        out = tmp_path / "again.json"
        save_corpus(dialogs, str(out))
        assert out.read_bytes() == GOLDEN.read_bytes()

    def test_save_load_round_trip_equal_objects(self, tmp_path):
        ont = load_ontology(str(GOLDEN_ONTOLOGY))
        dialogs = load_corpus(str(GOLDEN), ont)
        path = tmp_path / "c.json"
        save_corpus(dialogs, str(path))
        assert load_corpus(str(path), ont) == dialogs

    def test_unknown_value_named_in_error(self, tmp_path):
        obj = {
            "dialogs": [
                {
                    "id": "d1",
                    "turns": [
                        {"system_acts": [], "user": ["hi"], "labels": {"turn": {"genre": {"western": "like"}}}}
                    ],
                }
            ]
        }
        with pytest.raises(ValidationError, match="western"):
            parse_corpus(obj, tiny_ontology())

    def test_error_carries_dialog_and_turn(self):
        obj = {
            "dialogs": [
                {
                    "id": "d7",
                    "turns": [
                        {"system_acts": [], "user": ["hi"]},
                        {"system_acts": [{"act": "teleport", "slot": "genre"}], "user": ["x"]},
                    ],
                }
            ]
        }
        with pytest.raises(FormatError, match=r"d7.*turn 1"):
            parse_corpus(obj, tiny_ontology())

    def test_iqiyi_shaped_fixture_accepted(self):
        ont = load_ontology(str(FIXTURES / "iqiyi_ontology.json"))
        obj = {
            "dialogs": [
                {
                    "id": "iq-0",
                    "turns": [
                        {
                            "system_acts": [{"act": "request", "slot": "Genre"}],
                            "user": ["i", "want", "thriller"],
                            "labels": {"turn": {"Genre": {"thriller": "like"}}},
                        }
                    ],
                }
            ]
        }
        dialogs = parse_corpus(obj, ont)
        assert len(ont.informable) == 7
        assert dialogs[0].turns[0].gold_turn.slot_labels["Genre"] is SlotLabel.MENTIONED

    def test_turn_dontcare_extension(self):
        obj = {
            "dialogs": [
                {
                    "id": "d1",
                    "turns": [
                        {
                            "system_acts": [],
                            "user": ["any", "genre", "is", "fine"],
                            "labels": {"turn": {}, "turn_slots": {"genre": "dont_care"}},
                        }
                    ],
                }
            ]
        }
        turn = parse_corpus(obj, tiny_ontology())[0].turns[0]
        assert turn.gold_turn.slot_labels["genre"] is SlotLabel.DONT_CARE

    def test_state_labels_parse(self):
        obj = {
            "dialogs": [
                {
                    "id": "d1",
                    "turns": [
                        {
                            "system_acts": [],
                            "user": ["x"],
                            "labels": {
                                "state": {
                                    "slots": {"genre": "mentioned"},
                                    "values": {"genre": {"thriller": "like"}},
                                }
                            },
                        }
                    ],
                }
            ]
        }
        turn = parse_corpus(obj, tiny_ontology())[0].turns[0]
        assert turn.gold_state.value_labels["genre"]["thriller"] is ValueLabel.LIKE


class TestDecompose:
    def make_dialog(self):
        ont = tiny_ontology()
        obj = {
            "dialogs": [
                {
                    "id": "d1",
                    "turns": [
                        {
                            "system_acts": [],
                            "user": ["i", "want", "thriller"],
                            "labels": {"turn": {"genre": {"thriller": "like"}}, "requested": ["length"]},
                        },
                        {
                            "system_acts": [],
                            "user": ["any", "country"],
                            "labels": {"turn": {}, "turn_slots": {"country": "dont_care"}},
                        },
                    ],
                }
            ]
        }
        return parse_corpus(obj, ont)[0], ont

    def test_counts_per_turn(self):
        dialog, ont = self.make_dialog()
        examples = decompose(dialog, ont, TrackerMode())
        vst = [e for e in examples if e.kind == "vst"]
        req = [e for e in examples if e.kind == "req"]
        sst = [e for e in examples if e.kind == "sst"]
        assert len(vst) == 2 * 4  # 2 turns x 4 values
        assert len(req) == 2 * 2
        # turn 1: genre mentioned -> only country free; turn 2: both free
        assert len(sst) == 1 + 2

    def test_gold_indices(self):
        dialog, ont = self.make_dialog()
        examples = decompose(dialog, ont, TrackerMode())
        thriller = next(
            e for e in examples if e.kind == "vst" and e.value == "thriller"
        )
        assert thriller.gold == 0  # LIKE
        dc = next(
            e
            for e in examples
            if e.kind == "sst" and e.slot == "country" and e.gold == 0
        )
        assert dc.tokens == ("any", "country")
        length = next(e for e in examples if e.kind == "req" and e.slot == "length")
        assert length.gold == 0

    def test_turn_mode_has_no_belief_input(self):
        dialog, ont = self.make_dialog()
        for e in decompose(dialog, ont, TrackerMode()):
            assert e.prev_label is None

    def test_prev_belief_mode_teacher_forces(self):
        dialog, ont = self.make_dialog()
        mode = TrackerMode(use_prev_belief=True)
        examples = decompose(dialog, ont, mode)
        vst_turn2 = [
            e
            for e in examples
            if e.kind == "vst" and e.tokens == ("any", "country")
        ]
        thr = next(e for e in vst_turn2 if e.value == "thriller")
        assert thr.prev_label == (1.0, 0.0, 0.0)  # carried LIKE from turn 1
        assert thr.gold == 0  # accumulated state stays LIKE
        com = next(e for e in vst_turn2 if e.value == "comedy")
        assert com.prev_label == (0.0, 0.0, 1.0)

    def test_missing_turn_labels_raise(self):
        ont = tiny_ontology()
        dialog = Dialog(
            id="d", turns=(Turn(system_acts=(), user=("hi",)),)
        )
        with pytest.raises(DataError):
            decompose(dialog, ont, TrackerMode())


class TestSampler:
    def _examples(self, counts_by_gold):
        from edst.corpus import TrainingExample

        out = []
        for gold, n in counts_by_gold.items():
            for i in range(n):
                out.append(
                    TrainingExample(
                        kind="vst", slot="s", value=f"v{gold}_{i}", tokens=("x",),
                        acts=(), prev_label=None, gold=gold,
                    )
                )
        return out

    def test_ratio_one_to_seven(self):
        assert ratio_counts(256, (1, 7)) == [32, 224]

    def test_iqiyi_ratio_largest_remainder(self):
        assert ratio_counts(256, (0.7, 0.3, 7)) == [22, 10, 224]

    def test_counts_always_sum_to_batch(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ratios = tuple(rng.random(int(rng.integers(2, 5))) + 0.05)
            size = int(rng.integers(1, 300))
            assert sum(ratio_counts(size, ratios)) == size

    def test_two_ratio_three_class_lumps_positives(self):
        assert class_groups(3, 2) == [(0, 1), (2,)]
        assert class_groups(2, 2) == [(0,), (1,)]

    def test_batch_composition(self):
        examples = self._examples({0: 50, 1: 30, 2: 400})
        cfg = SamplerConfig(batch_size=256, ratios=(0.7, 0.3, 7))
        batch = sample_minibatch(examples, cfg, np.random.default_rng(1), n_classes=3)
        golds = [e.gold for e in batch]
        assert len(batch) == 256
        assert golds.count(0) == 22 and golds.count(1) == 10 and golds.count(2) == 224

    def test_scarce_class_sampled_with_replacement(self):
        examples = self._examples({0: 5, 2: 400})
        cfg = SamplerConfig(batch_size=256, ratios=(1, 7))
        batch = sample_minibatch(examples, cfg, np.random.default_rng(2), n_classes=3)
        assert sum(1 for e in batch if e.gold == 0) == 32

    def test_empty_required_class_raises(self):
        examples = self._examples({2: 100})
        cfg = SamplerConfig(batch_size=64, ratios=(1, 7))
        with pytest.raises(SamplingError):
            sample_minibatch(examples, cfg, np.random.default_rng(3), n_classes=3)


class TestSplitCorpus:
    def _dialogs(self, n):
        return [
            Dialog(id=f"d{i}", turns=(Turn(system_acts=(), user=("hi",)),))
            for i in range(n)
        ]

    def test_800_dialogs_split_480_160_160(self):
        train, valid, test = split_corpus(self._dialogs(800), (3, 1, 1), seed=1)
        assert (len(train), len(valid), len(test)) == (480, 160, 160)

    def test_same_seed_same_split(self):
        dialogs = self._dialogs(20)
        a = split_corpus(dialogs, seed=7)
        b = split_corpus(dialogs, seed=7)
        assert [[d.id for d in p] for p in a] == [[d.id for d in p] for p in b]

    def test_partition(self):
        dialogs = self._dialogs(23)
        parts = split_corpus(dialogs, seed=3)
        ids = [d.id for p in parts for d in p]
        assert sorted(ids) == sorted(d.id for d in dialogs)
        assert len(set(ids)) == len(ids)

    def test_too_few_dialogs(self):
        with pytest.raises(ValueError):
            split_corpus(self._dialogs(4))


class TestSynthetic:
    spec = SyntheticSpec()

    def test_default_world_shape(self):
        ont = build_ontology(self.spec)
        assert len(ont.informable) == 3
        assert sum(len(v) for v in ont.informable.values()) == 12
        assert len(ont.requestable) == 2

    def test_same_seed_same_corpus(self):
        a = generate_synthetic(self.spec, 5, np.random.default_rng(11))
        b = generate_synthetic(self.spec, 5, np.random.default_rng(11))
        assert a == b

    def test_gold_labels_always_consistent(self):
        ont = build_ontology(self.spec)
        for dialog in generate_synthetic(self.spec, 30, np.random.default_rng(5)):
            for turn in dialog.turns:
                turn.gold_turn.validate(ont)
                turn.gold_state.validate(ont)

    def test_accumulated_matches_substitution_rule(self):
        ont = build_ontology(self.spec)
        for dialog in generate_synthetic(self.spec, 20, np.random.default_rng(6)):
            running = all_not_mentioned(ont)
            for turn in dialog.turns:
                running = accumulate_turn(running, turn.gold_turn)
                assert running == turn.gold_state

    def test_deny_template_yields_dislike(self):
        found = False
        for dialog in generate_synthetic(self.spec, 40, np.random.default_rng(7)):
            for turn in dialog.turns:
                for slot, labels in turn.gold_turn.value_labels.items():
                    for value, label in labels.items():
                        if label is ValueLabel.DISLIKE and not turn.system_acts:
                            found = True
        assert found

    def test_embeddings_cover_vocabulary(self):
        text = build_embeddings_text(self.spec, 16, np.random.default_rng(0))
        table = load_embeddings(text)
        assert table.dim == 16
        for token in vocabulary(self.spec):
            assert token in table.vectors

    def test_dictionary_names_ontology_entities(self):
        from edst.features import load_semantic_dictionary

        ont = build_ontology(self.spec)
        raw = {
            k: [list(s) for s in v] for k, v in build_dictionary(self.spec).items()
        }
        load_semantic_dictionary(raw, ont)  # raises if anything is unknown

    def test_corpus_round_trip(self, tmp_path):
        ont = build_ontology(self.spec)
        dialogs = generate_synthetic(self.spec, 8, np.random.default_rng(9))
        path = tmp_path / "syn.json"
        save_corpus(dialogs, str(path))
        assert load_corpus(str(path), ont) == dialogs

    def test_asr_option(self):
        spec = SyntheticSpec(with_asr=True)
        dialogs = generate_synthetic(spec, 3, np.random.default_rng(2))
        turn = dialogs[0].turns[0]
        assert turn.asr is not None
        assert all(score >= 0 for _, score in turn.asr)
