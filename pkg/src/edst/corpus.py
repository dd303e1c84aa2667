"""Canonical dialog corpus format and training-data preparation.

One JSON schema serves the real datasets (after conversion) and the
synthetic corpus: dialogs of turns, each turn carrying the machine's
acts, the tokenized user utterance, optional scored recognition
hypotheses, and gold labels. Labels omitted from a turn mean
NOT_MENTIONED; `turn` holds turn-level value labels, `turn_slots` the
turn-level dontcare slots the value map cannot express, and `state` the
accumulated assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, SamplingError, ValidationError
from .features import Utterance, check_utterance, one_hot_value_label
from .state_model import (
    DialogAct,
    Ontology,
    SlotLabel,
    StateAssignment,
    SystemAct,
    ValueLabel,
    accumulate_turn,
    all_not_mentioned,
    slot_label_constraint,
    value_labels_for,
)


@dataclass(frozen=True)
class Turn:
    system_acts: SystemAct
    user: Utterance
    asr: tuple[tuple[Utterance, float], ...] | None = None
    gold_turn: StateAssignment | None = None
    gold_state: StateAssignment | None = None
    requested_gold: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Dialog:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("dialog id must be non-empty")


# ---------------------------------------------------------------------------
# parsing


def _parse_act(obj: dict, ontology: Ontology, where: str) -> DialogAct:
    kind = obj.get("act")
    if kind not in DialogAct.ACT_KINDS:
        raise FormatError(f"{where}: unknown act {kind!r}")
    slot = obj.get("slot")
    if kind == "request":
        # machine requests ask the user to constrain a slot
        if slot not in ontology.informable and slot not in ontology.requestable:
            raise ValidationError(f"{where}: request names unknown slot {slot!r}")
        return DialogAct("request", slot)
    if slot not in ontology.informable:
        raise ValidationError(f"{where}: act names unknown slot {slot!r}")
    if kind == "confirm_dontcare":
        return DialogAct("confirm_dontcare", slot)
    value = obj.get("value")
    if value not in ontology.informable[slot]:
        raise ValidationError(f"{where}: act names unknown value {value!r}")
    if kind == "confirm":
        polarity = obj.get("polarity")
        if polarity not in ("like", "dislike"):
            raise FormatError(f"{where}: confirm polarity {polarity!r}")
        return DialogAct("confirm", slot, value, polarity)
    return DialogAct("inform", slot, value)


_VALUE_LABELS = {l.value: l for l in ValueLabel}
_SLOT_LABELS = {l.value: l for l in SlotLabel}


def _parse_value_labels(
    obj: dict, ontology: Ontology, where: str, allow_not_mentioned: bool
) -> dict[str, dict[str, ValueLabel]]:
    out = {
        s: {v: ValueLabel.NOT_MENTIONED for v in vals}
        for s, vals in ontology.informable.items()
    }
    for slot, labels in obj.items():
        if slot not in ontology.informable:
            raise ValidationError(f"{where}: labels name unknown slot {slot!r}")
        for value, label in labels.items():
            if value not in ontology.informable[slot]:
                raise ValidationError(
                    f"{where}: labels name unknown value {value!r} of slot {slot!r}"
                )
            parsed = _VALUE_LABELS.get(label)
            if parsed is None or (
                parsed is ValueLabel.NOT_MENTIONED and not allow_not_mentioned
            ):
                raise FormatError(f"{where}: bad value label {label!r}")
            out[slot][value] = parsed
    return out


def _parse_turn_labels(labels: dict, ontology: Ontology, where: str) -> StateAssignment:
    values = _parse_value_labels(
        labels.get("turn", {}), ontology, where, allow_not_mentioned=False
    )
    slot_out: dict[str, SlotLabel] = {}
    dontcare = labels.get("turn_slots", {})
    for slot, label in dontcare.items():
        if slot not in ontology.informable:
            raise ValidationError(f"{where}: turn_slots names unknown slot {slot!r}")
        if label != SlotLabel.DONT_CARE.value:
            raise FormatError(f"{where}: turn_slots only encodes dont_care, got {label!r}")
    for slot in ontology.informable:
        if slot_label_constraint(values[slot]) is SlotLabel.MENTIONED:
            if slot in dontcare:
                raise FormatError(f"{where}: slot {slot!r} has values and dont_care")
            slot_out[slot] = SlotLabel.MENTIONED
        elif slot in dontcare:
            slot_out[slot] = SlotLabel.DONT_CARE
        else:
            slot_out[slot] = SlotLabel.NOT_MENTIONED
    return StateAssignment(slot_labels=slot_out, value_labels=values)


def _parse_state_labels(state: dict, ontology: Ontology, where: str) -> StateAssignment:
    values = _parse_value_labels(
        state.get("values", {}), ontology, where, allow_not_mentioned=True
    )
    slot_out = {s: SlotLabel.NOT_MENTIONED for s in ontology.informable}
    for slot, label in state.get("slots", {}).items():
        if slot not in ontology.informable:
            raise ValidationError(f"{where}: state names unknown slot {slot!r}")
        parsed = _SLOT_LABELS.get(label)
        if parsed is None:
            raise FormatError(f"{where}: bad slot label {label!r}")
        slot_out[slot] = parsed
    assignment = StateAssignment(slot_labels=slot_out, value_labels=values)
    assignment.validate(ontology)
    return assignment


def _parse_turn(obj: dict, ontology: Ontology, where: str) -> Turn:
    acts = tuple(
        _parse_act(a, ontology, where) for a in obj.get("system_acts", [])
    )
    try:
        user = check_utterance(obj.get("user", []))
    except ValidationError as exc:
        raise FormatError(f"{where}: {exc}") from None
    asr = None
    if "asr" in obj:
        hyps = []
        for h in obj["asr"]:
            score = h.get("score")
            if not isinstance(score, (int, float)) or score < 0:
                raise FormatError(f"{where}: bad hypothesis score {score!r}")
            hyps.append((check_utterance(h.get("tokens", [])), float(score)))
        asr = tuple(hyps)
    labels = obj.get("labels", {})
    gold_turn = None
    if "turn" in labels or "turn_slots" in labels:
        gold_turn = _parse_turn_labels(labels, ontology, where)
    gold_state = None
    if "state" in labels:
        gold_state = _parse_state_labels(labels["state"], ontology, where)
    requested = frozenset(labels.get("requested", []))
    for slot in requested:
        if slot not in ontology.requestable:
            raise ValidationError(f"{where}: requested names unknown slot {slot!r}")
    if gold_turn is not None:
        gold_turn = StateAssignment(
            slot_labels=gold_turn.slot_labels,
            value_labels=gold_turn.value_labels,
            requested=requested,
        )
    if gold_state is not None:
        gold_state = StateAssignment(
            slot_labels=gold_state.slot_labels,
            value_labels=gold_state.value_labels,
            requested=requested,
        )
    return Turn(
        system_acts=acts,
        user=user,
        asr=asr,
        gold_turn=gold_turn,
        gold_state=gold_state,
        requested_gold=requested,
    )


def parse_corpus(obj: dict, ontology: Ontology) -> list[Dialog]:
    dialogs = []
    seen: set[str] = set()
    for d in obj.get("dialogs", []):
        did = d.get("id")
        if not did or not isinstance(did, str):
            raise FormatError("dialog without a string id")
        if did in seen:
            raise FormatError(f"duplicate dialog id {did!r}")
        seen.add(did)
        turns = tuple(
            _parse_turn(t, ontology, f"dialog {did!r} turn {i}")
            for i, t in enumerate(d.get("turns", []))
        )
        dialogs.append(Dialog(id=did, turns=turns))
    return dialogs


def load_corpus(path: str, ontology: Ontology) -> list[Dialog]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return parse_corpus(obj, ontology)


# ---------------------------------------------------------------------------
# serialization


def _value_labels_json(assignment: StateAssignment, skip_not_mentioned=True) -> dict:
    out = {}
    for slot, labels in assignment.value_labels.items():
        kept = {
            v: l.value for v, l in labels.items() if l is not ValueLabel.NOT_MENTIONED
        }
        if kept:
            out[slot] = kept
    return out


def turn_to_json(turn: Turn) -> dict:
    obj: dict = {
        "system_acts": [
            {
                k: v
                for k, v in (
                    ("act", a.kind),
                    ("slot", a.slot),
                    ("value", a.value),
                    ("polarity", a.polarity),
                )
                if v is not None
            }
            for a in turn.system_acts
        ],
        "user": list(turn.user),
    }
    if turn.asr is not None:
        obj["asr"] = [{"tokens": list(t), "score": s} for t, s in turn.asr]
    labels: dict = {}
    if turn.gold_turn is not None:
        labels["turn"] = _value_labels_json(turn.gold_turn)
        dontcare = {
            s: l.value
            for s, l in turn.gold_turn.slot_labels.items()
            if l is SlotLabel.DONT_CARE
        }
        if dontcare:
            labels["turn_slots"] = dontcare
    if turn.gold_state is not None:
        labels["state"] = {
            "slots": {
                s: l.value
                for s, l in turn.gold_state.slot_labels.items()
                if l is not SlotLabel.NOT_MENTIONED
            },
            "values": _value_labels_json(turn.gold_state),
        }
    if turn.requested_gold:
        labels["requested"] = sorted(turn.requested_gold)
    if labels or turn.gold_turn is not None or turn.gold_state is not None:
        obj["labels"] = labels
    return obj


def corpus_to_json(dialogs: list[Dialog]) -> dict:
    return {
        "dialogs": [
            {"id": d.id, "turns": [turn_to_json(t) for t in d.turns]} for d in dialogs
        ]
    }


def dumps_canonical(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def save_corpus(dialogs: list[Dialog], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(corpus_to_json(dialogs)))


def save_ontology(ontology: Ontology, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(ontology.to_json()))


def load_ontology(path: str) -> Ontology:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if "informable" not in obj or "requestable" not in obj:
        raise FormatError(f"{path}: ontology needs 'informable' and 'requestable'")
    return Ontology.from_json(obj)


# ---------------------------------------------------------------------------
# turn decomposition


VST_KIND, SST_KIND, REQ_KIND = "vst", "sst", "req"


@dataclass(frozen=True)
class TrainingExample:
    """One supervised example for one head."""

    kind: str
    slot: str
    value: str | None
    tokens: Utterance
    acts: SystemAct
    prev_label: tuple[float, ...] | None  # teacher-forced previous belief
    gold: int


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise DataError(message)


def decompose(
    dialog: Dialog, ontology: Ontology, mode
) -> list[TrainingExample]:
    """Expand a dialog into per-head examples.

    Turn-label mode trains on what each turn expressed, with no belief
    input. Previous-belief mode trains on accumulated states and feeds
    one-hot gold labels from the preceding turn (teacher forcing);
    accumulated gold is derived from turn gold where absent.
    """
    scheme = mode.label_scheme
    labels = value_labels_for(scheme)
    examples: list[TrainingExample] = []
    prev_state = all_not_mentioned(ontology)
    for index, turn in enumerate(dialog.turns):
        where = f"dialog {dialog.id!r} turn {index}"
        if mode.use_prev_belief:
            source = turn.gold_state
            if source is None:
                _require(
                    turn.gold_turn is not None,
                    f"{where}: no accumulated or turn-level gold labels",
                )
                source = accumulate_turn(prev_state, turn.gold_turn)
        else:
            _require(turn.gold_turn is not None, f"{where}: no turn-level gold labels")
            source = turn.gold_turn
        for slot, values in ontology.informable.items():
            slot_free = slot_label_constraint(source.value_labels[slot]) is None
            for value in values:
                gold_label = source.value_labels[slot][value]
                if gold_label not in labels:
                    raise DataError(
                        f"{where}: label {gold_label.value!r} not expressible "
                        f"in scheme {scheme!r}"
                    )
                prev = None
                if mode.use_prev_belief:
                    prev_label = prev_state.value_labels[slot][value]
                    if prev_label not in labels:
                        raise DataError(
                            f"{where}: previous label {prev_label.value!r} not "
                            f"expressible in scheme {scheme!r}"
                        )
                    prev = tuple(one_hot_value_label(prev_label, scheme))
                examples.append(
                    TrainingExample(
                        kind=VST_KIND,
                        slot=slot,
                        value=value,
                        tokens=turn.user,
                        acts=turn.system_acts,
                        prev_label=prev,
                        gold=labels.index(gold_label),
                    )
                )
            if slot_free:
                prev = None
                if mode.use_prev_belief:
                    onehot = [0.0, 0.0, 0.0]
                    order = (SlotLabel.DONT_CARE, SlotLabel.MENTIONED, SlotLabel.NOT_MENTIONED)
                    onehot[order.index(prev_state.slot_labels[slot])] = 1.0
                    prev = tuple(onehot)
                examples.append(
                    TrainingExample(
                        kind=SST_KIND,
                        slot=slot,
                        value=None,
                        tokens=turn.user,
                        acts=turn.system_acts,
                        prev_label=prev,
                        gold=0 if source.slot_labels[slot] is SlotLabel.DONT_CARE else 1,
                    )
                )
        for slot in ontology.requestable:
            examples.append(
                TrainingExample(
                    kind=REQ_KIND,
                    slot=slot,
                    value=None,
                    tokens=turn.user,
                    acts=turn.system_acts,
                    prev_label=None,
                    gold=0 if slot in turn.requested_gold else 1,
                )
            )
        prev_state = source
    return examples


# ---------------------------------------------------------------------------
# minibatch sampling


@dataclass(frozen=True)
class SamplerConfig:
    """Batch size and per-class mixing ratio. A two-entry ratio over a
    three-class head lumps the two labeled classes together."""

    batch_size: int
    ratios: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.batch_size <= 0:
            raise ValueError("batch size must be positive")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be positive")


def class_groups(n_classes: int, n_ratios: int) -> list[tuple[int, ...]]:
    """Map ratio entries onto gold-class groups. The final class is
    always the negative one, so a 2-entry ratio over 3 classes groups
    the first two classes as positives."""
    if n_ratios == n_classes:
        return [(i,) for i in range(n_classes)]
    if n_ratios == 2 and n_classes == 3:
        return [(0, 1), (2,)]
    raise ValueError(f"cannot map {n_ratios} ratios onto {n_classes} classes")


def ratio_counts(batch_size: int, ratios: tuple[float, ...]) -> list[int]:
    """Integer class counts proportional to the ratios, summing exactly
    to the batch size (largest remainder first, larger ratio on ties)."""
    total = sum(ratios)
    exact = [batch_size * r / total for r in ratios]
    counts = [int(x) for x in exact]
    remainder = batch_size - sum(counts)
    order = sorted(
        range(len(ratios)),
        key=lambda i: (-(exact[i] - counts[i]), -ratios[i], i),
    )
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def sample_batch_indices(
    golds: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    n_classes: int,
) -> np.ndarray:
    """Indices of one ratio-controlled batch over an array of gold
    classes; classes short of examples are drawn with replacement."""
    groups = class_groups(n_classes, len(cfg.ratios))
    counts = ratio_counts(cfg.batch_size, cfg.ratios)
    picked: list[np.ndarray] = []
    for group, count in zip(groups, counts):
        if count == 0:
            continue
        pool = np.flatnonzero(np.isin(golds, group))
        if pool.size == 0:
            raise SamplingError(f"no examples for class group {group}")
        replace = pool.size < count
        picked.append(pool[rng.choice(pool.size, size=count, replace=replace)])
    return np.concatenate(picked)


def sample_minibatch(
    examples: list[TrainingExample],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    n_classes: int,
) -> list[TrainingExample]:
    """Draw one batch with class counts fixed by the configured ratio."""
    golds = np.array([e.gold for e in examples])
    idx = sample_batch_indices(golds, cfg, rng, n_classes)
    return [examples[i] for i in idx]


# ---------------------------------------------------------------------------
# corpus splitting


def split_corpus(
    dialogs: list[Dialog],
    ratio: tuple[float, ...] = (3, 1, 1),
    seed: int | None = None,
) -> tuple[list[Dialog], ...]:
    """Seeded dialog-level split with sizes proportional to the ratio."""
    if len(dialogs) < 5:
        raise ValueError("need at least 5 dialogs to split")
    order = np.random.default_rng(seed).permutation(len(dialogs))
    counts = ratio_counts(len(dialogs), tuple(ratio))
    parts: list[list[Dialog]] = []
    start = 0
    for count in counts:
        parts.append([dialogs[i] for i in order[start : start + count]])
        start += count
    return tuple(parts)
