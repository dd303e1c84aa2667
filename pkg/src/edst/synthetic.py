"""Seeded synthetic dialog corpus for desk-scale training and tests.

Dialogs are built from a small template grammar: inform/deny/dontcare/
request pieces with synonym substitution, filler variation, goal
changes, and machine confirm acts the user answers with bare yes/no
(those turns carry no value mention, so only act-aware models resolve
them). Gold turn labels come straight from the generating intents and
accumulated labels from the substitution rule, so every fixture is
consistent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dialog, Turn
from .features import SemanticDictionary, Utterance
from .state_model import (
    DialogAct,
    Ontology,
    SlotLabel,
    StateAssignment,
    ValueLabel,
    accumulate_turn,
    all_not_mentioned,
    slot_label_constraint,
)

V = "<value>"
S = "<slot>"
R = "<req>"

LIKE_TEMPLATES = (
    ("i", "want", V),
    ("i", "would", "like", V),
    ("show", "me", V, "movies"),
    ("find", "me", "a", V, "film"),
    ("i", "prefer", V),
    ("how", "about", V),
    ("give", "me", V, "options"),
    ("im", "into", V),
    (V, "sounds", "good"),
    ("lets", "try", V),
)

DISLIKE_TEMPLATES = (
    ("no", V),
    ("not", V, "please"),
    ("i", "dont", "want", V),
    ("i", "hate", V),
    ("anything", "but", V),
    ("skip", V),
    ("no", "more", V),
    ("im", "tired", "of", V),
)

DONTCARE_TEMPLATES = (
    ("i", "dont", "care", "about", S),
    ("any", S, "is", "fine"),
    (S, "doesnt", "matter"),
    ("whatever", S, "you", "have"),
    ("no", "preference", "on", S),
)

REQUEST_TEMPLATES = (
    ("what", "is", "the", R),
    ("tell", "me", "the", R),
    ("whats", "the", R),
    ("can", "you", "give", "me", "the", R),
    ("i", "need", "the", R),
    ("show", "the", R, "please"),
)

AFFIRM = (("yes",), ("yes", "exactly"), ("yeah", "thats", "right"), ("sure", "why", "not"))
NEGATE = (("no",), ("no", "not", "that"), ("nope",), ("definitely", "not"))
NEGATE_TO_LIKE = (("no", "i", "like", "it"), ("actually", "i", "like", "that"))
CHAT = (("thanks", "a", "lot"), ("ok", "great"), ("sounds", "perfect", "thanks"))

PREFIXES = (("well",), ("ok",), ("hmm",), ("so",), ("right",))
SUFFIXES = (("please",), ("thanks",), ("for", "tonight"), ("if", "possible"))
CONNECTORS = (("and",), ("also",), ("and", "also",), ("oh", "and"))

_BUILTIN_SLOTS = (
    ("genre", ("thriller", "comedy", "horror", "drama"), "style"),
    ("country", ("china", "france", "japan", "canada"), "nation"),
    ("era", ("eighties", "nineties", "recent", "classic"), "decade"),
)
_BUILTIN_VALUE_SYNONYMS = {
    "thriller": "scary",
    "comedy": "funny",
    "horror": "spooky",
    "drama": "serious",
    "china": "chinese",
    "france": "french",
    "japan": "japanese",
    "canada": "canadian",
    "eighties": "retro",
    "nineties": "vintage",
    "recent": "fresh",
    "classic": "timeless",
}
_BUILTIN_REQUESTABLE = (("length", "runtime"), ("rating", "score"))


@dataclass(frozen=True)
class SyntheticSpec:
    """Size of the generated world."""

    n_informable: int = 3
    values_per_slot: int = 4
    n_requestable: int = 2
    min_turns: int = 3
    max_turns: int = 6
    with_asr: bool = False


def build_ontology(spec: SyntheticSpec) -> Ontology:
    informable: dict[str, tuple[str, ...]] = {}
    for i in range(spec.n_informable):
        if i < len(_BUILTIN_SLOTS):
            name, values, _ = _BUILTIN_SLOTS[i]
            vals = list(values[: spec.values_per_slot])
            while len(vals) < spec.values_per_slot:
                vals.append(f"{name}{len(vals)}")
        else:
            name = f"topic{i}"
            vals = [f"{name}v{j}" for j in range(spec.values_per_slot)]
        informable[name] = tuple(vals)
    requestable = []
    for i in range(spec.n_requestable):
        if i < len(_BUILTIN_REQUESTABLE):
            requestable.append(_BUILTIN_REQUESTABLE[i][0])
        else:
            requestable.append(f"detail{i}")
    return Ontology(informable=informable, requestable=tuple(requestable))


def build_dictionary(spec: SyntheticSpec) -> SemanticDictionary:
    ontology = build_ontology(spec)
    out: dict[str, tuple[Utterance, ...]] = {}
    for i, (slot, values) in enumerate(ontology.informable.items()):
        if i < len(_BUILTIN_SLOTS):
            out[slot] = ((_BUILTIN_SLOTS[i][2],),)
        else:
            out[slot] = ((f"{slot}syn",),)
        for v in values:
            syn = _BUILTIN_VALUE_SYNONYMS.get(v, f"{v}syn")
            out[v] = ((syn,),)
    for i, slot in enumerate(ontology.requestable):
        if i < len(_BUILTIN_REQUESTABLE):
            out[slot] = ((_BUILTIN_REQUESTABLE[i][1],),)
        else:
            out[slot] = ((f"{slot}syn",),)
    return out


def vocabulary(spec: SyntheticSpec) -> list[str]:
    """Every token the generator can emit, in a stable order."""
    seen: dict[str, None] = {}

    def take(tokens):
        for t in tokens:
            if t not in (V, S, R):
                seen.setdefault(t)

    for bank in (
        LIKE_TEMPLATES,
        DISLIKE_TEMPLATES,
        DONTCARE_TEMPLATES,
        REQUEST_TEMPLATES,
        AFFIRM,
        NEGATE,
        NEGATE_TO_LIKE,
        CHAT,
        PREFIXES,
        SUFFIXES,
        CONNECTORS,
    ):
        for tpl in bank:
            take(tpl)
    take(("actually", "instead", "that", "works", "one", "then"))
    ontology = build_ontology(spec)
    dictionary = build_dictionary(spec)
    for slot, values in ontology.informable.items():
        take((slot,))
        take(values)
    take(ontology.requestable)
    for synonyms in dictionary.values():
        for syn in synonyms:
            take(syn)
    return list(seen)


def build_embeddings_text(spec: SyntheticSpec, dim: int, rng: np.random.Generator) -> str:
    """Embedding file contents: one random unit vector per vocab token."""
    lines = []
    for token in vocabulary(spec):
        vec = rng.standard_normal(dim)
        vec /= np.linalg.norm(vec)
        lines.append(token + " " + " ".join(f"{x:.6f}" for x in vec))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# dialog assembly


def _surface(rng, canonical: str, dictionary: SemanticDictionary) -> tuple[str, ...]:
    synonyms = dictionary.get(canonical, ())
    if synonyms and rng.random() < 0.4:
        return synonyms[int(rng.integers(len(synonyms)))]
    return (canonical,)


def _fill(template, placeholder, surface) -> list[str]:
    out: list[str] = []
    for tok in template:
        if tok == placeholder:
            out.extend(surface)
        else:
            out.append(tok)
    return out


def _pick(rng, bank):
    return bank[int(rng.integers(len(bank)))]


@dataclass
class _Goal:
    liked: dict[str, list[str]]
    disliked: dict[str, str]
    dontcare: list[str]
    requests: list[str]


def _sample_goal(rng, ontology: Ontology) -> _Goal:
    liked: dict[str, list[str]] = {}
    disliked: dict[str, str] = {}
    dontcare: list[str] = []
    for slot, values in ontology.informable.items():
        roll = rng.random()
        if roll < 0.72:
            count = 2 if rng.random() < 0.25 else 1
            picked = list(rng.choice(len(values), size=count, replace=False))
            liked[slot] = [values[i] for i in picked]
            rest = [v for v in values if v not in liked[slot]]
            if rest and rng.random() < 0.35:
                disliked[slot] = rest[int(rng.integers(len(rest)))]
        elif roll < 0.87:
            dontcare.append(slot)
    n_req = int(rng.integers(1, len(ontology.requestable) + 1))
    picked = list(rng.choice(len(ontology.requestable), size=n_req, replace=False))
    requests = [ontology.requestable[i] for i in picked]
    return _Goal(liked=liked, disliked=disliked, dontcare=dontcare, requests=requests)


def _system_policy(rng, ontology, goal, revealed_like, revealed_dc, turn_index):
    """Machine acts preceding the user's turn; empty on the first turn."""
    if turn_index == 0:
        return ()
    roll = rng.random()
    if roll < 0.30 and revealed_like:
        slot, value = revealed_like[int(rng.integers(len(revealed_like)))]
        polarity = "like" if rng.random() < 0.8 else "dislike"
        return (DialogAct("confirm", slot, value, polarity),)
    if roll < 0.45:
        unfilled = [
            s
            for s in ontology.informable
            if s not in {sl for sl, _ in revealed_like} and s not in revealed_dc
        ]
        if unfilled:
            slot = unfilled[int(rng.integers(len(unfilled)))]
            return (DialogAct("request", slot),)
    if roll < 0.58:
        slot = list(ontology.informable)[int(rng.integers(len(ontology.informable)))]
        values = ontology.informable[slot]
        return (DialogAct("inform", slot, values[int(rng.integers(len(values)))]),)
    if roll < 0.66:
        hidden_dc = [s for s in goal.dontcare if s not in revealed_dc]
        if hidden_dc:
            return (DialogAct("confirm_dontcare", hidden_dc[0]),)
    return ()


def generate_synthetic(
    spec: SyntheticSpec, n_dialogs: int, rng: np.random.Generator
) -> list[Dialog]:
    """Dialogs with consistent turn-level and accumulated gold labels."""
    if n_dialogs < 1:
        raise ValueError("need at least one dialog")
    ontology = build_ontology(spec)
    dictionary = build_dictionary(spec)
    dialogs = []
    for index in range(n_dialogs):
        dialogs.append(
            _generate_dialog(f"syn-{index:04d}", rng, ontology, dictionary, spec)
        )
    return dialogs


def _generate_dialog(did, rng, ontology, dictionary, spec) -> Dialog:
    goal = _sample_goal(rng, ontology)
    n_turns = int(rng.integers(spec.min_turns, spec.max_turns + 1))
    pending_informs: list[tuple[str, str, ValueLabel]] = []
    for slot, values in goal.liked.items():
        for v in values:
            pending_informs.append((slot, v, ValueLabel.LIKE))
    for slot, v in goal.disliked.items():
        pending_informs.append((slot, v, ValueLabel.DISLIKE))
    order = rng.permutation(len(pending_informs))
    pending_informs = [pending_informs[i] for i in order]
    pending_dc = list(goal.dontcare)
    pending_requests = list(goal.requests)

    revealed_like: list[tuple[str, str]] = []
    revealed_dc: list[str] = []
    running = all_not_mentioned(ontology)
    turns = []
    for t in range(n_turns):
        acts = _system_policy(rng, ontology, goal, revealed_like, revealed_dc, t)
        pieces: list[list[str]] = []
        turn_values: dict[str, dict[str, ValueLabel]] = {}
        turn_dc: list[str] = []
        requested: set[str] = set()

        def note(slot, value, label):
            turn_values.setdefault(slot, {})[value] = label
            if label is ValueLabel.LIKE and (slot, value) not in revealed_like:
                revealed_like.append((slot, value))

        def add_inform(slot, value, label):
            bank = LIKE_TEMPLATES if label is ValueLabel.LIKE else DISLIKE_TEMPLATES
            pieces.append(
                _fill(_pick(rng, bank), V, _surface(rng, value, dictionary))
            )
            note(slot, value, label)

        # react to the machine's act first
        for act in acts:
            if act.kind == "confirm":
                wanted = act.value in goal.liked.get(act.slot, [])
                if act.polarity == "like":
                    if wanted or rng.random() < 0.7:
                        pieces.append(list(_pick(rng, AFFIRM)))
                        note(act.slot, act.value, ValueLabel.LIKE)
                    else:
                        pieces.append(list(_pick(rng, NEGATE)))
                        note(act.slot, act.value, ValueLabel.DISLIKE)
                else:
                    if rng.random() < 0.7:
                        pieces.append(list(_pick(rng, AFFIRM)))
                        note(act.slot, act.value, ValueLabel.DISLIKE)
                    else:
                        pieces.append(list(_pick(rng, NEGATE_TO_LIKE)))
                        note(act.slot, act.value, ValueLabel.LIKE)
            elif act.kind == "confirm_dontcare":
                pieces.append(list(_pick(rng, AFFIRM)))
                turn_dc.append(act.slot)
                revealed_dc.append(act.slot)
                if act.slot in pending_dc:
                    pending_dc.remove(act.slot)
            elif act.kind == "inform":
                wanted = act.value in goal.liked.get(act.slot, [])
                if wanted:
                    if rng.random() < 0.5:
                        pieces.append(["yes", "that", "works"])
                    else:
                        add_inform(act.slot, act.value, ValueLabel.LIKE)
                        continue
                    note(act.slot, act.value, ValueLabel.LIKE)
                else:
                    add_inform(act.slot, act.value, ValueLabel.DISLIKE)
            elif act.kind == "request" and pending_informs:
                for i, (slot, value, label) in enumerate(pending_informs):
                    if slot == act.slot:
                        add_inform(slot, value, label)
                        pending_informs.pop(i)
                        break

        # spontaneous goal progress
        budget = 1 + (rng.random() < 0.35)
        while budget > 0 and pending_informs:
            slot, value, label = pending_informs.pop(0)
            if slot in turn_values and value in turn_values[slot]:
                continue
            add_inform(slot, value, label)
            budget -= 1
        if pending_dc and rng.random() < 0.4:
            slot = pending_dc.pop(0)
            if slot not in turn_values:
                pieces.append(
                    _fill(_pick(rng, DONTCARE_TEMPLATES), S, _surface(rng, slot, dictionary))
                )
                turn_dc.append(slot)
                revealed_dc.append(slot)
        if pending_requests and (rng.random() < 0.45 or t == n_turns - 1):
            slot = pending_requests.pop(0)
            pieces.append(
                _fill(_pick(rng, REQUEST_TEMPLATES), R, _surface(rng, slot, dictionary))
            )
            requested.add(slot)

        # goal change: turn against an already liked value
        if t >= 1 and revealed_like and rng.random() < 0.12:
            slot, old = revealed_like[int(rng.integers(len(revealed_like)))]
            others = [
                v
                for v in ontology.informable[slot]
                if v != old and v not in turn_values.get(slot, {})
            ]
            if others and old not in turn_values.get(slot, {}):
                new = others[int(rng.integers(len(others)))]
                piece = ["actually"] + _fill(
                    _pick(rng, DISLIKE_TEMPLATES), V, _surface(rng, old, dictionary)
                )
                piece += ["i", "want"] + list(_surface(rng, new, dictionary)) + ["instead"]
                pieces.append(piece)
                revealed_like.remove((slot, old))
                note(slot, old, ValueLabel.DISLIKE)
                note(slot, new, ValueLabel.LIKE)

        if not pieces:
            pieces.append(list(_pick(rng, CHAT)))

        tokens: list[str] = []
        if rng.random() < 0.3:
            tokens.extend(_pick(rng, PREFIXES))
        for i, piece in enumerate(pieces):
            if i > 0 and rng.random() < 0.6:
                tokens.extend(_pick(rng, CONNECTORS))
            tokens.extend(piece)
        if rng.random() < 0.25:
            tokens.extend(_pick(rng, SUFFIXES))

        gold_turn = _assignment_from(ontology, turn_values, turn_dc, requested)
        running = accumulate_turn(running, gold_turn)
        asr = _asr_hypotheses(rng, tokens) if spec.with_asr else None
        turns.append(
            Turn(
                system_acts=acts,
                user=tuple(tokens),
                asr=asr,
                gold_turn=gold_turn,
                gold_state=running,
                requested_gold=frozenset(requested),
            )
        )
    return Dialog(id=did, turns=tuple(turns))


def _assignment_from(ontology, turn_values, turn_dc, requested) -> StateAssignment:
    value_labels = {
        s: {v: ValueLabel.NOT_MENTIONED for v in vals}
        for s, vals in ontology.informable.items()
    }
    for slot, labels in turn_values.items():
        for v, label in labels.items():
            value_labels[slot][v] = label
    slot_labels = {}
    for slot in ontology.informable:
        if slot_label_constraint(value_labels[slot]) is SlotLabel.MENTIONED:
            slot_labels[slot] = SlotLabel.MENTIONED
        elif slot in turn_dc:
            slot_labels[slot] = SlotLabel.DONT_CARE
        else:
            slot_labels[slot] = SlotLabel.NOT_MENTIONED
    return StateAssignment(
        slot_labels=slot_labels,
        value_labels=value_labels,
        requested=frozenset(requested),
    )


def _asr_hypotheses(rng, tokens: list[str]):
    """True tokens plus mildly corrupted alternatives with scores."""
    hyps = [(tuple(tokens), 0.7)]
    if len(tokens) > 1:
        drop = int(rng.integers(len(tokens)))
        corrupted = tuple(t for i, t in enumerate(tokens) if i != drop)
        hyps.append((corrupted, 0.2))
        hyps.append((tuple(reversed(tokens)), 0.1))
    else:
        hyps.append((tuple(tokens), 0.3))
    return tuple(hyps)
