"""Delexicalisation template baseline.

Training utterances have their entity mentions replaced by placeholders
and are stored with the label signature of their source turn. At
tracking time the incoming utterance is delexicalised the same way and
matched against the stored patterns by normalized token edit
similarity; a close enough hit emits the stored labels instantiated
with the actually matched values.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

from .corpus import Dialog
from .features import SemanticDictionary, Utterance, surface_forms
from .state_model import (
    Ontology,
    SlotLabel,
    StateAssignment,
    ValueLabel,
    accumulate_turn,
    all_not_mentioned,
    slot_label_constraint,
)

SIMILARITY_THRESHOLD = 0.8


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    kind: str  # "value" | "slot" | "req"
    slot: str
    value: str | None = None

    @property
    def placeholder(self) -> str:
        if self.kind == "value":
            return f"<{self.slot}>"
        return f"<{self.kind}:{self.slot}>"


@dataclass(frozen=True)
class Template:
    pattern: tuple[str, ...]
    # per slot, labels for its value placeholders in occurrence order
    value_labels: tuple[tuple[str, tuple[str, ...]], ...]
    dontcare: frozenset[str]
    requested: frozenset[str]


@dataclass
class TemplateSet:
    ontology: Ontology
    templates: list[Template] = field(default_factory=list)
    _seen: set[tuple[str, ...]] = field(default_factory=set, repr=False)

    def add(self, template: Template) -> None:
        if template.pattern not in self._seen:
            self._seen.add(template.pattern)
            self.templates.append(template)

    def __len__(self) -> int:
        return len(self.templates)


def _norm(token: str) -> str:
    return unicodedata.normalize("NFC", token).casefold()


def find_mentions(
    tokens: Utterance, ontology: Ontology, dictionary: SemanticDictionary | None
) -> list[Mention]:
    """Non-overlapping entity mentions, longest match first at each
    position; value mentions outrank requestable and slot-name ones."""
    normed = [_norm(t) for t in tokens]
    kind_rank = {"value": 0, "req": 1, "slot": 2}
    candidates: list[tuple] = []

    def scan(entity: str, kind: str, slot: str, value: str | None):
        for form in surface_forms(entity, dictionary):
            n = len(form)
            if n == 0:
                continue
            for start in range(len(normed) - n + 1):
                if tuple(normed[start : start + n]) == form:
                    candidates.append(
                        (start, -n, kind_rank[kind], Mention(start, start + n, kind, slot, value))
                    )

    for slot, values in ontology.informable.items():
        for v in values:
            scan(v, "value", slot, v)
        scan(slot, "slot", slot, None)
    for slot in ontology.requestable:
        scan(slot, "req", slot, None)

    candidates.sort(key=lambda c: (c[0], c[1], c[2], c[3].slot))
    picked: list[Mention] = []
    taken = [False] * len(tokens)
    for _, _, _, mention in candidates:
        if any(taken[mention.start : mention.end]):
            continue
        picked.append(mention)
        for i in range(mention.start, mention.end):
            taken[i] = True
    picked.sort(key=lambda m: m.start)
    return picked


def delexicalise(
    tokens: Utterance, ontology: Ontology, dictionary: SemanticDictionary | None
) -> tuple[tuple[str, ...], list[Mention]]:
    mentions = find_mentions(tokens, ontology, dictionary)
    out: list[str] = []
    pos = 0
    for m in mentions:
        out.extend(tokens[pos : m.start])
        out.append(m.placeholder)
        pos = m.end
    out.extend(tokens[pos:])
    return tuple(out), mentions


def extract_templates(
    dialogs: list[Dialog],
    ontology: Ontology,
    dictionary: SemanticDictionary | None,
) -> TemplateSet:
    """Delexicalise every turn-labeled utterance; keep deduplicated
    patterns that matched at least one entity."""
    out = TemplateSet(ontology=ontology)
    for dialog in dialogs:
        for turn in dialog.turns:
            if turn.gold_turn is None:
                continue
            pattern, mentions = delexicalise(turn.user, ontology, dictionary)
            if not mentions:
                continue
            per_slot: dict[str, list[str]] = {}
            for m in mentions:
                if m.kind != "value":
                    continue
                label = turn.gold_turn.value_labels[m.slot][m.value]
                per_slot.setdefault(m.slot, []).append(label.value)
            dontcare = frozenset(
                s
                for s, l in turn.gold_turn.slot_labels.items()
                if l is SlotLabel.DONT_CARE
            )
            out.add(
                Template(
                    pattern=pattern,
                    value_labels=tuple(
                        (s, tuple(labels)) for s, labels in sorted(per_slot.items())
                    ),
                    dontcare=dontcare,
                    requested=turn.requested_gold,
                )
            )
    return out


def edit_similarity(a: tuple[str, ...], b: tuple[str, ...]) -> float:
    """1 - normalized token-level edit distance."""
    if not a and not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ta != tb),
            )
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))


def template_track(
    templates: TemplateSet,
    dictionary: SemanticDictionary | None,
    user: Utterance,
    threshold: float = SIMILARITY_THRESHOLD,
) -> StateAssignment:
    """Best-template decode of one utterance: close enough patterns emit
    their labels bound to the matched values, anything else reads as an
    all-NOT_MENTIONED turn."""
    ontology = templates.ontology
    pattern, mentions = delexicalise(user, ontology, dictionary)
    best: Template | None = None
    best_sim = -1.0
    for t in templates.templates:
        sim = edit_similarity(pattern, t.pattern)
        if sim > best_sim:
            best, best_sim = t, sim
    value_labels = {
        s: {v: ValueLabel.NOT_MENTIONED for v in vals}
        for s, vals in ontology.informable.items()
    }
    dontcare: frozenset[str] = frozenset()
    requested: frozenset[str] = frozenset()
    if best is not None and best_sim >= threshold:
        matched: dict[str, list[str]] = {}
        for m in mentions:
            if m.kind == "value":
                matched.setdefault(m.slot, []).append(m.value)
        for slot, labels in best.value_labels.items():
            values = matched.get(slot, [])
            for value, label in zip(values, labels):
                value_labels[slot][value] = ValueLabel(label)
        dontcare = best.dontcare
        requested = best.requested
    slot_labels = {}
    for slot in ontology.informable:
        if slot_label_constraint(value_labels[slot]) is SlotLabel.MENTIONED:
            slot_labels[slot] = SlotLabel.MENTIONED
        elif slot in dontcare:
            slot_labels[slot] = SlotLabel.DONT_CARE
        else:
            slot_labels[slot] = SlotLabel.NOT_MENTIONED
    return StateAssignment(
        slot_labels=slot_labels, value_labels=value_labels, requested=requested
    )


def template_track_dialog(
    templates: TemplateSet,
    dictionary: SemanticDictionary | None,
    dialog: Dialog,
) -> tuple[list[StateAssignment], list[StateAssignment]]:
    """Turn-level and accumulated template predictions for one dialog."""
    turn_preds = []
    accumulated = []
    running = all_not_mentioned(templates.ontology)
    for turn in dialog.turns:
        pred = template_track(templates, dictionary, turn.user)
        turn_preds.append(pred)
        running = accumulate_turn(running, pred)
        accumulated.append(running)
    return turn_preds, accumulated
