"""Enriched dialog-state algebra.

A dialog state assigns a label to every informable slot (DONT_CARE /
MENTIONED / NOT_MENTIONED) and to every value of every slot (LIKE /
DISLIKE / NOT_MENTIONED), so a slot can hold several values with
polarity. A belief state stores the per-value label distributions plus,
per slot, the two-way conditional over {DONT_CARE, NOT_MENTIONED} that
applies when no value of the slot is labeled. The slot label is fully
determined whenever any value is labeled, so the joint over the whole
state factorizes into these stored pieces.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

from .errors import InconsistentAssignmentError, ValidationError


class ValueLabel(enum.Enum):
    """Label of a single value. In two-label mode LIKE reads as "mentioned"."""

    LIKE = "like"
    DISLIKE = "dislike"
    NOT_MENTIONED = "not_mentioned"


class SlotLabel(enum.Enum):
    DONT_CARE = "dont_care"
    MENTIONED = "mentioned"
    NOT_MENTIONED = "not_mentioned"


ENRICHED3 = "enriched3"
MENTION2 = "mention2"

# Fixed orders; argmax ties resolve to the earlier member.
VALUE_LABELS_3 = (ValueLabel.LIKE, ValueLabel.DISLIKE, ValueLabel.NOT_MENTIONED)
VALUE_LABELS_2 = (ValueLabel.LIKE, ValueLabel.NOT_MENTIONED)
SLOT_LABELS = (SlotLabel.DONT_CARE, SlotLabel.MENTIONED, SlotLabel.NOT_MENTIONED)
FREE_SLOT_LABELS = (SlotLabel.DONT_CARE, SlotLabel.NOT_MENTIONED)

DIST_TOL = 1e-9


def value_labels_for(scheme: str) -> tuple[ValueLabel, ...]:
    if scheme == ENRICHED3:
        return VALUE_LABELS_3
    if scheme == MENTION2:
        return VALUE_LABELS_2
    raise ValueError(f"unknown label scheme {scheme!r}")


@dataclass(frozen=True)
class Ontology:
    """Inventory of informable slots with their value vocabularies,
    requestable slots, and the slots restricted to a single liked value."""

    informable: dict[str, tuple[str, ...]]
    requestable: tuple[str, ...]
    single_value: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if len(set(self.requestable)) != len(self.requestable):
            raise ValidationError("duplicate requestable slot names")
        for slot, values in self.informable.items():
            if not values:
                raise ValidationError(f"informable slot {slot!r} has no values")
            if len(set(values)) != len(values):
                raise ValidationError(f"duplicate value names in slot {slot!r}")
        for slot in self.single_value:
            if slot not in self.informable:
                raise ValidationError(
                    f"single-value slot {slot!r} is not an informable slot"
                )

    @classmethod
    def from_json(cls, obj: dict) -> "Ontology":
        return cls(
            informable={s: tuple(v) for s, v in obj["informable"].items()},
            requestable=tuple(obj["requestable"]),
            single_value=frozenset(obj.get("single_value", [])),
        )

    def to_json(self) -> dict:
        return {
            "informable": {s: list(v) for s, v in self.informable.items()},
            "requestable": list(self.requestable),
            "single_value": sorted(self.single_value),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def values(self, slot: str) -> tuple[str, ...]:
        return self.informable[slot]


# One machine dialog act. `kind` is one of request / confirm /
# confirm_dontcare / inform; confirm carries polarity "like" or "dislike".
@dataclass(frozen=True)
class DialogAct:
    kind: str
    slot: str
    value: str | None = None
    polarity: str | None = None

    ACT_KINDS = ("request", "confirm", "confirm_dontcare", "inform")

    def __post_init__(self) -> None:
        if self.kind not in self.ACT_KINDS:
            raise ValueError(f"unknown act kind {self.kind!r}")
        if self.kind == "confirm" and self.polarity not in ("like", "dislike"):
            raise ValueError("confirm acts need polarity 'like' or 'dislike'")
        if self.kind in ("confirm", "inform") and self.value is None:
            raise ValueError(f"{self.kind} acts need a value")


SystemAct = tuple[DialogAct, ...]


@dataclass(frozen=True)
class StateAssignment:
    """One concrete labeling of every slot and value, plus the per-turn
    requested set. Consistency with the label-coupling rule is checked by
    `validate`, not at construction, so tests can build violating ones."""

    slot_labels: dict[str, SlotLabel]
    value_labels: dict[str, dict[str, ValueLabel]]
    requested: frozenset[str] = frozenset()

    def validate(self, ontology: Ontology) -> None:
        """Raise unless the assignment covers the ontology exactly and
        satisfies the coupling rule and the single-value restriction."""
        if set(self.slot_labels) != set(ontology.informable):
            raise InconsistentAssignmentError("slot labels do not cover the ontology")
        for slot, values in ontology.informable.items():
            labels = self.value_labels.get(slot)
            if labels is None or set(labels) != set(values):
                raise InconsistentAssignmentError(
                    f"value labels for slot {slot!r} do not cover its vocabulary"
                )
            constraint = slot_label_constraint(labels)
            actual = self.slot_labels[slot]
            if constraint is SlotLabel.MENTIONED:
                if actual is not SlotLabel.MENTIONED:
                    raise InconsistentAssignmentError(
                        f"slot {slot!r} has labeled values but is {actual.value}"
                    )
            elif actual is SlotLabel.MENTIONED:
                raise InconsistentAssignmentError(
                    f"slot {slot!r} is mentioned but no value is labeled"
                )
            if slot in ontology.single_value:
                liked = [v for v, l in labels.items() if l is ValueLabel.LIKE]
                if len(liked) > 1:
                    raise InconsistentAssignmentError(
                        f"single-value slot {slot!r} has {len(liked)} liked values"
                    )
        for slot in self.requested:
            if slot not in ontology.requestable:
                raise InconsistentAssignmentError(
                    f"requested slot {slot!r} is not requestable"
                )

    def to_json(self) -> dict:
        values = {
            slot: {v: l.value for v, l in labels.items() if l is not ValueLabel.NOT_MENTIONED}
            for slot, labels in self.value_labels.items()
        }
        return {
            "slots": {s: l.value for s, l in self.slot_labels.items()},
            "values": {s: d for s, d in values.items() if d},
            "requested": sorted(self.requested),
        }


def all_not_mentioned(ontology: Ontology) -> StateAssignment:
    """The neutral assignment: everything unmentioned, nothing requested."""
    return StateAssignment(
        slot_labels={s: SlotLabel.NOT_MENTIONED for s in ontology.informable},
        value_labels={
            s: {v: ValueLabel.NOT_MENTIONED for v in vals}
            for s, vals in ontology.informable.items()
        },
    )


@dataclass(frozen=True)
class BeliefState:
    """Per-value label distributions and per-slot free-branch conditionals
    for one turn.

    `value_dists[slot][value]` is a distribution over the value labels of
    `scheme` in their fixed order. `slot_conds[slot]` is the conditional
    over (DONT_CARE, NOT_MENTIONED) that applies when every value of the
    slot is unlabeled. `request_probs` holds the per-turn probability that
    each requestable slot was asked for; it is not accumulated.
    """

    scheme: str
    value_dists: dict[str, dict[str, tuple[float, ...]]]
    slot_conds: dict[str, tuple[float, float]]
    request_probs: dict[str, float] = field(default_factory=dict)

    def check_normalized(self, tol: float = DIST_TOL) -> None:
        for slot, dists in self.value_dists.items():
            for value, dist in dists.items():
                _check_dist(dist, f"{slot}/{value}", tol)
        for slot, cond in self.slot_conds.items():
            _check_dist(cond, f"{slot} free branch", tol)

    def value_dist(self, slot: str, value: str) -> tuple[float, ...]:
        try:
            return self.value_dists[slot][value]
        except KeyError:
            raise ValueError(f"unknown slot/value {slot!r}/{value!r}") from None


def _check_dist(dist: tuple[float, ...], what: str, tol: float) -> None:
    if any(p < 0 for p in dist):
        raise ValidationError(f"negative probability in {what}")
    if abs(sum(dist) - 1.0) > tol:
        raise ValidationError(f"distribution for {what} sums to {sum(dist)}")


def new_belief_state(ontology: Ontology, scheme: str = ENRICHED3) -> BeliefState:
    """Neutral prior: every value surely unmentioned, every free branch
    surely NOT_MENTIONED, no requests."""
    labels = value_labels_for(scheme)
    neutral = tuple(0.0 for _ in labels[:-1]) + (1.0,)
    return BeliefState(
        scheme=scheme,
        value_dists={
            s: {v: neutral for v in vals} for s, vals in ontology.informable.items()
        },
        slot_conds={s: (0.0, 1.0) for s in ontology.informable},
        request_probs={r: 0.0 for r in ontology.requestable},
    )


def slot_label_constraint(
    value_labels: dict[str, ValueLabel],
) -> SlotLabel | None:
    """MENTIONED when any value is labeled, else None (slot label free)."""
    for label in value_labels.values():
        if label is not ValueLabel.NOT_MENTIONED:
            return SlotLabel.MENTIONED
    return None


def joint_probability(belief: BeliefState, assignment: StateAssignment) -> float:
    """Probability of one full assignment under the factorized belief.

    Product over values of the assigned label's probability, times per
    slot either 1 (slot label forced by a labeled value) or the stored
    free-branch probability. Raises on assignments that violate the
    coupling rule or do not cover the belief's ontology.
    """
    labels = value_labels_for(belief.scheme)
    if set(assignment.value_labels) != set(belief.value_dists):
        raise ValueError("assignment does not cover the belief's slots")
    prob = 1.0
    for slot, dists in belief.value_dists.items():
        assigned = assignment.value_labels[slot]
        if set(assigned) != set(dists):
            raise ValueError(f"assignment does not cover the values of {slot!r}")
        constraint = slot_label_constraint(assigned)
        slot_label = assignment.slot_labels[slot]
        if constraint is SlotLabel.MENTIONED:
            if slot_label is not SlotLabel.MENTIONED:
                raise InconsistentAssignmentError(
                    f"slot {slot!r} has labeled values but is {slot_label.value}"
                )
        else:
            if slot_label is SlotLabel.MENTIONED:
                raise InconsistentAssignmentError(
                    f"slot {slot!r} is mentioned but no value is labeled"
                )
            cond = belief.slot_conds[slot]
            prob *= cond[FREE_SLOT_LABELS.index(slot_label)]
        for value, label in assigned.items():
            prob *= dists[value][labels.index(label)]
    return prob


def slot_label_marginal(belief: BeliefState, slot: str) -> tuple[float, float, float]:
    """Marginal over (DONT_CARE, MENTIONED, NOT_MENTIONED) for one slot,
    obtained by summing the factorized joint over the slot's values."""
    labels = value_labels_for(belief.scheme)
    nm = labels.index(ValueLabel.NOT_MENTIONED)
    p_all_nm = 1.0
    for dist in belief.value_dists[slot].values():
        p_all_nm *= dist[nm]
    dc, free_nm = belief.slot_conds[slot]
    return (p_all_nm * dc, 1.0 - p_all_nm, p_all_nm * free_nm)


def _argmax_label(dist: tuple[float, ...], order: tuple) -> object:
    best, best_p = order[0], dist[0]
    for label, p in zip(order[1:], dist[1:]):
        if p > best_p:
            best, best_p = label, p
    return best


def map_assignment(belief: BeliefState, ontology: Ontology) -> StateAssignment:
    """Most probable assignment under the belief.

    Per-value argmax, slot labels via the coupling rule with the free
    branch decided by its own argmax, then single-value slots keep only
    their most probable liked value. Ties resolve to the earlier member
    of the fixed label orders (earlier ontology value for the
    single-value rule).
    """
    labels = value_labels_for(belief.scheme)
    value_out: dict[str, dict[str, ValueLabel]] = {}
    slot_out: dict[str, SlotLabel] = {}
    for slot, values in ontology.informable.items():
        picked = {
            v: _argmax_label(belief.value_dists[slot][v], labels) for v in values
        }
        if slot in ontology.single_value:
            like = labels.index(ValueLabel.LIKE)
            liked = [v for v in values if picked[v] is ValueLabel.LIKE]
            if len(liked) > 1:
                keep = max(liked, key=lambda v: belief.value_dists[slot][v][like])
                for v in liked:
                    if v != keep:
                        picked[v] = ValueLabel.NOT_MENTIONED
        constraint = slot_label_constraint(picked)
        if constraint is SlotLabel.MENTIONED:
            slot_out[slot] = SlotLabel.MENTIONED
        else:
            slot_out[slot] = _argmax_label(belief.slot_conds[slot], FREE_SLOT_LABELS)
        value_out[slot] = picked
    requested = frozenset(
        s for s, p in belief.request_probs.items() if p >= 0.5
    )
    return StateAssignment(slot_labels=slot_out, value_labels=value_out, requested=requested)


def accumulate_turn(
    prev: StateAssignment, turn_pred: StateAssignment
) -> StateAssignment:
    """Fold a turn-level prediction into the running state.

    A value keeps its old label unless the turn labels it; slot labels
    are recomputed from the merged values, with the free branch taking
    the turn's label when that is DONT_CARE and the old label otherwise.
    The requested set is per-turn and comes from the new turn alone.
    """
    value_out: dict[str, dict[str, ValueLabel]] = {}
    slot_out: dict[str, SlotLabel] = {}
    for slot, prev_labels in prev.value_labels.items():
        turn_labels = turn_pred.value_labels[slot]
        merged = {
            v: (turn_labels[v] if turn_labels[v] is not ValueLabel.NOT_MENTIONED else old)
            for v, old in prev_labels.items()
        }
        value_out[slot] = merged
        if slot_label_constraint(merged) is SlotLabel.MENTIONED:
            slot_out[slot] = SlotLabel.MENTIONED
        elif turn_pred.slot_labels[slot] is SlotLabel.DONT_CARE:
            slot_out[slot] = SlotLabel.DONT_CARE
        else:
            slot_out[slot] = prev.slot_labels[slot]
    return StateAssignment(
        slot_labels=slot_out, value_labels=value_out, requested=turn_pred.requested
    )
