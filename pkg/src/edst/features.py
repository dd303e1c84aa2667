"""Value-specific input features.

Three feature families feed each tracker head: the previous-turn belief
for the queried entity, six binary indicators summarizing how the last
machine acts relate to it, and a per-token matrix pairing word
embeddings with two match signals (an embedding dot product squashed to
(0,1) and an exact string match, dictionary-assisted when one is given).
"""

from __future__ import annotations

import io
import unicodedata
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .state_model import (
    BeliefState,
    DialogAct,
    Ontology,
    ValueLabel,
    slot_label_marginal,
    value_labels_for,
)

# An utterance is a pre-tokenized sequence; tokens are never empty.
Utterance = tuple[str, ...]

MIN_ROWS = 3  # shortest matrix the convolution windows require


def check_utterance(tokens) -> Utterance:
    toks = tuple(tokens)
    if any(not isinstance(t, str) or t == "" for t in toks):
        raise ValidationError("utterance tokens must be non-empty strings")
    return toks


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def get(self, token: str) -> np.ndarray:
        """Vector for a token; unknown tokens map to all zeros."""
        vec = self.vectors.get(token)
        if vec is None:
            return np.zeros(self.dim)
        return vec

    def lookup(self, tokens: Utterance) -> np.ndarray:
        """(k, dim) matrix of token vectors, zeros for unknown tokens."""
        out = np.zeros((len(tokens), self.dim))
        for i, tok in enumerate(tokens):
            vec = self.vectors.get(tok)
            if vec is not None:
                out[i] = vec
        return out


def load_embeddings(source: io.IOBase | str | bytes) -> EmbeddingTable:
    """Parse a plain-text embedding file: one `token v1 ... vd` per line.

    The dimension is fixed by the first line; later lines that disagree
    raise with their line number. Duplicate tokens keep the first entry.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    dim = None
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise FormatError(f"embedding line {lineno}: no vector components")
        token = parts[0]
        try:
            vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"embedding line {lineno}: {exc}") from None
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise FormatError(
                f"embedding line {lineno}: dimension {vec.shape[0]} != {dim}"
            )
        if token not in vectors:
            vectors[token] = vec
    if dim is None:
        raise FormatError("embedding file has no entries")
    return EmbeddingTable(dim=dim, vectors=vectors)


# Semantic dictionary: canonical entity name -> synonym token sequences.
SemanticDictionary = dict[str, tuple[Utterance, ...]]


def load_semantic_dictionary(obj: dict, ontology: Ontology) -> SemanticDictionary:
    """Validate raw dictionary JSON against the ontology's entity names."""
    known = set(ontology.informable) | set(ontology.requestable)
    for values in ontology.informable.values():
        known.update(values)
    out: SemanticDictionary = {}
    for name, synonyms in obj.items():
        if name not in known:
            raise ValidationError(f"dictionary entry {name!r} names no ontology entity")
        out[name] = tuple(check_utterance(s) for s in synonyms)
    return out


@dataclass
class DotMatchParams:
    """Scalar affine calibration applied to utterance/entity dot products."""

    weight: float = 1.0
    bias: float = 0.0


def _norm(token: str) -> str:
    return unicodedata.normalize("NFC", token).casefold()


def entity_tokens(name: str) -> Utterance:
    """Split an ontology entity name into its surface tokens."""
    return tuple(name.split())


def embed_entity(table: EmbeddingTable, name: Utterance) -> np.ndarray:
    """Mean of the tokens' vectors; unknown tokens contribute zeros but
    still count in the mean."""
    if not name:
        raise ValueError("entity name must have at least one token")
    return table.lookup(name).mean(axis=0)


def value_belief_vector(value: str, slot: str, belief: BeliefState) -> np.ndarray:
    """Previous-turn label distribution for one value, in label order."""
    return np.array(belief.value_dist(slot, value), dtype=np.float64)


def slot_belief_vector(slot: str, belief: BeliefState) -> np.ndarray:
    """Previous-turn slot-label distribution (DONT_CARE, MENTIONED,
    NOT_MENTIONED), marginalized from the factorized belief."""
    return np.array(slot_label_marginal(belief, slot), dtype=np.float64)


def one_hot_value_label(label: ValueLabel, scheme: str) -> np.ndarray:
    labels = value_labels_for(scheme)
    out = np.zeros(len(labels))
    out[labels.index(label)] = 1.0
    return out


def act_feature_vector(value: str, slot: str, acts: tuple[DialogAct, ...]) -> np.ndarray:
    """Six indicators relating the machine's last acts to one value:
    slot requested; value confirmed liked; value confirmed disliked;
    another value of the slot confirmed; value informed; none of those."""
    out = np.zeros(6)
    for act in acts:
        if act.kind == "request" and act.slot == slot:
            out[0] = 1.0
        elif act.kind == "confirm" and act.slot == slot:
            if act.value == value:
                if act.polarity == "like":
                    out[1] = 1.0
                else:
                    out[2] = 1.0
            else:
                out[3] = 1.0
        elif act.kind == "inform" and act.slot == slot and act.value == value:
            out[4] = 1.0
    if not out[:5].any():
        out[5] = 1.0
    return out


def slot_act_vector(slot: str, acts: tuple[DialogAct, ...]) -> np.ndarray:
    """Slot-level analogue of the six act indicators: slot requested; any
    value confirmed liked / disliked; dontcare confirmed; any value
    informed; none of those."""
    out = np.zeros(6)
    for act in acts:
        if act.slot != slot:
            continue
        if act.kind == "request":
            out[0] = 1.0
        elif act.kind == "confirm":
            out[1 if act.polarity == "like" else 2] = 1.0
        elif act.kind == "confirm_dontcare":
            out[3] = 1.0
        elif act.kind == "inform":
            out[4] = 1.0
    if not out[:5].any():
        out[5] = 1.0
    return out


def surface_forms(
    entity: str, dictionary: SemanticDictionary | None
) -> list[tuple[str, ...]]:
    forms = [tuple(_norm(t) for t in entity_tokens(entity))]
    if dictionary:
        for syn in dictionary.get(entity, ()):
            if syn:
                forms.append(tuple(_norm(t) for t in syn))
    return forms


def string_match_vector(
    entity: str, utterance: Utterance, dictionary: SemanticDictionary | None = None
) -> np.ndarray:
    """Per-token binary vector: 1 where the token sits inside a contiguous
    occurrence of the entity's name or of a dictionary synonym. Matching
    is case-insensitive after NFC normalization."""
    tokens = [_norm(t) for t in utterance]
    out = np.zeros(len(utterance))
    for form in surface_forms(entity, dictionary):
        n = len(form)
        for start in range(len(tokens) - n + 1):
            if tuple(tokens[start : start + n]) == form:
                out[start : start + n] = 1.0
    return out


def dot_match_vector(
    entity: str,
    utterance: Utterance,
    table: EmbeddingTable,
    params: DotMatchParams,
) -> np.ndarray:
    """Sigmoid-calibrated dot products between each token's embedding and
    the entity's embedding; large where the token means the entity. Kept
    strictly inside (0,1) even where the sigmoid saturates in float64."""
    scores = entity_dot_scores(entity, utterance, table)
    x = params.weight * scores + params.bias
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def entity_dot_scores(
    entity: str, utterance: Utterance, table: EmbeddingTable
) -> np.ndarray:
    """Raw dot products of each token embedding with the entity embedding."""
    if not utterance:
        return np.zeros(0)
    return table.lookup(utterance) @ embed_entity(table, entity_tokens(entity))


def value_specific_matrix(
    entity: str,
    utterance: Utterance,
    table: EmbeddingTable,
    params: DotMatchParams,
    dictionary: SemanticDictionary | None = None,
) -> np.ndarray:
    """Token matrix [embeddings | dot match | string match], zero-padded
    to at least MIN_ROWS rows so every convolution window size applies.
    Padding rows carry zeros in every column, the match columns included."""
    k = len(utterance)
    rows = max(k, MIN_ROWS)
    out = np.zeros((rows, table.dim + 2))
    if k:
        out[:k, : table.dim] = table.lookup(utterance)
        out[:k, table.dim] = dot_match_vector(entity, utterance, table, params)
        out[:k, table.dim + 1] = string_match_vector(entity, utterance, dictionary)
    return out
