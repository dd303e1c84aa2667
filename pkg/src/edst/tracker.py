"""The tracker itself: per-slot value heads, per-slot free-branch heads,
per-requestable-slot heads, turn updates, MAP decoding, hypothesis-list
marginalization, and the model file format.

Every informable slot owns one value head (three or two label classes)
and one free-branch head deciding DONT_CARE against NOT_MENTIONED when
no value of the slot is labeled. Requestable slots own a two-class head
over the bare utterance, with no act or belief inputs, since requests
are single-turn.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ValidationError
from .features import (
    EmbeddingTable,
    SemanticDictionary,
    Utterance,
    act_feature_vector,
    embed_entity,
    entity_tokens,
    slot_act_vector,
    slot_belief_vector,
    string_match_vector,
    value_belief_vector,
)
from .neural_core import (
    MIN_ROWS,
    HeadBatch,
    HeadParams,
    head_graph,
    init_head,
    named_params,
    set_params,
)
from .state_model import (
    ENRICHED3,
    BeliefState,
    Ontology,
    StateAssignment,
    SystemAct,
    ValueLabel,
    accumulate_turn,
    all_not_mentioned,
    map_assignment,
    new_belief_state,
    value_labels_for,
)

MODEL_MAGIC = b"EDST-MODEL-V1\n"


@dataclass(frozen=True)
class TrackerMode:
    """Label scheme plus the two structural switches: whether heads see
    the previous belief, and whether the match columns are ablated."""

    label_scheme: str = ENRICHED3
    use_prev_belief: bool = False
    ablate_value_specific: bool = False

    @property
    def n_value_labels(self) -> int:
        return len(value_labels_for(self.label_scheme))


@dataclass(frozen=True)
class TurnInput:
    """One turn as seen by the tracker: the machine's last acts, the
    user's tokens, and optionally scored recognition hypotheses."""

    user: Utterance
    system_act: SystemAct = ()
    asr: tuple[tuple[Utterance, float], ...] | None = None


@dataclass
class TrackerModel:
    mode: TrackerMode
    ontology: Ontology
    embeddings: EmbeddingTable
    dictionary: SemanticDictionary | None
    vst: dict[str, HeadParams]
    sst: dict[str, HeadParams]
    req: dict[str, HeadParams]
    num_filters: int
    _entity_vecs: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def entity_vec(self, name: str) -> np.ndarray:
        vec = self._entity_vecs.get(name)
        if vec is None:
            vec = embed_entity(self.embeddings, entity_tokens(name))
            self._entity_vecs[name] = vec
        return vec

    def heads(self) -> list[tuple[str, HeadParams]]:
        """Every head with its model-file name, in the fixed order:
        value and free-branch heads per informable slot, then the
        requestable heads."""
        out = []
        for slot in self.ontology.informable:
            out.append((f"vst/{slot}", self.vst[slot]))
            out.append((f"sst/{slot}", self.sst[slot]))
        for slot in self.ontology.requestable:
            out.append((f"req/{slot}", self.req[slot]))
        return out


def init_tracker(
    rng: np.random.Generator,
    ontology: Ontology,
    embeddings: EmbeddingTable,
    mode: TrackerMode = TrackerMode(),
    dictionary: SemanticDictionary | None = None,
    num_filters: int = 50,
) -> TrackerModel:
    """Randomly initialized model; head creation order is fixed so one
    seed always yields the same parameters."""
    d = embeddings.dim
    m = mode.n_value_labels
    vst, sst = {}, {}
    for slot in ontology.informable:
        vst[slot] = init_head(
            rng, d, num_filters, m,
            belief_dim=m if mode.use_prev_belief else None,
            use_acts=True,
        )
        sst[slot] = init_head(
            rng, d, num_filters, 2,
            belief_dim=3 if mode.use_prev_belief else None,
            use_acts=True,
        )
    req = {
        slot: init_head(rng, d, num_filters, 2, belief_dim=None, use_acts=False)
        for slot in ontology.requestable
    }
    return TrackerModel(
        mode=mode,
        ontology=ontology,
        embeddings=embeddings,
        dictionary=dictionary,
        vst=vst,
        sst=sst,
        req=req,
        num_filters=num_filters,
    )


def _single_batch(
    model: TrackerModel,
    entity: str,
    tokens: Utterance,
    acts: np.ndarray | None,
    belief: np.ndarray | None,
    emb: np.ndarray | None = None,
) -> HeadBatch:
    k = len(tokens)
    rows = max(k, MIN_ROWS)
    if emb is None:
        emb = model.embeddings.lookup(tokens)
    mat = np.zeros((1, rows, model.embeddings.dim))
    dots = np.zeros((1, rows))
    strm = np.zeros((1, rows))
    mask = np.zeros((1, rows))
    if k:
        mat[0, :k] = emb
        dots[0, :k] = emb @ model.entity_vec(entity)
        strm[0, :k] = string_match_vector(entity, tokens, model.dictionary)
        mask[0, :k] = 1.0
    return HeadBatch(
        emb=mat,
        dot_scores=dots,
        str_match=strm,
        token_mask=mask,
        rows=np.array([rows]),
        acts=None if acts is None else acts[None, :],
        belief=None if belief is None else belief[None, :],
    )


def _head_probs(model: TrackerModel, head: HeadParams, batch: HeadBatch) -> np.ndarray:
    logits, _ = head_graph(
        head, batch, ablate_match=model.mode.ablate_value_specific
    )
    return ad.softmax(logits.data)[0]


def vst_update(
    model: TrackerModel,
    slot: str,
    value: str,
    turn: TurnInput,
    belief: BeliefState,
    emb: np.ndarray | None = None,
) -> tuple[float, ...]:
    """Fresh label distribution for one value of one slot."""
    if slot not in model.ontology.informable:
        raise ValueError(f"unknown slot {slot!r}")
    if value not in model.ontology.informable[slot]:
        raise ValueError(f"unknown value {value!r} for slot {slot!r}")
    f1 = (
        value_belief_vector(value, slot, belief)
        if model.mode.use_prev_belief
        else None
    )
    f2 = act_feature_vector(value, slot, turn.system_act)
    batch = _single_batch(model, value, turn.user, f2, f1, emb)
    return tuple(_head_probs(model, model.vst[slot], batch))


def _sst_free_branch(
    model: TrackerModel,
    slot: str,
    turn: TurnInput,
    belief: BeliefState,
    emb: np.ndarray | None = None,
) -> tuple[float, float]:
    """Two-way (DONT_CARE, NOT_MENTIONED) conditional from the slot head."""
    f1 = slot_belief_vector(slot, belief) if model.mode.use_prev_belief else None
    f2 = slot_act_vector(slot, turn.system_act)
    batch = _single_batch(model, slot, turn.user, f2, f1, emb)
    probs = _head_probs(model, model.sst[slot], batch)
    return (float(probs[0]), float(probs[1]))


def sst_update(
    model: TrackerModel,
    slot: str,
    turn: TurnInput,
    belief: BeliefState,
    value_label_map: dict[str, ValueLabel],
) -> tuple[float, float, float]:
    """Slot-label conditional (DONT_CARE, MENTIONED, NOT_MENTIONED) given
    the decoded value labels: deterministic once any value is labeled,
    otherwise the head decides the free branch."""
    if any(l is not ValueLabel.NOT_MENTIONED for l in value_label_map.values()):
        return (0.0, 1.0, 0.0)
    dc, nm = _sst_free_branch(model, slot, turn, belief)
    return (dc, 0.0, nm)


def requestable_update(model: TrackerModel, slot: str, user: Utterance) -> float:
    """Probability that the requestable slot was asked for this turn."""
    if slot not in model.ontology.requestable:
        raise ValueError(f"slot {slot!r} is not requestable")
    batch = _single_batch(model, slot, user, None, None)
    return float(_head_probs(model, model.req[slot], batch)[0])


def track_turn(model: TrackerModel, turn: TurnInput, belief: BeliefState) -> BeliefState:
    """One full belief update: value distributions for every value, the
    free branch for every slot, and per-turn request probabilities."""
    emb = model.embeddings.lookup(turn.user)
    value_dists: dict[str, dict[str, tuple[float, ...]]] = {}
    slot_conds: dict[str, tuple[float, float]] = {}
    for slot, values in model.ontology.informable.items():
        value_dists[slot] = {
            v: vst_update(model, slot, v, turn, belief, emb) for v in values
        }
        slot_conds[slot] = _sst_free_branch(model, slot, turn, belief, emb)
    request_probs = {
        slot: requestable_update(model, slot, turn.user)
        for slot in model.ontology.requestable
    }
    return BeliefState(
        scheme=model.mode.label_scheme,
        value_dists=value_dists,
        slot_conds=slot_conds,
        request_probs=request_probs,
    )


def track_turn_asr(
    model: TrackerModel, turn: TurnInput, belief: BeliefState
) -> BeliefState:
    """Marginalize the belief over scored recognition hypotheses: run the
    plain update per hypothesis and mix every stored distribution with
    the normalized posterior weights."""
    if not turn.asr:
        raise ValueError("turn carries no recognition hypotheses")
    weights = np.array([w for _, w in turn.asr], dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("hypothesis weights must be non-negative")
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("hypothesis weights sum to zero")
    weights = weights / total
    updates = [
        track_turn(model, TurnInput(user=hyp, system_act=turn.system_act), belief)
        for hyp, _ in turn.asr
    ]
    if len(updates) == 1:
        return updates[0]

    def mix(parts: list[tuple[float, ...]]) -> tuple[float, ...]:
        acc = np.zeros(len(parts[0]))
        for w, p in zip(weights, parts):
            acc += w * np.asarray(p)
        return tuple(acc)

    first = updates[0]
    value_dists = {
        slot: {
            v: mix([u.value_dists[slot][v] for u in updates])
            for v in dists
        }
        for slot, dists in first.value_dists.items()
    }
    slot_conds = {
        slot: mix([u.slot_conds[slot] for u in updates]) for slot in first.slot_conds
    }
    request_probs = {
        slot: float(sum(w * u.request_probs[slot] for w, u in zip(weights, updates)))
        for slot in first.request_probs
    }
    return BeliefState(
        scheme=first.scheme,
        value_dists=value_dists,
        slot_conds=slot_conds,
        request_probs=request_probs,
    )


def _turn_update(model: TrackerModel, turn: TurnInput, belief: BeliefState) -> BeliefState:
    if turn.asr:
        return track_turn_asr(model, turn, belief)
    return track_turn(model, turn, belief)


def track_dialog_states(
    model: TrackerModel, turns: list[TurnInput]
) -> tuple[list[StateAssignment], list[StateAssignment]]:
    """Per-turn MAP assignments and the accumulated state after each turn.

    With the previous belief as an input the belief threads across turns
    and its MAP already is the accumulated state; without it every turn
    decodes from the neutral prior and the substitution rule folds the
    per-turn predictions together.
    """
    ont = model.ontology
    turn_preds: list[StateAssignment] = []
    accumulated: list[StateAssignment] = []
    if model.mode.use_prev_belief:
        belief = new_belief_state(ont, model.mode.label_scheme)
        for turn in turns:
            belief = _turn_update(model, turn, belief)
            decoded = map_assignment(belief, ont)
            turn_preds.append(decoded)
            accumulated.append(decoded)
    else:
        prior = new_belief_state(ont, model.mode.label_scheme)
        running = all_not_mentioned(ont)
        for turn in turns:
            decoded = map_assignment(_turn_update(model, turn, prior), ont)
            turn_preds.append(decoded)
            running = accumulate_turn(running, decoded)
            accumulated.append(running)
    return turn_preds, accumulated


def track_dialog(model: TrackerModel, turns: list[TurnInput]) -> list[StateAssignment]:
    """Accumulated state assignment after each turn of a dialog."""
    return track_dialog_states(model, turns)[1]


def single_value_decode(
    mention_probs: dict[str, float],
    mentioned: set[str],
    free_branch: tuple[float, float],
) -> tuple[str, str | None]:
    """Classic single-value slot decision for the two-label scheme.

    Values decoded as mentioned compete on probability; with none, the
    free branch picks dontcare against none. Returns a (kind, value)
    pair with kind in {"value", "dontcare", "none"}.
    """
    best = None
    for value, prob in mention_probs.items():  # insertion order breaks ties
        if value in mentioned and (best is None or prob > mention_probs[best]):
            best = value
    if best is not None:
        return ("value", best)
    if free_branch[0] >= free_branch[1]:
        return ("dontcare", None)
    return ("none", None)


# ---------------------------------------------------------------------------
# model file format


def _manifest(model: TrackerModel) -> dict:
    arrays = []
    for head_name, head in model.heads():
        for param_name, arr in named_params(head):
            arrays.append(
                {"name": f"{head_name}/{param_name}", "shape": list(np.shape(arr))}
            )
    return {
        "format": "edst-model-v1",
        "mode": {
            "label_scheme": model.mode.label_scheme,
            "use_prev_belief": model.mode.use_prev_belief,
            "ablate_value_specific": model.mode.ablate_value_specific,
        },
        "ontology_fingerprint": model.ontology.fingerprint(),
        "embed_dim": model.embeddings.dim,
        "num_filters": model.num_filters,
        "arrays": arrays,
    }


def save_model(model: TrackerModel, path: str) -> None:
    """Write the manifest plus every parameter as little-endian float64
    in the documented order; the result reloads bit-exactly."""
    header = json.dumps(_manifest(model), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, head in model.heads():
            for _, arr in named_params(head):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(
    path: str,
    ontology: Ontology,
    embeddings: EmbeddingTable,
    dictionary: SemanticDictionary | None = None,
) -> TrackerModel:
    """Rebuild a model from its file; the ontology and embeddings must
    match what the model was saved with."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise FormatError("not a model file (bad magic)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(header_len).decode("utf-8"))
        if manifest.get("format") != "edst-model-v1":
            raise FormatError(f"unsupported model format {manifest.get('format')!r}")
        if manifest["ontology_fingerprint"] != ontology.fingerprint():
            raise ValidationError("model was trained against a different ontology")
        if manifest["embed_dim"] != embeddings.dim:
            raise ValidationError(
                f"model expects {manifest['embed_dim']}-dim embeddings, "
                f"table has {embeddings.dim}"
            )
        mode = TrackerMode(
            label_scheme=manifest["mode"]["label_scheme"],
            use_prev_belief=manifest["mode"]["use_prev_belief"],
            ablate_value_specific=manifest["mode"]["ablate_value_specific"],
        )
        model = init_tracker(
            np.random.default_rng(0),
            ontology,
            embeddings,
            mode,
            dictionary,
            num_filters=manifest["num_filters"],
        )
        expected = []
        for head_name, head in model.heads():
            for param_name, arr in named_params(head):
                expected.append((f"{head_name}/{param_name}", np.shape(arr)))
        declared = [(a["name"], tuple(a["shape"])) for a in manifest["arrays"]]
        if declared != expected:
            raise FormatError("model arrays do not match the ontology/mode layout")
        for head_name, head in model.heads():
            arrays = []
            for param_name, arr in named_params(head):
                shape = np.shape(arr)
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise FormatError(f"model file truncated at {head_name}/{param_name}")
                loaded = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
                arrays.append(loaded)
            set_params(head, arrays)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("model file has trailing bytes")
    return model
