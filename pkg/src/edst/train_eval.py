"""Per-head training with early stopping, and exact-match evaluation.

Each head trains on its own example stream with ratio-controlled
minibatches, cross-entropy, Adam, dropout, and global-norm clipping.
Validation loss is monitored per head; a head stops once it has gone
`patience` epochs without improving and keeps its best parameters.
Metrics are exact-match per turn: one wrong label zeroes the turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import (
    Dialog,
    REQ_KIND,
    SST_KIND,
    SamplerConfig,
    TrainingExample,
    VST_KIND,
    decompose,
    sample_batch_indices,
)
from .errors import DataError
from .features import act_feature_vector, slot_act_vector, string_match_vector
from .neural_core import (
    MIN_ROWS,
    AdamState,
    HeadBatch,
    adam_step,
    clip_global_norm,
    head_graph,
    named_params,
    set_params,
)
from .state_model import (
    StateAssignment,
    accumulate_turn,
    all_not_mentioned,
)
from .tracker import TrackerModel, TurnInput, track_dialog_states


@dataclass(frozen=True)
class TrainConfig:
    vst_batch: int = 256
    sst_batch: int = 64
    req_batch: int = 256
    vst_ratios: tuple[float, ...] = (1, 7)
    sst_ratios: tuple[float, ...] = (1, 7)
    req_ratios: tuple[float, ...] = (1, 7)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.5
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 5
    seed: int = 42

    def __post_init__(self) -> None:
        if min(self.vst_batch, self.sst_batch, self.req_batch) <= 0:
            raise ValueError("batch sizes must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class _HeadData:
    """Feature arrays for one head's full example stream, padded to a
    shared row count so batches are plain row slices."""

    emb: np.ndarray
    dots: np.ndarray
    strm: np.ndarray
    mask: np.ndarray
    rows: np.ndarray
    acts: np.ndarray | None
    belief: np.ndarray | None
    gold: np.ndarray

    @property
    def size(self) -> int:
        return self.gold.shape[0]

    def slice(self, idx: np.ndarray | slice) -> HeadBatch:
        return HeadBatch(
            emb=self.emb[idx],
            dot_scores=self.dots[idx],
            str_match=self.strm[idx],
            token_mask=self.mask[idx],
            rows=self.rows[idx],
            acts=None if self.acts is None else self.acts[idx],
            belief=None if self.belief is None else self.belief[idx],
            gold=self.gold[idx],
        )


def _prepare(
    model: TrackerModel, kind: str, examples: list[TrainingExample]
) -> _HeadData | None:
    if not examples:
        return None
    table = model.embeddings
    longest = max(len(e.tokens) for e in examples)
    R = max(longest, MIN_ROWS)
    N = len(examples)
    emb = np.zeros((N, R, table.dim))
    dots = np.zeros((N, R))
    strm = np.zeros((N, R))
    mask = np.zeros((N, R))
    rows = np.zeros(N, dtype=int)
    gold = np.zeros(N, dtype=int)
    acts_list = [] if kind != REQ_KIND else None
    belief_list = [] if examples[0].prev_label is not None else None
    emb_cache: dict = {}
    for i, ex in enumerate(examples):
        k = len(ex.tokens)
        rows[i] = max(k, MIN_ROWS)
        gold[i] = ex.gold
        entity = ex.value if kind == VST_KIND else ex.slot
        if k:
            cached = emb_cache.get(ex.tokens)
            if cached is None:
                cached = table.lookup(ex.tokens)
                emb_cache[ex.tokens] = cached
            emb[i, :k] = cached
            dots[i, :k] = cached @ model.entity_vec(entity)
            strm[i, :k] = string_match_vector(entity, ex.tokens, model.dictionary)
            mask[i, :k] = 1.0
        if kind == VST_KIND:
            acts_list.append(act_feature_vector(ex.value, ex.slot, ex.acts))
        elif kind == SST_KIND:
            acts_list.append(slot_act_vector(ex.slot, ex.acts))
        if belief_list is not None:
            belief_list.append(ex.prev_label)
    return _HeadData(
        emb=emb,
        dots=dots,
        strm=strm,
        mask=mask,
        rows=rows,
        acts=None if acts_list is None else np.array(acts_list),
        belief=None if belief_list is None else np.array(belief_list, dtype=np.float64),
        gold=gold,
    )


def _mean_loss(model: TrackerModel, head, data: _HeadData) -> float:
    logits, _ = head_graph(
        head, data.slice(slice(None)), ablate_match=model.mode.ablate_value_specific
    )
    loss, _ = ad.softmax_cross_entropy(logits, data.gold)
    return float(loss.data)


def train(
    model: TrackerModel,
    train_dialogs: list[Dialog],
    valid_dialogs: list[Dialog],
    cfg: TrainConfig,
) -> list[dict]:
    """Train every head of the model in place; returns the epoch log."""
    if not train_dialogs:
        raise ValueError("empty training set")
    mode = model.mode
    train_examples: list[TrainingExample] = []
    for d in train_dialogs:
        train_examples.extend(decompose(d, model.ontology, mode))
    valid_examples: list[TrainingExample] = []
    for d in valid_dialogs:
        valid_examples.extend(decompose(d, model.ontology, mode))

    def select(kind, slot):
        return lambda pool: [e for e in pool if e.kind == kind and e.slot == slot]

    jobs = []
    for slot in model.ontology.informable:
        jobs.append((f"vst/{slot}", model.vst[slot], VST_KIND, select(VST_KIND, slot),
                     cfg.vst_batch, cfg.vst_ratios, mode.n_value_labels))
        jobs.append((f"sst/{slot}", model.sst[slot], SST_KIND, select(SST_KIND, slot),
                     cfg.sst_batch, cfg.sst_ratios, 2))
    for slot in model.ontology.requestable:
        jobs.append((f"req/{slot}", model.req[slot], REQ_KIND, select(REQ_KIND, slot),
                     cfg.req_batch, cfg.req_ratios, 2))

    log: list[dict] = []
    for job_index, (name, head, kind, pick, batch_size, ratios, n_classes) in enumerate(jobs):
        pool = pick(train_examples)
        if not pool:
            log.append({"head": name, "epoch": 0, "note": "no training examples"})
            continue
        data = _prepare(model, kind, pool)
        valid_data = _prepare(model, kind, pick(valid_examples))
        rng = np.random.default_rng([cfg.seed, job_index])
        sampler = SamplerConfig(batch_size=batch_size, ratios=tuple(ratios))
        batches_per_epoch = max(1, math.ceil(data.size / batch_size))
        adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        best_loss = math.inf
        best_arrays = None
        waited = 0
        for epoch in range(1, cfg.max_epochs + 1):
            epoch_losses = []
            for _ in range(batches_per_epoch):
                idx = sample_batch_indices(data.gold, sampler, rng, n_classes)
                batch = data.slice(idx)
                logits, pt = head_graph(
                    head,
                    batch,
                    training=True,
                    rng=rng,
                    dropout_rate=cfg.dropout,
                    ablate_match=mode.ablate_value_specific,
                )
                loss, _ = ad.softmax_cross_entropy(logits, batch.gold)
                ad.backward(loss)
                epoch_losses.append(float(loss.data))
                names_arrays = named_params(head)
                grads = [
                    pt[n].grad if pt[n].grad is not None else np.zeros_like(a)
                    for n, a in names_arrays
                ]
                grads = clip_global_norm(grads, cfg.clip_norm)
                updated = adam_step(adam, [a for _, a in names_arrays], grads)
                set_params(head, updated)
            monitored = (
                _mean_loss(model, head, valid_data)
                if valid_data is not None
                else float(np.mean(epoch_losses))
            )
            log.append(
                {
                    "head": name,
                    "epoch": epoch,
                    "train_loss": float(np.mean(epoch_losses)),
                    "val_loss": monitored,
                }
            )
            if monitored < best_loss:
                best_loss = monitored
                best_arrays = [a.copy() for _, a in named_params(head)]
                waited = 0
            else:
                waited += 1
                if waited >= cfg.patience:
                    break
        if best_arrays is not None:
            set_params(head, best_arrays)
    return log


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    """Exact-match accuracies. `turn_goal` is None when turn-level
    predictions or gold are unavailable (accumulated-label training)."""

    turn_goal: float | None
    joint_goal: float
    request: float
    per_slot: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "turn_goal": self.turn_goal,
            "joint_goal": self.joint_goal,
            "request": self.request,
            "per_slot": dict(self.per_slot),
        }


def _informable_match(a: StateAssignment, b: StateAssignment, slots) -> bool:
    return all(
        a.slot_labels[s] is b.slot_labels[s] and a.value_labels[s] == b.value_labels[s]
        for s in slots
    )


def gold_accumulated(dialog: Dialog, ontology) -> list[StateAssignment]:
    """Accumulated gold per turn, derived from turn-level gold where the
    corpus does not store it."""
    out = []
    running = all_not_mentioned(ontology)
    for index, turn in enumerate(dialog.turns):
        if turn.gold_state is not None:
            running = turn.gold_state
        elif turn.gold_turn is not None:
            running = accumulate_turn(running, turn.gold_turn)
        else:
            raise DataError(f"dialog {dialog.id!r} turn {index}: no gold labels")
        out.append(running)
    return out


def score_predictions(
    dialogs: list[Dialog],
    predictions: list[tuple[list[StateAssignment], list[StateAssignment]]],
    ontology,
    compare_turn_level: bool = True,
) -> Metrics:
    """Exact-match scores of (turn_preds, accumulated_preds) pairs
    against gold; predictions align with the dialog list."""
    slots = list(ontology.informable)
    turn_hits = turn_total = 0
    joint_hits = joint_total = 0
    request_hits = request_total = 0
    slot_hits = {s: 0 for s in slots}
    for dialog, (turn_preds, acc_preds) in zip(dialogs, predictions):
        gold_acc = gold_accumulated(dialog, ontology)
        for i, turn in enumerate(dialog.turns):
            if compare_turn_level and turn.gold_turn is not None:
                turn_total += 1
                if _informable_match(turn_preds[i], turn.gold_turn, slots):
                    turn_hits += 1
            joint_total += 1
            if _informable_match(acc_preds[i], gold_acc[i], slots):
                joint_hits += 1
            for s in slots:
                if (
                    acc_preds[i].slot_labels[s] is gold_acc[i].slot_labels[s]
                    and acc_preds[i].value_labels[s] == gold_acc[i].value_labels[s]
                ):
                    slot_hits[s] += 1
            request_total += 1
            if acc_preds[i].requested == turn.requested_gold:
                request_hits += 1
    if joint_total == 0:
        raise DataError("no turns to evaluate")
    return Metrics(
        turn_goal=(turn_hits / turn_total) if turn_total else None,
        joint_goal=joint_hits / joint_total,
        request=request_hits / request_total,
        per_slot={s: slot_hits[s] / joint_total for s in slots},
    )


def evaluate(
    model: TrackerModel, dialogs: list[Dialog], use_asr: bool = True
) -> Metrics:
    """Track every dialog and score against gold."""
    predictions = []
    for dialog in dialogs:
        turns = [
            TurnInput(
                user=t.user,
                system_act=t.system_acts,
                asr=t.asr if use_asr else None,
            )
            for t in dialog.turns
        ]
        predictions.append(track_dialog_states(model, turns))
    return score_predictions(
        dialogs, predictions, model.ontology,
        compare_turn_level=not model.mode.use_prev_belief,
    )
