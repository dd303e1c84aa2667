"""Differentiable building blocks for the tracker heads.

A head turns a token feature matrix into class probabilities: three
banks of convolution filters (window sizes 1..3) feed ReLU and
max-pooling, the pooled summary is gated against the previous-turn
belief and replicated into six act-conditioned blocks, and a
one-hidden-layer network with a sigmoid hidden layer produces the
output. Everything runs in float64; training goes through the tape in
`autodiff`, public single-example operations wrap the same graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward  # noqa: F401  (backward re-exported)
from .errors import GradCheckError, ShapeError
from .features import DotMatchParams

WINDOW_SIZES = (1, 2, 3)
MIN_ROWS = WINDOW_SIZES[-1]


@dataclass
class CnnParams:
    """One filter bank per window size; all banks share the filter count."""

    filters: dict[int, np.ndarray]  # window n -> (n * input_cols, num_filters)
    biases: dict[int, np.ndarray]  # window n -> (num_filters,)

    @property
    def num_filters(self) -> int:
        return self.filters[WINDOW_SIZES[0]].shape[1]

    @property
    def input_cols(self) -> int:
        return self.filters[WINDOW_SIZES[0]].shape[0]

    @property
    def output_dim(self) -> int:
        return len(WINDOW_SIZES) * self.num_filters


@dataclass
class MlpParams:
    """Fully connected net with one hidden layer the same size as its
    input; the output head is sigmoid or softmax."""

    hidden_w: np.ndarray
    hidden_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    head: str  # "sigmoid" | "softmax"

    @property
    def n_in(self) -> int:
        return self.hidden_w.shape[0]

    @property
    def n_out(self) -> int:
        return self.out_w.shape[1]


@dataclass
class HeadParams:
    """Every trainable array of one tracker head."""

    cnn: CnnParams
    gate: MlpParams | None  # present only when a belief input is gated in
    out: MlpParams
    dot_weight: np.ndarray  # shape (), calibrates the embedding dot products
    dot_bias: np.ndarray  # shape ()

    def dot_params(self) -> DotMatchParams:
        return DotMatchParams(float(self.dot_weight), float(self.dot_bias))


def _xavier(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_cnn(rng: np.random.Generator, input_cols: int, num_filters: int) -> CnnParams:
    filters = {n: _xavier(rng, (n * input_cols, num_filters)) for n in WINDOW_SIZES}
    biases = {n: np.zeros(num_filters) for n in WINDOW_SIZES}
    return CnnParams(filters=filters, biases=biases)


def init_mlp(rng: np.random.Generator, n_in: int, n_out: int, head: str) -> MlpParams:
    return MlpParams(
        hidden_w=_xavier(rng, (n_in, n_in)),
        hidden_b=np.zeros(n_in),
        out_w=_xavier(rng, (n_in, n_out)),
        out_b=np.zeros(n_out),
        head=head,
    )


def init_head(
    rng: np.random.Generator,
    embed_dim: int,
    num_filters: int,
    n_classes: int,
    belief_dim: int | None,
    use_acts: bool,
) -> HeadParams:
    """Random head. `belief_dim` None drops the gate path entirely;
    `use_acts` False reduces the output input to the bare CNN summary."""
    cnn = init_cnn(rng, embed_dim + 2, num_filters)
    summary = cnn.output_dim
    gate = None
    n_in = summary
    if use_acts:
        n_in = 6 * summary
    if belief_dim is not None:
        gate = init_mlp(rng, summary, belief_dim, head="sigmoid")
        n_in += belief_dim
    out = init_mlp(rng, n_in, n_classes, head="softmax")
    return HeadParams(
        cnn=cnn,
        gate=gate,
        out=out,
        dot_weight=np.asarray(1.0),
        dot_bias=np.asarray(0.0),
    )


def named_params(head: HeadParams) -> list[tuple[str, np.ndarray]]:
    """Trainable arrays in the documented fixed order (also the model
    file order): conv banks by window size, gate net, output net, dot
    calibration scalars."""
    out: list[tuple[str, np.ndarray]] = []
    for n in WINDOW_SIZES:
        out.append((f"conv{n}_w", head.cnn.filters[n]))
        out.append((f"conv{n}_b", head.cnn.biases[n]))
    if head.gate is not None:
        out.append(("gate_hidden_w", head.gate.hidden_w))
        out.append(("gate_hidden_b", head.gate.hidden_b))
        out.append(("gate_out_w", head.gate.out_w))
        out.append(("gate_out_b", head.gate.out_b))
    out.append(("out_hidden_w", head.out.hidden_w))
    out.append(("out_hidden_b", head.out.hidden_b))
    out.append(("out_out_w", head.out.out_w))
    out.append(("out_out_b", head.out.out_b))
    out.append(("dot_weight", head.dot_weight))
    out.append(("dot_bias", head.dot_bias))
    return out


def set_params(head: HeadParams, arrays: list[np.ndarray]) -> None:
    """Write arrays back in `named_params` order."""
    names = [name for name, _ in named_params(head)]
    if len(arrays) != len(names):
        raise ShapeError(f"expected {len(names)} arrays, got {len(arrays)}")
    by_name = dict(zip(names, arrays))
    for n in WINDOW_SIZES:
        head.cnn.filters[n] = by_name[f"conv{n}_w"]
        head.cnn.biases[n] = by_name[f"conv{n}_b"]
    if head.gate is not None:
        head.gate.hidden_w = by_name["gate_hidden_w"]
        head.gate.hidden_b = by_name["gate_hidden_b"]
        head.gate.out_w = by_name["gate_out_w"]
        head.gate.out_b = by_name["gate_out_b"]
    head.out.hidden_w = by_name["out_hidden_w"]
    head.out.hidden_b = by_name["out_hidden_b"]
    head.out.out_w = by_name["out_out_w"]
    head.out.out_b = by_name["out_out_b"]
    head.dot_weight = by_name["dot_weight"]
    head.dot_bias = by_name["dot_bias"]


@dataclass
class HeadBatch:
    """Constant inputs for one batched head evaluation.

    All token arrays are padded to a common row count R >= 3; `rows`
    holds each example's effective matrix length max(k_u, 3) and
    `token_mask` marks real tokens (the dot-match signal is zeroed
    outside it). `acts` and `belief` are None for heads without those
    inputs; `gold` is None at inference.
    """

    emb: np.ndarray  # (B, R, d)
    dot_scores: np.ndarray  # (B, R)
    str_match: np.ndarray  # (B, R)
    token_mask: np.ndarray  # (B, R)
    rows: np.ndarray  # (B,) int
    acts: np.ndarray | None = None  # (B, 6)
    belief: np.ndarray | None = None  # (B, m)
    gold: np.ndarray | None = None  # (B,) int

    @property
    def size(self) -> int:
        return self.emb.shape[0]


def window_position_mask(rows: np.ndarray, total: int, n: int) -> np.ndarray:
    """(B, P) validity of convolution window positions for window size n."""
    positions = np.arange(total - n + 1)
    return positions[None, :] < (rows[:, None] - n + 1)


def _cnn_graph(
    pt: dict[str, Tensor], matrix: Tensor, rows: np.ndarray
) -> Tensor:
    total = matrix.shape[1]
    pooled = []
    for n in WINDOW_SIZES:
        windows = ad.window_stack(matrix, n)
        conv = ad.add(ad.matmul(windows, pt[f"conv{n}_w"]), pt[f"conv{n}_b"])
        pooled.append(ad.masked_max(ad.relu(conv), window_position_mask(rows, total, n)))
    return ad.concat(pooled, axis=-1)


def _mlp_hidden_graph(
    pt: dict[str, Tensor],
    prefix: str,
    x: Tensor,
    training: bool,
    rng: np.random.Generator | None,
    rate: float,
) -> Tensor:
    hidden = ad.sigmoid(ad.add(ad.matmul(x, pt[f"{prefix}_hidden_w"]), pt[f"{prefix}_hidden_b"]))
    if training and rate > 0.0:
        hidden = ad.mul(hidden, ad.constant(dropout_mask(hidden.shape, rate, rng)))
    return hidden


def head_graph(
    head: HeadParams,
    batch: HeadBatch,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
    ablate_match: bool = False,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Build the full forward graph for a batch; returns the output
    logits and the parameter tensors keyed by their documented names.

    With `ablate_match` the two match columns are zero constants, so the
    matrix degrades to plain word embeddings at unchanged width.
    """
    wrap = ad.parameter if training else ad.constant
    pt = {name: wrap(arr) for name, arr in named_params(head)}
    B, R = batch.dot_scores.shape
    if ablate_match:
        xdot = ad.constant(np.zeros((B, R)))
        xstr = ad.constant(np.zeros((B, R)))
    else:
        raw = ad.add(
            ad.mul(pt["dot_weight"], ad.constant(batch.dot_scores)), pt["dot_bias"]
        )
        xdot = ad.mul(ad.sigmoid(raw), ad.constant(batch.token_mask))
        xstr = ad.constant(batch.str_match)
    matrix = ad.concat(
        [ad.constant(batch.emb), ad.unsqueeze_last(xdot), ad.unsqueeze_last(xstr)],
        axis=2,
    )
    summary = _cnn_graph(pt, matrix, batch.rows)
    if training and dropout_rate > 0.0:
        summary = ad.mul(
            summary, ad.constant(dropout_mask(summary.shape, dropout_rate, rng))
        )
    parts: list[Tensor] = []
    if batch.belief is not None:
        gate_hidden = _mlp_hidden_graph(pt, "gate", summary, training, rng, dropout_rate)
        gate = ad.sigmoid(ad.add(ad.matmul(gate_hidden, pt["gate_out_w"]), pt["gate_out_b"]))
        parts.append(ad.mul(ad.constant(batch.belief), gate))
    if batch.acts is not None:
        for i in range(6):
            parts.append(ad.mul(ad.constant(batch.acts[:, i : i + 1]), summary))
    stacked = ad.concat(parts, axis=-1) if parts else summary
    hidden = _mlp_hidden_graph(pt, "out", stacked, training, rng, dropout_rate)
    logits = ad.add(ad.matmul(hidden, pt["out_out_w"]), pt["out_out_b"])
    return logits, pt


# ---------------------------------------------------------------------------
# public single-example operations


def cnn_extract(params: CnnParams, matrix: np.ndarray) -> np.ndarray:
    """Convolve one (r, cols) matrix with every filter bank, ReLU,
    max-pool over positions, and concatenate in window-size order."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != params.input_cols:
        raise ShapeError(
            f"expected (r, {params.input_cols}) matrix, got {matrix.shape}"
        )
    if matrix.shape[0] < MIN_ROWS:
        raise ShapeError(f"matrix needs at least {MIN_ROWS} rows")
    pt = {name: ad.constant(arr) for name, arr in named_params_cnn(params)}
    rows = np.array([matrix.shape[0]])
    out = _cnn_graph(pt, ad.constant(matrix[None]), rows)
    return out.data[0]


def named_params_cnn(params: CnnParams) -> list[tuple[str, np.ndarray]]:
    out = []
    for n in WINDOW_SIZES:
        out.append((f"conv{n}_w", params.filters[n]))
        out.append((f"conv{n}_b", params.biases[n]))
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_apply(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """One-hidden-layer network: sigmoid hidden layer, then the head."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_in:
        raise ShapeError(f"expected input of size {params.n_in}, got {x.shape}")
    hidden = _stable_sigmoid(x @ params.hidden_w + params.hidden_b)
    logits = hidden @ params.out_w + params.out_b
    if params.head == "softmax":
        return ad.softmax(logits)
    return _stable_sigmoid(logits)


def assemble_vst_input(
    belief_vec: np.ndarray | None,
    act_vec: np.ndarray,
    summary: np.ndarray,
    gate_mlp: MlpParams | None,
) -> np.ndarray:
    """Concatenate the gated belief with the six act-conditioned copies
    of the CNN summary. Without a belief input only the copies remain."""
    blocks = [act_vec[i] * summary for i in range(6)]
    if belief_vec is None:
        return np.concatenate(blocks)
    gate = mlp_apply(gate_mlp, summary)
    return np.concatenate([belief_vec * gate] + blocks)


def cross_entropy(pred: np.ndarray, gold: int) -> float:
    """Negative log probability of the gold class, clamped away from 0."""
    return -math.log(max(float(pred[gold]), 1e-12))


def dropout_mask(
    shape: tuple[int, ...], rate: float, rng: np.random.Generator
) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(
    x: np.ndarray,
    rate: float = 0.5,
    rng: np.random.Generator | None = None,
    training: bool = True,
) -> np.ndarray:
    """Inverted dropout: zero elements with probability `rate` and scale
    survivors so the expectation is unchanged; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """Moment estimates and step counter for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
) -> list[np.ndarray]:
    """One bias-corrected update; returns new arrays, advances the state."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(state.m):
        raise ShapeError("parameter count changed between steps")
    state.t += 1
    correct1 = 1.0 - state.beta1**state.t
    correct2 = 1.0 - state.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / correct1
        v_hat = state.v[i] / correct2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def clip_global_norm(
    grads: list[np.ndarray], max_norm: float = 5.0
) -> list[np.ndarray]:
    """Scale all gradients by max_norm/norm when the joint L2 norm
    exceeds max_norm; otherwise pass them through unchanged."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return [g * scale for g in grads]


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    """Per-parameter-group relative disagreement between analytic and
    central-difference gradients: the largest element-wise difference in
    a group, normalized by the group's largest gradient magnitude (with
    a small floor so all-zero groups compare cleanly)."""

    group_errors: dict[str, float]
    threshold: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.group_errors.values())

    @property
    def ok(self) -> bool:
        return self.max_error < self.threshold


def _gradcheck_batch(rng: np.random.Generator, d: int, m: int, n_classes: int) -> HeadBatch:
    # one example per act indicator so every act block carries gradient
    B, R = 7, 5
    lengths = np.array([5, 1, 2, 3, 4, 5, 2])
    rows = np.maximum(lengths, MIN_ROWS)
    token_mask = (np.arange(R)[None, :] < lengths[:, None]).astype(float)
    emb = rng.standard_normal((B, R, d)) * token_mask[:, :, None]
    dots = rng.standard_normal((B, R)) * token_mask
    strm = (rng.random((B, R)) < 0.3).astype(float) * token_mask
    acts = np.zeros((B, 6))
    for i in range(6):
        acts[i, i] = 1.0
    acts[6, 0] = acts[6, 4] = 1.0
    belief = rng.random((B, m)) + 0.1
    belief /= belief.sum(axis=1, keepdims=True)
    gold = rng.integers(0, n_classes, size=B)
    return HeadBatch(
        emb=emb,
        dot_scores=dots,
        str_match=strm,
        token_mask=token_mask,
        rows=rows,
        acts=acts,
        belief=belief,
        gold=gold,
    )


def gradient_check(
    seed: int,
    d: int = 10,
    num_filters: int = 4,
    n_classes: int = 3,
    h: float = 1e-5,
    threshold: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of a full randomly initialized head
    against central finite differences, group by group."""
    rng = np.random.default_rng(seed)
    head = init_head(rng, d, num_filters, n_classes, belief_dim=3, use_acts=True)
    # zero biases put the all-zero padding windows exactly on the ReLU
    # kink, where central differences are ill-posed; check away from it
    for n in WINDOW_SIZES:
        head.cnn.biases[n] = rng.uniform(-0.1, 0.1, size=num_filters)
    batch = _gradcheck_batch(rng, d, 3, n_classes)

    def loss_value() -> float:
        logits, _ = head_graph(head, batch, training=False)
        loss, _ = ad.softmax_cross_entropy(logits, batch.gold)
        return float(loss.data)

    logits, pt = head_graph(head, batch, training=True, dropout_rate=0.0)
    loss, _ = ad.softmax_cross_entropy(logits, batch.gold)
    backward(loss)
    analytic = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in pt.items()
    }

    errors: dict[str, float] = {}
    for name, arr in named_params(head):
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        numeric = np.zeros_like(a_flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        scale = max(np.abs(a_flat).max(), np.abs(numeric).max(), 1e-8)
        errors[name] = float(np.abs(a_flat - numeric).max() / scale)
    return GradCheckReport(group_errors=errors, threshold=threshold)


def require_gradients_ok(seeds: list[int], **kwargs) -> list[GradCheckReport]:
    """Run the check for several seeds; raise if any group fails."""
    reports = []
    for seed in seeds:
        report = gradient_check(seed, **kwargs)
        reports.append(report)
        if not report.ok:
            bad = {k: v for k, v in report.group_errors.items() if v >= report.threshold}
            raise GradCheckError(f"gradient check failed for seed {seed}: {bad}")
    return reports
