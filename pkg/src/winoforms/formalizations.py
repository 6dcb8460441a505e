"""The six task formalizations: inputs, scoring heads, losses, decision rules.

Each kind fixes four axes: which embeddings feed the head ([MASK] positions,
[CLS], or [CLS]+span means), the loss family (softmax cross-entropy over
options vs per-sequence sigmoid BCE), whether evaluation is multiple-choice,
and the label type (index over candidates vs binary for the query).

    kind                 head input          loss                 MC    label
    mc-mlm               [MASK] log-probs    softmax CE           yes   index
    mc-sent              [CLS]               softmax CE           yes   index
    mc-sent-nosoftmax    [CLS]               per-option BCE sum   yes   binary
    mc-sent-nopairloss   [CLS]               query-only BCE       yes   binary
    p-sent               [CLS]               query-only BCE       no    binary
    p-span               [CLS]+span means    query-only BCE       no    binary
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import SchemaExample, first_occurrence_span
from .encoder import Encoder
from .gradcore import Tape, Tensor
from .textkit import CLS_ID, MASK_ID, SEP_ID, UNK_ID, Vocabulary, tokenize

PROB_FLOOR = 1e-7  # probabilities are clamped to [floor, 1 - floor] before log


class FormalizationKind(str, Enum):
    MC_MLM = "mc-mlm"
    MC_SENT = "mc-sent"
    MC_SENT_NOSOFTMAX = "mc-sent-nosoftmax"
    MC_SENT_NOPAIRLOSS = "mc-sent-nopairloss"
    P_SENT = "p-sent"
    P_SPAN = "p-span"

    @property
    def is_mc(self) -> bool:
        """Multiple-choice evaluation: the query wins iff its score is highest."""
        return self not in (FormalizationKind.P_SENT, FormalizationKind.P_SPAN)

    @property
    def label_type(self) -> str:
        if self in (FormalizationKind.MC_MLM, FormalizationKind.MC_SENT):
            return "index"
        return "binary"

    @property
    def trains_grouped(self) -> bool:
        """Whether one training step consumes all options of an example."""
        return self in (FormalizationKind.MC_MLM, FormalizationKind.MC_SENT,
                        FormalizationKind.MC_SENT_NOSOFTMAX)

    @property
    def uses_softmax_loss(self) -> bool:
        return self in (FormalizationKind.MC_MLM, FormalizationKind.MC_SENT)


TABLE_ORDER = (
    FormalizationKind.MC_MLM,
    FormalizationKind.MC_SENT,
    FormalizationKind.MC_SENT_NOSOFTMAX,
    FormalizationKind.MC_SENT_NOPAIRLOSS,
    FormalizationKind.P_SENT,
    FormalizationKind.P_SPAN,
)


@dataclass(frozen=True)
class FormalizedBundle:
    """Token-level inputs for one example under one kind.

    Grouped bundles hold one sequence per option (P-Span: one shared sequence
    with per-option spans); pointwise bundles hold the query's sequence only.
    Spans are in sequence coordinates, i.e. shifted by one for [CLS].
    """

    kind: FormalizationKind
    sequences: tuple[tuple[int, ...], ...]
    grouped: bool
    mask_positions: tuple[tuple[int, ...], ...] = ()
    mask_targets: tuple[tuple[int, ...], ...] = ()
    span_pairs: tuple[tuple[tuple[int, int], tuple[int, int]], ...] = ()
    label: int | bool | None = None
    query_index: int | None = None


@dataclass(frozen=True)
class ScoreVector:
    """Either per-option scores (grouped) or one probability (pointwise)."""

    option_scores: tuple[float, ...] | None = None
    probability: float | None = None
    query_index: int | None = None

    def __post_init__(self):
        if (self.option_scores is None) == (self.probability is None):
            raise ValueError("exactly one of option_scores / probability must be set")
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


@dataclass
class TaskHead:
    """Trainable head parameters; empty for mc-mlm, which reuses the MLM head."""

    kind: FormalizationKind
    params: dict[str, np.ndarray]


# -- input construction ---------------------------------------------------------


def _encode_strict(vocab: Vocabulary, words: list[str], what: str) -> list[int]:
    ids = vocab.encode(words)
    if UNK_ID in ids:
        bad = words[ids.index(UNK_ID)]
        raise ValueError(f"{what} token {bad!r} is out of vocabulary")
    return ids


def _option_sequence(kind, vocab, tokens, pron_span, option: str):
    """One [CLS] ... [SEP] sequence with the pronoun site rewritten."""
    ps, pe = pron_span
    pre = vocab.encode(list(tokens[:ps]))
    post = vocab.encode(list(tokens[pe:]))
    opt_ids = _encode_strict(vocab, tokenize(option), "option")
    if not opt_ids:
        raise ValueError("option text has no tokens")
    if kind is FormalizationKind.MC_MLM:
        seq = [CLS_ID, *pre, *([MASK_ID] * len(opt_ids)), *post, SEP_ID]
        positions = tuple(range(1 + len(pre), 1 + len(pre) + len(opt_ids)))
        return tuple(seq), positions, tuple(opt_ids)
    # sentence kinds: option takes the pronoun's place, marked by an extra [SEP]
    seq = [CLS_ID, *pre, *opt_ids, SEP_ID, *post, SEP_ID]
    return tuple(seq), (), ()


def build_bundle(kind: FormalizationKind, example: SchemaExample,
                 vocab: Vocabulary, grouped: bool | None = None) -> FormalizedBundle:
    """Formalize one example. `grouped` defaults to the kind's training shape;
    pass True to score all candidates of any kind (multiple-choice evaluation).
    """
    if grouped is None:
        grouped = kind.trains_grouped

    if kind is FormalizationKind.P_SPAN:
        seq = (CLS_ID, *vocab.encode(list(example.tokens)), SEP_ID)
        ps, pe = example.pron_span
        pron = (ps + 1, pe + 1)
        options = example.candidates if grouped else (_require_query(example),)
        if grouped and len(options) < 2:
            raise ValueError("grouped bundle needs at least two candidates")
        pairs = []
        for option in options:
            ns, ne = first_occurrence_span(example.tokens, option)
            pairs.append((pron, (ns + 1, ne + 1)))
        return FormalizedBundle(
            kind=kind, sequences=(seq,), grouped=grouped,
            span_pairs=tuple(pairs),
            label=example.gold_index if grouped else example.gold_binary,
            query_index=_query_index(example),
        )

    if grouped:
        if len(example.candidates) < 2:
            raise ValueError("grouped bundle needs at least two candidates")
        seqs, positions, targets = [], [], []
        for option in example.candidates:
            seq, pos, tgt = _option_sequence(kind, vocab, example.tokens,
                                             example.pron_span, option)
            seqs.append(seq)
            positions.append(pos)
            targets.append(tgt)
        return FormalizedBundle(
            kind=kind, sequences=tuple(seqs), grouped=True,
            mask_positions=tuple(positions), mask_targets=tuple(targets),
            label=example.gold_index, query_index=_query_index(example),
        )

    query = _require_query(example)
    seq, pos, tgt = _option_sequence(kind, vocab, example.tokens,
                                     example.pron_span, query)
    return FormalizedBundle(
        kind=kind, sequences=(seq,), grouped=False,
        mask_positions=(pos,) if pos else (), mask_targets=(tgt,) if tgt else (),
        label=example.gold_binary, query_index=_query_index(example),
    )


def _require_query(example: SchemaExample) -> str:
    if example.query is None:
        raise ValueError("a pointwise bundle needs the example's query NP")
    return example.query


def _query_index(example: SchemaExample) -> int | None:
    if example.query is not None and example.query in example.candidates:
        return example.candidates.index(example.query)
    return None


# -- scoring --------------------------------------------------------------------


def geometric_logscore(token_logprobs) -> float:
    """log of the geometric mean of probabilities = mean of log-probabilities."""
    arr = np.asarray(token_logprobs, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("geometric log-score of no tokens")
    return float(arr.mean())


def init_head(kind: FormalizationKind, encoder: Encoder, seed: int) -> TaskHead:
    """mc-mlm reuses the pretrained tied MLM head; the rest get a fresh linear map."""
    if kind is FormalizationKind.MC_MLM:
        if "mlm_b" not in encoder.params or "tok_emb" not in encoder.params:
            raise ValueError("checkpoint has no MLM head to reuse")
        return TaskHead(kind, {})
    d = encoder.config.d_model
    width = 3 * d if kind is FormalizationKind.P_SPAN else d
    rng = np.random.default_rng(seed)
    return TaskHead(kind, {
        "head_w": rng.normal(0.0, 0.02, size=(width, 1)).astype(np.float32),
        "head_b": np.zeros(1, dtype=np.float32),
    })


def model_leaves(tape: Tape, encoder: Encoder, head: TaskHead) -> dict[str, Tensor]:
    leaves = encoder.leaf_params(tape)
    for name, arr in head.params.items():
        leaves[name] = tape.leaf(arr, name=name)
    return leaves


def _span_mean(tape: Tape, hidden: Tensor, span: tuple[int, int]) -> Tensor:
    """Mean of hidden rows [s, e) -> (1, d)."""
    s, e = span
    rows = tape.take_rows(hidden, np.arange(s, e))
    ones = tape.leaf(np.full((1, e - s), 1.0 / (e - s)))
    return tape.matmul(ones, rows)


def option_score_tensors(tape: Tape, encoder: Encoder, leaves: dict[str, Tensor],
                         bundle: FormalizedBundle, train: bool = False,
                         rng: np.random.Generator | None = None) -> list[Tensor]:
    """One (1,)-shaped score per option: geometric log-score for mc-mlm,
    head logit for everything else."""
    kind = bundle.kind
    if kind is FormalizationKind.MC_MLM:
        out = []
        for seq, pos, tgt in zip(bundle.sequences, bundle.mask_positions,
                                 bundle.mask_targets):
            if max(pos) >= len(seq):
                raise IndexError("mask position outside the sequence")
            hidden = encoder.encode(tape, leaves, seq, train=train, rng=rng)
            logp = tape.log_softmax(encoder.mlm_logits(tape, leaves, hidden))
            picked = tape.pick(logp, np.asarray(pos), np.asarray(tgt))
            out.append(tape.flatten(tape.reduce_mean(picked)))
        return out

    def head_logit(features: Tensor) -> Tensor:
        logit = tape.add(tape.matmul(features, leaves["head_w"]), leaves["head_b"])
        return tape.flatten(logit)

    if kind is FormalizationKind.P_SPAN:
        hidden = encoder.encode(tape, leaves, bundle.sequences[0], train=train, rng=rng)
        seq_len = len(bundle.sequences[0])
        out = []
        for pron, np_span in bundle.span_pairs:
            if pron[1] > seq_len or np_span[1] > seq_len:
                raise IndexError("span outside the sequence")
            features = tape.concat(
                [tape.take_rows(hidden, [0]),
                 _span_mean(tape, hidden, pron),
                 _span_mean(tape, hidden, np_span)], axis=1)
            out.append(head_logit(features))
        return out

    out = []
    for seq in bundle.sequences:
        hidden = encoder.encode(tape, leaves, seq, train=train, rng=rng)
        out.append(head_logit(tape.take_rows(hidden, [0])))
    return out


def score(kind: FormalizationKind, encoder: Encoder, head: TaskHead,
          bundle: FormalizedBundle) -> ScoreVector:
    """Evaluation-mode scores: per-option vector for grouped bundles, a single
    sigmoid probability for pointwise ones."""
    if bundle.kind is not kind:
        raise ValueError("bundle was built for a different kind")
    tape = Tape(np.float32)
    leaves = model_leaves(tape, encoder, head)
    tensors = option_score_tensors(tape, encoder, leaves, bundle)
    values = [float(t.data[0]) for t in tensors]
    if bundle.grouped:
        return ScoreVector(option_scores=tuple(values), query_index=bundle.query_index)
    p = 1.0 / (1.0 + np.exp(-values[0]))
    return ScoreVector(probability=float(p), query_index=bundle.query_index)


# -- losses -----------------------------------------------------------------------


def _check_binary(label) -> int:
    if isinstance(label, (bool, np.bool_)) or label in (0, 1):
        return int(label)
    raise ValueError(f"binary label must be 0/1, got {label!r}")


def loss(kind: FormalizationKind, scores: ScoreVector, label) -> float:
    """Closed-form loss on plain numbers (the training loss is built on a tape;
    the two are checked against each other in the test suite)."""
    if kind.uses_softmax_loss:
        s = np.asarray(scores.option_scores, dtype=np.float64)
        y = int(label)
        if not 0 <= y < s.size:
            raise ValueError(f"gold index {y} outside {s.size} options")
        z = np.exp(s - s.max())
        p = np.clip(z / z.sum(), PROB_FLOOR, 1.0 - PROB_FLOOR)
        return float(-np.log(p[y]))
    if kind is FormalizationKind.MC_SENT_NOSOFTMAX:
        s = np.asarray(scores.option_scores, dtype=np.float64)
        y = int(label)
        if not 0 <= y < s.size:
            raise ValueError(f"gold index {y} outside {s.size} options")
        p = np.clip(1.0 / (1.0 + np.exp(-s)), PROB_FLOOR, 1.0 - PROB_FLOOR)
        onehot = np.zeros(s.size)
        onehot[y] = 1.0
        return float(-(onehot * np.log(p) + (1 - onehot) * np.log(1 - p)).sum())
    y = _check_binary(label)
    p = np.clip(float(scores.probability), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(-(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def bundle_loss_on_tape(tape: Tape, encoder: Encoder, leaves: dict[str, Tensor],
                        bundle: FormalizedBundle, train: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Differentiable loss for one bundle, per the kind's loss family."""
    kind = bundle.kind
    tensors = option_score_tensors(tape, encoder, leaves, bundle, train=train, rng=rng)

    def log_sigmoid_prob(t: Tensor, positive: bool) -> Tensor:
        # log P(True|s) when positive else log P(False|s) = log sigmoid(-s)
        z = t if positive else tape.scale(t, -1.0)
        p = tape.clip(tape.sigmoid(z), PROB_FLOOR, 1.0 - PROB_FLOOR)
        return tape.log(p)

    if kind.uses_softmax_loss:
        y = int(bundle.label)
        scores_vec = tape.concat(tensors, axis=0)
        logp = tape.log_softmax(scores_vec)
        return tape.scale(tape.reduce_mean(tape.take_rows(logp, [y])), -1.0)

    if kind is FormalizationKind.MC_SENT_NOSOFTMAX:
        y = int(bundle.label)
        n = len(tensors)
        if not 0 <= y < n:
            raise ValueError(f"gold index {y} outside {n} options")
        terms = [log_sigmoid_prob(t, positive=(i == y)) for i, t in enumerate(tensors)]
        return tape.scale(tape.reduce_mean(tape.concat(terms, axis=0)), -float(n))

    y = _check_binary(bundle.label)
    return tape.scale(tape.reduce_mean(log_sigmoid_prob(tensors[0], positive=bool(y))), -1.0)


# -- decisions ---------------------------------------------------------------------


def predict(kind: FormalizationKind, scores: ScoreVector, threshold: float = 0.5):
    """MC rule: argmax over options (ties to the lowest index); binary answer is
    whether the query holds the argmax. Pointwise rule: probability > threshold.
    """
    if scores.probability is not None:
        return bool(scores.probability > threshold)
    if not kind.is_mc:
        raise ValueError(f"{kind.value} does not evaluate by argmax over options")
    idx = int(np.argmax(scores.option_scores))
    if scores.query_index is None:
        return idx
    return bool(idx == scores.query_index)
