"""Fine-tuning loop: warmup/decay schedule, per-epoch validation, early stopping.

One call to `finetune` runs a single (formalization, hyperparameters, seed)
trial. Training is fully deterministic given the config: data order, dropout,
and head initialization all derive from the config seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import SchemaExample, dedupe_mc_groups, expand_pointwise
from .encoder import Encoder
from .formalizations import (
    FormalizationKind,
    TaskHead,
    build_bundle,
    bundle_loss_on_tape,
    init_head,
    model_leaves,
    predict,
    score,
)
from .gradcore import AdamWState, Tape, forward_backward, optimizer_step, save_checkpoint
from .textkit import Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one fine-tuning trial."""

    learning_rate: float = 1e-5
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    patience: int = 20
    warmup_frac: float = 0.06
    weight_decay: float = 0.001

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epoch limit must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "epochs": self.epochs,
            "batch_size": self.batch_size, "seed": self.seed,
            "patience": self.patience, "warmup_frac": self.warmup_frac,
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class RunRecord:
    """Outcome of one trial, serializable to a single JSON object."""

    kind: str
    config: TrainConfig
    val_accuracies: list = field(default_factory=list)
    best_val_acc: float = 0.0
    best_epoch: int = 0
    checkpoint: str | None = None
    wall_seconds: float = 0.0
    data_fingerprint: str = ""
    error: str | None = None

    def __post_init__(self):
        if self.val_accuracies and self.error is None:
            if self.best_val_acc != max(self.val_accuracies):
                raise ValueError("best accuracy must equal the max of the history")
            first = 1 + self.val_accuracies.index(max(self.val_accuracies))
            if self.best_epoch != first:
                raise ValueError("best epoch must index the first max")

    def to_json(self) -> str:
        payload = {
            "kind": self.kind, "config": self.config.to_dict(),
            "val_accuracies": list(self.val_accuracies),
            "best_val_acc": self.best_val_acc, "best_epoch": self.best_epoch,
            "checkpoint": self.checkpoint, "wall_seconds": self.wall_seconds,
            "data_fingerprint": self.data_fingerprint, "error": self.error,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        d = json.loads(line)
        return cls(
            kind=d["kind"], config=TrainConfig.from_dict(d["config"]),
            val_accuracies=list(d["val_accuracies"]),
            best_val_acc=d["best_val_acc"], best_epoch=d["best_epoch"],
            checkpoint=d.get("checkpoint"), wall_seconds=d["wall_seconds"],
            data_fingerprint=d.get("data_fingerprint", ""), error=d.get("error"),
        )


def lr_schedule(step: float, total_steps: int, base_lr: float,
                warmup_frac: float = 0.06) -> float:
    """Piecewise-linear rate: 0 at step 0, `base_lr` at the warmup boundary,
    0 at `total_steps`. `step` may be fractional (the loop samples midpoints).
    """
    if total_steps < 1:
        raise ValueError("schedule needs at least one step")
    if not 0.0 <= step <= total_steps:
        raise ValueError("step outside the schedule range")
    boundary = warmup_frac * total_steps
    if boundary > 0 and step < boundary:
        return base_lr * step / boundary
    return base_lr * (total_steps - step) / (total_steps - boundary)


def training_instances(kind: FormalizationKind,
                       examples: list) -> list[SchemaExample]:
    """Reshape raw examples into the kind's training form: grouped kinds see
    one multi-candidate example per sentence (binary labels are collapsed),
    pointwise kinds see one instance per (sentence, candidate).
    """
    if kind.trains_grouped:
        kept, _ = dedupe_mc_groups(list(examples))
        return kept
    out = []
    for ex in examples:
        out.extend(expand_pointwise(ex))
    return out


def data_fingerprint(examples: list) -> str:
    h = hashlib.sha256()
    for ex in examples:
        h.update(repr((ex.tokens, ex.pron_span, ex.candidates, ex.query,
                       ex.gold_binary, ex.gold_index)).encode())
    return h.hexdigest()[:16]


def decision_units(kind: FormalizationKind, vocab: Vocabulary,
                   examples: list) -> list:
    """Flatten examples into (bundle, gold) pairs, one per scored decision.
    Index-labeled examples give multiple-choice kinds one argmax decision and
    pointwise kinds one binary decision per duplicated instance; binary-labeled
    examples always give one binary decision (multiple-choice kinds answer it
    through the query-is-argmax rule).
    """
    units = []
    for ex in examples:
        if ex.gold_index is not None and not kind.is_mc:
            for inst in expand_pointwise(ex):
                units.append((build_bundle(kind, inst, vocab), inst.gold_binary))
            continue
        bundle = build_bundle(kind, ex, vocab, grouped=kind.is_mc)
        gold = ex.gold_index if ex.gold_index is not None else ex.gold_binary
        units.append((bundle, gold))
    return units


def evaluate(kind: FormalizationKind, encoder: Encoder, head: TaskHead,
             vocab: Vocabulary, examples: list) -> float:
    """Accuracy under the kind's decision rule over `decision_units`."""
    if not examples:
        raise ValueError("evaluation split is empty")
    correct = 0
    units = decision_units(kind, vocab, examples)
    for bundle, gold in units:
        pred = predict(kind, score(kind, encoder, head, bundle))
        correct += int(pred == gold)
    return correct / len(units)


def _snapshot(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def finetune(kind: FormalizationKind, encoder: Encoder, vocab: Vocabulary,
             train_examples: list, val_examples: list, config: TrainConfig,
             checkpoint_prefix: str | None = None):
    """Train one trial. Returns `(record, model, head)` where model/head carry
    the end-of-loop parameters; the record's checkpoint (when a prefix is
    given) stores the best-validation parameters instead.
    """
    if not train_examples:
        raise ValueError("training split is empty")
    if len(vocab) != encoder.config.vocab_size:
        raise ValueError("vocabulary size does not match the encoder")

    instances = training_instances(kind, list(train_examples))
    if not instances:
        raise ValueError("no usable training instances after preprocessing")
    bundles = [build_bundle(kind, inst, vocab) for inst in instances]

    model = encoder.clone()
    head = init_head(kind, model, seed=config.seed)
    params = {**model.params, **head.params}
    state = AdamWState(lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)

    n_batches = math.ceil(len(bundles) / config.batch_size)
    total_steps = config.epochs * n_batches

    start = time.perf_counter()
    val_accs: list[float] = []
    best_acc = -1.0
    best_params = None
    stale = 0
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(bundles))
        for b in range(n_batches):
            batch = order[b * config.batch_size:(b + 1) * config.batch_size]
            accum: dict[str, np.ndarray] = {}
            for idx in batch:
                tape = Tape(np.float32)
                leaves = model_leaves(tape, model, head)
                loss_t = bundle_loss_on_tape(tape, model, leaves, bundles[idx],
                                             train=True, rng=rng)
                for name, g in forward_backward(tape, loss_t).items():
                    if name in accum:
                        accum[name] += g
                    else:
                        accum[name] = g
            for name in accum:
                accum[name] /= len(batch)
            rate = lr_schedule(step + 0.5, total_steps, config.learning_rate,
                               config.warmup_frac)
            optimizer_step(params, accum, state, lr=rate)
            step += 1
        acc = evaluate(kind, model, head, vocab, val_examples)
        val_accs.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_params = _snapshot(params)
            stale = 0
        else:
            stale += 1
        if stale >= config.patience:
            break

    checkpoint_ref = None
    if checkpoint_prefix is not None:
        checkpoint_ref = checkpoint_prefix + ".ckpt"
        save_checkpoint(checkpoint_ref, best_params)

    record = RunRecord(
        kind=kind.value, config=config, val_accuracies=val_accs,
        best_val_acc=max(val_accs), best_epoch=1 + val_accs.index(max(val_accs)),
        checkpoint=checkpoint_ref, wall_seconds=time.perf_counter() - start,
        data_fingerprint=data_fingerprint(instances),
    )
    return record, model, head


def load_trial_model(kind: FormalizationKind, encoder: Encoder,
                     checkpoint_path: str):
    """Rebuild a trial's (model, head) pair from a saved best checkpoint."""
    from .gradcore import load_checkpoint

    saved = load_checkpoint(checkpoint_path)
    model = encoder.clone()
    head_params = {}
    for name, value in saved.items():
        if name.startswith("head_"):
            head_params[name] = value
        else:
            if name not in model.params:
                raise ValueError(f"checkpoint parameter {name!r} not in encoder")
            model.params[name] = value
    head = TaskHead(kind=kind, params=head_params)
    if kind is FormalizationKind.MC_MLM and head_params:
        raise ValueError("MC-MLM checkpoints must not carry a separate head")
    return model, head
