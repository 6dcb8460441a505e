"""Random hyperparameter search, accuracy distribution statistics, ensembling.

A sweep pre-samples every trial's hyperparameters from one master seed, so the
resulting records do not depend on how many workers execute the trials. Each
finished trial is appended to a JSONL stream by the parent process; trial
errors become records with an `error` field instead of aborting the sweep.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

from .encoder import Encoder
from .formalizations import FormalizationKind, predict, score
from .textkit import Vocabulary
from .trainer import (
    RunRecord,
    TrainConfig,
    decision_units,
    finetune,
    load_trial_model,
)


@dataclass(frozen=True)
class SearchSpace:
    """Candidate axes for the random search; draws are uniform per axis."""

    learning_rates: tuple = (1e-5, 2e-5, 3e-5)
    epoch_limits: tuple = (10, 20, 40)
    batch_sizes: tuple = (8, 16, 32, 64)

    def __post_init__(self):
        for name in ("learning_rates", "epoch_limits", "batch_sizes"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must be non-empty")


@dataclass(frozen=True)
class DistributionStats:
    """Summary of an accuracy sample; kurtosis is None when undefined."""

    count: int
    mean: float
    std: float
    excess_kurtosis: float | None
    median: float
    p75: float
    maximum: float


def sample_trial(space: SearchSpace, rng: np.random.Generator) -> TrainConfig:
    """One uniform draw per axis plus a fresh trial seed from `rng`."""
    return TrainConfig(
        learning_rate=float(rng.choice(space.learning_rates)),
        epochs=int(rng.choice(space.epoch_limits)),
        batch_size=int(rng.choice(space.batch_sizes)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def sample_trials(space: SearchSpace, n_trials: int,
                  master_seed: int) -> list[TrainConfig]:
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(master_seed)
    return [sample_trial(space, rng) for _ in range(n_trials)]


def percentile(values, q: float) -> float:
    """Linear interpolation between closest ranks: rank = 1 + (n-1) * q."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    data = sorted(float(v) for v in values)
    if not data:
        raise ValueError("percentile of an empty sample")
    h = (len(data) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(data) - 1)
    return data[lo] + (h - lo) * (data[hi] - data[lo])


def distribution_stats(values) -> DistributionStats:
    """Sample std (n-1 denominator); excess kurtosis as the population moment
    ratio g2 = m4/m2^2 - 3, reported as None below 4 points or at zero
    variance; median/p75 by linear rank interpolation.
    """
    data = np.asarray([float(v) for v in values], dtype=np.float64)
    n = data.size
    if n < 2:
        raise ValueError("need at least two points for distribution statistics")
    mean = float(data.mean())
    centered = data - mean
    std = float(math.sqrt(float(np.sum(centered**2)) / (n - 1)))
    m2 = float(np.mean(centered**2))
    if n < 4 or m2 == 0.0:
        kurt = None
    else:
        kurt = float(np.mean(centered**4) / m2**2 - 3.0)
    return DistributionStats(
        count=int(n), mean=mean, std=std, excess_kurtosis=kurt,
        median=percentile(data, 0.5), p75=percentile(data, 0.75),
        maximum=float(data.max()),
    )


# -- sweep execution ---------------------------------------------------------

_CTX: dict = {}


def _init_worker(kind_value, encoder, vocab, train, val):
    _CTX["kind"] = FormalizationKind(kind_value)
    _CTX["encoder"] = encoder
    _CTX["vocab"] = vocab
    _CTX["train"] = train
    _CTX["val"] = val


def _trial_job(args):
    index, config_dict, prefix = args
    config = TrainConfig.from_dict(config_dict)
    kind = _CTX["kind"]
    try:
        record, _, _ = finetune(kind, _CTX["encoder"], _CTX["vocab"],
                                _CTX["train"], _CTX["val"], config,
                                checkpoint_prefix=prefix)
    except Exception as exc:
        record = RunRecord(kind=kind.value, config=config,
                           error=f"{type(exc).__name__}: {exc}")
    return index, record.to_json()


def run_sweep(kind: FormalizationKind, encoder: Encoder, vocab: Vocabulary,
              train_examples: list, val_examples: list,
              space: SearchSpace = SearchSpace(), n_trials: int = 60,
              workers: int = 1, master_seed: int = 0,
              out_path: str | None = None,
              checkpoint_dir: str | None = None) -> list[RunRecord]:
    """Run `n_trials` random-search trials; returns records in trial order.
    The JSONL stream at `out_path` is written by this process only, in
    completion order.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    configs = sample_trials(space, n_trials, master_seed)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    jobs = []
    for i, config in enumerate(configs):
        prefix = (os.path.join(checkpoint_dir, f"trial{i:03d}")
                  if checkpoint_dir is not None else None)
        jobs.append((i, config.to_dict(), prefix))

    stream = open(out_path, "w") if out_path is not None else None
    results: dict[int, RunRecord] = {}
    try:
        if workers == 1:
            _init_worker(kind.value, encoder, vocab, train_examples, val_examples)
            finished = map(_trial_job, jobs)
            for index, line in finished:
                results[index] = RunRecord.from_json(line)
                if stream is not None:
                    stream.write(line + "\n")
                    stream.flush()
        else:
            with ProcessPoolExecutor(
                    max_workers=workers, initializer=_init_worker,
                    initargs=(kind.value, encoder, vocab, train_examples,
                              val_examples)) as pool:
                futures = [pool.submit(_trial_job, job) for job in jobs]
                for future in as_completed(futures):
                    index, line = future.result()
                    results[index] = RunRecord.from_json(line)
                    if stream is not None:
                        stream.write(line + "\n")
                        stream.flush()
    finally:
        if stream is not None:
            stream.close()
    return [results[i] for i in range(n_trials)]


def load_records(path: str) -> list[RunRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


def record_identity(record: RunRecord) -> tuple:
    """Canonical view for cross-run comparison: drops wall-clock time and
    reduces the checkpoint path to its basename.
    """
    ckpt = os.path.basename(record.checkpoint) if record.checkpoint else None
    return (record.kind, tuple(sorted(record.config.to_dict().items())),
            tuple(record.val_accuracies), record.best_val_acc,
            record.best_epoch, ckpt, record.data_fingerprint, record.error)


# -- ensembling ---------------------------------------------------------------


def top_k_records(records, k: int = 5) -> list[RunRecord]:
    """The k highest best-validation records with usable checkpoints; ties
    keep the earlier record.
    """
    usable = [r for r in records if r.error is None and r.checkpoint]
    if len(usable) < k:
        raise ValueError(f"need {k} usable checkpoints, found {len(usable)}")
    ranked = sorted(usable, key=lambda r: -r.best_val_acc)
    return ranked[:k]


def combine_votes(votes: list):
    """Majority winner; a tie for the top count defers to `votes[0]`, the
    single best model's prediction.
    """
    if not votes:
        raise ValueError("no votes to combine")
    ranked = Counter(votes).most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return votes[0]
    return ranked[0][0]


def ensemble_predict(kind: FormalizationKind, encoder: Encoder,
                     vocab: Vocabulary, records, examples,
                     k: int = 5) -> list:
    """Per decision unit: majority vote of the top-k models, ties going to the
    single best model's prediction.
    """
    top = top_k_records(records, k)
    models = [load_trial_model(kind, encoder, r.checkpoint) for r in top]
    predictions = []
    for bundle, _ in decision_units(kind, vocab, examples):
        votes = [predict(kind, score(kind, m, h, bundle)) for m, h in models]
        predictions.append(combine_votes(votes))
    return predictions


def ensemble_accuracy(kind: FormalizationKind, encoder: Encoder,
                      vocab: Vocabulary, records, examples,
                      k: int = 5) -> float:
    if not examples:
        raise ValueError("evaluation split is empty")
    golds = [gold for _, gold in decision_units(kind, vocab, examples)]
    preds = ensemble_predict(kind, encoder, vocab, records, examples, k)
    return sum(int(p == g) for p, g in zip(preds, golds)) / len(golds)
