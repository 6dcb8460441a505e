"""End-to-end desk-scale protocol: synthetic corpus, MLM pretraining, one
random-search sweep per formalization, top-5 ensembles, and report artifacts.

Scale is chosen so the whole run fits on a laptop CPU: a 900-schema corpus
(500/200/200 split), a 2-layer d=64 encoder, and 12 trials per formalization
over a small grid. The returned summary carries everything a caller needs to
check the run's health: timings, per-kind accuracy distributions, baselines.
"""

from __future__ import annotations

import os
import time
from collections import Counter

from .corpus import default_lexicon, dump_winogrande, generate_synthetic
from .encoder import EncoderConfig, pretrain_mlm
from .formalizations import TABLE_ORDER, FormalizationKind
from .report import write_report
from .sweep import SearchSpace, distribution_stats, ensemble_accuracy, run_sweep
from .textkit import build_vocabulary

DESK_SPACE = SearchSpace(learning_rates=(2e-3, 3e-3), epoch_limits=(8, 12),
                         batch_sizes=(16, 32))

DESK_ENCODER = {"layers": 2, "heads": 2, "d_model": 64, "d_ff": 128,
                "max_len": 32, "dropout": 0.1}


def majority_baseline(kind: FormalizationKind, examples) -> float:
    """Accuracy of always predicting the most frequent label in the kind's
    evaluation space (argmax labels for MC kinds on index data, binary labels
    per duplicated instance otherwise).
    """
    golds = []
    for ex in examples:
        if ex.gold_index is not None:
            if kind.is_mc:
                golds.append(ex.gold_index)
            else:
                golds.extend(i == ex.gold_index
                             for i in range(len(ex.candidates)))
        else:
            golds.append(ex.gold_binary)
    if not golds:
        raise ValueError("no labels to compute a baseline from")
    return max(Counter(golds).values()) / len(golds)


def run_desk_experiment(out_dir: str, n_schemas: int = 900, trials: int = 12,
                        workers: int = 1, master_seed: int = 0,
                        pretrain_epochs: int = 25, pretrain_lr: float = 1e-3,
                        pretrain_batch: int = 16,
                        space: SearchSpace = DESK_SPACE,
                        ensemble_k: int = 5,
                        progress=lambda msg: None) -> dict:
    data_dir = os.path.join(out_dir, "data")
    records_dir = os.path.join(out_dir, "records")
    report_dir = os.path.join(out_dir, "report")
    for d in (data_dir, records_dir, report_dir):
        os.makedirs(d, exist_ok=True)

    lexicon = default_lexicon()
    pretrain, splits = generate_synthetic(lexicon, n_schemas=n_schemas,
                                          seed=master_seed)
    with open(os.path.join(data_dir, "pretrain.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(pretrain) + "\n")
    for name, examples in splits.items():
        dump_winogrande(examples, os.path.join(data_dir, f"{name}.jsonl"))
    progress(f"corpus: {len(pretrain)} pretraining sentences, "
             f"{'/'.join(str(len(splits[s])) for s in ('train', 'val', 'test'))} "
             "split")

    sentences = list(pretrain)
    for examples in splits.values():
        sentences.extend(" ".join(ex.tokens) for ex in examples)
    vocab = build_vocabulary(sentences)
    config = EncoderConfig(vocab_size=len(vocab), **DESK_ENCODER)

    start = time.perf_counter()
    encoder, vocab, history = pretrain_mlm(
        pretrain, config=config, seed=master_seed, epochs=pretrain_epochs,
        batch_size=pretrain_batch, lr=pretrain_lr, vocab=vocab)
    pretrain_seconds = time.perf_counter() - start
    encoder.save(os.path.join(out_dir, "encoder"))
    vocab.save(os.path.join(out_dir, "encoder.vocab"))
    progress(f"pretraining: {pretrain_seconds:.0f}s, "
             f"final MLM loss {history['final_loss']:.3f}")

    all_records = []
    per_kind: dict[str, dict] = {}
    test_accuracies: dict[str, float] = {}
    for i, kind in enumerate(TABLE_ORDER):
        records_path = os.path.join(records_dir, f"{kind.value}.jsonl")
        ckpt_dir = os.path.join(out_dir, "ckpts", kind.value)
        records = run_sweep(kind, encoder, vocab, splits["train"],
                            splits["val"], space=space, n_trials=trials,
                            workers=workers, master_seed=master_seed + i,
                            out_path=records_path, checkpoint_dir=ckpt_dir)
        all_records.extend(records)
        ok = [r for r in records if r.error is None]
        stats = distribution_stats([r.best_val_acc for r in ok])
        test_acc = ensemble_accuracy(kind, encoder, vocab, records,
                                     splits["test"], k=ensemble_k)
        test_accuracies[kind.value] = test_acc
        per_kind[kind.value] = {
            "stats": stats,
            "val_baseline": majority_baseline(kind, splits["val"]),
            "test_baseline": majority_baseline(kind, splits["test"]),
            "ensemble_test_acc": test_acc,
            "max_trial_seconds": max(r.wall_seconds for r in records),
            "n_errors": len(records) - len(ok),
            "records_path": records_path,
        }
        progress(f"{kind.value}: median {stats.median:.3f} "
                 f"(p75 {stats.p75:.3f}, std {stats.std:.3f}) "
                 f"ensemble test {test_acc:.3f}, "
                 f"slowest trial {per_kind[kind.value]['max_trial_seconds']:.0f}s")

    baseline = majority_baseline(FormalizationKind.MC_MLM, splits["val"])
    write_report(all_records,
                 table_path=os.path.join(report_dir, "table.txt"),
                 csv_path=os.path.join(report_dir, "table.csv"),
                 plot_path=os.path.join(report_dir, "distributions.svg"),
                 test_accuracies=test_accuracies, baseline=baseline)
    progress(f"report artifacts written to {report_dir}")

    return {
        "pretrain_seconds": pretrain_seconds,
        "final_mlm_loss": history["final_loss"],
        "per_kind": per_kind,
        "encoder": encoder,
        "vocab": vocab,
        "splits": splits,
        "records": all_records,
        "out_dir": out_dir,
        "report_dir": report_dir,
    }
