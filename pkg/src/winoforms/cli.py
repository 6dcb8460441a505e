"""Command-line interface: corpus generation, pretraining, fine-tuning,
random search, reporting, and prediction.

Exit codes: 0 success, 1 runtime failure (bad data, missing file), 2 usage
errors (unknown subcommand or flag), matching argparse conventions.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .corpus import (
    default_lexicon,
    dump_winogrande,
    generate_synthetic,
    load_winogrande,
    load_wsc,
    mine_candidates,
)
from .encoder import Encoder, EncoderConfig, pretrain_mlm
from .formalizations import FormalizationKind, predict, score
from .report import write_report
from .sweep import SearchSpace, load_records, run_sweep
from .textkit import Vocabulary, build_vocabulary
from .trainer import TrainConfig, decision_units, evaluate, finetune, load_trial_model

SPLITS = ("train", "val", "test")


def load_split_file(path: str):
    """Load either supported JSONL layout, sniffing by field names."""
    with open(path, encoding="utf-8") as fh:
        first = None
        for line in fh:
            line = line.strip()
            if line:
                first = json.loads(line)
                break
    if first is None:
        return []
    return load_winogrande(path) if "sentence" in first else load_wsc(path)


def _read_sentences(data_dir: str) -> list[str]:
    sentences = []
    pretrain_path = os.path.join(data_dir, "pretrain.txt")
    with open(pretrain_path, encoding="utf-8") as fh:
        sentences.extend(line.strip() for line in fh if line.strip())
    for name in SPLITS:
        path = os.path.join(data_dir, f"{name}.jsonl")
        if os.path.exists(path):
            for ex in load_split_file(path):
                sentences.append(" ".join(ex.tokens))
    return sentences


def _load_examples(data_dir: str, name: str, kind: FormalizationKind):
    examples = load_split_file(os.path.join(data_dir, f"{name}.jsonl"))
    if kind.is_mc:
        lexicon = default_lexicon()
        examples = [ex if ex.candidates or ex.gold_index is not None
                    else mine_candidates(ex, lexicon) for ex in examples]
    return examples


def _load_encoder(prefix: str):
    encoder = Encoder.load(prefix)
    vocab = Vocabulary.load(prefix + ".vocab")
    if len(vocab) != encoder.config.vocab_size:
        raise ValueError("vocabulary file does not match the encoder config")
    return encoder, vocab


def _cmd_gen_corpus(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    pretrain, splits = generate_synthetic(default_lexicon(),
                                          n_schemas=args.schemas,
                                          seed=args.seed)
    with open(os.path.join(args.out, "pretrain.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(pretrain) + "\n")
    for name in SPLITS:
        dump_winogrande(splits[name], os.path.join(args.out, f"{name}.jsonl"))
    sizes = {name: len(splits[name]) for name in SPLITS}
    print(f"wrote corpus to {args.out}: {len(pretrain)} pretraining sentences, "
          + ", ".join(f"{name}={n}" for name, n in sizes.items()))
    return 0


def _cmd_pretrain(args) -> int:
    sentences = _read_sentences(args.data)
    with open(os.path.join(args.data, "pretrain.txt"), encoding="utf-8") as fh:
        corpus = [line.strip() for line in fh if line.strip()]
    vocab = build_vocabulary(sentences)
    overrides = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    key, value = line.split("=", 1)
                    overrides[key.strip()] = value.strip()
    config = EncoderConfig(
        vocab_size=len(vocab),
        layers=int(overrides.get("layers", args.layers)),
        heads=int(overrides.get("heads", args.heads)),
        d_model=int(overrides.get("d_model", args.d_model)),
        d_ff=int(overrides.get("d_ff", args.d_ff)),
        max_len=int(overrides.get("max_len", args.max_len)),
        dropout=float(overrides.get("dropout", args.dropout)),
    )
    encoder, vocab, history = pretrain_mlm(
        corpus, config=config, seed=args.seed, epochs=args.epochs,
        batch_size=args.batch_size, lr=args.lr, vocab=vocab)
    encoder.save(args.out)
    vocab.save(args.out + ".vocab")
    print(f"pretrained encoder saved to {args.out}.ckpt "
          f"(final MLM loss {history['final_loss']:.4f}, "
          f"{len(vocab)} vocabulary entries)")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                       batch_size=args.batch_size, seed=args.seed)


def _cmd_finetune(args) -> int:
    kind = FormalizationKind(args.formalization)
    encoder, vocab = _load_encoder(args.encoder)
    train = _load_examples(args.data, "train", kind)
    val = _load_examples(args.data, "val", kind)
    record, model, head = finetune(kind, encoder, vocab, train, val,
                                   _train_config(args),
                                   checkpoint_prefix=args.ckpt)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")
    print(f"best validation accuracy {record.best_val_acc:.4f} "
          f"at epoch {record.best_epoch}; record written to {args.out}")
    test_path = os.path.join(args.data, "test.jsonl")
    if args.eval_test and os.path.exists(test_path):
        test = _load_examples(args.data, "test", kind)
        acc = evaluate(kind, model, head, vocab, test)
        print(f"test accuracy (end-of-training model) {acc:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    kind = FormalizationKind(args.formalization)
    encoder, vocab = _load_encoder(args.encoder)
    train = _load_examples(args.data, "train", kind)
    val = _load_examples(args.data, "val", kind)
    space = SearchSpace(
        learning_rates=tuple(float(x) for x in args.lrs.split(",")),
        epoch_limits=tuple(int(x) for x in args.epoch_limits.split(",")),
        batch_sizes=tuple(int(x) for x in args.batch_sizes.split(",")),
    )
    records = run_sweep(kind, encoder, vocab, train, val, space=space,
                        n_trials=args.trials, workers=args.workers,
                        master_seed=args.seed, out_path=args.out,
                        checkpoint_dir=args.ckpt_dir)
    failed = sum(1 for r in records if r.error is not None)
    print(f"{len(records)} trials written to {args.out}"
          + (f" ({failed} failed)" if failed else ""))
    return 0


def _cmd_report(args) -> int:
    records = []
    for path in args.records:
        records.extend(load_records(path))
    write_report(records, table_path=args.table, csv_path=args.csv,
                 plot_path=args.plot, baseline=args.baseline, human=args.human)
    written = [p for p in (args.table, args.csv, args.plot) if p]
    print("wrote " + ", ".join(written) if written else "nothing to write")
    return 0


def _cmd_predict(args) -> int:
    kind = FormalizationKind(args.formalization)
    encoder, vocab = _load_encoder(args.encoder)
    model, head = load_trial_model(kind, encoder, args.checkpoint)
    examples = load_split_file(args.data)
    if kind.is_mc:
        lexicon = default_lexicon()
        examples = [ex if ex.candidates or ex.gold_index is not None
                    else mine_candidates(ex, lexicon) for ex in examples]
    units = decision_units(kind, vocab, examples)
    if not units:
        raise ValueError("no examples to predict")
    lines = []
    correct = 0
    for i, (bundle, gold) in enumerate(units):
        pred = predict(kind, score(kind, model, head, bundle))
        correct += int(pred == gold)
        lines.append(json.dumps({"unit": i, "prediction": pred, "gold": gold}))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{len(lines)} predictions written to {args.out} "
          f"(accuracy {correct / len(lines):.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="winoforms",
        description="Ablation harness for Winograd-schema task formalizations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--schemas", type=int, default=900)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="MLM-pretrain the tiny encoder")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="encoder prefix")
    p.add_argument("--config", default=None, help="key=value override file")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--d-ff", type=int, default=128)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--dropout", type=float, default=0.1)
    p.set_defaults(func=_cmd_pretrain)

    kinds = [k.value for k in FormalizationKind]

    p = sub.add_parser("finetune", help="train one trial")
    p.add_argument("--formalization", required=True, choices=kinds)
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True, help="pretrained prefix")
    p.add_argument("--out", required=True, help="record JSON path")
    p.add_argument("--ckpt", default=None, help="best-checkpoint prefix")
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-test", action="store_true")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("sweep", help="random hyperparameter search")
    p.add_argument("--formalization", required=True, choices=kinds)
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out", required=True, help="records JSONL path")
    p.add_argument("--trials", type=int, default=60)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--ckpt-dir", default=None)
    p.add_argument("--lrs", default="1e-5,2e-5,3e-5")
    p.add_argument("--epoch-limits", default="10,20,40")
    p.add_argument("--batch-sizes", default="8,16,32,64")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="render statistics table and plot")
    p.add_argument("--records", required=True, nargs="+")
    p.add_argument("--table", default=None, help="plain-text table path")
    p.add_argument("--csv", default=None, help="CSV table path")
    p.add_argument("--plot", default=None, help="SVG plot path")
    p.add_argument("--baseline", type=float, default=None)
    p.add_argument("--human", type=float, default=None)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("predict", help="predict with a saved trial checkpoint")
    p.add_argument("--formalization", required=True, choices=kinds)
    p.add_argument("--data", required=True, help="examples JSONL file")
    p.add_argument("--encoder", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.set_defaults(func=_cmd_predict)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))
