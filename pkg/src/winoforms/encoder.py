"""Tiny transformer encoder with a tied masked-language-modeling head.

Post-norm residual blocks, learned absolute positions, GELU feed-forward.
The MLM projection is the embedding matrix itself (one tape leaf serving
both roles), so the tie cannot drift during fine-tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .gradcore import (
    AdamWState,
    Tape,
    Tensor,
    forward_backward,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)
from .textkit import CLS_ID, MASK_ID, SEP_ID, SPECIALS, Vocabulary, build_vocabulary, tokenize

MASK_BIAS = -1e30  # additive score for blocked keys; absorbs any finite logit

MLM_MASK_RATE = 0.15
MLM_KEEP_MASK = 0.8  # of the masked positions: 80% [MASK], 10% random, 10% left alone
MLM_RANDOM = 0.1


@dataclass
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 48
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        for name in ("vocab_size", "layers", "heads", "d_model", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                fh.write(f"{f.name}={getattr(self, f.name)}\n")

    @classmethod
    def load(cls, path) -> "EncoderConfig":
        kwargs = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                key, value = line.strip().split("=")
                kwargs[key] = float(value) if key == "dropout" else int(value)
        return cls(**kwargs)


def init_params(config: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Matrices ~ N(0, 0.02), biases 0, layer-norm gains 1. float32."""
    rng = np.random.default_rng(seed)
    d, ff = config.d_model, config.d_ff

    def mat(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(np.float32)

    params = {
        "tok_emb": mat(config.vocab_size, d),
        "pos_emb": mat(config.max_len, d),
        "emb_ln_g": np.ones(d, np.float32),
        "emb_ln_b": np.zeros(d, np.float32),
        "mlm_b": np.zeros(config.vocab_size, np.float32),
    }
    for i in range(config.layers):
        p = f"l{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{proj}"] = mat(d, d)
            params[f"{p}.attn.{proj[1]}b"] = np.zeros(d, np.float32)
        params[f"{p}.attn.ln_g"] = np.ones(d, np.float32)
        params[f"{p}.attn.ln_b"] = np.zeros(d, np.float32)
        params[f"{p}.ffn.w1"] = mat(d, ff)
        params[f"{p}.ffn.b1"] = np.zeros(ff, np.float32)
        params[f"{p}.ffn.w2"] = mat(ff, d)
        params[f"{p}.ffn.b2"] = np.zeros(d, np.float32)
        params[f"{p}.ffn.ln_g"] = np.ones(d, np.float32)
        params[f"{p}.ffn.ln_b"] = np.zeros(d, np.float32)
    return params


class Encoder:
    """Config + parameter dict, with tape-building forward passes."""

    def __init__(self, config: EncoderConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "Encoder":
        return cls(config, init_params(config, seed))

    # -- persistence --------------------------------------------------------

    def save(self, prefix) -> None:
        save_checkpoint(f"{prefix}.ckpt", self.params)
        self.config.save(f"{prefix}.config")

    @classmethod
    def load(cls, prefix) -> "Encoder":
        return cls(EncoderConfig.load(f"{prefix}.config"), load_checkpoint(f"{prefix}.ckpt"))

    def clone(self) -> "Encoder":
        return Encoder(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- forward ------------------------------------------------------------

    def leaf_params(self, tape: Tape) -> dict[str, Tensor]:
        """One named leaf per parameter, so grads come back keyed by name."""
        return {name: tape.leaf(arr, name=name) for name, arr in self.params.items()}

    def encode(self, tape: Tape, leaves: dict[str, Tensor], ids,
               attn_mask=None, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """ids (T,) -> hidden states (T, d)."""
        cfg = self.config
        ids = np.asarray(ids, dtype=np.intp)
        if len(ids) > cfg.max_len:
            raise ValueError(f"sequence of {len(ids)} exceeds max length {cfg.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValueError("token id out of vocabulary range")
        if train and rng is None:
            raise ValueError("training forward needs a random generator for dropout")

        T = len(ids)
        dh = cfg.d_model // cfg.heads
        rate = cfg.dropout if train else 0.0
        no_rng = np.random.default_rng(0)  # untouched when rate == 0

        def drop(t):
            return tape.dropout(t, rate, rng if train else no_rng)

        mask_bias = None
        if attn_mask is not None:
            attn_mask = np.asarray(attn_mask)
            if attn_mask.shape != (T,):
                raise ValueError("attention mask must have one entry per position")
            if not attn_mask.all():
                row = np.where(attn_mask > 0, 0.0, MASK_BIAS)
                mask_bias = tape.leaf(np.tile(row, (T, 1)))

        x = tape.add(tape.take_rows(leaves["tok_emb"], ids),
                     tape.take_rows(leaves["pos_emb"], np.arange(T)))
        x = tape.layer_norm(x, leaves["emb_ln_g"], leaves["emb_ln_b"])
        x = drop(x)

        for i in range(cfg.layers):
            p = f"l{i}"
            q = tape.add(tape.matmul(x, leaves[f"{p}.attn.wq"]), leaves[f"{p}.attn.qb"])
            k = tape.add(tape.matmul(x, leaves[f"{p}.attn.wk"]), leaves[f"{p}.attn.kb"])
            v = tape.add(tape.matmul(x, leaves[f"{p}.attn.wv"]), leaves[f"{p}.attn.vb"])
            heads = []
            for h in range(cfg.heads):
                lo, hi = h * dh, (h + 1) * dh
                qh = tape.slice_cols(q, lo, hi)
                kh = tape.slice_cols(k, lo, hi)
                vh = tape.slice_cols(v, lo, hi)
                scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / math.sqrt(dh))
                if mask_bias is not None:
                    scores = tape.add(scores, mask_bias)
                heads.append(tape.matmul(tape.softmax(scores), vh))
            o = tape.concat(heads, axis=1)
            o = tape.add(tape.matmul(o, leaves[f"{p}.attn.wo"]), leaves[f"{p}.attn.ob"])
            x = tape.layer_norm(tape.add(x, drop(o)),
                                leaves[f"{p}.attn.ln_g"], leaves[f"{p}.attn.ln_b"])

            f = tape.gelu(tape.add(tape.matmul(x, leaves[f"{p}.ffn.w1"]), leaves[f"{p}.ffn.b1"]))
            f = tape.add(tape.matmul(f, leaves[f"{p}.ffn.w2"]), leaves[f"{p}.ffn.b2"])
            x = tape.layer_norm(tape.add(x, drop(f)),
                                leaves[f"{p}.ffn.ln_g"], leaves[f"{p}.ffn.ln_b"])
        return x

    def mlm_logits(self, tape: Tape, leaves: dict[str, Tensor], hidden: Tensor) -> Tensor:
        """hidden (T, d) -> vocabulary logits (T, V) through the tied embedding."""
        return tape.add(tape.matmul(hidden, tape.transpose(leaves["tok_emb"])),
                        leaves["mlm_b"])

    def mlm_forward(self, ids) -> np.ndarray:
        """Eval-mode logits (T, V) as a plain array."""
        tape = Tape(np.float32)
        leaves = self.leaf_params(tape)
        return self.mlm_logits(tape, leaves, self.encode(tape, leaves, ids)).data


# -- masked-language-model pretraining -----------------------------------------


def apply_mlm_masking(ids: list[int], rng: np.random.Generator,
                      vocab_size: int, rate: float = MLM_MASK_RATE):
    """Corrupt interior positions of a [CLS] ... [SEP] sequence.

    Returns (corrupted ids, masked positions, original ids at those positions).
    """
    if rate <= 0.0:
        raise ValueError("masking rate must be positive, otherwise nothing is supervised")
    interior = np.arange(1, len(ids) - 1)
    n_mask = max(1, round(rate * len(interior)))
    positions = np.sort(rng.choice(interior, size=n_mask, replace=False))
    corrupted = list(ids)
    targets = []
    for pos in positions:
        targets.append(ids[pos])
        u = rng.random()
        if u < MLM_KEEP_MASK:
            corrupted[pos] = MASK_ID
        elif u < MLM_KEEP_MASK + MLM_RANDOM:
            corrupted[pos] = int(rng.integers(len(SPECIALS), vocab_size))
        # else: position stays intact but is still predicted
    return corrupted, positions, targets


def masked_positions_loss(encoder: Encoder, tape: Tape, leaves, corrupted_ids,
                          positions, targets, train: bool, rng=None) -> Tensor:
    """Mean cross-entropy of the true tokens at the chosen positions."""
    hidden = encoder.encode(tape, leaves, corrupted_ids, train=train, rng=rng)
    logp = tape.log_softmax(encoder.mlm_logits(tape, leaves, hidden))
    return tape.scale(tape.reduce_mean(tape.pick(logp, positions, targets)), -1.0)


def pretrain_mlm(sentences: list[str], config: EncoderConfig | None = None,
                 seed: int = 0, epochs: int = 10, batch_size: int = 16,
                 lr: float = 1e-3, vocab: Vocabulary | None = None):
    """Train from scratch on raw sentences.

    Returns (encoder, vocab, history) where history has per-epoch mean losses
    under "epoch_losses" and the last epoch's value under "final_loss".
    """
    if not sentences:
        raise ValueError("empty pretraining corpus")
    if vocab is None:
        vocab = build_vocabulary(sentences)
    if config is None:
        config = EncoderConfig(vocab_size=len(vocab))
    elif config.vocab_size != len(vocab):
        raise ValueError("config vocab_size does not match the vocabulary")

    seqs = [[CLS_ID, *vocab.encode(tokenize(s)), SEP_ID] for s in sentences]
    for s in seqs:
        if len(s) > config.max_len:
            raise ValueError("corpus sentence exceeds the encoder's max length")
        if len(s) < 3:
            raise ValueError("sentence with no maskable tokens")

    encoder = Encoder.init(config, seed)
    rng = np.random.default_rng(seed + 1)
    state = AdamWState(lr=lr)
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(len(seqs))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            acc: dict[str, np.ndarray] = {}
            for j in batch:
                tape = Tape(np.float32)
                leaves = encoder.leaf_params(tape)
                corrupted, pos, tgt = apply_mlm_masking(seqs[j], rng, len(vocab))
                loss = masked_positions_loss(encoder, tape, leaves, corrupted,
                                             pos, tgt, train=True, rng=rng)
                grads = forward_backward(tape, loss)
                losses.append(float(loss.data))
                for name, g in grads.items():
                    if name in acc:
                        acc[name] += g
                    else:
                        acc[name] = g.copy()
            for name in acc:
                acc[name] /= len(batch)
            optimizer_step(encoder.params, acc, state)
        epoch_losses.append(float(np.mean(losses)))
    return encoder, vocab, {"epoch_losses": epoch_losses, "final_loss": epoch_losses[-1]}
