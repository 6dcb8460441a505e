"""Sweep tests: sampling, statistics oracles, worker invariance, ensembling."""

import dataclasses
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from winoforms.corpus import default_lexicon, generate_synthetic
from winoforms.encoder import Encoder, EncoderConfig
from winoforms.formalizations import FormalizationKind
from winoforms.sweep import (
    DistributionStats,
    SearchSpace,
    combine_votes,
    distribution_stats,
    ensemble_accuracy,
    ensemble_predict,
    load_records,
    percentile,
    record_identity,
    run_sweep,
    sample_trial,
    sample_trials,
    top_k_records,
)
from winoforms.textkit import build_vocabulary
from winoforms.trainer import RunRecord, TrainConfig, evaluate, load_trial_model

K = FormalizationKind


def micro_rig():
    pretrain, splits = generate_synthetic(default_lexicon(), n_schemas=14, seed=4)
    sentences = list(pretrain)
    for split in splits.values():
        sentences.extend(" ".join(ex.tokens) for ex in split)
    vocab = build_vocabulary(sentences)
    cfg = EncoderConfig(vocab_size=len(vocab), layers=1, heads=2, d_model=8,
                        d_ff=16, max_len=24, dropout=0.1)
    encoder = Encoder.init(cfg, seed=5)
    return encoder, vocab, splits["train"][:6], splits["val"][:3]


MICRO_SPACE = SearchSpace(learning_rates=(3e-4,), epoch_limits=(1,),
                          batch_sizes=(8,))
RIG = micro_rig()


class TestSampling:
    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            SearchSpace(learning_rates=())

    def test_draws_stay_on_the_grid(self):
        space = SearchSpace()
        rng = np.random.default_rng(0)
        for _ in range(50):
            cfg = sample_trial(space, rng)
            assert cfg.learning_rate in space.learning_rates
            assert cfg.epochs in space.epoch_limits
            assert cfg.batch_size in space.batch_sizes

    def test_degenerate_space_varies_only_seed(self):
        configs = sample_trials(MICRO_SPACE, 10, master_seed=3)
        frozen = {dataclasses.replace(c, seed=0) for c in configs}
        assert len(frozen) == 1
        assert len({c.seed for c in configs}) > 1

    def test_master_seed_fixes_the_sequence(self):
        a = sample_trials(SearchSpace(), 60, master_seed=7)
        b = sample_trials(SearchSpace(), 60, master_seed=7)
        assert a == b
        c = sample_trials(SearchSpace(), 60, master_seed=8)
        assert a != c

    def test_zero_trials_rejected(self):
        with pytest.raises(ValueError, match=">= 1"):
            sample_trials(SearchSpace(), 0, master_seed=0)


class TestStatistics:
    def test_two_point_distribution(self):
        stats = distribution_stats([0.0, 0.0, 1.0, 1.0])
        assert abs(stats.std - math.sqrt(1.0 / 3.0)) < 1e-4
        assert abs(stats.excess_kurtosis - (-2.0)) < 1e-9

    def test_rank_interpolation_oracle(self):
        # rank = 1 + (n-1) q by hand: q=0.5 -> rank 2.5; q=0.75 -> rank 3.25
        stats = distribution_stats([1.0, 2.0, 3.0, 4.0])
        assert stats.median == 2.5
        assert stats.p75 == 3.25

    def test_constant_sample(self):
        stats = distribution_stats([0.7, 0.7, 0.7, 0.7])
        assert stats.std == 0.0
        assert stats.excess_kurtosis is None

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="two points"):
            distribution_stats([0.5])
        assert distribution_stats([0.4, 0.6, 0.5]).excess_kurtosis is None

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(4, 40))
    def test_matches_library_estimators(self, seed, n):
        data = np.random.default_rng(seed).uniform(size=n)
        stats = distribution_stats(data)
        assert stats.std == pytest.approx(float(np.std(data, ddof=1)), abs=1e-12)
        expected_kurt = float(scipy.stats.kurtosis(data, fisher=True, bias=True))
        assert stats.excess_kurtosis == pytest.approx(expected_kurt, abs=1e-9)
        assert stats.median == pytest.approx(float(np.percentile(data, 50)))
        assert stats.p75 == pytest.approx(float(np.percentile(data, 75)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(0.1, 10))
    def test_shift_and_scale_equivariance(self, seed, shift, scale):
        data = np.random.default_rng(seed).uniform(size=12)
        base = distribution_stats(data)
        shifted = distribution_stats(data + shift)
        assert abs(shifted.std - base.std) < 1e-12
        assert abs(shifted.excess_kurtosis - base.excess_kurtosis) < 1e-12
        assert shifted.median == pytest.approx(base.median + shift)
        assert shifted.p75 == pytest.approx(base.p75 + shift)
        assert shifted.maximum == pytest.approx(base.maximum + shift)
        scaled = distribution_stats(data * scale)
        assert scaled.std == pytest.approx(base.std * scale, rel=1e-9)
        assert abs(scaled.excess_kurtosis - base.excess_kurtosis) < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_order_invariants(self, seed):
        data = np.random.default_rng(seed).uniform(size=9)
        stats = distribution_stats(data)
        assert stats.std >= 0
        assert stats.p75 >= stats.median
        assert stats.maximum >= stats.p75

    def test_percentile_guards(self):
        with pytest.raises(ValueError, match="empty"):
            percentile([], 0.5)
        with pytest.raises(ValueError, match="quantile"):
            percentile([1.0], 1.5)


class TestRunSweep:
    def test_record_count_and_stream(self, tmp_path):
        encoder, vocab, train, val = RIG
        out = tmp_path / "records.jsonl"
        records = run_sweep(K.P_SENT, encoder, vocab, train, val,
                            space=MICRO_SPACE, n_trials=3, master_seed=1,
                            out_path=str(out),
                            checkpoint_dir=str(tmp_path / "ckpts"))
        assert len(records) == 3
        assert all(r.error is None for r in records)
        streamed = load_records(str(out))
        assert {record_identity(r) for r in streamed} == {
            record_identity(r) for r in records}

    def test_worker_count_does_not_change_records(self, tmp_path):
        encoder, vocab, train, val = RIG
        seq = run_sweep(K.MC_SENT, encoder, vocab, train, val,
                        space=MICRO_SPACE, n_trials=4, master_seed=2,
                        checkpoint_dir=str(tmp_path / "a"))
        par = run_sweep(K.MC_SENT, encoder, vocab, train, val,
                        space=MICRO_SPACE, n_trials=4, master_seed=2,
                        workers=2, checkpoint_dir=str(tmp_path / "b"))
        assert [record_identity(r) for r in seq] == [
            record_identity(r) for r in par]
        for i in range(4):
            a = (tmp_path / "a" / f"trial{i:03d}.ckpt").read_bytes()
            b = (tmp_path / "b" / f"trial{i:03d}.ckpt").read_bytes()
            assert a == b

    def test_trial_errors_become_records(self, tmp_path):
        encoder, vocab, train, _ = RIG
        records = run_sweep(K.P_SENT, encoder, vocab, train, [],
                            space=MICRO_SPACE, n_trials=3, master_seed=0,
                            out_path=str(tmp_path / "err.jsonl"))
        assert len(records) == 3
        assert all(r.error is not None for r in records)
        assert all("empty" in r.error for r in records)
        assert len(load_records(str(tmp_path / "err.jsonl"))) == 3

    def test_bad_arguments(self):
        encoder, vocab, train, val = RIG
        with pytest.raises(ValueError):
            run_sweep(K.P_SENT, encoder, vocab, train, val, n_trials=0)
        with pytest.raises(ValueError):
            run_sweep(K.P_SENT, encoder, vocab, train, val, workers=0)


def fake_record(acc, tag, error=None, epochs=1):
    return RunRecord(kind="p-sent", config=TrainConfig(epochs=epochs),
                     val_accuracies=[] if error else [acc],
                     best_val_acc=0.0 if error else acc,
                     best_epoch=0 if error else 1,
                     checkpoint=None if error else f"{tag}.ckpt", error=error)


class TestEnsemble:
    def test_majority_vote(self):
        assert combine_votes([True, True, False, True, False]) is True
        assert combine_votes([0, 1, 1]) == 1

    def test_tie_goes_to_best_model(self):
        assert combine_votes([False, True, True, False]) is False
        assert combine_votes([2, 0, 0, 1, 1]) == 2

    def test_top_k_ranking_and_ties(self):
        records = [fake_record(0.6, "a"), fake_record(0.8, "b"),
                   fake_record(0.8, "c"), fake_record(0.7, "d")]
        top = top_k_records(records, k=3)
        assert [r.checkpoint for r in top] == ["b.ckpt", "c.ckpt", "d.ckpt"]

    def test_error_records_excluded(self):
        records = [fake_record(0.9, "a", error="boom"), fake_record(0.6, "b")]
        with pytest.raises(ValueError, match="usable"):
            top_k_records(records, k=2)

    def test_five_copies_reproduce_single_model(self, tmp_path):
        encoder, vocab, train, val = RIG
        records = run_sweep(K.MC_SENT, encoder, vocab, train, val,
                            space=MICRO_SPACE, n_trials=1, master_seed=5,
                            checkpoint_dir=str(tmp_path))
        copies = records * 5
        acc = ensemble_accuracy(K.MC_SENT, encoder, vocab, copies, val, k=5)
        model, head = load_trial_model(K.MC_SENT, encoder,
                                       records[0].checkpoint)
        assert acc == evaluate(K.MC_SENT, model, head, vocab, val)

    def test_predictions_align_with_units(self, tmp_path):
        encoder, vocab, train, val = RIG
        records = run_sweep(K.P_SENT, encoder, vocab, train, val,
                            space=MICRO_SPACE, n_trials=2, master_seed=6,
                            checkpoint_dir=str(tmp_path))
        preds = ensemble_predict(K.P_SENT, encoder, vocab, records * 3,
                                 val, k=5)
        assert len(preds) == 2 * len(val)  # one per duplicated instance
        assert all(isinstance(p, bool) for p in preds)
